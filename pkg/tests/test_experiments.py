import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spectral_forge.experiments import (
    ExperimentReport,
    LabelView,
    TransferPlan,
    confidence_gap,
    make_eval_plan,
    make_semisup_split,
    make_transfer_plans,
    run_autoencoder_features,
    run_contrastive,
    run_layer_freezing,
    run_sgan,
    run_shift_robustness,
    run_supervised,
    run_transfer,
    sgan_discriminator_loss,
    sgan_generator_loss,
    topk_accuracy,
)
from spectral_forge.models import AutoencoderConfig, CnnConfig, ContrastiveConfig, SganConfig
from spectral_forge.nn.optim import TrainSchedule
from spectral_forge.nn.tensor import Tensor
from spectral_forge.preprocess import SpectralDataset
from spectral_forge.splits import stratified_kfold
from spectral_forge.synthetic import SyntheticConfig, synthetic_dataset

TINY = CnnConfig(conv_channels=(4, 8, 8), dense_width=32)
FAST = TrainSchedule(max_epochs=3, batch_size=16)


@pytest.fixture(scope="module")
def ds():
    return synthetic_dataset(SyntheticConfig(n_classes=4, per_class=10, seed=2))


# -- metrics --------------------------------------------------------------------------

def test_topk_examples():
    P = np.eye(4)
    assert topk_accuracy(P, np.arange(4), 1) == 1.0 and topk_accuracy(P, np.arange(4), 3) == 1.0
    P = np.array([[0.5, 0.3, 0.2], [0.3, 0.5, 0.2]])
    y = np.array([1, 0])
    assert topk_accuracy(P, y, 1) == 0.0 and topk_accuracy(P, y, 3) == 1.0


def test_topk_random_monte_carlo():
    rng = np.random.default_rng(0)
    P = rng.random((10_000, 10))
    P /= P.sum(1, keepdims=True)
    y = rng.integers(0, 10, 10_000)
    assert abs(topk_accuracy(P, y, 3) - 0.3) <= 0.02


@given(st.integers(1, 6), st.integers(0, 1000))
def test_topk_monotone_in_k(k, seed):
    rng = np.random.default_rng(seed)
    P = rng.random((30, 6))
    y = rng.integers(0, 6, 30)
    assert topk_accuracy(P, y, k) <= topk_accuracy(P, y, k + 1)


def test_confidence_gap_examples():
    assert confidence_gap([[0.7, 0.2, 0.1]]) == pytest.approx(0.5)
    assert confidence_gap([[0.25] * 4]) == 0.0


def test_kfold_pigeonhole():
    plan = stratified_kfold(np.zeros(8, int), 5, 0)
    assert sorted(plan.sizes().tolist()) == [1, 1, 2, 2, 2]
    assert plan == stratified_kfold(np.zeros(8, int), 5, 0)


# -- report -----------------------------------------------------------------------------

@given(st.lists(st.floats(0, 1), min_size=1, max_size=8))
def test_aggregate_is_mean(vals):
    folds = [{"fold": i, "metrics": {"cv/top1": v}, "curves": {}} for i, v in enumerate(vals)]
    rep = ExperimentReport("x", {}, 0, folds)
    assert abs(rep.mean("cv/top1") - sum(vals) / len(vals)) <= 1e-9


def test_report_dict_round_trip():
    rep = ExperimentReport("x", {"a": (1, 2)}, 3, [{"fold": 0, "metrics": {"cv/gap": 0.5}, "curves": {"l": [1.0]}}],
                           extra={"t": np.arange(2)})
    d = json.loads(json.dumps(rep.to_dict()))
    back = ExperimentReport.from_dict(d)
    assert back.to_dict() == d and d["confidence_gap_mean"] == 0.5


# -- splits and guards ----------------------------------------------------------------------

def test_eval_plan_partitions(ds):
    plan = make_eval_plan(ds.labels, 5, 0)
    for f in range(5):
        tr, va, te = plan.fold(f)
        assert not (set(tr) & set(va)) and not (set(tr) | set(va)) & set(te)
        assert len(tr) + len(va) + len(te) == len(ds)


def test_semisup_split_stratified_disjoint(ds):
    idx = np.arange(len(ds))
    sp = make_semisup_split(idx, ds.labels, 0.3, 0)
    assert not np.intersect1d(sp.labeled, sp.unlabeled).size
    assert set(ds.labels[sp.labeled]) == set(ds.labels)
    assert np.bincount(ds.labels[sp.labeled]).tolist() == [3] * 4


def test_label_view_counts():
    v = LabelView([5, 6, 7, 8])
    assert v[[0, 2]].tolist() == [5, 7]
    assert v.reads_on([1, 3]) == 0 and v.reads_on([0]) == 1


def test_transfer_plans_disjoint_and_nested():
    plans = make_transfer_plans(30, (5, 10, 20), seed=1)
    for p in plans:
        assert not set(p.held_out) & set(p.pretrain) and len(p.held_out) == p.c
    assert set(plans[0].held_out) <= set(plans[1].held_out) <= set(plans[2].held_out)
    with pytest.raises(ValueError):
        TransferPlan(2, (0, 1), (1, 2))


# -- SGAN losses against direct evaluation ----------------------------------------------------

def test_sgan_losses_match_direct_formula():
    rng = np.random.default_rng(0)
    N, z = 3, rng.standard_normal((5, 4))
    y = np.array([0, 2])
    p = np.exp(z) / np.exp(z).sum(1, keepdims=True)
    ce = -np.log(p[:2, :N][np.arange(2), y] / p[:2, :N].sum(1)).mean()
    expect = ce - np.log(1 - p[:3, N]).mean() - np.log(p[3:, N]).mean()
    got = float(sgan_discriminator_loss(Tensor(z), 3, N, y).data)
    assert got == pytest.approx(expect, rel=1e-10)
    assert float(sgan_generator_loss(Tensor(z), N).data) == pytest.approx(-np.log(1 - p[:, N]).mean(), rel=1e-10)


# -- protocols --------------------------------------------------------------------------------

def _impulse_dataset(positions=(300, 700, 1100), per=10, seed=0):
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for c, p in enumerate(positions):
        for _ in range(per):
            r = 0.02 * rng.random(1392)
            r[p - 3:p + 4] = 1.0
            rows.append(r)
            labels.append(c)
    return SpectralDataset(np.arange(200.0, 1592.0), np.array(rows), np.array(labels), ("a", "b", "c"))


def test_cnn_separates_impulse_classes():
    ds = _impulse_dataset()
    rep = run_supervised("CNN", ds, sched=TrainSchedule(max_epochs=20, batch_size=8), cnn_cfg=TINY, max_folds=1)
    assert rep.mean("test/top1") == 1.0 and rep.mean("cv/top1") == 1.0


@pytest.mark.parametrize("kind", ["CNN", "MLP_S", "CNN_KNN", "KNN"])
def test_supervised_kinds_run(ds, kind):
    rep = run_supervised(kind, ds, sched=FAST, cnn_cfg=TINY, max_folds=1)
    for k in ("cv/top1", "cv/top3", "test/top1"):
        assert 0.0 <= rep.mean(k) <= 1.0
    assert rep.mean("cv/top1") <= rep.mean("cv/top3")


def test_supervised_is_deterministic(ds):
    a = run_supervised("CNN", ds, sched=FAST, cnn_cfg=TINY, max_folds=2, seed=4)
    b = run_supervised("CNN", ds, sched=FAST, cnn_cfg=TINY, max_folds=2, seed=4)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_shift_robustness_grid(ds):
    rep = run_shift_robustness(ds, variants=((2, 3), (64, 3)), shifts=(0, 15, 30), sched=FAST,
                               cnn_cfg=TINY, max_folds=1)
    grid = rep.extra["grid_cv_top1_top3"]
    assert set(grid) == {"m2_n3", "m64_n3"} and all(set(v) == {"0", "15", "30"} for v in grid.values())
    assert rep.folds[0]["probes"]


def test_sgan_guard_and_range(ds):
    cfg = SganConfig(backbone=TINY, gen_channels=(8, 4))
    rep = run_sgan(ds, fraction=0.3, cfg=cfg, sched=FAST, max_folds=1)
    assert rep.mean("unlabeled_label_reads") == 0.0
    assert rep.mean("generator_in_range") == 1.0
    pair = rep.arrays["sample_pair_fold0"]
    assert pair.shape == (2, 1392) and np.all(np.isfinite(pair))


def test_contrastive_guard_and_freeze(ds):
    rep = run_contrastive(ds, fraction=0.3, cfg=ContrastiveConfig(backbone=TINY, proj_hidden=16, proj_dim=8),
                          sched=FAST, max_folds=1)
    assert rep.mean("unlabeled_label_reads") == 0.0
    assert rep.mean("encoder_frozen") == 1.0
    assert 0.0 <= rep.mean("augmentation_agreement") <= 1.0


def test_autoencoder_guard_and_latent(ds):
    rep = run_autoencoder_features(ds, fraction=0.3, cfg=AutoencoderConfig(hidden=(64,)), cnn_cfg=TINY,
                                   sched=TrainSchedule(max_epochs=5, batch_size=16), max_folds=1)
    assert rep.mean("unlabeled_label_reads") == 0.0
    assert rep.mean("latent_dim") == 256
    assert rep.mean("pretrain_overlap_with_classifier_rows") == 0
    ae_loss = rep.folds[0]["curves"]["autoencoder/train_loss"]
    assert all(b < a for a, b in zip(ae_loss[:5], ae_loss[1:5]))


def test_layer_freezing_contract(ds):
    rep = run_layer_freezing(ds, subset_sizes=(4, 12), sched=FAST, cnn_cfg=TINY, max_folds=1)
    for s in (4, 12):
        assert rep.mean(f"size{s}/frozen_unchanged") == 1.0
        assert 0 <= rep.mean(f"cv/size{s}/top1") <= 1


def test_transfer_contract():
    ds = synthetic_dataset(SyntheticConfig(n_classes=8, per_class=8, seed=5))
    rep = run_transfer(ds, cs=(2, 4), sched=FAST, cnn_cfg=TINY, fine_tune_max_epochs=3, max_folds=1)
    for c in (2, 4):
        assert rep.mean(f"c{c}/backbone_unchanged") == 1.0
        assert 0 <= rep.mean(f"c{c}/finetune/top1") <= 1
    assert "cost_ratio_c4_vs_c2" in rep.aggregate


def test_remap_with_absent_held_out_class():
    from spectral_forge.experiments import _remap
    # class 7 has no rows in this split; its slot must still exist
    assert _remap(np.array([3, 5, 3]), [5, 3, 7]).tolist() == [1, 0, 1]
    assert _remap(np.array([], dtype=np.int64), [2, 4]).tolist() == []
