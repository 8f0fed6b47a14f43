"""Seeded experiment protocols. Each returns an :class:`ExperimentReport`.

Evaluation layout shared by all protocols: one stratified fold of the
dataset is held out as a fixed test set; the rest is split into ``k``
stratified folds. For CV fold ``f`` the model trains on the other folds,
fold ``f`` drives early stopping and gives the ``cv/*`` metrics, and the
fixed test set gives the ``test/*`` metrics.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass, replace
from enum import Enum

import numpy as np

from . import classical
from .models import (
    AutoencoderConfig, Classifier, CnnConfig, ContrastiveConfig, LatentClassifier, MlpConfig,
    MLP_PRESETS, SganConfig, build_autoencoder, build_cnn, build_contrastive, build_mlp,
    build_sgan, extract_features,
)
from .nn import tensor as T
from .nn.layers import Sequential, checksum
from .nn.losses import nt_xent, weighted_cross_entropy
from .nn.optim import Adam, PlateauTracker, TrainSchedule
from .nn.tensor import Tensor, no_grad
from .preprocess import AugmentationSpec, SpectralDataset, augment_batch, class_weights, shift_spectrum
from .splits import FoldPlan, stratified_kfold, stratified_sample, stratified_subset
from .training import fit_classifier, fit_unsupervised

REPORT_SCHEMA = "spectral-forge/report/v1"

__all__ = [
    "FoldPlan", "stratified_kfold", "topk_accuracy", "confidence_gap", "ExperimentReport",
    "SemiSupSplit", "TransferPlan", "LabelView", "EvalPlan", "make_eval_plan",
    "run_supervised", "run_shift_robustness", "run_sgan", "run_contrastive",
    "run_layer_freezing", "run_autoencoder_features", "run_transfer", "baseline_report",
    "inference_cost_ratio",
]


# -- metrics -------------------------------------------------------------------------

def topk_accuracy(probabilities, labels, k: int = 1) -> float:
    """Fraction of rows whose label is among the ``k`` largest entries.
    Equal scores are ranked by lower class index."""
    P = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels)
    if P.shape[0] == 0:
        raise ValueError("no rows")
    top = np.argsort(-P, axis=1, kind="stable")[:, :k]
    return float(np.mean((top == y[:, None]).any(axis=1)))


def confidence_gap(probabilities) -> float:
    """Mean of top-1 minus top-2 probability."""
    P = np.asarray(probabilities, dtype=np.float64)
    if P.shape[1] < 2:
        return 1.0
    two = -np.partition(-P, 1, axis=1)[:, :2]
    return float(np.mean(two[:, 0] - two[:, 1]))


def score_metrics(P, y, prefix: str) -> dict:
    return {
        f"{prefix}top1": topk_accuracy(P, y, 1),
        f"{prefix}top3": topk_accuracy(P, y, 3),
        f"{prefix}gap": confidence_gap(P),
    }


def knn_scores(train_X, train_y, query_X, num_classes: int) -> np.ndarray:
    """Class scores for 1-NN ranking: minus the distance to each class's
    nearest training row (classes absent from training score -inf), so
    argmax reproduces the 1-NN decision and top-k ranks classes by nearness."""
    S = np.full((len(query_X), num_classes), -np.inf)
    for s in range(0, len(query_X), 512):
        d = np.sqrt(classical._sq_dists(query_X[s:s + 512], train_X))
        for c in np.unique(train_y):
            S[s:s + 512, c] = -d[:, train_y == c].min(axis=1)
    return S


def _scores_to_proba(S) -> np.ndarray:
    """Rank-based pseudo-probabilities with the same class ordering as ``S``."""
    S = np.where(np.isfinite(S), S, np.nanmin(S[np.isfinite(S)]) - 1.0)
    R = np.argsort(np.argsort(S, axis=1, kind="stable"), axis=1).astype(np.float64) + 1.0
    R[:, :] = R / R.sum(axis=1, keepdims=True)
    return R


# -- report --------------------------------------------------------------------------

def _plain(v):
    if is_dataclass(v) and not isinstance(v, type):
        return {k: _plain(x) for k, x in asdict(v).items()}
    if isinstance(v, Enum):
        return v.value
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return v


@dataclass
class ExperimentReport:
    """Per-fold metrics with their arithmetic-mean aggregate.

    ``config`` is a flat-ish snapshot sufficient to rerun the experiment;
    ``extra`` carries protocol-specific tables; ``arrays`` holds curves that
    are exported as CSV rather than embedded in JSON; ``wall_clock`` is kept
    out of the JSON so reports stay byte-identical across reruns.
    """

    experiment_kind: str
    config: dict
    seed: int
    folds: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def aggregate(self) -> dict:
        keys = []
        for f in self.folds:
            keys += [k for k in f["metrics"] if k not in keys]
        out = {}
        for k in keys:
            vals = [f["metrics"][k] for f in self.folds if k in f["metrics"]]
            out[k] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)}
        return out

    def mean(self, key: str) -> float:
        return self.aggregate[key]["mean"]

    @property
    def confidence_gap_mean(self) -> float | None:
        agg = self.aggregate
        for k in ("cv/gap", "test/gap"):
            if k in agg:
                return agg[k]["mean"]
        return None

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "experiment_kind": self.experiment_kind,
            "seed": self.seed,
            "config": _plain(self.config),
            "folds": _plain(self.folds),
            "aggregate": self.aggregate,
            "confidence_gap_mean": self.confidence_gap_mean,
            "extra": _plain(self.extra),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        return cls(d["experiment_kind"], d["config"], d["seed"], d["folds"], d.get("extra", {}))


# -- splits and label guard -------------------------------------------------------------

@dataclass(frozen=True)
class EvalPlan:
    """Fixed test indices plus a k-fold plan over the remaining indices."""

    test_idx: np.ndarray
    dev_idx: np.ndarray
    cv: FoldPlan

    def fold(self, f: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Dataset indices ``(train, val, test)`` for CV fold ``f``."""
        tr, va = self.cv.fold(f)
        return self.dev_idx[tr], self.dev_idx[va], self.test_idx


def make_eval_plan(labels, k: int = 5, seed: int = 0) -> EvalPlan:
    labels = np.asarray(labels)
    outer = stratified_kfold(labels, k, seed)
    test = np.flatnonzero(outer.assignments == 0)
    dev = np.flatnonzero(outer.assignments != 0)
    return EvalPlan(test, dev, stratified_kfold(labels[dev], k, seed + 1))


@dataclass(frozen=True)
class SemiSupSplit:
    labeled_fraction: float
    labeled: np.ndarray
    unlabeled: np.ndarray
    seed: int

    def __post_init__(self):
        if np.intersect1d(self.labeled, self.unlabeled).size:
            raise ValueError("labeled and unlabeled partitions overlap")


def make_semisup_split(indices, labels, fraction: float, seed: int = 0) -> SemiSupSplit:
    """Stratified labeled subset of ``indices``; the rest is unlabeled.
    Built by the harness from true labels before any learner runs."""
    indices = np.asarray(indices)
    pos = stratified_subset(np.asarray(labels)[indices], fraction, seed)
    lab = indices[pos]
    unl = np.setdiff1d(indices, lab)
    return SemiSupSplit(fraction, np.sort(lab), unl, seed)


class LabelView:
    """Read-only label access that counts reads per index."""

    def __init__(self, labels):
        self._labels = np.asarray(labels)
        self.reads = np.zeros(self._labels.size, dtype=np.int64)

    def __len__(self):
        return self._labels.size

    def __getitem__(self, idx):
        idx = np.arange(self._labels.size)[idx]
        np.add.at(self.reads, np.atleast_1d(idx), 1)
        return self._labels[idx]

    def reads_on(self, indices) -> int:
        return int(self.reads[np.asarray(indices, dtype=np.int64)].sum())


@dataclass(frozen=True)
class TransferPlan:
    c: int
    held_out: tuple
    pretrain: tuple
    fine_tune_lr: float = 1e-5
    max_epochs: int = 50

    def __post_init__(self):
        if set(self.held_out) & set(self.pretrain):
            raise ValueError("pretrain and fine-tune class sets overlap")
        if len(self.held_out) != self.c:
            raise ValueError("held_out must contain exactly c classes")


def make_transfer_plans(num_classes: int, cs=(5, 10, 15, 20), seed: int = 0, **kw) -> list[TransferPlan]:
    """Nested held-out class sets drawn from one seeded permutation."""
    perm = np.random.default_rng(seed).permutation(num_classes)
    plans = []
    for c in cs:
        if c >= num_classes:
            raise ValueError(f"c={c} leaves no pretraining classes")
        held = tuple(sorted(int(x) for x in perm[:c]))
        rest = tuple(sorted(int(x) for x in perm[c:]))
        plans.append(TransferPlan(c, held, rest, **kw))
    return plans


# -- helpers ---------------------------------------------------------------------------

def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, tags)]))


def _sub_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, tags)]).generate_state(1)[0])


def _map_folds(fn, tasks, jobs: int = 1):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _fold_ids(plan: EvalPlan, max_folds: int | None) -> list[int]:
    n = plan.cv.k if max_folds is None else min(plan.cv.k, max_folds)
    return list(range(n))


def _data(ds: SpectralDataset):
    return np.asarray(ds.rows, dtype=np.float32), np.asarray(ds.labels, dtype=np.int64)


def _sched_for(sched: TrainSchedule, seed: int) -> TrainSchedule:
    return replace(sched, seed=seed)


def _cnn(cfg: CnnConfig, C: int, seed: int):
    return build_cnn(replace(cfg, num_classes=C, seed=seed))


def _train_cnn(cfg, X, y, tr, va, C, sched, seed, aug_spec=None, augment_prob=0.0):
    model = _cnn(cfg, C, seed)
    hist = fit_classifier(model, X[tr], y[tr], num_classes=C, sched=_sched_for(sched, seed),
                          Xval=X[va], yval=y[va], aug_spec=aug_spec, augment_prob=augment_prob,
                          rng=_rng(seed, 1))
    return model, hist


def _curve_dict(prefix, hist) -> dict:
    return {f"{prefix}{k}": v for k, v in hist.curves().items()}


# -- supervised ------------------------------------------------------------------------

MODEL_KINDS = ("CNN", "MLP_S", "MLP_M", "MLP_L", "CNN_KNN", "KNN")
_MLP = {"MLP_S": "SMALL", "MLP_M": "MID", "MLP_L": "LARGE"}


def _supervised_fold(task):
    kind, ds, plan, f, sched, cnn_cfg, aug_spec, augment_prob, seed = task
    X, y = _data(ds)
    C = ds.num_classes
    tr, va, te = plan.fold(f)
    s = _sub_seed(seed, f)
    curves, metrics = {}, {}
    if kind == "KNN":
        F = classical.peak_features(X)
        for name, idx in (("cv/", va), ("test/", te)):
            metrics.update(score_metrics(_scores_to_proba(knn_scores(F[tr], y[tr], F[idx], C)), y[idx], name))
            metrics[name + "top1"] = float(np.mean(classical.knn_predict(F[tr], y[tr], F[idx], num_classes=C) == y[idx]))
        return {"fold": f, "metrics": metrics, "curves": curves}
    if kind in _MLP:
        model = build_mlp(MlpConfig(num_classes=C, hidden=MLP_PRESETS[_MLP[kind]], seed=s,
                                    input_len=X.shape[1]))
        hist = fit_classifier(model, X[tr], y[tr], num_classes=C, sched=_sched_for(sched, s),
                              Xval=X[va], yval=y[va], aug_spec=aug_spec, augment_prob=augment_prob,
                              rng=_rng(s, 1))
    else:
        model, hist = _train_cnn(replace(cnn_cfg, input_len=X.shape[1]), X, y, tr, va, C, sched, s,
                                 aug_spec, augment_prob)
    curves = hist.curves()
    if kind == "CNN_KNN":
        Ftr = extract_features(model, X[tr])
        for name, idx in (("cv/", va), ("test/", te)):
            Fq = extract_features(model, X[idx])
            metrics.update(score_metrics(_scores_to_proba(knn_scores(Ftr, y[tr], Fq, C)), y[idx], name))
            metrics[name + "top1"] = float(np.mean(classical.knn_predict(Ftr, y[tr], Fq, num_classes=C) == y[idx]))
    else:
        for name, idx in (("cv/", va), ("test/", te)):
            metrics.update(score_metrics(model.predict_proba(X[idx]), y[idx], name))
    metrics["epochs"] = float(hist.epochs)
    return {"fold": f, "metrics": metrics, "curves": curves}


def run_supervised(model_kind: str, ds: SpectralDataset, *, plan: EvalPlan | None = None,
                   sched: TrainSchedule = TrainSchedule(), cnn_cfg: CnnConfig = CnnConfig(),
                   augment: bool = False, augment_prob: float = 0.5,
                   aug_spec: AugmentationSpec | None = None, seed: int = 0,
                   max_folds: int | None = None, jobs: int = 1) -> ExperimentReport:
    """Class-weighted training of one model family, evaluated per CV fold."""
    model_kind = model_kind.upper()
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
    t0 = time.perf_counter()
    plan = make_eval_plan(ds.labels, 5, seed) if plan is None else plan
    if augment and aug_spec is None:
        aug_spec = AugmentationSpec(rng_seed=seed)
    prob = augment_prob if augment else 0.0
    tasks = [(model_kind, ds, plan, f, sched, cnn_cfg, aug_spec, prob, seed) for f in _fold_ids(plan, max_folds)]
    folds = _map_folds(_supervised_fold, tasks, jobs)
    cfg = {"model_kind": model_kind, "dataset": ds.digest(), "dataset_kind": ds.kind,
           "num_classes": ds.num_classes, "schedule": sched, "cnn": cnn_cfg,
           "augment": augment, "augment_prob": prob, "optimizer": "adam", "max_folds": max_folds}
    rep = ExperimentReport("supervised", cfg, seed, folds)
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -- shift robustness ------------------------------------------------------------------

DEFAULT_VARIANTS = ((2, 3), (64, 3), (2, 1), (2, 10))


def shifted_scores(model, X, y, shift: int) -> dict:
    """Top-1/top-3 averaged over shifting by ``+shift`` and ``-shift``."""
    if shift == 0:
        P = model.predict_proba(X)
        return {"top1": topk_accuracy(P, y, 1), "top3": topk_accuracy(P, y, 3)}, [P]
    res, Ps = [], []
    for d in (shift, -shift):
        Xs = np.stack([shift_spectrum(r, d) for r in X]).astype(np.float32)
        P = model.predict_proba(Xs)
        Ps.append(P)
        res.append((topk_accuracy(P, y, 1), topk_accuracy(P, y, 3)))
    return {"top1": float(np.mean([r[0] for r in res])), "top3": float(np.mean([r[1] for r in res]))}, Ps


def _shift_fold(task):
    ds, plan, f, sched, cnn_cfg, variants, shifts, probes, seed = task
    X, y = _data(ds)
    C = ds.num_classes
    tr, va, te = plan.fold(f)
    metrics, curves, probe_out = {}, {}, {}
    for vi, (m, n) in enumerate(variants):
        s = _sub_seed(seed, f, vi)
        cfg = replace(cnn_cfg, pool_size=m, num_conv_blocks=n, input_len=X.shape[1])
        if len(cnn_cfg.conv_channels) == 3 and n != 3:
            cfg = replace(cfg, conv_channels=(), kernel_sizes=())
        model, hist = _train_cnn(cfg, X, y, tr, va, C, sched, s)
        tag = f"m{m}_n{n}"
        curves.update(_curve_dict(tag + "/", hist))
        for name, idx in (("cv", va), ("test", te)):
            for sh in shifts:
                sc, Ps = shifted_scores(model, X[idx], y[idx], sh)
                metrics[f"{name}/{tag}/shift{sh}/top1"] = sc["top1"]
                metrics[f"{name}/{tag}/shift{sh}/top3"] = sc["top3"]
                if name == "test" and probes is not None:
                    for p in probes:
                        j = int(np.flatnonzero(te == p)[0])
                        tops = [np.argsort(-P[j], kind="stable")[:3].tolist() for P in Ps]
                        probe_out.setdefault(f"{tag}/shift{sh}", {})[str(p)] = [
                            [ds.class_names[c] for c in t] for t in tops]
    return {"fold": f, "metrics": metrics, "curves": curves, "probes": probe_out}


def run_shift_robustness(ds: SpectralDataset, *, variants=DEFAULT_VARIANTS, shifts=(0, 15, 30),
                         plan: EvalPlan | None = None, sched: TrainSchedule = TrainSchedule(),
                         cnn_cfg: CnnConfig = CnnConfig(), n_probes: int = 3, seed: int = 0,
                         max_folds: int | None = None, jobs: int = 1) -> ExperimentReport:
    """Train each (m, n) pooling variant on unshifted data and score it on
    copies of the held-out rows displaced by +/- each shift (in grid steps)."""
    t0 = time.perf_counter()
    plan = make_eval_plan(ds.labels, 5, seed) if plan is None else plan
    probes = [int(i) for i in plan.test_idx[:n_probes]]
    variants = tuple((int(m), int(n)) for m, n in variants)
    shifts = tuple(int(s) for s in shifts)
    tasks = [(ds, plan, f, sched, cnn_cfg, variants, shifts, probes, seed) for f in _fold_ids(plan, max_folds)]
    folds = _map_folds(_shift_fold, tasks, jobs)
    rep = ExperimentReport("shift_robustness", {
        "dataset": ds.digest(), "dataset_kind": ds.kind, "variants": [list(v) for v in variants],
        "shifts": list(shifts), "shift_signs": "both, averaged", "schedule": sched, "cnn": cnn_cfg,
        "max_folds": max_folds}, seed, folds)
    agg = rep.aggregate
    grid = {}
    for m, n in variants:
        tag = f"m{m}_n{n}"
        grid[tag] = {str(sh): [agg[f"cv/{tag}/shift{sh}/top1"]["mean"], agg[f"cv/{tag}/shift{sh}/top3"]["mean"]]
                     for sh in shifts}
    rep.extra = {"grid_cv_top1_top3": grid, "probe_indices": probes,
                 "probe_labels": [ds.class_names[ds.labels[p]] for p in probes]}
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -- SGAN ------------------------------------------------------------------------------

def sgan_discriminator_loss(logits: Tensor, n_real: int, N: int, labeled_targets=None, weights=None) -> Tensor:
    """Rows are ``[labeled | unlabeled | fake]``. Labeled rows take cross-entropy
    over the first N logits; every real row adds ``-log(1 - p_fake)``; fake
    rows add ``-log p_fake``."""
    lse_all = T.logsumexp(logits, axis=1)
    lse_real = T.logsumexp(logits[:, :N], axis=1)
    log_not_fake = lse_real - lse_all
    log_fake = logits[:, N] - lse_all
    n_lab = 0 if labeled_targets is None else len(labeled_targets)
    loss = -(log_not_fake[:n_real].mean()) - log_fake[n_real:].mean()
    if n_lab:
        loss = loss + weighted_cross_entropy(logits[:n_lab, :N], labeled_targets, weights)
    return loss


def sgan_generator_loss(logits: Tensor, N: int) -> Tensor:
    """Non-saturating: ``-log(1 - p_fake)`` on generated rows."""
    return -(T.logsumexp(logits[:, :N], axis=1) - T.logsumexp(logits, axis=1)).mean()


def train_sgan(sgan, X_lab, y_lab, X_unl, *, N: int, sched: TrainSchedule, Xval=None, yval=None,
               rng: np.random.Generator, weights=None) -> dict:
    """Alternating 1:1 discriminator/generator updates. Early stopping
    follows the validation cross-entropy of the class part of the head."""
    D, G = sgan.discriminator, sgan.generator
    optD = Adam(D.parameters(), lr=sched.lr0, betas=(0.5, 0.999))
    optG = Adam(G.parameters(), lr=sched.lr0, betas=(0.5, 0.999))
    tracker = PlateauTracker(sched)
    bs = sched.batch_size
    weights = class_weights(y_lab, N) if weights is None else weights
    lo, hi = G.cfg.data_range
    hist = {"d_loss": [], "g_loss": [], "val_loss": [], "gen_min": [], "gen_max": [], "lr": []}
    best = [p.data.copy() for p in D.parameters()]
    n_steps = max(1, math.ceil(max(len(X_unl), len(X_lab)) / bs))
    finite = True
    for epoch in range(sched.max_epochs):
        optD.lr = optG.lr = tracker.lr
        D.train(); G.train()
        dl = gl = 0.0
        lab_order = np.concatenate([rng.permutation(len(X_lab)) for _ in range(math.ceil(n_steps * bs / len(X_lab)) + 1)])
        unl_order = rng.permutation(len(X_unl)) if len(X_unl) else np.zeros(0, dtype=int)
        gmin, gmax = np.inf, -np.inf
        for step in range(n_steps):
            li = lab_order[step * bs:(step + 1) * bs]
            ui = unl_order[step * bs:(step + 1) * bs] if len(X_unl) else np.zeros(0, dtype=int)
            real = np.concatenate([X_lab[li], X_unl[ui]]) if len(ui) else X_lab[li]
            fake = G.sample(len(li), rng)
            gmin, gmax = min(gmin, float(fake.data.min())), max(gmax, float(fake.data.max()))
            D.zero_grad()
            x = np.concatenate([real, fake.data.reshape(len(li), -1)]).astype(np.float32)
            loss = sgan_discriminator_loss(D(x), len(real), N, y_lab[li], weights)
            loss.backward()
            optD.step()
            dl += float(loss.data)
            G.zero_grad(); D.zero_grad()
            gloss = sgan_generator_loss(D(G.sample(len(li), rng)), N)
            gloss.backward()
            D.zero_grad()
            optG.step()
            gl += float(gloss.data)
        if not (np.isfinite(gmin) and np.isfinite(gmax)) or gmin < lo - 1e-5 or gmax > hi + 1e-5:
            finite = False
        val = dl / n_steps
        if Xval is not None:
            val = _class_part_loss(sgan, Xval, yval, N, weights)
        for k, v in (("d_loss", dl / n_steps), ("g_loss", gl / n_steps), ("val_loss", val),
                     ("gen_min", gmin), ("gen_max", gmax), ("lr", tracker.lr)):
            hist[k].append(float(v))
        if tracker.update(val):
            best = [p.data.copy() for p in D.parameters()]
        if tracker.stop:
            break
    for p, b in zip(D.parameters(), best):
        p.data = b
    D.eval(); G.eval()
    hist["generator_in_range"] = finite
    return hist


def _class_part_loss(sgan, X, y, N, weights) -> float:
    P = sgan.class_proba(X)
    w = np.asarray(weights)[y]
    return float(-(w * np.log(np.maximum(P[np.arange(len(y)), y], 1e-30))).sum() / w.sum())


def _semisup_fold_common(ds, plan, f, fraction, seed):
    X, y = _data(ds)
    tr, va, te = plan.fold(f)
    split = make_semisup_split(tr, y, fraction, _sub_seed(seed, f, 99))
    view = LabelView(y)
    return X, y, tr, va, te, split, view


def _supervised_on_subset(cnn_cfg, X, y_lab, lab_idx, Xva, yva, C, sched, s):
    model = _cnn(replace(cnn_cfg, input_len=X.shape[1]), C, s)
    hist = fit_classifier(model, X[lab_idx], y_lab, num_classes=C, sched=_sched_for(sched, s),
                          Xval=Xva, yval=yva, rng=_rng(s, 1))
    return model, hist


def _sgan_fold(task):
    ds, plan, f, fraction, cfg, sched, seed = task
    X, y, tr, va, te, split, view = _semisup_fold_common(ds, plan, f, fraction, seed)
    C = ds.num_classes
    s = _sub_seed(seed, f)
    y_lab = view[split.labeled]
    y_va, y_te = view[va], view[te]
    base, bh = _supervised_on_subset(cfg.backbone, X, y_lab, split.labeled, X[va], y_va, C, sched, s)
    lo, hi = float(X.min()), float(X.max())
    sgan = build_sgan(replace(cfg, num_classes=C, out_len=X.shape[1], data_range=(lo, hi), seed=s))
    hist = train_sgan(sgan, X[split.labeled], y_lab, X[split.unlabeled], N=C, sched=sched,
                      Xval=X[va], yval=y_va, rng=_rng(s, 2))
    metrics = {}
    for name, idx, yy in (("cv/", va, y_va), ("test/", te, y_te)):
        metrics.update(score_metrics(sgan.class_proba(X[idx]), yy, name))
        metrics.update(score_metrics(base.predict_proba(X[idx]), yy, "baseline_" + name))
    metrics["unlabeled_label_reads"] = float(view.reads_on(split.unlabeled))
    metrics["generator_in_range"] = float(hist.pop("generator_in_range"))
    real = X[split.labeled[0]]
    fake = sgan.generator.sample(1, _rng(s, 3)).data.reshape(-1)
    curves = {**{f"sgan/{k}": v for k, v in hist.items()}, **_curve_dict("baseline/", bh)}
    return {"fold": f, "metrics": metrics, "curves": curves,
            "pair": np.stack([real, fake]).astype(np.float64)}


def run_sgan(ds: SpectralDataset, *, fraction: float = 0.1, cfg: SganConfig = SganConfig(),
             plan: EvalPlan | None = None, sched: TrainSchedule = TrainSchedule(), seed: int = 0,
             max_folds: int | None = None, jobs: int = 1) -> ExperimentReport:
    """Semi-supervised GAN against a supervised CNN trained on the same labeled rows."""
    t0 = time.perf_counter()
    plan = make_eval_plan(ds.labels, 5, seed) if plan is None else plan
    tasks = [(ds, plan, f, fraction, cfg, sched, seed) for f in _fold_ids(plan, max_folds)]
    folds = _map_folds(_sgan_fold, tasks, jobs)
    pairs = {f"sample_pair_fold{r['fold']}": r.pop("pair") for r in folds}
    rep = ExperimentReport("sgan", {"dataset": ds.digest(), "dataset_kind": ds.kind, "fraction": fraction,
                                    "sgan": cfg, "schedule": sched, "update_ratio": "1:1",
                                    "max_folds": max_folds}, seed, folds, arrays=pairs)
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -- contrastive -----------------------------------------------------------------------

class HeadProbe(Classifier):
    """Dropout and a linear head over precomputed feature vectors."""

    kind = "probe"

    def __init__(self, feature_dim: int, num_classes: int, dropout_p: float, seed: int):
        super().__init__(Sequential([]), feature_dim, num_classes, dropout_p, np.random.default_rng(seed))

    @staticmethod
    def _as_input(x) -> Tensor:
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def train_head_on_features(encoder: Classifier, F_tr, y_tr, F_va, y_va, C, sched, seed) -> tuple:
    """Train only ``encoder.head`` (after dropout) on precomputed features.

    The body is never touched, so this is equivalent to training the full
    model with every body parameter frozen, but it avoids re-running the
    body each epoch.
    """
    probe = HeadProbe(encoder.feature_dim, C, encoder.dropout.p, seed)
    if encoder.num_classes == C:
        probe.head.weight.data = encoder.head.weight.data.copy()
        probe.head.bias.data = encoder.head.bias.data.copy()
    hist = fit_classifier(probe, F_tr.astype(np.float32), y_tr, num_classes=C, sched=_sched_for(sched, seed),
                          Xval=F_va.astype(np.float32), yval=y_va, rng=_rng(seed, 5))
    encoder.head = probe.head
    encoder.num_classes = C
    return hist


def nt_xent_step_loss(model, xb, rng, spec: AugmentationSpec, temperature: float):
    if len(xb) < 2:
        return None
    a = augment_batch(xb, spec, rng, 1.0)
    b = augment_batch(xb, spec, rng, 1.0)
    return nt_xent(model(np.concatenate([a, b]).astype(np.float32)), temperature)


def augmentation_agreement(encoder: Classifier, X, spec: AugmentationSpec, rng, n_triples: int = 200) -> float:
    """Fraction of (x, aug(x), other) triples where the augmented view is
    closer in cosine than a random other spectrum."""
    n = len(X)
    i = rng.integers(0, n, n_triples)
    j = (i + rng.integers(1, n, n_triples)) % n
    A = extract_features(encoder, X[i])
    B = extract_features(encoder, augment_batch(X[i], spec, rng, 1.0).astype(np.float32))
    O = extract_features(encoder, X[j])

    def cos(u, v):
        return (u * v).sum(1) / np.maximum(np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1), 1e-12)

    return float(np.mean(cos(A, B) > cos(A, O)))


def _contrastive_fold(task):
    ds, plan, f, fraction, cfg, sched, pre_sched, aug_spec, seed = task
    X, y, tr, va, te, split, view = _semisup_fold_common(ds, plan, f, fraction, seed)
    C = ds.num_classes
    s = _sub_seed(seed, f)
    y_lab = view[split.labeled]
    y_va, y_te = view[va], view[te]
    base, bh = _supervised_on_subset(cfg.backbone, X, y_lab, split.labeled, X[va], y_va, C, sched, s)
    model = build_contrastive(replace(cfg, backbone=replace(cfg.backbone, num_classes=C, input_len=X.shape[1]), seed=s))
    pre = fit_unsupervised(model, lambda m, xb, r: nt_xent_step_loss(m, xb, r, aug_spec, cfg.temperature),
                           X[tr], sched=_sched_for(pre_sched, s), rng=_rng(s, 4))
    enc = model.encoder
    agreement = augmentation_agreement(enc, X[va], aug_spec, _rng(s, 6))
    enc.body.freeze()
    body_sum = checksum(enc.body.parameters())
    F = {k: extract_features(enc, X[idx]) for k, idx in (("lab", split.labeled), ("va", va), ("te", te))}
    hh = train_head_on_features(enc, F["lab"], y_lab, F["va"], y_va, C, sched, s)
    metrics = {}
    for name, key, yy, idx in (("cv/", "va", y_va, va), ("test/", "te", y_te, te)):
        P = _head_proba(enc, F[key])
        metrics.update(score_metrics(P, yy, name))
        metrics.update(score_metrics(base.predict_proba(X[idx]), yy, "baseline_" + name))
    metrics["augmentation_agreement"] = agreement
    metrics["unlabeled_label_reads"] = float(view.reads_on(split.unlabeled))
    metrics["encoder_frozen"] = float(checksum(enc.body.parameters()) == body_sum)
    curves = {**_curve_dict("pretrain/", pre), **_curve_dict("head/", hh), **_curve_dict("baseline/", bh)}
    return {"fold": f, "metrics": metrics, "curves": curves}


def _head_proba(model: Classifier, F) -> np.ndarray:
    with no_grad():
        logits = model.head(Tensor(np.asarray(F, dtype=np.float32))).data.astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def run_contrastive(ds: SpectralDataset, *, fraction: float = 0.1, cfg: ContrastiveConfig = ContrastiveConfig(),
                    plan: EvalPlan | None = None, sched: TrainSchedule = TrainSchedule(),
                    pretrain_sched: TrainSchedule | None = None, aug_spec: AugmentationSpec | None = None,
                    seed: int = 0, max_folds: int | None = None, jobs: int = 1) -> ExperimentReport:
    """NT-Xent pretraining on all training rows (labels unread), then a
    linear head on the frozen encoder using only the labeled subset."""
    t0 = time.perf_counter()
    plan = make_eval_plan(ds.labels, 5, seed) if plan is None else plan
    aug_spec = AugmentationSpec(rng_seed=seed) if aug_spec is None else aug_spec
    pre = replace(sched, batch_size=max(sched.batch_size, 64)) if pretrain_sched is None else pretrain_sched
    tasks = [(ds, plan, f, fraction, cfg, sched, pre, aug_spec, seed) for f in _fold_ids(plan, max_folds)]
    folds = _map_folds(_contrastive_fold, tasks, jobs)
    rep = ExperimentReport("contrastive", {"dataset": ds.digest(), "dataset_kind": ds.kind, "fraction": fraction,
                                           "contrastive": cfg, "schedule": sched, "pretrain_schedule": pre,
                                           "augmentation": aug_spec, "max_folds": max_folds}, seed, folds)
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -- layer freezing ---------------------------------------------------------------------

FROZEN_BLOCKS = (1, 2)


def _freeze_fold(task):
    ds, plan, f, sizes, cnn_cfg, sched, seed = task
    X, y = _data(ds)
    C = ds.num_classes
    tr, va, te = plan.fold(f)
    cfg = replace(cnn_cfg, input_len=X.shape[1])
    metrics, curves = {}, {}
    s0 = _sub_seed(seed, f, 0)
    full, fh = _train_cnn(cfg, X, y, tr, va, C, sched, s0)
    curves.update(_curve_dict("full/", fh))
    for name, idx in (("cv/", va), ("test/", te)):
        metrics.update({name + "full/" + k.split("/")[-1]: v
                        for k, v in score_metrics(full.predict_proba(X[idx]), y[idx], "").items()})
    for size in sizes:
        s = _sub_seed(seed, f, size)
        sub = tr[stratified_sample(y[tr], int(size), s)]
        pre, ph = _train_cnn(cfg, X, y, sub, va, C, sched, s)
        model = _cnn(cfg, C, _sub_seed(seed, f, size, 1))
        for dst, src in zip(model.block_parameters(FROZEN_BLOCKS), pre.block_parameters(FROZEN_BLOCKS)):
            dst.data = src.data.copy()
            dst.requires_grad = False
        before = checksum(model.block_parameters(FROZEN_BLOCKS))
        hist = fit_classifier(model, X[tr], y[tr], num_classes=C, sched=_sched_for(sched, s),
                              Xval=X[va], yval=y[va], rng=_rng(s, 1))
        metrics[f"size{size}/frozen_unchanged"] = float(checksum(model.block_parameters(FROZEN_BLOCKS)) == before)
        metrics[f"size{size}/pretrain_rows"] = float(len(sub))
        for name, idx in (("cv/", va), ("test/", te)):
            for k, v in score_metrics(model.predict_proba(X[idx]), y[idx], "").items():
                metrics[f"{name}size{size}/{k}"] = v
        curves.update(_curve_dict(f"size{size}/pretrain/", ph))
        curves.update(_curve_dict(f"size{size}/finetune/", hist))
    return {"fold": f, "metrics": metrics, "curves": curves}


def run_layer_freezing(ds: SpectralDataset, *, subset_sizes=(80, 200, 848), plan: EvalPlan | None = None,
                       sched: TrainSchedule = TrainSchedule(), cnn_cfg: CnnConfig = CnnConfig(),
                       seed: int = 0, max_folds: int | None = None, jobs: int = 1) -> ExperimentReport:
    """Pretrain on a size-limited subset, freeze conv blocks 1-2, retrain the
    rest from fresh weights on the whole training split. An end-to-end CNN on
    the same split is trained alongside as the reference."""
    t0 = time.perf_counter()
    plan = make_eval_plan(ds.labels, 5, seed) if plan is None else plan
    sizes = tuple(int(s) for s in subset_sizes)
    tasks = [(ds, plan, f, sizes, cnn_cfg, sched, seed) for f in _fold_ids(plan, max_folds)]
    folds = _map_folds(_freeze_fold, tasks, jobs)
    rep = ExperimentReport("layer_freezing", {"dataset": ds.digest(), "dataset_kind": ds.kind,
                                              "subset_sizes": list(sizes), "frozen_blocks": list(FROZEN_BLOCKS),
                                              "schedule": sched, "cnn": cnn_cfg, "max_folds": max_folds},
                           seed, folds)
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -- autoencoder -----------------------------------------------------------------------

def _ae_fold(task):
    ds, plan, f, fraction, pretrain_fraction, cfg, cnn_cfg, sched, seed = task
    X, y, tr, va, te, split, view = _semisup_fold_common(ds, plan, f, fraction, seed)
    C = ds.num_classes
    s = _sub_seed(seed, f)
    rng = _rng(s, 7)
    n_pre = max(2, int(round(pretrain_fraction * len(split.unlabeled))))
    pre_idx = np.sort(rng.choice(split.unlabeled, size=min(n_pre, len(split.unlabeled)), replace=False))
    y_lab = view[split.labeled]
    y_va, y_te = view[va], view[te]
    base, bh = _supervised_on_subset(cnn_cfg, X, y_lab, split.labeled, X[va], y_va, C, sched, s)
    ae = build_autoencoder(replace(cfg, input_len=X.shape[1], seed=s))
    ah = fit_unsupervised(ae, lambda m, xb, r: m.loss(xb), X[pre_idx], sched=_sched_for(sched, s),
                          Xval=X[va], rng=_rng(s, 8), min_epochs=5)
    ae.freeze()
    enc_sum = checksum(ae.encoder.parameters())
    H = {}
    with no_grad():
        for k, idx in (("lab", split.labeled), ("va", va), ("te", te)):
            H[k] = ae.encode(X[idx]).data
    clf = LatentClassifier(cfg.latent_dim, C, seed=s)
    ch = fit_classifier(clf, H["lab"], y_lab, num_classes=C, sched=_sched_for(sched, s),
                        Xval=H["va"], yval=y_va, rng=_rng(s, 9))
    metrics = {}
    for name, key, yy, idx in (("cv/", "va", y_va, va), ("test/", "te", y_te, te)):
        metrics.update(score_metrics(clf.predict_proba(H[key]), yy, name))
        metrics.update(score_metrics(base.predict_proba(X[idx]), yy, "baseline_" + name))
    metrics["latent_dim"] = float(H["lab"].shape[1])
    metrics["pretrain_rows"] = float(len(pre_idx))
    metrics["pretrain_overlap_with_classifier_rows"] = float(np.intersect1d(pre_idx, split.labeled).size)
    metrics["unlabeled_label_reads"] = float(view.reads_on(split.unlabeled))
    metrics["encoder_frozen"] = float(checksum(ae.encoder.parameters()) == enc_sum)
    curves = {**_curve_dict("autoencoder/", ah), **_curve_dict("classifier/", ch), **_curve_dict("baseline/", bh)}
    return {"fold": f, "metrics": metrics, "curves": curves}


def run_autoencoder_features(ds: SpectralDataset, *, fraction: float = 0.1, pretrain_fraction: float = 0.5,
                             cfg: AutoencoderConfig = AutoencoderConfig(), cnn_cfg: CnnConfig = CnnConfig(),
                             plan: EvalPlan | None = None, sched: TrainSchedule = TrainSchedule(), seed: int = 0,
                             max_folds: int | None = None, jobs: int = 1) -> ExperimentReport:
    """Sparse autoencoder pretrained on unlabeled training rows that are
    never used by the classifier; a dense classifier then learns from the
    frozen latent codes of the labeled rows."""
    t0 = time.perf_counter()
    plan = make_eval_plan(ds.labels, 5, seed) if plan is None else plan
    tasks = [(ds, plan, f, fraction, pretrain_fraction, cfg, cnn_cfg, sched, seed) for f in _fold_ids(plan, max_folds)]
    folds = _map_folds(_ae_fold, tasks, jobs)
    rep = ExperimentReport("autoencoder", {"dataset": ds.digest(), "dataset_kind": ds.kind, "fraction": fraction,
                                           "pretrain_fraction": pretrain_fraction, "autoencoder": cfg,
                                           "baseline_cnn": cnn_cfg, "schedule": sched, "max_folds": max_folds}, seed, folds)
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -- transfer --------------------------------------------------------------------------

def inference_cost_ratio(model_a, model_b, X, repeats: int = 7) -> float:
    """Ratio of best-of-``repeats`` forward-pass times, ``b / a``, on the same batch."""
    X = np.asarray(X, dtype=np.float32)
    ta, tb = [], []
    for _ in range(repeats):
        for m, acc in ((model_a, ta), (model_b, tb)):
            t = time.perf_counter()
            m.predict_proba(X)
            acc.append(time.perf_counter() - t)
    return min(tb) / min(ta)


def _remap(y, classes):
    lut = -np.ones(max(int(np.max(y, initial=-1)), max(classes)) + 1, dtype=np.int64)
    lut[list(classes)] = np.arange(len(classes))
    return lut[y]


def transfer_one(X, y, tr, va, te, tplan: TransferPlan, cfg: CnnConfig, sched: TrainSchedule, seed: int):
    """Pretrain on the ``n - c`` classes, swap in a ``c``-way head and fine-tune
    only the head at a small learning rate. Returns metrics, curves and the
    fine-tuned model."""
    pre_cls, new_cls = np.array(tplan.pretrain), np.array(tplan.held_out)

    def part(idx, cls):
        keep = idx[np.isin(y[idx], cls)]
        return keep, _remap(y[keep], cls)

    (ptr, yptr), (pva, ypva), (pte, ypte) = (part(i, pre_cls) for i in (tr, va, te))
    (ftr, yftr), (fva, yfva), (fte, yfte) = (part(i, new_cls) for i in (tr, va, te))
    model = _cnn(replace(cfg, input_len=X.shape[1]), len(pre_cls), seed)
    ph = fit_classifier(model, X[ptr], yptr, num_classes=len(pre_cls), sched=_sched_for(sched, seed),
                        Xval=X[pva], yval=ypva, rng=_rng(seed, 1))
    metrics = {}
    metrics.update(score_metrics(model.predict_proba(X[pte]), ypte, "pretrain/"))
    model.body.freeze()
    backbone = checksum(model.body.parameters())
    model.replace_head(tplan.c, np.random.default_rng(seed + 1))
    ft = replace(sched, lr0=tplan.fine_tune_lr, max_epochs=tplan.max_epochs, seed=seed)
    feats = {k: extract_features(model, X[i]) for k, i in (("tr", ftr), ("va", fva), ("te", fte))}
    fh = train_head_on_features(model, feats["tr"], yftr, feats["va"], yfva, tplan.c, ft, seed)
    metrics.update(score_metrics(model.predict_proba(X[fte]), yfte, "finetune/"))
    metrics["backbone_unchanged"] = float(checksum(model.body.parameters()) == backbone)
    return metrics, {**_curve_dict("pretrain/", ph), **_curve_dict("finetune/", fh)}, model


def _transfer_fold(task):
    ds, plan, f, tplans, cnn_cfg, sched, seed = task
    X, y = _data(ds)
    tr, va, te = plan.fold(f)
    metrics, curves, models = {}, {}, {}
    for tp in tplans:
        m, c, model = transfer_one(X, y, tr, va, te, tp, cnn_cfg, sched, _sub_seed(seed, f, tp.c))
        metrics.update({f"c{tp.c}/{k}": v for k, v in m.items()})
        curves.update({f"c{tp.c}/{k}": v for k, v in c.items()})
        models[tp.c] = model
    cs = sorted(models)
    if len(cs) >= 2:
        batch = X[te[: min(len(te), 64)]]
        metrics[f"cost_ratio_c{cs[-1]}_vs_c{cs[0]}"] = inference_cost_ratio(models[cs[0]], models[cs[-1]], batch)
    return {"fold": f, "metrics": metrics, "curves": curves}


def run_transfer(ds: SpectralDataset, *, cs=(5, 10, 15, 20), plan: EvalPlan | None = None,
                 sched: TrainSchedule = TrainSchedule(), cnn_cfg: CnnConfig = CnnConfig(),
                 fine_tune_lr: float = 1e-5, fine_tune_max_epochs: int = 50, seed: int = 0,
                 max_folds: int | None = None, jobs: int = 1) -> ExperimentReport:
    t0 = time.perf_counter()
    plan = make_eval_plan(ds.labels, 5, seed) if plan is None else plan
    tplans = make_transfer_plans(ds.num_classes, cs, seed, fine_tune_lr=fine_tune_lr,
                                 max_epochs=fine_tune_max_epochs)
    tasks = [(ds, plan, f, tplans, cnn_cfg, sched, seed) for f in _fold_ids(plan, max_folds)]
    folds = _map_folds(_transfer_fold, tasks, jobs)
    rep = ExperimentReport("transfer", {"dataset": ds.digest(), "dataset_kind": ds.kind, "cs": list(cs),
                                        "fine_tune_lr": fine_tune_lr, "fine_tune_max_epochs": fine_tune_max_epochs,
                                        "schedule": sched, "cnn": cnn_cfg, "max_folds": max_folds}, seed, folds,
                           extra={"held_out_classes": {str(tp.c): [ds.class_names[i] for i in tp.held_out]
                                                       for tp in tplans}})
    rep.wall_clock = time.perf_counter() - t0
    return rep


# -- classical -------------------------------------------------------------------------

def baseline_report(ds: SpectralDataset, model: str = "knn", detector: str = "cwt", folds: int = 5,
                    seed: int = 0, param_grid=None) -> ExperimentReport:
    t0 = time.perf_counter()
    res = classical.run_baseline(ds.rows, ds.labels, model, detector, folds, seed, param_grid)
    per_fold = [{"fold": i, "metrics": {"cv/top1": v}, "curves": {}} for i, v in enumerate(res["per_fold_top1"])]
    cfg = {"model": model, "detector": res["detector"], "folds": folds, "dataset": ds.digest(),
           "dataset_kind": ds.kind, "param_grid": param_grid}
    rep = ExperimentReport("baseline", cfg, seed, per_fold,
                           extra={"chosen_params": res["chosen_params"], "grid": res["grid"],
                                  "grid_search_reuses_eval_folds": True})
    rep.wall_clock = time.perf_counter() - t0
    return rep
