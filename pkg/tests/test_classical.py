import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_forge.classical import (
    Detector,
    KnnConfig,
    PeakDetectorConfig,
    SvmConfig,
    class_distance_stats,
    cwt,
    detect_peaks_cwt,
    detect_peaks_local,
    featurize,
    grid_search,
    knn_classify,
    rbf_kernel,
    ricker,
    run_baseline,
    smo_binary,
    svm_train,
)
from spectral_forge.errors import EmptyTrainingSet, SingleClassInput, SolverIterationCapExceeded, UndefinedStatistic
from spectral_forge.splits import stratified_kfold

from oracles import dense_cwt_argmax, pairwise_distance_means, ricker_direct, svm_dual_projected_gradient

N = 1392
WIDTHS = tuple(range(10, 21))


def gaussian(center, sigma=8.0, amp=1.0, n=N):
    t = np.arange(n)
    return amp * np.exp(-0.5 * ((t - center) / sigma) ** 2)


def test_ricker_matches_pointwise_formula():
    for a in (1.0, 4.0, 12.5):
        w = ricker(41, a)
        np.testing.assert_allclose(w, ricker_direct(np.arange(41) - 20.0, a), atol=1e-14)


def test_cwt_matches_dense_dot_products():
    row = np.random.default_rng(0).random(200)
    got = cwt(row, [3, 7])
    idx = np.arange(200)
    for i, a in enumerate((3, 7)):
        half = math.ceil(5 * a)
        dense = [np.dot(row, np.where(abs(idx - c) <= half, ricker_direct(idx - c, a), 0.0)) for c in range(200)]
        np.testing.assert_allclose(got[i], dense, atol=1e-10)


def test_cwt_zero_row():
    assert detect_peaks_cwt(np.zeros(N)).size == 0


@pytest.mark.parametrize("center", [300, 500, 900])
def test_cwt_single_bump_against_dense_oracle(center):
    row = gaussian(center)
    peaks = detect_peaks_cwt(row)
    ref = dense_cwt_argmax(row, WIDTHS)
    assert abs(ref - center) <= 3
    assert peaks.size == 1 and abs(int(peaks[0]) - ref) <= 3


def test_cwt_two_bumps():
    row = gaussian(400) + gaussian(600)
    peaks = detect_peaks_cwt(row)
    assert peaks.size == 2
    assert abs(peaks[0] - dense_cwt_argmax(row[:500], WIDTHS)) <= 3
    assert abs(peaks[1] - (500 + dense_cwt_argmax(row[500:], WIDTHS))) <= 3
    assert abs(peaks[0] - 400) <= 3 and abs(peaks[1] - 600) <= 3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1000))
def test_cwt_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    row = sum(gaussian(c, s, a) for c, s, a in zip(rng.integers(50, N - 50, 4), rng.uniform(4, 15, 4), rng.uniform(0.2, 1, 4)))
    row = row + 0.01 * rng.random(N)
    assert np.array_equal(detect_peaks_cwt(row), detect_peaks_cwt(row * 5))
    assert np.array_equal(detect_peaks_cwt(row), detect_peaks_cwt(row * scale))


def test_cwt_config_validation():
    with pytest.raises(ValueError):
        PeakDetectorConfig(cwt_widths=(5, 5))
    with pytest.raises(ValueError):
        PeakDetectorConfig(cwt_widths=())


def _triangle(width, n=N, apex=600):
    row = np.zeros(n)
    half = width // 2
    row[apex - half:apex + half + 1] = 1 - np.abs(np.arange(-half, half + 1)) / half
    return row


def test_local_maxima_examples():
    assert detect_peaks_local(np.linspace(0, 1, N)).size == 0
    assert detect_peaks_local(_triangle(20)).tolist() == [600]
    assert detect_peaks_local(_triangle(4)).size == 0


def test_featurize_examples():
    assert featurize([0, 11])[0] == 2
    assert featurize([12])[1] == 1
    assert featurize([1391])[115] == 1
    assert featurize([]).shape == (116,)
    with pytest.raises(ValueError):
        featurize([1392])


@given(st.lists(st.integers(0, N - 1), max_size=60), st.randoms())
def test_featurize_permutation_and_total(peaks, r):
    f = featurize(peaks)
    shuffled = list(peaks)
    r.shuffle(shuffled)
    assert np.array_equal(f, featurize(shuffled))
    assert f.sum() == len(peaks)


def test_knn_examples():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    y = np.array([2, 0, 1])
    assert knn_classify(X, y, [1.0, 0.0]) == 0
    # two equidistant neighbours: lower training index wins
    assert knn_classify(X[1:], y[1:], [0.0, 0.0]) == 0
    assert knn_classify(np.array([[0.0], [1.0], [2.0]]), np.array([1, 1, 0]), [2.0], KnnConfig(k=3)) == 1
    with pytest.raises(EmptyTrainingSet):
        knn_classify(np.zeros((0, 2)), np.zeros(0, int), [0.0, 0.0])


@given(st.integers(0, 1000), st.integers(0, 4))
def test_knn_inserting_query_forces_label(seed, label):
    rng = np.random.default_rng(seed)
    X = rng.random((20, 5))
    y = rng.integers(0, 5, 20)
    q = rng.random(5)
    assert knn_classify(np.vstack([X, q]), np.append(y, label), q) == label


def test_svm_separable_1d():
    for C in (1.0, 10.0, 100.0):
        m = svm_train(np.array([[0.0], [10.0]]), np.array([0, 1]), SvmConfig(C=C, gamma=0.01))
        assert m.predict(np.array([[0.0], [10.0]])).tolist() == [0, 1]


def test_svm_xor_against_dual_oracle():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([0, 0, 1, 1])
    m = svm_train(X, y, SvmConfig(C=10.0, gamma=1.0))
    assert m.predict(X).tolist() == y.tolist()
    K = rbf_kernel(X, X, 1.0)
    yy = np.where(y == 0, 1.0, -1.0)
    a_ref, b_ref = svm_dual_projected_gradient(K, yy, 10.0, iters=20_000)
    res = smo_binary(K, yy, 10.0, tol=1e-6)
    np.testing.assert_allclose(res.alpha, a_ref, atol=1e-3)
    assert -res.rho == pytest.approx(b_ref, abs=1e-3)
    f_ref = K @ (a_ref * yy) + b_ref
    assert np.array_equal(np.sign(f_ref), yy)


def test_svm_conflicting_duplicates_terminate_with_error():
    X = np.array([[1.0], [1.0], [1.0], [1.0]])
    y = np.array([0, 1, 0, 1])
    m = svm_train(X, y, SvmConfig(C=1.0, gamma=1.0, max_iter=50))
    assert np.mean(m.predict(X) != y) > 0


def test_svm_cap_raises_when_asked():
    rng = np.random.default_rng(0)
    X = rng.random((40, 3))
    y = rng.integers(0, 2, 40)
    with pytest.raises(SolverIterationCapExceeded):
        svm_train(X, y, SvmConfig(C=1000.0, gamma=50.0, max_iter=1, raise_on_cap=True))


def test_svm_single_class():
    with pytest.raises(SingleClassInput):
        svm_train(np.zeros((3, 2)), np.zeros(3, int))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_svm_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0, 1, (8, 2)), rng.normal(3, 1, (8, 2)), rng.normal((0, 4), 1, (8, 2))])
    y = np.repeat([0, 1, 2], 8)
    Q = rng.normal(1, 2, (30, 2))
    perm = rng.permutation(24)
    cfg = SvmConfig(C=10.0, gamma=0.5, tol=1e-6)
    a = svm_train(X, y, cfg).predict(Q)
    b = svm_train(X[perm], y[perm], cfg).predict(Q)
    assert np.array_equal(a, b)


def test_grid_search_single_cell_and_ties():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(0, 1, (10, 3)), rng.normal(5, 1, (10, 3))])
    y = np.repeat([0, 1], 10)
    folds = stratified_kfold(y, 5, 0)
    best, cells = grid_search("knn", {"k": [3]}, X, y, folds)
    assert best == {"k": 3} and len(cells) == 1
    best, _ = grid_search("knn", {"k": [1, 3]}, X, y, folds)
    assert best == {"k": 1}


def test_class_distance_examples():
    with pytest.raises(UndefinedStatistic):
        class_distance_stats(np.array([[0.0], [10.0]]), np.array([0, 1]))
    intra, inter = class_distance_stats(np.array([[0.0], [2.0], [10.0], [12.0]]), np.array([0, 0, 1, 1]))
    assert intra == pytest.approx(2.0) and inter == pytest.approx(10.0)


@given(st.integers(0, 1000))
def test_class_distance_matches_pair_enumeration(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 3, (25, 6)).astype(float)
    y = rng.integers(0, 3, 25)
    y[:2] = 0
    y[2] = 1
    ref = pairwise_distance_means(X, y)
    got = class_distance_stats(X, y)
    assert got == pytest.approx(ref, abs=1e-9)


def test_run_baseline_report_shape():
    rng = np.random.default_rng(0)
    centers = [(200, 700), (400, 1000), (600, 1200)]
    X = np.stack([gaussian(a + rng.integers(-3, 4)) + gaussian(b + rng.integers(-3, 4)) for a, b in centers for _ in range(5)])
    y = np.repeat([0, 1, 2], 5)
    rep = run_baseline(X, y, "knn", "cwt", folds=5, seed=0)
    assert len(rep["per_fold_top1"]) == 5 and rep["mean_top1"] == 1.0
    assert rep["chosen_params"] == {"k": 1}
    loc = run_baseline(X, y, "knn", "local", folds=5, seed=0, param_grid={"k": [1]})
    assert loc["detector"]["method"] == Detector.LOCAL_MAXIMA.value
