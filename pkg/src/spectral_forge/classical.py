"""Handcrafted peak features with KNN and RBF-SVM classifiers."""

from __future__ import annotations

import enum
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .errors import EmptyTrainingSet, SingleClassInput, SolverIterationCapExceeded, UndefinedStatistic
from .splits import FoldPlan, stratified_kfold

log = logging.getLogger(__name__)


class Detector(str, enum.Enum):
    CWT_RICKER = "CWT_RICKER"
    LOCAL_MAXIMA = "LOCAL_MAXIMA"


@dataclass(frozen=True)
class PeakDetectorConfig:
    method: Detector = Detector.CWT_RICKER
    cwt_widths: tuple = tuple(range(10, 21))
    gap_thresh: int = 2
    min_length: int | None = None  # default ceil(len(widths) / 4)
    min_snr: float = 1.0
    noise_perc: float = 10.0
    window_size: int | None = None  # default ceil(len(row) / 20)
    lm_width: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "method", Detector(self.method))
        w = tuple(int(x) for x in self.cwt_widths)
        if not w or any(x < 1 for x in w) or any(b <= a for a, b in zip(w, w[1:])):
            raise ValueError("cwt_widths must be non-empty, strictly increasing and >= 1")
        object.__setattr__(self, "cwt_widths", w)


def ricker(points: int, a: float) -> np.ndarray:
    """Mexican-hat wavelet sampled on ``points`` samples centred on the middle one."""
    amp = 2.0 / (math.sqrt(3.0 * a) * math.pi ** 0.25)
    t = np.arange(points) - (points - 1) / 2.0
    t2 = (t / a) ** 2
    return amp * (1.0 - t2) * np.exp(-t2 / 2.0)


def cwt(row: np.ndarray, widths) -> np.ndarray:
    """Ricker continuous wavelet transform, one output row per width."""
    row = np.asarray(row, dtype=np.float64)
    out = np.empty((len(widths), row.size))
    for i, a in enumerate(widths):
        half = min(int(math.ceil(5 * a)), (row.size - 1) // 2)
        out[i] = np.convolve(row, ricker(2 * half + 1, a), mode="same")
    return out


def _relmax(v: np.ndarray) -> np.ndarray:
    inner = (v[1:-1] > v[:-2]) & (v[1:-1] > v[2:])
    return np.flatnonzero(inner) + 1


def ridge_lines(coefs: np.ndarray, max_distances: np.ndarray, gap_thresh: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Chain per-row local maxima from the largest scale downwards.

    Each ridge is ``(rows, cols)`` sorted by ascending row. A ridge stops
    growing once it has missed more than ``gap_thresh`` consecutive rows.
    """
    n_rows = coefs.shape[0]
    maxima = [_relmax(coefs[r]) for r in range(n_rows)]
    active = [[[n_rows - 1], [c], 0] for c in maxima[-1]]
    finished = []
    for r in range(n_rows - 2, -1, -1):
        free = list(maxima[r])
        for line in active:
            line[2] += 1
        for line in active:
            if not free:
                break
            last = line[1][-1]
            dist = np.abs(np.asarray(free) - last)
            j = int(np.argmin(dist))
            if dist[j] <= max_distances[r]:
                line[0].append(r)
                line[1].append(free.pop(j))
                line[2] = 0
        still = []
        for line in active:
            (finished if line[2] > gap_thresh else still).append(line)
        active = still + [[[r], [c], 0] for c in free]
    finished += active
    out = []
    for rows, cols, _ in finished:
        order = np.argsort(rows)
        out.append((np.asarray(rows)[order], np.asarray(cols)[order]))
    return out


def detect_peaks_cwt(row: np.ndarray, cfg: PeakDetectorConfig = PeakDetectorConfig()) -> np.ndarray:
    """Ridge-line peak detection on a Ricker CWT.

    A ridge survives if it spans at least ``min_length`` widths and its
    largest coefficient is at least ``min_snr`` times the local noise floor
    (the ``noise_perc`` percentile of ``|cwt|`` at the smallest width, in a
    window around the ridge). The peak index is the ridge's smallest-width
    position.
    """
    row = np.asarray(row, dtype=np.float64)
    widths = np.asarray(cfg.cwt_widths, dtype=np.float64)
    coefs = cwt(row, widths)
    max_distances = np.ceil(widths / 4.0)
    lines = ridge_lines(coefs, max_distances, cfg.gap_thresh)
    if not lines:
        return np.zeros(0, dtype=np.int64)

    n = row.size
    min_length = cfg.min_length if cfg.min_length is not None else int(math.ceil(len(widths) / 4))
    window = cfg.window_size if cfg.window_size is not None else int(math.ceil(n / 20))
    half = window // 2
    base = np.abs(coefs[0])
    # relative floor keeps the SNR test scale invariant
    floor = max(1e-4 * float(base.max()), np.finfo(np.float64).tiny)
    peaks = []
    for rows, cols in lines:
        if rows.size < min_length:
            continue
        c = int(cols[0])
        lo, hi = max(0, c - half), min(n, c + half + 1)
        noise = max(float(np.percentile(base[lo:hi], cfg.noise_perc)), floor)
        strength = float(np.max(coefs[rows, cols]))
        if strength / noise >= cfg.min_snr:
            peaks.append(c)
    return np.unique(np.asarray(peaks, dtype=np.int64))


def detect_peaks_local(row: np.ndarray, cfg: PeakDetectorConfig = PeakDetectorConfig(method=Detector.LOCAL_MAXIMA)) -> np.ndarray:
    """Local maxima with half-prominence width >= ``lm_width`` and prominence >= max/len."""
    row = np.asarray(row, dtype=np.float64)
    prominence = float(row.max()) / row.size
    if prominence <= 0:
        return np.zeros(0, dtype=np.int64)
    peaks, _ = find_peaks(row, width=cfg.lm_width, prominence=prominence)
    return peaks.astype(np.int64)


def detect_peaks(row: np.ndarray, cfg: PeakDetectorConfig) -> np.ndarray:
    if cfg.method is Detector.CWT_RICKER:
        return detect_peaks_cwt(row, cfg)
    return detect_peaks_local(row, cfg)


def featurize(peaks, bin_width: int = 12, length: int = 1392) -> np.ndarray:
    """Peak counts per ``bin_width``-sample bin (116 bins on the default grid)."""
    if length % bin_width:
        raise ValueError(f"length {length} is not a multiple of bin_width {bin_width}")
    peaks = np.asarray(peaks, dtype=np.int64)
    if peaks.size and (peaks.min() < 0 or peaks.max() >= length):
        raise ValueError("peak index outside the grid")
    return np.bincount(peaks // bin_width, minlength=length // bin_width).astype(np.int64)


def peak_features(X: np.ndarray, cfg: PeakDetectorConfig = PeakDetectorConfig(), bin_width: int = 12) -> np.ndarray:
    X = np.asarray(X)
    return np.stack([featurize(detect_peaks(r, cfg), bin_width, X.shape[1]) for r in X])


# -- KNN ----------------------------------------------------------------------

@dataclass(frozen=True)
class KnnConfig:
    k: int = 1
    metric: str = "euclidean"


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def knn_predict(train_X, train_y, query_X, cfg: KnnConfig = KnnConfig(), num_classes: int | None = None) -> np.ndarray:
    """Majority label among the ``k`` nearest training rows.

    Distance ties go to the lower training index (stable sort); vote ties go to
    the smaller class index.
    """
    train_X = np.asarray(train_X, dtype=np.float64)
    train_y = np.asarray(train_y)
    if train_X.shape[0] == 0:
        raise EmptyTrainingSet("KNN needs at least one training row")
    if cfg.k > train_X.shape[0]:
        raise ValueError(f"k={cfg.k} exceeds training-set size {train_X.shape[0]}")
    query_X = np.atleast_2d(np.asarray(query_X, dtype=np.float64))
    C = int(num_classes if num_classes is not None else train_y.max() + 1)
    out = np.empty(query_X.shape[0], dtype=np.int64)
    for start in range(0, query_X.shape[0], 512):
        d = _sq_dists(query_X[start:start + 512], train_X)
        nn = np.argsort(d, axis=1, kind="stable")[:, : cfg.k]
        for i, row in enumerate(nn):
            out[start + i] = np.argmax(np.bincount(train_y[row], minlength=C))
    return out


def knn_classify(train_X, train_y, query, cfg: KnnConfig = KnnConfig()) -> int:
    return int(knn_predict(train_X, train_y, np.atleast_2d(query), cfg)[0])


# -- SVM ----------------------------------------------------------------------

@dataclass(frozen=True)
class SvmConfig:
    C: float = 10.0
    gamma: float = 0.01
    kernel: str = "rbf"
    tol: float = 1e-3
    max_iter: int = 100_000
    raise_on_cap: bool = False

    def __post_init__(self):
        if self.C <= 0 or self.gamma <= 0:
            raise ValueError("C and gamma must be positive")


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    return np.exp(-gamma * _sq_dists(A, B))


@dataclass
class BinarySmoResult:
    alpha: np.ndarray
    rho: float
    n_iter: int
    converged: bool


def smo_binary(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3, max_iter: int = 100_000) -> BinarySmoResult:
    """Soft-margin dual solved by SMO with second-order working-set selection.

    ``y`` holds +1/-1. The decision function is ``sum(alpha*y*K(.,x)) - rho``.
    """
    n = y.size
    y = y.astype(np.float64)
    Q = (y[:, None] * y[None, :]) * K
    QD = np.diag(K).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    tau = 1e-12
    it = 0
    converged = False
    while it < max_iter:
        # i: maximal violator in I_up
        up = np.where(y > 0, alpha < C, alpha > 0)
        low = np.where(y > 0, alpha > 0, alpha < C)
        yG = -y * G
        if not up.any() or not low.any():
            converged = True
            break
        cand = np.where(up, yG, -np.inf)
        i = int(np.argmax(cand))
        gmax = cand[i]
        low_vals = np.where(low, yG, np.inf)
        if gmax - low_vals.min() < tol:
            converged = True
            break
        b = gmax - yG
        ok = low & (b > 0)
        quad = QD[i] + QD - 2.0 * K[i]
        quad = np.where(quad > 0, quad, tau)
        score = np.where(ok, -(b * b) / quad, np.inf)
        j = int(np.argmin(score))
        it += 1

        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            q = QD[i] + QD[j] + 2.0 * Q[i, j]
            q = q if q > 0 else tau
            delta = (-G[i] - G[j]) / q
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            q = QD[i] + QD[j] - 2.0 * Q[i, j]
            q = q if q > 0 else tau
            delta = (G[i] - G[j]) / q
            s = ai + aj
            ni, nj = ai - delta, aj + delta
            if s > C:
                if ni > C:
                    ni, nj = C, s - C
            elif nj < 0:
                nj, ni = 0.0, s
            if s > C:
                if nj > C:
                    nj, ni = C, s - C
            elif ni < 0:
                ni, nj = 0.0, s
        G += Q[:, i] * (ni - ai) + Q[:, j] * (nj - aj)
        alpha[i], alpha[j] = ni, nj

    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub, lb = np.inf, -np.inf
        for t in range(n):
            at_upper, at_lower = alpha[t] >= C, alpha[t] <= 0
            if (y[t] > 0 and at_upper) or (y[t] < 0 and at_lower):
                lb = max(lb, yG[t])
            else:
                ub = min(ub, yG[t])
        rho = float((ub + lb) / 2) if np.isfinite(ub) and np.isfinite(lb) else float(ub if np.isfinite(ub) else lb)
    return BinarySmoResult(alpha, rho, it, converged)


@dataclass
class SvmModel:
    config: SvmConfig
    X: np.ndarray
    classes: np.ndarray
    pairs: list = field(default_factory=list)  # (a, b, sample_idx, coef, rho)
    converged: bool = True
    n_iter: int = 0

    def decision_votes(self, Xq) -> np.ndarray:
        Kq = rbf_kernel(np.atleast_2d(Xq), self.X, self.config.gamma)
        votes = np.zeros((Kq.shape[0], self.classes.size), dtype=np.int64)
        for a, b, idx, coef, rho in self.pairs:
            f = Kq[:, idx] @ coef - rho
            win = np.where(f > 0, a, b)
            np.add.at(votes, (np.arange(Kq.shape[0]), win), 1)
        return votes

    def predict(self, Xq) -> np.ndarray:
        return self.classes[np.argmax(self.decision_votes(Xq), axis=1)]


def svm_train(X, y, cfg: SvmConfig = SvmConfig()) -> SvmModel:
    """One-vs-one RBF SVMs; prediction by pairwise vote, ties to the smaller class."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    if classes.size < 2:
        raise SingleClassInput("SVM needs at least two classes")
    K = rbf_kernel(X, X, cfg.gamma)
    model = SvmModel(cfg, X, classes)
    members = [np.flatnonzero(y == c) for c in classes]
    for a, b in itertools.combinations(range(classes.size), 2):
        idx = np.concatenate([members[a], members[b]])
        yy = np.concatenate([np.ones(members[a].size), -np.ones(members[b].size)])
        res = smo_binary(K[np.ix_(idx, idx)], yy, cfg.C, cfg.tol, cfg.max_iter)
        model.n_iter += res.n_iter
        if not res.converged:
            model.converged = False
            msg = f"SMO hit max_iter={cfg.max_iter} on classes ({classes[a]}, {classes[b]})"
            if cfg.raise_on_cap:
                raise SolverIterationCapExceeded(msg)
            log.warning(msg)
        sv = res.alpha > 0
        model.pairs.append((a, b, idx[sv], (res.alpha * yy)[sv], res.rho))
    return model


# -- evaluation ----------------------------------------------------------------

def _fit_predict(kind: str, params: dict, Xtr, ytr, Xte, num_classes: int) -> np.ndarray:
    if kind == "knn":
        return knn_predict(Xtr, ytr, Xte, KnnConfig(k=int(params.get("k", 1))), num_classes)
    if kind == "svm":
        cfg = SvmConfig(C=float(params.get("C", 10.0)), gamma=float(params.get("gamma", 0.01)))
        return svm_train(Xtr, ytr, cfg).predict(Xte)
    raise ValueError(f"unknown model kind {kind!r}")


def cross_val_top1(kind: str, params: dict, X, y, folds: FoldPlan) -> list[float]:
    X, y = np.asarray(X), np.asarray(y)
    C = int(y.max()) + 1
    scores = []
    for tr, te in folds.folds():
        pred = _fit_predict(kind, params, X[tr], y[tr], X[te], C)
        scores.append(float(np.mean(pred == y[te])))
    return scores


def expand_grid(param_grid) -> list[dict]:
    if isinstance(param_grid, dict):
        keys = list(param_grid)
        return [dict(zip(keys, vals)) for vals in itertools.product(*(param_grid[k] for k in keys))]
    return [dict(p) for p in param_grid]


def grid_search(kind: str, param_grid, X, y, folds: FoldPlan):
    """Mean stratified-CV top-1 per grid cell; ties keep the first-listed cell."""
    cells = expand_grid(param_grid)
    if not cells:
        raise ValueError("empty parameter grid")
    scores = []
    for p in cells:
        s = cross_val_top1(kind, p, X, y, folds)
        scores.append({"params": p, "folds": s, "mean": float(np.mean(s))})
    best = max(range(len(scores)), key=lambda i: (scores[i]["mean"], -i))
    return cells[best], scores


# -- distance statistics ----------------------------------------------------------

def _pair_distance_sums(X, y, block: int = 1024):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    intra_sum = inter_sum = 0.0
    intra_n = inter_n = 0
    n = X.shape[0]
    for s in range(0, n, block):
        d = np.sqrt(_sq_dists(X[s:s + block], X))
        rows = np.arange(s, min(n, s + block))
        upper = np.arange(n)[None, :] > rows[:, None]
        same = y[rows][:, None] == y[None, :]
        intra_sum += d[upper & same].sum()
        intra_n += int((upper & same).sum())
        inter_sum += d[upper & ~same].sum()
        inter_n += int((upper & ~same).sum())
    return intra_sum, intra_n, inter_sum, inter_n


def mean_intra_class_distance(X, y) -> float:
    s, n, _, _ = _pair_distance_sums(X, y)
    if n == 0:
        raise UndefinedStatistic("no class has two members")
    return s / n


def mean_inter_class_distance(X, y) -> float:
    _, _, s, n = _pair_distance_sums(X, y)
    if n == 0:
        raise UndefinedStatistic("only one class present")
    return s / n


def class_distance_stats(X, y) -> tuple[float, float]:
    """Mean Euclidean distance over same-class pairs and over cross-class pairs."""
    si, ni, so, no = _pair_distance_sums(X, y)
    if ni == 0:
        raise UndefinedStatistic("no class has two members")
    if no == 0:
        raise UndefinedStatistic("only one class present")
    return si / ni, so / no


def run_baseline(X_rows, y, model: str = "knn", detector: str = "cwt", folds: int = 5, seed: int = 0,
                 param_grid=None, detector_cfg: PeakDetectorConfig | None = None) -> dict:
    """Peak detection, featurization, grid search and 5-fold evaluation.

    The grid search reuses the evaluation folds; the report says so.
    """
    if detector_cfg is None:
        method = Detector.CWT_RICKER if detector in ("cwt", Detector.CWT_RICKER) else Detector.LOCAL_MAXIMA
        detector_cfg = PeakDetectorConfig(method=method)
    feats = peak_features(X_rows, detector_cfg)
    plan = stratified_kfold(y, folds, seed)
    if param_grid is None:
        param_grid = {"k": [1, 3, 5]} if model == "knn" else {"C": [1, 10], "gamma": [0.01, 0.1]}
    best, cells = grid_search(model, param_grid, feats, y, plan)
    per_fold = next(c["folds"] for c in cells if c["params"] == best)
    cfg = asdict(detector_cfg)
    cfg["method"] = detector_cfg.method.value
    return {
        "schema": "spectral-forge/baseline/v1",
        "model": model,
        "detector": cfg,
        "folds": folds,
        "seed": seed,
        "per_fold_top1": per_fold,
        "mean_top1": float(np.mean(per_fold)),
        "std_top1": float(np.std(per_fold)),
        "chosen_params": best,
        "grid": cells,
        "grid_search_reuses_eval_folds": True,
    }
