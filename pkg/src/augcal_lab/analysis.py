"""Measurement machinery: calibration metrics (ECE, error-only ECE, mean
overconfidence), reliability bins, the prediction rejection ratio, an RBF-MMD
two-sample estimator, quadrature for the order-2 Renyi ratio integral, and the
Monte-Carlo verifier for the importance-weighted calibration upper bound.

Metric arithmetic is exact given its inputs; nothing here is stochastic except
where explicitly labeled Monte-Carlo. All operations are pure and thread-safe.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import Rng
from .data import DensityPair


class PredictionsFormatError(ValueError):
    """Raised for malformed prediction CSV files (reports the row number)."""


class BoundDivergenceError(RuntimeError):
    """Raised when importance weights explode and the bound estimate would be
    meaningless."""


@dataclass
class PredictionRecord:
    id: int
    true_label: int
    pred_label: int
    confidence: float
    probs: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.probs is not None:
            self.probs = np.asarray(self.probs, dtype=np.float64)
            if abs(self.confidence - float(np.max(self.probs))) > 1e-9:
                raise ValueError("confidence disagrees with max(probs)")
            if self.pred_label != int(np.argmax(self.probs)):
                raise ValueError("pred_label disagrees with argmax(probs)")

    @property
    def correct(self) -> bool:
        return self.true_label == self.pred_label


def records_from_probs(probs: np.ndarray, labels: np.ndarray,
                       ids=None) -> list:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = probs.shape[0]
    ids = range(n) if ids is None else ids
    pred = np.argmax(probs, axis=1)
    conf = probs[np.arange(n), pred]
    return [PredictionRecord(int(i), int(labels[j]), int(pred[j]),
                             float(conf[j]), probs[j])
            for j, i in enumerate(ids)]


# ---------------------------------------------------------------------------
# reliability bins and calibration metrics
# ---------------------------------------------------------------------------

DEFAULT_BINS = 15


def _bin_index(confidence: float, num_bins: int) -> int:
    """Bin j holds confidence in [j/B, (j+1)/B); confidence 1.0 goes to the
    last bin. Float fix-ups keep the mathematical definition exact."""
    j = min(int(confidence * num_bins), num_bins - 1)
    while j > 0 and confidence < j / num_bins:
        j -= 1
    while j < num_bins - 1 and confidence >= (j + 1) / num_bins:
        j += 1
    return j


@dataclass
class BinStats:
    num_bins: int
    counts: np.ndarray
    sum_confidence: np.ndarray
    count_correct: np.ndarray

    @classmethod
    def from_records(cls, records, num_bins: int = DEFAULT_BINS) -> "BinStats":
        counts = np.zeros(num_bins, dtype=np.int64)
        sum_conf = np.zeros(num_bins)
        correct = np.zeros(num_bins, dtype=np.int64)
        # canonical accumulation order makes the float sums, and hence every
        # binned metric, exactly invariant to record permutation
        for r in sorted(records, key=lambda r: (r.confidence, r.correct)):
            j = _bin_index(r.confidence, num_bins)
            counts[j] += 1
            sum_conf[j] += r.confidence
            correct[j] += int(r.correct)
        return cls(num_bins, counts, sum_conf, correct)

    def to_dict(self) -> dict:
        return {"num_bins": self.num_bins,
                "counts": self.counts.tolist(),
                "sum_confidence": self.sum_confidence.tolist(),
                "count_correct": self.count_correct.tolist()}


def ece(records, num_bins: int = DEFAULT_BINS):
    """Count-weighted expected calibration error, with its bins:
    sum_b (n_b / N) * |acc_b - mean conf_b|. Empty bins contribute 0."""
    if not records:
        raise ValueError("ece needs at least one record")
    bins = BinStats.from_records(records, num_bins)
    n = len(records)
    value = 0.0
    for j in range(num_bins):
        if bins.counts[j] == 0:
            continue
        acc = bins.count_correct[j] / bins.counts[j]
        conf = bins.sum_confidence[j] / bins.counts[j]
        value += (bins.counts[j] / n) * abs(acc - conf)
    return value, bins


def ic_ece(records, num_bins: int = DEFAULT_BINS):
    """ECE restricted to mispredictions (per-bin accuracy is 0 there), or
    None when the record set has no misprediction."""
    wrong = [r for r in records if not r.correct]
    if not wrong:
        return None
    value, _ = ece(wrong, num_bins)
    return value


def oc(records):
    """Mean confidence over mispredictions; None when there are none."""
    wrong = [r.confidence for r in records if not r.correct]
    if not wrong:
        return None
    return float(np.mean(wrong))


def accuracy(records) -> float:
    return float(np.mean([r.correct for r in records]))


def nll(records):
    """Mean negative log-probability of the true class; None unless every
    record carries a probability vector."""
    if not records or any(r.probs is None for r in records):
        return None
    vals = [-math.log(max(float(r.probs[r.true_label]), 1e-300)) for r in records]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# prediction rejection ratio
# ---------------------------------------------------------------------------

def _rejection_curve(error_flags: np.ndarray) -> np.ndarray:
    """Error rate of the retained set after rejecting the given sequence
    front-first, on the grid r = j/N; error at full rejection is 0."""
    n = len(error_flags)
    errors_total = int(error_flags.sum())
    rejected_err = np.concatenate([[0], np.cumsum(error_flags)])
    curve = np.empty(n + 1)
    for j in range(n):
        curve[j] = (errors_total - rejected_err[j]) / (n - j)
    curve[n] = 0.0
    return curve


def _trapezoid_auc(curve: np.ndarray) -> float:
    """Exactly rounded trapezoid area on the uniform r-grid, so the value is
    independent of summation order."""
    n = len(curve) - 1
    return math.fsum((curve[j] + curve[j + 1]) / (2.0 * n) for j in range(n))


def rejection_curves(records):
    """(model, oracle, random) error-vs-rejection curves over r = j/N, used by
    both the PRR metric and the report figure."""
    n = len(records)
    order = sorted(range(n), key=lambda i: (records[i].confidence, records[i].id))
    err_model = np.array([not records[i].correct for i in order], dtype=np.float64)
    rand = np.full(n + 1, err_model.mean())
    rand[n] = 0.0
    return {"model": _rejection_curve(err_model),
            "oracle": _rejection_curve(np.sort(err_model)[::-1]),
            "random": rand}


def prr(records):
    """Prediction rejection ratio in [-100, 100]: how much of the gap from
    the random rejection curve to the oracle curve the model's
    confidence-ordered curve covers. None when every record is correct or
    every record is wrong (the two reference curves coincide)."""
    n = len(records)
    if n < 2:
        raise ValueError("prr needs at least 2 records")
    n_correct = sum(r.correct for r in records)
    if n_correct == 0 or n_correct == n:
        return None
    curves = rejection_curves(records)
    auc_model = _trapezoid_auc(curves["model"])
    auc_oracle = _trapezoid_auc(curves["oracle"])
    auc_random = _trapezoid_auc(curves["random"])
    return 100.0 * (auc_random - auc_model) / (auc_random - auc_oracle)


# ---------------------------------------------------------------------------
# assembled report
# ---------------------------------------------------------------------------

@dataclass
class CalibrationReport:
    n: int
    accuracy: float
    ece: float
    ic_ece: float | None
    oc: float | None
    prr: float | None
    nll: float | None
    bins: BinStats

    def to_dict(self) -> dict:
        return {"n": self.n, "accuracy": self.accuracy, "ece": self.ece,
                "ic_ece": self.ic_ece, "oc": self.oc, "prr": self.prr,
                "nll": self.nll, "bins": self.bins.to_dict()}


def report(records, num_bins: int = DEFAULT_BINS) -> CalibrationReport:
    """One-pass assembly of every calibration/reliability metric; metrics that
    are undefined for the record set are carried as None."""
    if not records:
        raise ValueError("report needs at least one record")
    ece_value, bins = ece(records, num_bins)
    prr_value = prr(records) if len(records) >= 2 else None
    return CalibrationReport(
        n=len(records),
        accuracy=accuracy(records),
        ece=ece_value,
        ic_ece=ic_ece(records, num_bins),
        oc=oc(records),
        prr=prr_value,
        nll=nll(records),
        bins=bins,
    )


# ---------------------------------------------------------------------------
# RBF-kernel MMD^2 (biased V-statistic)
# ---------------------------------------------------------------------------

def _sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    xx = np.sum(x * x, axis=1)[:, None]
    yy = np.sum(y * y, axis=1)[None, :]
    d2 = xx + yy - 2.0 * (x @ y.T)
    return np.maximum(d2, 0.0)


def _canonical_pool_order(a: np.ndarray, b: np.ndarray):
    """Order the two pools by content so every downstream float operation is
    bit-for-bit independent of argument order."""
    if (b.shape[0], b.tobytes()) < (a.shape[0], a.tobytes()):
        return b, a
    return a, b


def median_bandwidth(a: np.ndarray, b: np.ndarray, seed: int = 0,
                     max_points: int = 1000) -> float:
    """Median of pooled pairwise distances, on a seed-fixed subsample of at
    most `max_points` points drawn proportionally from both pools."""
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(a.shape[0], -1))
    b = np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(b.shape[0], -1))
    a, b = _canonical_pool_order(a, b)
    n, m = a.shape[0], b.shape[0]
    if n + m > max_points:
        ka = max(1, round(max_points * n / (n + m)))
        kb = max(1, max_points - ka)
        a = a[Rng(seed, "mmd-bandwidth").permutation(n)[:ka]]
        b = b[Rng(seed, "mmd-bandwidth").permutation(m)[:kb]]
    pool = np.vstack([a, b])
    d2 = _sq_dists(pool, pool)
    iu = np.triu_indices(pool.shape[0], k=1)
    return float(np.median(np.sqrt(d2[iu])))


def mmd2_rbf(a: np.ndarray, b: np.ndarray, bandwidth="median",
             seed: int = 0) -> float:
    """Biased V-statistic MMD^2 with kernel exp(-|x-y|^2 / (2 sigma^2)).

    Symmetric in its arguments bit-for-bit (the pools are put in a canonical
    order before any arithmetic); identical sample sets give 0, and any result
    is >= 0 up to -1e-12 numerical slack. A degenerate bandwidth (all pooled
    points identical) is defined as distance 0.
    """
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(a.shape[0], -1))
    b = np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(b.shape[0], -1))
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("each pool needs at least 2 points")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    a, b = _canonical_pool_order(a, b)

    if bandwidth == "median":
        sigma = median_bandwidth(a, b, seed=seed)
    else:
        sigma = float(bandwidth)
    if sigma == 0.0:
        return 0.0

    gamma = 1.0 / (2.0 * sigma * sigma)
    k_aa = float(np.mean(np.exp(-gamma * _sq_dists(a, a))))
    k_bb = float(np.mean(np.exp(-gamma * _sq_dists(b, b))))
    k_ab = float(np.mean(np.exp(-gamma * _sq_dists(a, b))))
    return k_aa + k_bb - 2.0 * k_ab


# ---------------------------------------------------------------------------
# order-2 Renyi ratio integral (d2) by adaptive Simpson quadrature
# ---------------------------------------------------------------------------

def _simpson_weights(n_points: int) -> np.ndarray:
    w = np.ones(n_points)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def renyi_d2(densities: DensityPair, method: str = "quadrature",
             rel_tol: float = 1e-4, max_refine: int = 12) -> float:
    """d2(P_T || P_S) = integral of P_T(x)^2 / P_S(x) dx over a box covering
    +/- 8 sigma of both mixtures, with Simpson refinement until the estimate
    moves by less than `rel_tol` relative. Non-convergent (non-integrable)
    configurations are reported as +inf."""
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    lo, hi = densities.quadrature_box(8.0)
    dim = densities.dim
    if dim not in (1, 2):
        raise ValueError("quadrature supports dim <= 2")

    def integrand_1d(x):
        pts = x[:, None]
        return np.exp(2.0 * densities.log_density_target(pts)
                      - densities.log_density_source(pts))

    def integrate(n_intervals: int) -> float:
        if dim == 1:
            x = np.linspace(lo[0], hi[0], n_intervals + 1)
            h = (hi[0] - lo[0]) / n_intervals
            return float(np.sum(_simpson_weights(len(x)) * integrand_1d(x)) * h)
        x = np.linspace(lo[0], hi[0], n_intervals + 1)
        y = np.linspace(lo[1], hi[1], n_intervals + 1)
        hx = (hi[0] - lo[0]) / n_intervals
        hy = (hi[1] - lo[1]) / n_intervals
        xg, yg = np.meshgrid(x, y, indexing="ij")
        pts = np.stack([xg.ravel(), yg.ravel()], axis=1)
        f = np.exp(2.0 * densities.log_density_target(pts)
                   - densities.log_density_source(pts)).reshape(len(x), len(y))
        w = _simpson_weights(len(x))
        return float(w @ f @ w * hx * hy)

    n = 64
    prev = integrate(n)
    for _ in range(max_refine):
        n *= 2
        cur = integrate(n)
        if not math.isfinite(cur):
            return math.inf
        if abs(cur - prev) <= rel_tol * abs(cur):
            return cur
        prev = cur
    return math.inf


# ---------------------------------------------------------------------------
# Monte-Carlo verification of the importance-weighted calibration bound
# ---------------------------------------------------------------------------

MAX_IMPORTANCE_WEIGHT = 1e6

BOUND_AUG_CHOICES = ("none", "mean-shift")


@dataclass
class BoundReport:
    """MC estimates of the target calibration loss, the squared importance
    weight (the exponentiated order-2 Renyi divergence), the squared source
    calibration term, and the resulting upper bounds with and without the
    source augmentation. `upper_bound_u` is exactly
    0.5 * divergence_d2 + 0.5 * source_cal_sq."""
    n_mc: int
    aug_choice: str
    target_cal_loss: float
    divergence_d2: float
    source_cal_sq: float
    upper_bound_u: float
    divergence_d2_aug: float
    source_cal_sq_aug: float
    upper_bound_u_aug: float
    target_cal_loss_stderr: float
    divergence_d2_stderr: float
    source_cal_sq_stderr: float
    upper_bound_u_stderr: float
    upper_bound_u_aug_stderr: float
    bound_flag: str        # holds | inconclusive | violated
    aug_flag: str          # holds | inconclusive | violated (U_aug vs U)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _stderr(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / math.sqrt(len(x)))


def _significance_flag(diff: float, stderr: float) -> str:
    if diff >= 3.0 * stderr:
        return "holds"
    if diff <= -3.0 * stderr:
        return "violated"
    return "inconclusive"


def _eval_points(ds, densities: DensityPair, domain: str, n_mc: int, seed: int):
    """First min(n_mc, N) dataset rows, topped up with fresh draws from the
    densities when the dataset is smaller than n_mc."""
    x = ds.features_flat()[:n_mc]
    y = ds.labels[:n_mc]
    if n_mc > len(y):
        extra_x, extra_y = densities.sample(
            domain, n_mc - len(y), Rng(seed, f"bound-extra/{domain}"))
        x = np.vstack([x, extra_x])
        y = np.concatenate([y, extra_y])
    return x, y


def verify_bound(predict_fn, densities: DensityPair, source, target,
                 cal_choice: str = "pointwise", aug_choice: str = "mean-shift",
                 n_mc: int = 100_000, seed: int = 0) -> BoundReport:
    """Estimate every term of the calibration upper bound and check the two
    inequalities (target loss below the bound; augmented bound below the plain
    bound) at 3-sigma MC resolution.

    `predict_fn(x)` must return (predicted labels, confidences). The
    per-sample calibration loss is the pointwise surrogate
    |1[y == pred] - confidence|, the batch-size-1 reading of the
    confidence/accuracy gap. The `mean-shift` augmentation translates source
    points by the target/source mean difference estimated from unlabeled
    target features only.
    """
    if aug_choice not in BOUND_AUG_CHOICES:
        raise ValueError(f"aug_choice must be one of {BOUND_AUG_CHOICES}")

    src_x, src_y = _eval_points(source, densities, "source", n_mc, seed)
    tgt_x, tgt_y = _eval_points(target, densities, "target", n_mc, seed)

    def pointwise_loss(x, y):
        pred, conf = predict_fn(x)
        return np.abs((y == pred).astype(np.float64) - conf)

    tgt_loss = pointwise_loss(tgt_x, tgt_y)
    target_cal_loss = float(tgt_loss.mean())

    w = np.exp(densities.log_density_target(src_x)
               - densities.log_density_source(src_x))
    if w.max() > MAX_IMPORTANCE_WEIGHT:
        raise BoundDivergenceError(
            f"importance weights diverge (max w = {w.max():.3e} > "
            f"{MAX_IMPORTANCE_WEIGHT:.0e}); the shift is too large for a "
            f"stable estimate")
    w2 = w * w
    src_loss = pointwise_loss(src_x, src_y)
    l2 = src_loss * src_loss
    u_samples = 0.5 * w2 + 0.5 * l2

    if aug_choice == "mean-shift":
        shift = tgt_x.mean(axis=0) - src_x.mean(axis=0)
        aug_x = src_x + shift
        w_aug = np.exp(densities.log_density_target(aug_x)
                       - densities.log_density_source(src_x))
        w2_aug = w_aug * w_aug
        l2_aug = pointwise_loss(aug_x, src_y) ** 2
    else:
        w2_aug, l2_aug = w2, l2
    u_aug_samples = 0.5 * w2_aug + 0.5 * l2_aug

    divergence = float(w2.mean())
    source_cal_sq = float(l2.mean())
    upper_u = 0.5 * divergence + 0.5 * source_cal_sq
    upper_u_aug = 0.5 * float(w2_aug.mean()) + 0.5 * float(l2_aug.mean())

    se_target = _stderr(tgt_loss)
    se_u = _stderr(u_samples)
    se_u_aug = _stderr(u_aug_samples)
    combined = math.sqrt(se_target ** 2 + se_u ** 2)
    se_diff = _stderr(u_samples - u_aug_samples)

    return BoundReport(
        n_mc=len(src_y),
        aug_choice=aug_choice,
        target_cal_loss=target_cal_loss,
        divergence_d2=divergence,
        source_cal_sq=source_cal_sq,
        upper_bound_u=upper_u,
        divergence_d2_aug=float(w2_aug.mean()),
        source_cal_sq_aug=float(l2_aug.mean()),
        upper_bound_u_aug=upper_u_aug,
        target_cal_loss_stderr=se_target,
        divergence_d2_stderr=_stderr(w2),
        source_cal_sq_stderr=_stderr(l2),
        upper_bound_u_stderr=se_u,
        upper_bound_u_aug_stderr=se_u_aug,
        bound_flag=_significance_flag(upper_u - target_cal_loss, combined),
        aug_flag=_significance_flag(upper_u - upper_u_aug, max(se_diff, 1e-300)),
    )


# ---------------------------------------------------------------------------
# predictions file (CSV + optional probability sidecar)
# ---------------------------------------------------------------------------

PREDICTIONS_HEADER = ["id", "true_label", "pred_label", "confidence"]


def save_predictions(records, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_HEADER)
        for r in records:
            writer.writerow([r.id, r.true_label, r.pred_label,
                             f"{r.confidence:.17g}"])
    if all(r.probs is not None for r in records) and records:
        probs = np.stack([r.probs for r in records])
        save_probs_sidecar(probs, path)


def save_probs_sidecar(probs: np.ndarray, csv_path) -> None:
    csv_path = Path(csv_path)
    bin_path = csv_path.with_suffix(csv_path.suffix + ".probs.bin")
    meta_path = csv_path.with_suffix(csv_path.suffix + ".probs.json")
    probs = np.asarray(probs, dtype="<f8")
    bin_path.write_bytes(probs.tobytes(order="C"))
    meta_path.write_text(json.dumps(
        {"shape": list(probs.shape), "dtype": "f64", "byte_order": "LE"},
        sort_keys=True) + "\n", encoding="utf-8")


def load_predictions(path) -> list:
    """Read a predictions CSV (plus its probability sidecar when present);
    malformed rows raise with the 1-based row number."""
    path = Path(path)
    probs = None
    meta_path = path.with_suffix(path.suffix + ".probs.json")
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        raw = path.with_suffix(path.suffix + ".probs.bin").read_bytes()
        probs = np.frombuffer(raw, dtype="<f8").reshape(meta["shape"])

    records = []
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PredictionsFormatError("empty predictions file") from None
        if header != PREDICTIONS_HEADER:
            raise PredictionsFormatError(
                f"row 1: bad header {header!r}, expected {PREDICTIONS_HEADER!r}")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise PredictionsFormatError(
                    f"row {row_no}: expected 4 fields, got {len(row)}")
            try:
                rid, true_l, pred_l = int(row[0]), int(row[1]), int(row[2])
                conf = float(row[3])
            except ValueError as exc:
                raise PredictionsFormatError(f"row {row_no}: {exc}") from None
            p = probs[len(records)] if probs is not None else None
            try:
                records.append(PredictionRecord(rid, true_l, pred_l, conf, p))
            except ValueError as exc:
                raise PredictionsFormatError(f"row {row_no}: {exc}") from None
    if not records:
        raise PredictionsFormatError("predictions file has no data rows")
    return records
