"""Intention and motion metrics, and per-frame sample export.

Coarse classes are indexed 0 = LCL, 1 = LCR, 2 = LK. Coarse scores are summed
area weights: LCL = w1 + w2, LCR = w3 + w4, LK = w5.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import norm

from . import mdn
from .features import INTENTIONS, TTLC_CAP, coarse_class

DEFAULT_THRESHOLD = 0.3


def coarse_scores(weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    return np.column_stack([weights[:, 0] + weights[:, 1], weights[:, 2] + weights[:, 3], weights[:, 4]])


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: Optional[float]  # None when undefined

    def points(self):
        """Curve as dicts; the opening point's infinite threshold becomes None."""
        return [{"fpr": float(f), "tpr": float(t), "threshold": _finite_or_none(float(h))}
                for f, t, h in zip(self.fpr, self.tpr, self.thresholds)]


def binary_roc(scores, labels) -> RocCurve:
    """ROC of a single score against boolean labels; ties share one threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        return RocCurve(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([np.inf, -np.inf]), None)
    order = np.argsort(-scores, kind="stable")
    s, lab = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(lab)[last]
    fp = np.cumsum(~lab)[last]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, np.r_[np.inf, s[last]], auc)


def roc_curve(scores, truths) -> RocCurve:
    """Lane-change ROC over the two positive classes.

    Every frame contributes one (score, label) pair per lane-change direction:
    its LCL score labelled "truly LCL" and its LCR score labelled "truly LCR".
    A hit is a correct change direction; a false alarm is a change score on a
    lane-keeping frame or on a change in the other direction.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths)
    pooled = np.r_[scores[:, 0], scores[:, 1]]
    labels = np.r_[truths == 0, truths == 1]
    curve = binary_roc(pooled, labels)
    if np.unique(truths).size < 2:
        curve.auc = None
    return curve


@dataclass
class ClassificationReport:
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    average_prediction_time: Optional[float]
    recognized_episodes: int = 0
    flags: list = field(default_factory=list)


def decide(scores, threshold) -> np.ndarray:
    """Predicted coarse class: the likelier change direction if its score reaches ``threshold``."""
    scores = np.asarray(scores, dtype=np.float64)
    direction = np.where(scores[:, 1] > scores[:, 0], 1, 0)
    return np.where(scores[:, :2].max(axis=1) >= threshold, direction, 2)


def confusion(predicted, truths):
    predicted, truths = np.asarray(predicted), np.asarray(truths)
    change = truths < 2
    tp = int(np.sum(change & (predicted == truths)))
    fp = int(np.sum((predicted < 2) & (predicted != truths)))
    fn = int(np.sum(change & (predicted == 2)))
    tn = int(np.sum(~change & (predicted == 2)))
    return tp, fp, fn, tn


def prf(tp, fp, fn):
    """precision, recall, F1 and flags for zero denominators."""
    flags = []
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if tp == 0:
        flags.append("no true positives")
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1, flags


def average_prediction_time(hits, ttlc, episodes):
    """Mean TTLC at which lane-change episodes become, and stay, correctly classified.

    For each episode the clock starts at the earliest frame after which every
    frame up to the crossing is a true positive; episodes whose last frame is
    not a true positive do not count. Returns (mean or None, episode count).
    """
    hits, ttlc, episodes = np.asarray(hits, dtype=bool), np.asarray(ttlc), np.asarray(episodes)
    times = []
    for e in np.unique(episodes):
        rows = np.flatnonzero(episodes == e)
        rows = rows[np.argsort(-ttlc[rows], kind="stable")]
        h = hits[rows]
        if not h[-1]:
            continue
        misses = np.flatnonzero(~h)
        start = misses[-1] + 1 if misses.size else 0
        times.append(float(ttlc[rows[start]]))
    return (float(np.mean(times)) if times else None), len(times)


def classification_report(scores, truths, threshold=DEFAULT_THRESHOLD, ttlc=None, episodes=None):
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    truths = np.asarray(truths)
    predicted = decide(scores, threshold)
    tp, fp, fn, tn = confusion(predicted, truths)
    precision, recall, f1, flags = prf(tp, fp, fn)
    apt, n_rec = None, 0
    if ttlc is not None and episodes is not None:
        change = truths < 2
        apt, n_rec = average_prediction_time((predicted == truths)[change], np.asarray(ttlc)[change],
                                             np.asarray(episodes)[change])
        if apt is None:
            flags.append("no episode recognized")
    return ClassificationReport(threshold, tp, fp, fn, tn, precision, recall, f1, apt, n_rec, flags)


def per_dia_auc(weights, areas, ttlc, ttlc_filter):
    """One-vs-rest AUC of each area's weight on frames with TTLC <= ``ttlc_filter``."""
    weights = np.asarray(weights, dtype=np.float64)
    areas = np.asarray(areas)
    keep = np.asarray(ttlc) <= ttlc_filter + 1e-9
    return [binary_roc(weights[keep, a], areas[keep] == a + 1).auc for a in range(weights.shape[1])]


# ---------------------------------------------------------------------------
# motion
# ---------------------------------------------------------------------------


def _interval(params: mdn.MixtureParams, rows, areas, k, rng, draws):
    """Per-frame marginal intervals for s and t at +-k sigma."""
    alpha = params.alpha[rows, areas - 1]
    mu_s, mu_t = params.mu_s[rows, areas - 1], params.mu_t[rows, areas - 1]
    sd_s, sd_t = params.sigma_s[rows, areas - 1], params.sigma_t[rows, areas - 1]
    if params.n_components == 1:
        return (mu_s[:, 0] - k * sd_s[:, 0], mu_s[:, 0] + k * sd_s[:, 0],
                mu_t[:, 0] - k * sd_t[:, 0], mu_t[:, 0] + k * sd_t[:, 0])
    lo_q, hi_q = norm.cdf(-k), norm.cdf(k)
    out = np.empty((4, rows.size))
    for i in range(rows.size):
        comp = rng.choice(params.n_components, size=draws, p=alpha[i])
        s = mu_s[i, comp] + sd_s[i, comp] * rng.standard_normal(draws)
        t = mu_t[i, comp] + sd_t[i, comp] * rng.standard_normal(draws)
        out[:, i] = (*np.quantile(s, [lo_q, hi_q]), *np.quantile(t, [lo_q, hi_q]))
    return tuple(out)


def motion_report(params: mdn.MixtureParams, areas, y_s, y_t, bin_width=0.5, ks=(1, 2), seed=0, draws=10_000):
    """RMSE of the true area's mean and marginal interval coverage, binned by true TTLC.

    With one component per area intervals are mean +- k sigma; with more they
    are sampled quantiles of matching probability mass.
    """
    areas = np.asarray(areas, dtype=np.int64)
    y_s, y_t = np.asarray(y_s, dtype=np.float64), np.asarray(y_t, dtype=np.float64)
    rows = np.arange(len(params))
    mean_s, _, mean_t, _ = params.marginal_moments()
    pred_s, pred_t = mean_s[rows, areas - 1], mean_t[rows, areas - 1]
    rng = np.random.default_rng(seed)
    intervals = {k: _interval(params, rows, areas, k, rng, draws) for k in ks}
    edges = np.arange(0.0, TTLC_CAP + bin_width / 2, bin_width)
    which = np.clip(np.digitize(y_t, edges[1:-1], right=False), 0, edges.size - 2)

    def summarize(sel):
        out = {
            "n": int(sel.sum()),
            "rmse_s": float(np.sqrt(np.mean((pred_s[sel] - y_s[sel]) ** 2))),
            "rmse_t": float(np.sqrt(np.mean((pred_t[sel] - y_t[sel]) ** 2))),
        }
        for k, (ls, hs, lt, ht) in intervals.items():
            out[f"coverage_s_{k}sigma"] = float(np.mean((y_s[sel] >= ls[sel]) & (y_s[sel] <= hs[sel])))
            out[f"coverage_t_{k}sigma"] = float(np.mean((y_t[sel] >= lt[sel]) & (y_t[sel] <= ht[sel])))
            out[f"width_s_{k}sigma"] = float(np.mean(hs[sel] - ls[sel]))
            out[f"width_t_{k}sigma"] = float(np.mean(ht[sel] - lt[sel]))
        return out

    bins, empty = [], []
    for b in range(edges.size - 1):
        sel = which == b
        if not sel.any():
            empty.append([float(edges[b]), float(edges[b + 1])])
            continue
        bins.append({"ttlc_lo": float(edges[b]), "ttlc_hi": float(edges[b + 1]), **summarize(sel)})
    overall = summarize(np.ones(rows.size, dtype=bool)) if rows.size else None
    return {"overall": overall, "bins": bins, "empty_bins": empty,
            "interval_method": "gaussian" if params.n_components == 1 else f"sampled quantiles ({draws} draws)"}


# ---------------------------------------------------------------------------
# sample export
# ---------------------------------------------------------------------------


def export_samples(params: mdn.MixtureParams, frame_ids, count=50, seed=0):
    """Sampled points per frame and per-area TTLC bands.

    Returns ``(points, bands)``: points are ``(frame, area, y_s, y_t)``; bands
    hold each area's weight, allotted point count, TTLC mean and 1/3-sigma
    limits, with ``flagged`` set when the area receives no point.
    """
    rng = np.random.default_rng(seed)
    mean_s, sd_s, mean_t, sd_t = params.marginal_moments()
    points, bands = [], []
    for i, frame in enumerate(frame_ids):
        counts = mdn.allocate_counts(params.weights[i], count)
        points.extend((int(frame), a, s, t) for a, s, t in mdn.sample(params, count, rng, index=i))
        for a in range(params.n_areas):
            bands.append({
                "frame": int(frame), "area": a + 1, "weight": float(params.weights[i, a]),
                "points": int(counts[a]), "mean_t": float(mean_t[i, a]),
                "t_lo_1sigma": float(mean_t[i, a] - sd_t[i, a]), "t_hi_1sigma": float(mean_t[i, a] + sd_t[i, a]),
                "t_lo_3sigma": float(mean_t[i, a] - 3 * sd_t[i, a]), "t_hi_3sigma": float(mean_t[i, a] + 3 * sd_t[i, a]),
                "mean_s": float(mean_s[i, a]), "flagged": bool(counts[a] == 0),
            })
    return points, bands


def write_csv(path, rows, header=None):
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if rows and isinstance(rows[0], dict):
            header = header or list(rows[0])
            writer.writerow(header)
            writer.writerows([[_fmt(r[h]) for h in header] for r in rows])
        else:
            if header:
                writer.writerow(header)
            writer.writerows([[_fmt(v) for v in r] for r in rows])


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return "" if value is None else value


# ---------------------------------------------------------------------------
# full report
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    roc: list
    auc: Optional[float]
    threshold: float
    youden_threshold: Optional[float]
    precision: float
    recall: float
    f1: float
    average_prediction_time: Optional[float]
    confusion: dict
    per_dia_auc: list
    per_dia_ttlc_filter: float
    motion: dict
    n_samples: int
    flags: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, allow_nan=False, default=_json_default) + "\n"

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        write_csv(out / "roc.csv", self.roc)
        write_csv(out / "per_dia_auc.csv", [(a + 1, "" if v is None else repr(v)) for a, v in enumerate(self.per_dia_auc)],
                  header=["area", "auc"])
        if self.motion["bins"]:
            write_csv(out / "motion.csv", self.motion["bins"])

    def summary(self) -> str:
        def num(v, fmt=".3f"):
            return "n/a" if v is None else format(v, fmt)

        lines = [
            f"{'Method':<8}{'Precision':>11}{'Recall':>9}{'F1-Score':>10}{'Avg. Predict Time (s)':>24}",
            f"{'SIMP':<8}{num(self.precision):>11}{num(self.recall):>9}{num(self.f1):>10}"
            f"{num(self.average_prediction_time):>24}",
            "",
            f"threshold {self.threshold:g}  ROC AUC {num(self.auc)}  samples {self.n_samples}",
            "per-area AUC (TTLC <= {:.3f} s): {}".format(
                self.per_dia_ttlc_filter, "  ".join(f"A{a + 1}={num(v)}" for a, v in enumerate(self.per_dia_auc))),
        ]
        overall = self.motion.get("overall")
        if overall:
            lines.append(f"TTLC RMSE {overall['rmse_t']:.3f} s  insertion-distance RMSE {overall['rmse_s']:.2f} ft")
        return "\n".join(lines)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def youden_threshold(curve: RocCurve) -> Optional[float]:
    if curve.auc is None:
        return None
    j = curve.tpr - curve.fpr
    best = int(np.argmax(j[1:])) + 1
    return float(min(max(curve.thresholds[best], 0.0), 1.0))


def evaluate(params: mdn.MixtureParams, areas, y_s, y_t, episodes, threshold=DEFAULT_THRESHOLD, seed=0) -> EvalReport:
    """Full protocol on predicted mixtures (physical units) against labelled frames."""
    areas = np.asarray(areas, dtype=np.int64)
    y_t = np.asarray(y_t, dtype=np.float64)
    y_s = np.asarray(y_s, dtype=np.float64)
    truths = coarse_class(areas)
    scores = coarse_scores(params.weights)
    curve = roc_curve(scores, truths)
    cls = classification_report(scores, truths, threshold, y_t, episodes)
    flags = list(cls.flags)
    if curve.auc is None:
        flags.append("ROC AUC undefined: single-class truth")
    ttlc_filter = cls.average_prediction_time if cls.average_prediction_time is not None else TTLC_CAP
    dia = per_dia_auc(params.weights, areas, y_t, ttlc_filter)
    change = areas <= 4
    motion = motion_report(params[np.flatnonzero(change)], areas[change], y_s[change], y_t[change], seed=seed)
    for lo, hi in motion["empty_bins"]:
        flags.append(f"empty TTLC bin [{lo}, {hi})")
    return EvalReport(
        roc=curve.points(), auc=curve.auc, threshold=threshold, youden_threshold=youden_threshold(curve),
        precision=cls.precision, recall=cls.recall, f1=cls.f1,
        average_prediction_time=cls.average_prediction_time,
        confusion={"tp": cls.tp, "fp": cls.fp, "fn": cls.fn, "tn": cls.tn, "classes": list(INTENTIONS)},
        per_dia_auc=dia, per_dia_ttlc_filter=ttlc_filter, motion=motion, n_samples=int(areas.size), flags=flags,
    )


def _finite_or_none(value):
    return None if value is None or not math.isfinite(value) else value
