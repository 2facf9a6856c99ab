"""GZSL accuracy metrics and OOD separation metrics.

OOD metrics treat seen (in-distribution) samples as the positive class and
expect higher scores for them.  A threshold ``lam`` accepts a sample when
``score >= lam``, matching the detector's decision rule.  AUROC and
FPR@TPR are computed from integer counts with a single final division, and
AUPR sums its per-threshold terms with ``math.fsum``, so the results do not
depend on summation order.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)


@dataclass
class GzslReport:
    acc_S: float = 0.0
    acc_U: float = 0.0
    H: float = 0.0
    acc_ZSL: float = 0.0
    per_class: dict = field(default_factory=dict)
    confusion: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


@dataclass
class OodReport:
    auroc: float
    fpr95: float
    aupr: float
    roc_points: list

    def to_dict(self):
        return asdict(self)


def per_class_accuracy(predictions, labels, classes):
    """Mean over classes of within-class accuracy.

    Classes without samples are left out of the mean and reported as NaN in
    the returned table.
    """
    classes = np.asarray(classes, dtype=np.int64)
    if classes.size == 0:
        raise ValidationError("class set is empty")
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValidationError("predictions and labels differ in length")
    if not np.all(np.isin(labels, classes)):
        raise ValidationError("a label falls outside the class set")
    table = {}
    for c in classes:
        mask = labels == c
        if not mask.any():
            log.warning("class %d has no evaluation samples; excluded from the mean", c)
            table[int(c)] = float("nan")
            continue
        table[int(c)] = float(np.mean(predictions[mask] == c))
    present = [v for v in table.values() if not math.isnan(v)]
    mean = float(np.mean(present)) if present else 0.0
    return mean, table


def harmonic_mean(acc_s, acc_u):
    if acc_s <= 0 or acc_u <= 0:
        return 0.0
    return 2.0 * acc_s * acc_u / (acc_s + acc_u)


def _split_scores(seen_scores, unseen_scores):
    s = np.asarray(seen_scores, dtype=np.float64).ravel()
    u = np.asarray(unseen_scores, dtype=np.float64).ravel()
    if s.size == 0 or u.size == 0:
        raise ValidationError("both seen and unseen score sets must be non-empty")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(u))):
        raise ValidationError("scores must be finite")
    return s, u


def _threshold_counts(s, u):
    """Cumulative (tp, fp) at each distinct score, thresholds descending."""
    values = np.concatenate([s, u])
    is_seen = np.concatenate([np.ones(s.size, dtype=np.int64), np.zeros(u.size, dtype=np.int64)])
    uniq, inv = np.unique(values, return_inverse=True)
    seen_at = np.bincount(inv, weights=is_seen, minlength=uniq.size).astype(np.int64)
    total_at = np.bincount(inv, minlength=uniq.size).astype(np.int64)
    unseen_at = total_at - seen_at
    # descending order of threshold
    seen_at, unseen_at = seen_at[::-1], unseen_at[::-1]
    return uniq[::-1], np.cumsum(seen_at), np.cumsum(unseen_at), seen_at, unseen_at


def auroc(seen_scores, unseen_scores):
    """P(seen > unseen) + 0.5 P(tie), via one sort instead of all pairs."""
    s, u = _split_scores(seen_scores, unseen_scores)
    _, tp, fp, seen_at, unseen_at = _threshold_counts(s, u)
    # unseen strictly below each group = n_u - fp (fp counts unseen >= value)
    below = u.size - fp
    twice_u = int(np.sum(seen_at * (2 * below + unseen_at)))
    return twice_u / (2 * s.size * u.size)


def roc_points(seen_scores, unseen_scores):
    """(fpr, tpr) pairs from (0, 0) to (1, 1) over all distinct thresholds.

    Points lying on a straight segment between their neighbours are dropped
    (tested exactly on the integer counts), so the area is unchanged.
    """
    s, u = _split_scores(seen_scores, unseen_scores)
    _, tp, fp, _, _ = _threshold_counts(s, u)
    counts = [(0, 0)] + [(int(f), int(t)) for f, t in zip(fp, tp)]
    keep = [counts[0]]
    for cur, nxt in zip(counts[1:-1], counts[2:]):
        prev = keep[-1]
        cross = (cur[0] - prev[0]) * (nxt[1] - prev[1]) - (cur[1] - prev[1]) * (nxt[0] - prev[0])
        if cross != 0:
            keep.append(cur)
    keep.append(counts[-1])
    return [(f / u.size, t / s.size) for f, t in keep]


def trapezoid_area(points):
    pts = np.asarray(points, dtype=np.float64)
    return float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2.0))


def fpr_at_tpr(seen_scores, unseen_scores, tpr_target=0.95):
    """Smallest FPR over thresholds whose TPR reaches ``tpr_target``."""
    s, u = _split_scores(seen_scores, unseen_scores)
    if not 0 < tpr_target <= 1:
        raise ValidationError("tpr_target must lie in (0, 1]")
    _, tp, fp, _, _ = _threshold_counts(s, u)
    ok = tp / s.size >= tpr_target
    # counts are monotone, so the first qualifying threshold has the fewest false positives
    first = int(np.argmax(ok))
    return int(fp[first]) / u.size


def aupr(seen_scores, unseen_scores, positive="seen"):
    """Step-wise area under precision-recall: sum over thresholds of dRecall * Precision."""
    s, u = _split_scores(seen_scores, unseen_scores)
    if positive == "unseen":
        s, u = -u, -s
    elif positive != "seen":
        raise ValidationError("positive must be 'seen' or 'unseen'")
    _, tp, fp, seen_at, _ = _threshold_counts(s, u)
    terms = [
        float(int(d) * int(t)) / float((int(t) + int(f)) * s.size)
        for d, t, f in zip(seen_at, tp, fp)
        if d
    ]
    return math.fsum(terms)


def ood_report(seen_scores, unseen_scores, tpr_target=0.95, aupr_positive="seen"):
    return OodReport(
        auroc=auroc(seen_scores, unseen_scores),
        fpr95=fpr_at_tpr(seen_scores, unseen_scores, tpr_target),
        aupr=aupr(seen_scores, unseen_scores, aupr_positive),
        roc_points=roc_points(seen_scores, unseen_scores),
    )


# ------------------------------------------------------------------ emission


def _pct(x):
    return f"{100.0 * x:.2f}"


def gzsl_report_rows(report, class_names=None):
    rows = [("acc_S", _pct(report.acc_S)), ("acc_U", _pct(report.acc_U)), ("H", _pct(report.H))]
    rows.append(("acc_ZSL", _pct(report.acc_ZSL)))
    for key, count in report.confusion.items():
        rows.append((f"routing.{key}", str(count)))
    for c, acc in report.per_class.items():
        name = class_names[int(c)] if class_names else str(c)
        rows.append((f"class.{name}", "nan" if math.isnan(acc) else _pct(acc)))
    return rows


def ood_report_rows(report, prefix=""):
    return [
        (f"{prefix}auroc", _pct(report.auroc)),
        (f"{prefix}fpr95", _pct(report.fpr95)),
        (f"{prefix}aupr", _pct(report.aupr)),
    ]


def rows_to_csv(rows):
    return "metric,value\n" + "".join(f"{k},{v}\n" for k, v in rows)


def to_jsonl(records):
    """One JSON object per line; NaN becomes null."""
    def clean(v):
        if isinstance(v, float) and math.isnan(v):
            return None
        if isinstance(v, dict):
            return {str(k): clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, np.generic):
            return v.item()
        return v

    return "".join(json.dumps(clean(r), sort_keys=True) + "\n" for r in records)


def roc_to_csv(points):
    return "fpr,tpr\n" + "".join(f"{f!r},{t!r}\n" for f, t in points)
