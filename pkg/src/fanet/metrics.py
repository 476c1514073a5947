"""Pixel confusion counts and Precision / Recall / F1 / IoU (micro-averaged)."""
import json
from decimal import Decimal, InvalidOperation
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ValidationError

METRIC_KEYS = ("iou", "f1", "precision", "recall")
COUNT_KEYS = ("tp", "fp", "fn", "tn")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for k in COUNT_KEYS:
            if getattr(self, k) < 0:
                raise ValidationError(f"negative count {k}={getattr(self, k)}")

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def merge(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    __add__ = merge


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    iou: float
    counts: ConfusionCounts
    degenerate: tuple = ()

    def to_dict(self):
        d = {k: getattr(self, k) for k in METRIC_KEYS}
        d["counts"] = asdict(self.counts)
        d["degenerate"] = list(self.degenerate)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def binarize(probabilities, threshold=0.5):
    """1 where probability >= threshold, else 0 (uint8)."""
    if not 0 < threshold < 1:
        raise ConfigError(f"threshold {threshold} outside (0, 1)", "threshold")
    return (np.asarray(probabilities) >= threshold).astype(np.uint8)


def _as_binary(mask, name):
    arr = np.asarray(mask)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValidationError(f"{name} mask is not binary")
    return arr.astype(bool)


def accumulate(pred, truth, counts=None):
    """Add the per-pixel confusion of ``pred`` against ``truth`` to ``counts``."""
    p = _as_binary(pred, "prediction")
    t = _as_binary(truth, "truth")
    if p.shape != t.shape:
        raise ValidationError(f"prediction shape {p.shape} != truth shape {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = p.size - tp - fp - fn
    new = ConfusionCounts(tp, fp, fn, tn)
    return new if counts is None else counts.merge(new)


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def report(counts):
    """Micro-averaged metrics; any 0/0 becomes 0 and is listed in ``degenerate``."""
    flags = []
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    precision = _ratio(tp, tp + fp, "precision", flags)
    recall = _ratio(tp, tp + fn, "recall", flags)
    # 2pr/(p+r) written on counts so that iou == f1 / (2 - f1) up to rounding
    f1 = _ratio(2 * tp, 2 * tp + fp + fn, "f1", flags)
    iou = _ratio(tp, tp + fp + fn, "iou", flags)
    return MetricsReport(precision, recall, f1, iou, counts, tuple(flags))


def format_percent(value):
    return f"{100.0 * value:.2f}"


def format_report(rep):
    """key=value lines; metrics as percentages with two decimals, raw counts."""
    lines = [f"{k}={format_percent(getattr(rep, k))}" for k in METRIC_KEYS]
    lines += [f"{k}={getattr(rep.counts, k)}" for k in COUNT_KEYS]
    lines.append(f"degenerate={','.join(rep.degenerate)}")
    return "\n".join(lines) + "\n"


def parse_report(text):
    """Inverse of :func:`format_report`."""
    fields = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(f"malformed report line {line!r}")
        fields[key.strip()] = value.strip()
    try:
        counts = ConfusionCounts(**{k: int(fields[k]) for k in COUNT_KEYS})
        # decimal division so "73.35" comes back as exactly 0.7335
        metrics = {k: float(Decimal(fields[k]) / 100) for k in METRIC_KEYS}
    except (InvalidOperation, KeyError, ValueError) as exc:
        raise ValidationError(f"malformed report: {exc}") from exc
    degenerate = tuple(x for x in fields.get("degenerate", "").split(",") if x)
    return MetricsReport(counts=counts, degenerate=degenerate, **metrics)


def evaluate_masks(pairs):
    counts = ConfusionCounts()
    for pred, truth in pairs:
        counts = accumulate(pred, truth, counts)
    return report(counts)
