"""Binary segmentation scores: accuracy, F1, precision, recall, IoU.

Zero-denominator convention: when prediction and ground truth are both
entirely negative every ratio is 1 (perfect agreement); otherwise a ratio
whose denominator vanishes is 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .encoding import read_png
from .errors import DimensionError, ValidationError
from .scene import canonical_json

COLUMNS = ("accuracy", "f1", "precision", "recall", "iou")
MODES = ("mean_over_frames", "pooled_pixels")
MODE_ALIASES = {"mean": "mean_over_frames", "pooled": "pooled_pixels"}
TARGETS = {"mask": "mask.png", "caustics": "caustics.png", "outline": "outline.png"}


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 0:
                raise ValidationError(name, "counts must be unsigned integers")
            object.__setattr__(self, name, int(v))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


class Scores(NamedTuple):
    accuracy: float
    precision: float
    recall: float
    f1: float
    iou: float


def confusion(pred, gt) -> ConfusionMatrix:
    """Pixel counts; any non-zero value is a positive."""
    p = np.asarray(pred) != 0
    g = np.asarray(gt) != 0
    if p.shape != g.shape:
        raise DimensionError(f"prediction {p.shape} vs ground truth {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionMatrix(tp, fp, fn, p.size - tp - fp - fn)


def metrics(cm: ConfusionMatrix) -> Scores:
    if cm.total == 0:
        raise ValidationError("total", "confusion matrix is empty")
    accuracy = (cm.tp + cm.tn) / cm.total
    if cm.tp + cm.fp + cm.fn == 0:
        return Scores(accuracy, 1.0, 1.0, 1.0, 1.0)
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else 0.0
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0
    # 2PR/(P+R) written on counts, so tp = 0 needs no special case
    f1 = 2 * cm.tp / (2 * cm.tp + cm.fp + cm.fn)
    iou = cm.tp / (cm.tp + cm.fp + cm.fn)
    return Scores(accuracy, precision, recall, f1, iou)


def identity_holds(s: Scores, tol: float = 1e-12) -> bool:
    """``f1 == 2 iou / (1 + iou)`` and ``iou <= f1 <= 1``."""
    return abs(s.f1 - 2.0 * s.iou / (1.0 + s.iou)) <= tol and s.iou <= s.f1 + tol and s.f1 <= 1.0 + tol


@dataclass
class FrameResult:
    frame_id: str
    cm: ConfusionMatrix
    scores: Scores


@dataclass
class EvalReport:
    mode: str
    frames: list[FrameResult]
    aggregate: Scores
    pooled: ConfusionMatrix
    missing: list[str] = field(default_factory=list)
    target: str = "mask"

    def to_dict(self) -> dict:
        def row(s: Scores) -> dict:
            return {c: getattr(s, c) for c in COLUMNS}

        return {
            "mode": self.mode,
            "target": self.target,
            "columns": list(COLUMNS),
            "frames": [
                {"frame_id": f.frame_id, **row(f.scores), "tp": f.cm.tp, "fp": f.cm.fp, "fn": f.cm.fn, "tn": f.cm.tn}
                for f in self.frames
            ],
            "missing_predictions": list(self.missing),
            "aggregate": row(self.aggregate),
        }

    def table(self) -> str:
        """Fixed-width text table, columns in the order Accuracy F1 Precision Recall IoU."""
        head = f"{'frame':<40}" + "".join(f"{c:>11}" for c in COLUMNS)
        lines = [head]
        for f in self.frames:
            lines.append(f"{f.frame_id:<40}" + "".join(f"{getattr(f.scores, c):>11.4f}" for c in COLUMNS))
        lines.append(f"{'aggregate (' + self.mode + ')':<40}" + "".join(f"{getattr(self.aggregate, c):>11.4f}" for c in COLUMNS))
        for m in self.missing:
            lines.append(f"missing prediction: {m}")
        return "\n".join(lines) + "\n"


def aggregate(results: list[FrameResult], mode: str) -> tuple[Scores, ConfusionMatrix]:
    pooled = ConfusionMatrix(0, 0, 0, 0)
    for r in results:
        pooled = pooled + r.cm
    if mode == "pooled_pixels":
        return metrics(pooled), pooled
    # fixed summation order keeps the report reproducible
    n = len(results)
    means = [math.fsum(getattr(r.scores, c) for r in results) / n for c in Scores._fields]
    return Scores(*means), pooled


def _frame_masks(root: Path, target: str) -> dict[str, Path]:
    """Map frame id -> raster path for a dataset root or a flat directory."""
    fname = TARGETS[target]
    found: dict[str, Path] = {}
    for p in sorted(root.glob(f"**/frame_*/{fname}")):
        found[p.parent.name[len("frame_"):]] = p
    if not found:
        for p in sorted(root.glob("*.png")):
            found[p.stem] = p
    return found


def evaluate_dataset(pred_dir, gt_dir, mode: str = "mean_over_frames", target: str = "mask") -> EvalReport:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValidationError("mode", f"must be one of {', '.join(MODES)} (or mean, pooled)")
    if target not in TARGETS:
        raise ValidationError("target", f"must be one of {', '.join(TARGETS)}")
    gt = _frame_masks(Path(gt_dir), target)
    pred = _frame_masks(Path(pred_dir), target)
    missing = sorted(set(gt) - set(pred))
    common = sorted(set(gt) & set(pred))
    if not common:
        raise ValidationError("pred", "no frames match between prediction and ground truth")
    results = []
    for fid in common:
        cm = confusion(read_png(pred[fid]), read_png(gt[fid]))
        s = metrics(cm)
        assert identity_holds(s), f"f1/iou identity broken for {fid}"
        results.append(FrameResult(fid, cm, s))
    agg, pooled = aggregate(results, mode)
    return EvalReport(mode, results, agg, pooled, missing, target)


def write_report(report: EvalReport, path) -> None:
    path = Path(path)
    if path.suffix == ".txt":
        path.write_text(report.table())
    else:
        path.write_text(canonical_json(report.to_dict()))


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())
