"""Classification metrics, confusion matrices, and occlusion saliency.

Macro accuracy averages per-class accuracies over classes that actually
appear in the truth labels; micro accuracy is the plain fraction of
correct predictions; top-10 accuracy averages the per-class accuracies
of the ten most-sampled classes (sample counts taken from the evaluated
set, ties broken by ascending class id).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .scaleogram import bilinear_resize, write_pgm

# Published desktop-hardware baseline row, emitted alongside reports for
# context only; nothing in this package asserts against these numbers.
REFERENCE_RESNET18 = {"macro": 0.817, "micro": 0.815, "top10": 0.849}


def _check_labels(truth, pred) -> tuple[np.ndarray, np.ndarray]:
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape or truth.ndim != 1:
        raise ValueError("truth and prediction labels must be equal-length vectors")
    if len(truth) and (truth.min() < 0 or pred.min() < 0):
        raise ValueError("labels must be non-negative")
    return truth, pred


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows indexed by true label, columns by prediction."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("confusion matrix must be square")
        if c.min() < 0:
            raise ValueError("negative count")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())

    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def empty_rows(self) -> np.ndarray:
        return self.row_totals() == 0

    def row_normalized(self) -> np.ndarray:
        """Rows sum to 1; rows with no samples stay all zero."""
        totals = self.row_totals().astype(np.float64)
        out = np.zeros(self.counts.shape, dtype=np.float64)
        nz = totals > 0
        out[nz] = self.counts[nz] / totals[nz, None]
        return out


def confusion(truth, pred, n_classes: int | None = None) -> ConfusionMatrix:
    truth, pred = _check_labels(truth, pred)
    if n_classes is None:
        n_classes = int(max(truth.max(initial=-1), pred.max(initial=-1))) + 1
    if len(truth) and max(truth.max(), pred.max()) >= n_classes:
        raise ValueError("label outside [0, n_classes)")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return ConfusionMatrix(counts)


def micro_accuracy(truth, pred) -> float:
    truth, pred = _check_labels(truth, pred)
    if len(truth) == 0:
        raise ValueError("no samples")
    return float(np.mean(truth == pred))


def macro_accuracy(truth, pred, n_classes: int | None = None) -> float:
    cm = confusion(truth, pred, n_classes)
    diag = np.diag(cm.row_normalized())
    present = ~cm.empty_rows()
    if not present.any():
        raise ValueError("no samples")
    return float(diag[present].mean())


@dataclass(frozen=True)
class MetricReport:
    macro: float
    micro: float
    top10: float
    per_class: tuple[float, ...]
    n_per_class: tuple[int, ...]
    absent_classes: tuple[int, ...]
    top10_classes: tuple[int, ...]


def compute_metrics(truth, pred, n_classes: int | None = None) -> MetricReport:
    cm = confusion(truth, pred, n_classes)
    totals = cm.row_totals()
    if cm.n_samples == 0:
        raise ValueError("no samples")
    per_class = np.diag(cm.row_normalized())
    present = totals > 0
    macro = float(per_class[present].mean())
    micro = float(np.trace(cm.counts) / cm.n_samples)
    # ten most-sampled classes; count ties resolved toward smaller ids
    order = np.lexsort((np.arange(cm.n_classes), -totals))
    ranked = [int(i) for i in order if totals[i] > 0][:10]
    top10 = float(per_class[ranked].mean())
    return MetricReport(
        macro=macro,
        micro=micro,
        top10=top10,
        per_class=tuple(float(v) for v in per_class),
        n_per_class=tuple(int(v) for v in totals),
        absent_classes=tuple(int(i) for i in np.flatnonzero(~present)),
        top10_classes=tuple(ranked),
    )


def occlusion_saliency(
    model,
    image: np.ndarray,
    true_class: int,
    patch: tuple[int, int] = (8, 8),
    stride: int = 4,
    fill_value: float = 0.0,
    chunk: int = 256,
) -> np.ndarray:
    """Logit-drop heat map from sliding-patch occlusion.

    Each patch position is overwritten with ``fill_value`` (callers pass
    the standardized open-pore scaleogram mean) and the decrease of the
    true-class logit is recorded, then the position grid is bilinearly
    upsampled to the image size.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ValueError("expected a 2-d image")
    h, w = image.shape
    ph, pw = patch
    if not (1 <= ph <= h and 1 <= pw <= w) or stride < 1:
        raise ValueError("bad patch geometry")
    base = float(model.forward(image[None, None])[0, true_class])
    tops = range(0, h - ph + 1, stride)
    lefts = range(0, w - pw + 1, stride)
    occluded = np.empty((len(tops) * len(lefts), 1, h, w), dtype=np.float32)
    pos = 0
    for t in tops:
        for l in lefts:
            occluded[pos, 0] = image
            occluded[pos, 0, t:t + ph, l:l + pw] = fill_value
            pos += 1
    drops = np.empty(len(occluded), dtype=np.float64)
    for lo in range(0, len(occluded), chunk):
        logits = model.forward(occluded[lo:lo + chunk])
        drops[lo:lo + len(logits)] = base - logits[:, true_class].astype(np.float64)
    heat = drops.reshape(len(tops), len(lefts))
    return bilinear_resize(heat, h, w)


def write_metrics_csv(path, report: MetricReport, reference: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerow(["macro", f"{report.macro:.6f}"])
        writer.writerow(["micro", f"{report.micro:.6f}"])
        writer.writerow(["top10", f"{report.top10:.6f}"])
        if reference:
            for key, val in sorted(reference.items()):
                writer.writerow([f"reference_resnet18_{key}", f"{val:.6f}"])
        for cls, (acc, count) in enumerate(zip(report.per_class, report.n_per_class)):
            writer.writerow([f"class_{cls}_accuracy", f"{acc:.6f}" if count else "absent"])
            writer.writerow([f"class_{cls}_count", count])


def write_confusion_csv(path, cm: ConfusionMatrix) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + list(range(cm.n_classes)))
        for i, row in enumerate(cm.counts):
            writer.writerow([i] + [int(v) for v in row])


def write_confusion_pgm(path, cm: ConfusionMatrix) -> None:
    write_pgm(path, cm.row_normalized())


def write_saliency_pgm(path, heat: np.ndarray) -> None:
    write_pgm(path, heat)
