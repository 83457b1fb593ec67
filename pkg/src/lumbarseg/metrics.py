"""Dice and sensitivity reporting in the layout of the published tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .volume import LabelVolume

LUMBAR = "Lumbar"
COLUMNS = ("L1", "L2", "L3", "L4", "L5", LUMBAR)


def dice(pred: LabelVolume, gt: LabelVolume, label) -> float:
    """Dice overlap in percent for one label, or ``"Lumbar"`` for any-vertebra vs background.

    Two empty masks score 100.
    """
    if pred.dims != gt.dims:
        raise ValueError(f"dims mismatch {pred.dims} vs {gt.dims}")
    if label == LUMBAR or label == 0:
        p, g = pred.data > 0, gt.data > 0
    else:
        p, g = pred.data == label, gt.data == label
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 100.0
    return 100.0 * 2.0 * int(np.logical_and(p, g).sum()) / denom


@dataclass
class DiceReport:
    case_ids: list[str]
    scores: np.ndarray  # (cases, 6): L1..L5 then pooled lumbar

    @property
    def mean(self) -> np.ndarray:
        return self.scores.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        # population standard deviation
        return self.scores.std(axis=0, ddof=0)

    def summary(self) -> str:
        return "  ".join(f"{c} {m:.1f}±{s:.1f}" for c, m, s in zip(COLUMNS, self.mean, self.std))

    def write_long_csv(self, path: str) -> None:
        """``case,label,dice`` rows followed by ``mean`` and ``std`` rows per label."""
        with open(path, "w", newline="") as fh:
            fh.write("# dice in percent; std is the population (ddof=0) standard deviation\n")
            w = csv.writer(fh)
            w.writerow(["case", "label", "dice"])
            for cid, row in zip(self.case_ids, self.scores):
                for col, val in zip(COLUMNS, row):
                    w.writerow([cid, col, f"{val:.4f}"])
            for name, stat in (("mean", self.mean), ("std", self.std)):
                for col, val in zip(COLUMNS, stat):
                    w.writerow([name, col, f"{val:.4f}"])

    def write_table_csv(self, path: str) -> None:
        """One row per case with columns L1..L5, Lumbar, then mean and std rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", *COLUMNS])
            for cid, row in zip(self.case_ids, self.scores):
                w.writerow([cid, *(f"{v:.4f}" for v in row)])
            w.writerow(["mean", *(f"{v:.4f}" for v in self.mean)])
            w.writerow(["std", *(f"{v:.4f}" for v in self.std)])


def report(preds, gts, case_ids) -> DiceReport:
    if not len(preds) == len(gts) == len(case_ids):
        raise ValueError("preds, gts and case_ids must have equal length")
    scores = np.array([[dice(p, g, lab) for lab in (1, 2, 3, 4, 5, LUMBAR)] for p, g in zip(preds, gts)])
    return DiceReport(list(case_ids), scores.reshape(len(case_ids), len(COLUMNS)))


def write_sensitivity_csv(path: str, case_ids, values) -> float:
    """``case,sensitivity`` rows plus a ``mean`` row; returns the mean."""
    values = [float(v) for v in values]
    mean = float(np.mean(values)) if values else float("nan")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "sensitivity"])
        for cid, v in zip(case_ids, values):
            w.writerow([cid, f"{v:.4f}"])
        w.writerow(["mean", f"{mean:.4f}"])
    return mean


def label_centroids_z(l: LabelVolume) -> dict[int, float]:
    """Mean z index of every present foreground label."""
    out = {}
    for k in range(1, 6):
        idx = np.nonzero(l.data == k)
        if idx[2].size:
            out[k] = float(idx[2].mean())
    return out
