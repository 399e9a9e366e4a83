"""Placement plausibility metrics and BEV heatmap export."""
from dataclasses import dataclass
import math

import numpy as np

from . import kernels
from .dataset_io import encode_pgm, write_bytes_atomic
from .errors import CorpusError
from .geometry import project_points

N_BINS = 36
KL_SMOOTHING = 1e-3


@dataclass(frozen=True)
class OrientationHistogram:
    bins: np.ndarray

    @classmethod
    def from_angles(cls, angles, n_bins=N_BINS):
        a = kernels.wrap(np.asarray(angles, dtype=np.float64).ravel())
        idx = np.floor((a + math.pi) / (2.0 * math.pi / n_bins)).astype(np.int64)
        idx = np.clip(idx, 0, n_bins - 1)
        return cls(np.bincount(idx, minlength=n_bins).astype(np.float64))

    @classmethod
    def from_boxes(cls, boxes, n_bins=N_BINS):
        return cls.from_angles([b.theta for b in boxes], n_bins)

    @property
    def total(self):
        return float(self.bins.sum())

    def __add__(self, other):
        return OrientationHistogram(self.bins + other.bins)


def orientation_kl(pred, gt, smoothing=KL_SMOOTHING):
    """KL(pred || gt) in nats between two orientation histograms.

    Each histogram is normalised, ``smoothing`` is added to every bin and the
    result renormalised, which keeps the divergence finite.
    """
    p = np.asarray(getattr(pred, "bins", pred), dtype=np.float64)
    q = np.asarray(getattr(gt, "bins", gt), dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"histogram shapes differ: {p.shape} vs {q.shape}")
    if not (p.sum() > 0 and q.sum() > 0):
        raise CorpusError("orientation histogram has zero total")
    p = p / p.sum() + smoothing
    q = q / q.sum() + smoothing
    p /= p.sum()
    q /= q.sum()
    nz = p > 0
    return float(max(np.sum(p[nz] * np.log(p[nz] / q[nz])), 0.0))


def on_road(boxes, mask, calib):
    """Per-box flag: does the bottom-face centre project onto a road pixel?"""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    if len(boxes) == 0:
        return np.zeros(0, dtype=bool)
    pts = np.array([[b.x, b.y, b.z] for b in boxes])
    uv, depth = project_points(calib, pts)
    ok = depth > 0
    col = np.floor(np.where(ok, uv[:, 0], -1.0)).astype(np.int64)
    row = np.floor(np.where(ok, uv[:, 1], -1.0)).astype(np.int64)
    ok &= (col >= 0) & (col < w) & (row >= 0) & (row < h)
    out = np.zeros(len(boxes), dtype=bool)
    out[ok] = mask[row[ok], col[ok]]
    return out


def overlap_metric(boxes, mask, calib):
    """Fraction of boxes whose bottom-face centre lands on road.

    Boxes projecting off the image or behind the camera count as off-road.
    """
    if len(boxes) == 0:
        raise CorpusError("overlap metric needs at least one box")
    return float(on_road(boxes, mask, calib).mean())


def heatmap_pixels(prior):
    """8-bit BEV image of the prior weights, far depth at the top row."""
    wmax = prior.weight.max()
    if not wmax > 0:
        raise CorpusError("cannot render a heatmap for an empty prior")
    gray = np.round(255.0 * prior.weight / wmax).astype(np.uint8)
    return gray[::-1]


def emit_heatmap(prior, out_path):
    write_bytes_atomic(out_path, encode_pgm(heatmap_pixels(prior)))
