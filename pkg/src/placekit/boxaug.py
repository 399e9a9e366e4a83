"""Box-space augmentation: neighbour interpolation, jitter and Gaussian sampling.

All randomness comes from an explicit ``numpy.random.Generator``; nothing
here touches global state.
"""
from dataclasses import asdict, dataclass, field
import math

import numpy as np

from . import kernels
from .geometry import Box3D, wrap_angle

MIN_DIM = 0.1
JITTER_FRAMES = ("box", "camera")


@dataclass(frozen=True)
class AugmentParams:
    """Hyperparameters for neighbour interpolation and Gaussian box sampling.

    ``k_max``, ``radius``, ``eps_theta`` and ``jitter`` drive the geometric
    augmentation.  ``alpha`` is the spread of the isotropic box Gaussian;
    ``per_dim_scale`` multiplies it per component ``(x, y, z, h, w, l, theta)``.
    ``jitter_frame`` selects whether the no-neighbour jitter is applied along
    the box's own length/width axes (``"box"``) or along camera x/z.
    """

    k_max: int = 3
    radius: float = 10.0
    eps_theta: float = math.pi / 12
    jitter: float = 2.0
    alpha: float = 0.1
    per_dim_scale: tuple = (1.0,) * 7
    jitter_frame: str = "box"

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError("k_max must be >= 0")
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        if not 0 < self.eps_theta <= math.pi:
            raise ValueError("eps_theta must lie in (0, pi]")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if len(self.per_dim_scale) != 7 or min(self.per_dim_scale) < 0:
            raise ValueError("per_dim_scale needs 7 nonnegative entries")
        if self.jitter_frame not in JITTER_FRAMES:
            raise ValueError(f"jitter_frame must be one of {JITTER_FRAMES}")
        object.__setattr__(self, "per_dim_scale", tuple(float(s) for s in self.per_dim_scale))

    def to_dict(self):
        d = asdict(self)
        d["per_dim_scale"] = list(self.per_dim_scale)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown augment parameters: {sorted(unknown)}")
        d = dict(d)
        if "per_dim_scale" in d:
            d["per_dim_scale"] = tuple(d["per_dim_scale"])
        return cls(**d)


@dataclass
class BoxPool:
    """Array view of candidate neighbour boxes, built once per scene."""

    boxes: list
    locs: np.ndarray = field(init=False)
    thetas: np.ndarray = field(init=False)

    def __post_init__(self):
        self.boxes = list(self.boxes)
        if self.boxes:
            self.locs = np.array([b.loc for b in self.boxes], dtype=np.float64)
            self.thetas = np.array([b.theta for b in self.boxes], dtype=np.float64)
        else:
            self.locs = np.zeros((0, 3))
            self.thetas = np.zeros(0)

    def __len__(self):
        return len(self.boxes)

    def without(self, index):
        return BoxPool(self.boxes[:index] + self.boxes[index + 1:])


def _as_pool(pool):
    return pool if isinstance(pool, BoxPool) else BoxPool(pool)


def find_neighbors(b, pool, r, eps_theta, k_max, rng):
    """Boxes within distance ``r`` of ``b`` whose yaw differs by less than ``eps_theta``.

    When more than ``k_max`` qualify, ``k_max`` of them are drawn uniformly
    without replacement (result kept in pool order).  The caller must leave
    ``b`` itself out of ``pool``.
    """
    pool = _as_pool(pool)
    if len(pool) == 0 or k_max <= 0:
        return []
    mask = kernels.neighbor_mask(b.loc, float(b.theta), pool.locs, pool.thetas,
                                 float(r), float(eps_theta))
    idx = np.flatnonzero(mask)
    if idx.size > k_max:
        idx = np.sort(rng.choice(idx, size=k_max, replace=False))
    return [pool.boxes[i] for i in idx]


def _jitter(b, params, rng):
    dj = params.jitter
    if dj == 0.0:
        return b
    while True:
        dx, dz = rng.uniform(0.0, dj, size=2)
        if dz > 2.0 * dx:
            break
    sx, sz = np.where(rng.random(2) < 0.5, -1.0, 1.0)
    dx, dz = sx * dx, sz * dz
    if params.jitter_frame == "camera":
        ox, oz = dx, dz
    else:
        # dz along the length axis, dx along the width axis
        c, s = math.cos(b.theta), math.sin(b.theta)
        ox = dz * c + dx * s
        oz = -dz * s + dx * c
    return b.with_loc(b.x + ox, b.y, b.z + oz)


def geometry_aware_augment(b, pool, params, rng, weights=None):
    """Move ``b`` to a plausible nearby location; size and yaw are kept.

    With neighbours the new location is a convex combination of ``b`` and the
    neighbour locations, weights drawn from a flat Dirichlet unless
    ``weights`` (``b`` first) is given.  Without neighbours the box is
    jittered: a large offset along its length and one less than half as large
    across it.
    """
    neighbors = find_neighbors(b, pool, params.radius, params.eps_theta, params.k_max, rng)
    if not neighbors:
        return _jitter(b, params, rng)
    k = len(neighbors)
    if weights is None:
        lam = rng.dirichlet(np.ones(k + 1))
    else:
        lam = np.asarray(weights, dtype=np.float64)
        if lam.shape != (k + 1,) or np.any(lam < 0) or not math.isclose(lam.sum(), 1.0, abs_tol=1e-9):
            raise ValueError(f"weights must be {k + 1} nonnegative numbers summing to 1")
    loc = lam[0] * b.loc
    for w, n in zip(lam[1:], neighbors):
        loc = loc + w * n.loc
    return b.with_loc(*loc)


def _perturb(vec, eps, params):
    out = vec + eps * (params.alpha * np.asarray(params.per_dim_scale))
    out[..., 3:6] = np.maximum(out[..., 3:6], MIN_DIM)
    out[..., 6] = kernels.wrap(out[..., 6])
    return out


def sample_box(mu, params, rng, eps=None):
    """Draw ``mu + eps * alpha`` with ``eps ~ N(0, I)`` over the 7 box parameters.

    Sizes are floored at 0.1 m, yaw is wrapped and the observation angle is
    recomputed from the perturbed yaw and location.
    """
    if eps is None:
        eps = rng.standard_normal(7)
    eps = np.asarray(eps, dtype=np.float64)
    if params.alpha == 0.0:
        return mu
    return Box3D.from_vector(_perturb(mu.vector, eps, params))


def sample_box_array(mu, params, rng, n):
    """``n`` draws of :func:`sample_box` as an ``(n, 7)`` array.

    Consumes the generator exactly like ``n`` sequential ``sample_box`` calls.
    """
    eps = rng.standard_normal((n, 7))
    return _perturb(np.broadcast_to(mu.vector, (n, 7)).copy(), eps, params)


def modified_regression_pair(b_gt, mu_pred, pool, params, rng, weights=None, eps=None):
    """Return ``(b_hat, b_tilde)``: a Gaussian draw around the prediction and
    the augmented ground truth it is regressed against."""
    b_tilde = geometry_aware_augment(b_gt, pool, params, rng, weights=weights)
    b_hat = sample_box(mu_pred, params, rng, eps=eps)
    return b_hat, b_tilde


def smooth_l1(a, b, beta=1.0):
    """Smooth-L1 summed over the 7 box parameters; yaw uses the wrapped difference."""
    d = a.vector - b.vector
    d[6] = wrap_angle(d[6])
    d = np.abs(d)
    per = np.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)
    return float(per.sum())


def regression_loss(mu_pred, b_gt, pool, params, rng, weights=None, eps=None, beta=1.0):
    b_hat, b_tilde = modified_regression_pair(b_gt, mu_pred, pool, params, rng, weights, eps)
    return smooth_l1(b_hat, b_tilde, beta)
