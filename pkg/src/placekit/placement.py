"""BEV placement prior and the box samplers built on it.

The prior is a statistical stand-in for a learned placement network: it
conditions only on bird's-eye-view location, never on image content.  Every
ground-truth car is pushed through the geometric augmentation several times
and each augmented copy deposits unit weight, its yaw, its size and its
ground height in the grid cell under it.

Two baselines share the same rejection filters: road-mask placement with the
yaw copied from the nearest ground-truth car (``rbp``), and a fixed
parametric box distribution (``preset``).
"""
from dataclasses import asdict, dataclass, field
import logging
import math
import struct

import numpy as np

from . import kernels
from .boxaug import MIN_DIM, BoxPool, geometry_aware_augment
from .errors import CorpusError, ParseError
from .geometry import Box3D, backproject_to_ground, fully_in_front, project_box

log = logging.getLogger(__name__)

MAGIC = b"PKPRIOR1"
_HEADER = struct.Struct("<8s5dI")
HIST_SMOOTHING = 1e-3
CAMERA_HEIGHT = 1.6
SOURCES = ("prior", "rbp", "preset")


@dataclass(frozen=True)
class GridSpec:
    x_range: tuple = (-30.0, 30.0)
    z_range: tuple = (0.0, 70.0)
    cell_size: float = 0.5
    n_bins: int = 36

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be > 0")
        if not (self.x_range[1] > self.x_range[0] and self.z_range[1] > self.z_range[0]):
            raise ValueError("grid extents must be increasing")
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")

    @property
    def shape(self):
        nx = int(round((self.x_range[1] - self.x_range[0]) / self.cell_size))
        nz = int(round((self.z_range[1] - self.z_range[0]) / self.cell_size))
        return nz, nx


@dataclass
class PlacementPrior:
    """BEV grid of augmented-box mass with per-cell yaw/size/height statistics.

    Arrays are indexed ``[iz, ix]`` (row = depth bin, column = lateral bin).
    """

    grid: GridSpec
    weight: np.ndarray
    hist: np.ndarray
    dim_sum: np.ndarray
    dim_sq: np.ndarray
    y_sum: np.ndarray
    deposits: int = 0
    dropped: int = 0
    _cdf: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def empty(cls, grid=None):
        grid = grid or GridSpec()
        nz, nx = grid.shape
        return cls(
            grid,
            np.zeros((nz, nx)),
            np.zeros((nz, nx, grid.n_bins)),
            np.zeros((nz, nx, 3)),
            np.zeros((nz, nx, 3)),
            np.zeros((nz, nx)),
        )

    @property
    def total_weight(self):
        return float(self.weight.sum())

    def is_empty(self):
        return not self.weight.any()

    def deposit(self, xs, zs, thetas, dims, ys):
        """Add boxes given as parallel arrays; returns how many fell off the grid."""
        g = self.grid
        xs = np.ascontiguousarray(xs, dtype=np.float64)
        dropped = kernels.deposit(
            self.weight, self.hist, self.dim_sum, self.dim_sq, self.y_sum,
            xs,
            np.ascontiguousarray(zs, dtype=np.float64),
            np.ascontiguousarray(thetas, dtype=np.float64),
            np.ascontiguousarray(dims, dtype=np.float64).reshape(-1, 3),
            np.ascontiguousarray(ys, dtype=np.float64),
            float(g.x_range[0]), float(g.z_range[0]), float(g.cell_size),
        )
        self.deposits += len(xs) - int(dropped)
        self.dropped += int(dropped)
        self._cdf = None
        return int(dropped)

    def merge(self, other):
        if other.grid != self.grid:
            raise ValueError("cannot merge priors with different grids")
        self.weight += other.weight
        self.hist += other.hist
        self.dim_sum += other.dim_sum
        self.dim_sq += other.dim_sq
        self.y_sum += other.y_sum
        self.deposits += other.deposits
        self.dropped += other.dropped
        self._cdf = None
        return self

    def cell_index(self, x, z):
        g = self.grid
        return (int(math.floor((z - g.z_range[0]) / g.cell_size)),
                int(math.floor((x - g.x_range[0]) / g.cell_size)))

    def draw_cells(self, n, rng):
        """``n`` cells drawn with probability proportional to weight; returns ``(iz, ix)``."""
        if self._cdf is None:
            if self.is_empty():
                raise CorpusError("placement prior is empty")
            cdf = np.cumsum(self.weight.ravel())
            self._cdf = cdf / cdf[-1]
        flat = np.searchsorted(self._cdf, rng.random(n), side="right")
        flat = np.minimum(flat, self._cdf.size - 1)
        return np.unravel_index(flat, self.weight.shape)

    def cell_dims(self, iz, ix):
        w = self.weight[iz, ix]
        mean = self.dim_sum[iz, ix] / w
        var = np.maximum(self.dim_sq[iz, ix] / w - mean * mean, 0.0)
        return mean, np.sqrt(var)

    def cell_ground_y(self, iz, ix):
        return float(self.y_sum[iz, ix] / self.weight[iz, ix])

    def cell_yaw_probs(self, iz, ix):
        p = self.hist[iz, ix] + HIST_SMOOTHING
        return p / p.sum()

    # -- persistence --------------------------------------------------------

    def to_bytes(self):
        g = self.grid
        head = _HEADER.pack(MAGIC, g.x_range[0], g.x_range[1], g.z_range[0], g.z_range[1],
                            g.cell_size, g.n_bins)
        rec = np.concatenate(
            [self.weight[..., None], self.hist, self.dim_sum, self.dim_sq, self.y_sum[..., None]],
            axis=-1,
        )
        return head + rec.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data, source=None):
        if len(data) < _HEADER.size:
            raise ParseError("prior file shorter than its header", source=source)
        magic, x0, x1, z0, z1, cell, nb = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ParseError(f"bad magic {magic!r}", source=source)
        try:
            grid = GridSpec((x0, x1), (z0, z1), cell, nb)
        except ValueError as exc:
            raise ParseError(str(exc), source=source) from None
        nz, nx = grid.shape
        width = 1 + nb + 7
        need = nz * nx * width * 8
        body = data[_HEADER.size:]
        if len(body) != need:
            raise ParseError(f"expected {need} record bytes, found {len(body)}", source=source)
        rec = np.frombuffer(body, dtype="<f8").reshape(nz, nx, width).astype(np.float64)
        prior = cls(
            grid,
            rec[..., 0].copy(),
            rec[..., 1:1 + nb].copy(),
            rec[..., 1 + nb:4 + nb].copy(),
            rec[..., 4 + nb:7 + nb].copy(),
            rec[..., 7 + nb].copy(),
        )
        prior.deposits = int(round(prior.weight.sum()))
        return prior


# ---------------------------------------------------------------------------
# building
# ---------------------------------------------------------------------------


def augmented_draws(scene, params, draws_per_box, rng, classes=("Car",)):
    """Augmented copies of every ground-truth car in one scene as arrays.

    Returns ``(xs, zs, thetas, dims, ys)``; neighbours come from the other
    cars of the same scene.
    """
    cars = scene.boxes(classes=classes)
    n = len(cars) * draws_per_box
    xs, zs, ths, ys = (np.empty(n) for _ in range(4))
    dims = np.empty((n, 3))
    full = BoxPool(cars)
    k = 0
    for i, car in enumerate(cars):
        pool = full.without(i)
        for _ in range(draws_per_box):
            b = geometry_aware_augment(car, pool, params, rng)
            xs[k], zs[k], ths[k], ys[k] = b.x, b.z, b.theta, b.y
            dims[k] = (b.h, b.w, b.l)
            k += 1
    return xs, zs, ths, dims, ys


def _scene_draws(args):
    scene, params, draws_per_box, rng, classes = args
    return augmented_draws(scene, params, draws_per_box, rng, classes)


def build_prior(scenes, params, draws_per_box, rng, grid=None, classes=("Car",), workers=1):
    """Accumulate a :class:`PlacementPrior` from ground-truth boxes.

    Each scene gets its own child generator spawned from ``rng``, so the result
    does not depend on ``workers``; deposits are merged in scene order.
    """
    scenes = list(scenes)
    if not any(s.boxes(classes=classes) for s in scenes):
        raise CorpusError("no ground-truth boxes of the requested classes in the corpus")
    if draws_per_box < 1:
        raise ValueError("draws_per_box must be >= 1")
    children = rng.spawn(len(scenes))
    jobs = [(s, params, draws_per_box, c, tuple(classes)) for s, c in zip(scenes, children)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_scene_draws, jobs))
    else:
        results = [_scene_draws(j) for j in jobs]
    prior = PlacementPrior.empty(grid)
    for xs, zs, ths, dims, ys in results:
        if len(xs):
            prior.deposit(xs, zs, ths, dims, ys)
    if prior.dropped:
        log.info("dropped %d augmented boxes outside the grid", prior.dropped)
    return prior


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlacementSample:
    box: Box3D
    source: str
    seed_record: int = 0


@dataclass
class Placements:
    """Accepted samples for one scene plus the bookkeeping of the rejection loop."""

    samples: list
    target: int
    attempts: int

    @property
    def exhausted(self):
        return len(self.samples) < self.target

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def boxes(self):
        return [s.box for s in self.samples]


def occupied_rects(scene):
    """BEV rects of every non-DontCare ground-truth object in the scene."""
    return [b.bev_array() for b in scene.boxes()]


def accept_box(box, calib, occupied):
    """Frustum, depth and collision filters shared by all samplers."""
    if not box.z > 0.0 or not fully_in_front(calib, box):
        return False
    if project_box(calib, box) is None:
        return False
    if occupied and kernels.overlaps_any(box.bev_array(), np.array(occupied)):
        return False
    return True


def _draw_target(n_range, rng):
    lo, hi = n_range
    if lo < 0 or hi < lo:
        raise ValueError(f"invalid density range {n_range}")
    return int(rng.integers(lo, hi + 1))


def _run_rejection(scene, propose, n_range, rng, max_attempts, source, seed_record):
    target = _draw_target(n_range, rng)
    if max_attempts is None:
        max_attempts = 100 * target
    elif max_attempts <= 0:
        raise ValueError("max_attempts must be > 0")
    occupied = occupied_rects(scene)
    samples = []
    attempts = 0
    while len(samples) < target and attempts < max_attempts:
        attempts += 1
        box = propose()
        if box is None or not accept_box(box, scene.calib, occupied):
            continue
        samples.append(PlacementSample(box, source, seed_record))
        occupied.append(box.bev_array())
    out = Placements(samples, target, attempts)
    if out.exhausted:
        log.warning("scene %s: placed %d of %d boxes in %d attempts",
                    scene.scene_id, len(samples), target, attempts)
    return out


def sample_from_prior(prior, rng):
    """One candidate box from the prior, without any filtering."""
    g = prior.grid
    iz, ix = (int(v[0]) for v in prior.draw_cells(1, rng))
    u = rng.random(2)
    x = g.x_range[0] + (ix + u[0]) * g.cell_size
    z = g.z_range[0] + (iz + u[1]) * g.cell_size
    probs = prior.cell_yaw_probs(iz, ix)
    b = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
    b = min(b, g.n_bins - 1)
    width = 2.0 * math.pi / g.n_bins
    theta = -math.pi + (b + rng.random()) * width
    mean, std = prior.cell_dims(iz, ix)
    h, w, l = np.maximum(mean + std * rng.standard_normal(3), MIN_DIM)
    return Box3D.make(x, prior.cell_ground_y(iz, ix), z, h, w, l, theta)


def sample_placements(prior, scene, n_range, rng, max_attempts=None, seed_record=0):
    """Collision-free boxes for ``scene`` drawn from ``prior``.

    The target count is uniform on ``n_range`` (inclusive).  Candidates that
    overlap a ground-truth or already accepted box in BEV, reach behind the
    camera or fall outside the image are rejected.  The loop stops after
    ``max_attempts`` (default ``100 * target``); check ``.exhausted``.
    """
    if prior.is_empty():
        raise CorpusError("placement prior is empty")
    return _run_rejection(scene, lambda: sample_from_prior(prior, rng), n_range, rng,
                          max_attempts, "prior", seed_record)


# -- baselines ---------------------------------------------------------------


@dataclass(frozen=True)
class FleetStats:
    """Mean and standard deviation of car sizes ``(h, w, l)``."""

    mean: tuple = (1.53, 1.63, 3.88)
    std: tuple = (0.14, 0.10, 0.43)

    @classmethod
    def from_boxes(cls, boxes, tolerance=0.5):
        kept = filter_size_outliers(boxes, tolerance)
        dims = np.array([b.dims for b in kept])
        return cls(tuple(dims.mean(axis=0)), tuple(dims.std(axis=0)))

    def sample(self, rng):
        return np.maximum(np.asarray(self.mean) + np.asarray(self.std) * rng.standard_normal(3), MIN_DIM)


def filter_size_outliers(boxes, tolerance=0.5):
    """Drop boxes with any of h, w, l off the fleet mean by more than ``tolerance`` (relative)."""
    boxes = list(boxes)
    if not boxes:
        raise CorpusError("need at least one box to compute fleet means")
    dims = np.array([b.dims for b in boxes])
    mean = dims.mean(axis=0)
    rel = np.abs(dims - mean) / mean
    keep = np.all(rel <= tolerance, axis=1)
    return [b for b, k in zip(boxes, keep) if k]


@dataclass(frozen=True)
class PresetDistribution:
    """Fixed parametric box distribution used by the preset baseline.

    ``x`` and ``z`` are uniform on their ranges; ``y`` is Gaussian around the
    camera height; sizes are Gaussian around fleet means; yaw is an equal
    mixture of two Gaussians centred at +pi/2 and -pi/2, wrapped.
    """

    x_range: tuple = (-20.0, 20.0)
    z_range: tuple = (5.0, 45.0)
    camera_height: float = CAMERA_HEIGHT
    y_sigma: float = 0.2
    dims_mean: tuple = FleetStats.mean
    dims_sigma: float = 0.5
    theta_modes: tuple = (math.pi / 2, -math.pi / 2)
    theta_sigma: float = math.pi / 2

    def to_dict(self):
        return asdict(self)


def preset_sample_array(preset, n, rng):
    """``(n, 7)`` array of ``(x, y, z, h, w, l, theta)`` draws."""
    out = np.empty((n, 7))
    out[:, 0] = rng.uniform(*preset.x_range, size=n)
    out[:, 1] = rng.normal(preset.camera_height, preset.y_sigma, size=n)
    out[:, 2] = rng.uniform(*preset.z_range, size=n)
    out[:, 3:6] = np.maximum(rng.normal(preset.dims_mean, preset.dims_sigma, size=(n, 3)), MIN_DIM)
    modes = np.where(rng.random(n) < 0.5, preset.theta_modes[0], preset.theta_modes[1])
    out[:, 6] = kernels.wrap(rng.normal(modes, preset.theta_sigma))
    return out


def preset_sample(preset, n, rng):
    if n < 0:
        raise ValueError("n must be >= 0")
    return [Box3D.from_vector(v) for v in preset_sample_array(preset, n, rng)]


def preset_placements(scene, preset, n_range, rng, max_attempts=None, seed_record=0):
    """Preset-distribution draws passed through the shared rejection filters."""
    return _run_rejection(scene, lambda: preset_sample(preset, 1, rng)[0], n_range, rng,
                          max_attempts, "preset", seed_record)


def rbp_sample(scene, road_mask, fleet, n_range, rng, max_attempts=None,
               camera_height=CAMERA_HEIGHT, preset=None, seed_record=0):
    """Rule-based placement: uniform road pixels lifted to the ground plane.

    The ground plane sits at the mean base height of the scene's cars, or at
    ``camera_height`` when the scene has none.  Yaw is copied from the BEV-
    nearest ground-truth car (preset yaw mixture if there is no car); sizes
    come from ``fleet``.
    """
    if road_mask is None:
        raise CorpusError(f"scene {scene.scene_id}: road mask required for rule-based placement")
    road_mask = np.asarray(road_mask, dtype=bool)
    w, h = scene.calib.image_size
    if road_mask.shape != (h, w):
        raise ValueError(f"road mask shape {road_mask.shape} does not match image {(h, w)}")
    road = np.flatnonzero(road_mask)
    cars = scene.cars()
    ground_y = float(np.mean([c.y for c in cars])) if cars else camera_height
    car_xz = np.array([[c.x, c.z] for c in cars]) if cars else None
    preset = preset or PresetDistribution(camera_height=camera_height)

    def propose():
        if road.size == 0:
            return None
        row, col = divmod(int(road[rng.integers(road.size)]), w)
        hit = backproject_to_ground(scene.calib, col + 0.5, row + 0.5, ground_y)
        if hit is None:
            return None
        x, z = hit
        if car_xz is not None:
            nearest = int(np.argmin(np.sum((car_xz - (x, z)) ** 2, axis=1)))
            theta = cars[nearest].theta
        else:
            theta = preset_sample_array(preset, 1, rng)[0, 6]
        hh, ww, ll = fleet.sample(rng)
        return Box3D.make(x, ground_y, z, hh, ww, ll, theta)

    if road.size == 0:
        target = _draw_target(n_range, rng)
        log.warning("scene %s: road mask is empty", scene.scene_id)
        return Placements([], target, 0)
    return _run_rejection(scene, propose, n_range, rng, max_attempts, "rbp", seed_record)
