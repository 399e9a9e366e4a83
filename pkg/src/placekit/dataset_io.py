"""KITTI labels/calibration, netpbm images and masks, sprite banks.

Label lines follow the KITTI object format::

    type truncated occluded alpha left top right bottom h w l x y z rotation_y [score ...]

Numbers are written back with a fixed number of decimals (2 by default, the
KITTI convention), so ``serialize_label(parse_label_line(s))`` is a canonical
form of ``s``.
"""
from dataclasses import dataclass, field
import json
import logging
import math
import os
from pathlib import Path
import tempfile
import warnings

import numpy as np

from .errors import CorpusError, ParseError
from .geometry import Box3D, wrap_angle

log = logging.getLogger(__name__)

DONTCARE = "DontCare"
DEFAULT_IMAGE_SIZE = (1242, 375)
LABEL_PRECISION = 2

_FIELD_NAMES = (
    "type", "truncated", "occluded", "alpha", "left", "top", "right", "bottom",
    "h", "w", "l", "x", "y", "z", "rotation_y",
)


class ManifestWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LabeledObject:
    class_name: str
    truncated: float
    occluded: int
    alpha: float
    bbox2d: tuple
    dims: tuple
    loc: tuple
    rotation_y: float
    extra: tuple = ()

    @property
    def is_dontcare(self):
        return self.class_name == DONTCARE

    def to_box(self):
        h, w, l = self.dims
        x, y, z = self.loc
        return Box3D.make(x, y, z, h, w, l, self.rotation_y)

    @classmethod
    def from_box(cls, box, bbox2d, class_name="Car", truncated=0.0, occluded=0):
        return cls(
            class_name=class_name,
            truncated=float(truncated),
            occluded=int(occluded),
            alpha=box.alpha,
            bbox2d=tuple(float(v) for v in bbox2d),
            dims=(box.h, box.w, box.l),
            loc=(box.x, box.y, box.z),
            rotation_y=box.theta,
        )


@dataclass(frozen=True)
class CameraCalib:
    P: np.ndarray
    image_size: tuple = DEFAULT_IMAGE_SIZE

    @property
    def focal(self):
        return float(self.P[0, 0])


@dataclass
class SceneAnnotation:
    scene_id: str
    calib: CameraCalib
    objects: list = field(default_factory=list)
    road_mask_ref: Path = None
    image_ref: Path = None

    def boxes(self, classes=None):
        """Boxes of non-DontCare objects, optionally restricted to ``classes``."""
        out = []
        for obj in self.objects:
            if obj.is_dontcare:
                continue
            if classes is not None and obj.class_name not in classes:
                continue
            out.append(obj.to_box())
        return out

    def cars(self):
        return self.boxes(classes=("Car",))


@dataclass(frozen=True)
class SpriteAsset:
    pixels: np.ndarray
    mask: np.ndarray
    render_orientation: float
    reference_height_px: float
    name: str = ""

    def __post_init__(self):
        if self.pixels.shape[:2] != self.mask.shape:
            raise ParseError(
                f"sprite {self.name!r}: image {self.pixels.shape[:2]} and mask {self.mask.shape} differ"
            )


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------


def _num(tok, index, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"expected a number for {_FIELD_NAMES[index - 1]}, got {tok!r}",
                         line=lineno, field=index) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {tok!r}", line=lineno, field=index)
    return v


def parse_label_line(line, lineno=1):
    """Parse one KITTI label line into a :class:`LabeledObject`.

    Field indices in errors are 1-based token positions.
    """
    tokens = line.split()
    if len(tokens) < 15:
        raise ParseError(f"expected at least 15 fields, found {len(tokens)}",
                         line=lineno, field=len(tokens) + 1)
    vals = [_num(tokens[i], i + 1, lineno) for i in range(1, 15)]
    occ = vals[1]
    if occ != int(occ):
        raise ParseError(f"occlusion code must be an integer, got {tokens[2]!r}", line=lineno, field=3)
    left, top, right, bottom = vals[3:7]
    if right < left or bottom < top:
        raise ParseError("2D box has right < left or bottom < top", line=lineno, field=5)
    dims = tuple(vals[7:10])
    if tokens[0] != DONTCARE and min(dims) <= 0.0:
        raise ParseError(f"non-positive dimensions {dims}", line=lineno, field=9)
    return LabeledObject(
        class_name=tokens[0],
        truncated=vals[0],
        occluded=int(occ),
        alpha=vals[2],
        bbox2d=(left, top, right, bottom),
        dims=dims,
        loc=tuple(vals[10:13]),
        rotation_y=vals[13],
        extra=tuple(tokens[15:]),
    )


def _fmt(v, precision):
    s = f"{v:.{precision}f}"
    if s.startswith("-") and float(s) == 0.0:
        s = s[1:]
    return s


def serialize_label(obj, precision=LABEL_PRECISION):
    """Canonical KITTI line for ``obj`` (no trailing newline)."""
    nums = (obj.alpha, *obj.bbox2d, *obj.dims, *obj.loc, obj.rotation_y)
    parts = [obj.class_name, _fmt(obj.truncated, precision), str(int(obj.occluded))]
    parts += [_fmt(v, precision) for v in nums]
    parts += list(obj.extra)
    return " ".join(parts)


def _as_text(data, source):
    if isinstance(data, (bytes, bytearray)):
        try:
            return bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not valid UTF-8 ({exc.reason})", source=source) from None
    return data


def parse_label_file(data, source=None):
    """Parse a whole label file (``str`` or ``bytes``); blank lines are skipped."""
    text = _as_text(data, source)
    objects = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            objects.append(parse_label_line(line, lineno))
        except ParseError as exc:
            if source is None:
                raise
            raise exc.located(source) from None
    return objects


def serialize_labels(objects, precision=LABEL_PRECISION):
    return "".join(serialize_label(o, precision) + "\n" for o in objects)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def parse_calib(data, image_size=DEFAULT_IMAGE_SIZE, key="P2", source=None):
    text = _as_text(data, source)
    for lineno, line in enumerate(text.splitlines(), start=1):
        name, sep, rest = line.partition(":")
        if not sep or name.strip() != key:
            continue
        tokens = rest.split()
        if len(tokens) != 12:
            raise ParseError(f"{key} needs 12 numbers, found {len(tokens)}", line=lineno, source=source)
        try:
            vals = [float(t) for t in tokens]
        except ValueError as exc:
            raise ParseError(f"bad number in {key}: {exc}", line=lineno, source=source) from None
        P = np.array(vals, dtype=np.float64).reshape(3, 4)
        if not np.all(np.isfinite(P)) or P[2, 2] == 0.0:
            raise ParseError(f"{key} is not a usable projection matrix", line=lineno, source=source)
        w, h = image_size
        if w <= 0 or h <= 0:
            raise ParseError(f"invalid image size {image_size}", source=source)
        return CameraCalib(P=P, image_size=(int(w), int(h)))
    raise ParseError(f"missing key {key!r}", source=source)


def format_calib(calib, key="P2"):
    return f"{key}: " + " ".join(f"{v:.12e}" for v in calib.P.ravel()) + "\n"


# ---------------------------------------------------------------------------
# netpbm
# ---------------------------------------------------------------------------


def _parse_netpbm(data, magic, channels, source=None):
    data = bytes(data)
    if data[:2] != magic:
        raise ParseError(f"expected magic {magic.decode()}, got {data[:2]!r}", source=source)
    pos = 2
    vals = []
    n = len(data)
    while len(vals) < 3:
        if pos >= n:
            raise ParseError("truncated header", source=source)
        c = data[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isdigit():
            start = pos
            while pos < n and data[pos:pos + 1].isdigit():
                pos += 1
            vals.append(int(data[start:pos]))
        else:
            raise ParseError(f"unexpected byte {c!r} in header", source=source)
    if pos >= n or not data[pos:pos + 1].isspace():
        raise ParseError("header must end with one whitespace byte", source=source)
    pos += 1
    width, height, maxval = vals
    if width <= 0 or height <= 0:
        raise ParseError(f"invalid size {width}x{height}", source=source)
    if not 0 < maxval < 256:
        raise ParseError(f"unsupported maxval {maxval}", source=source)
    need = width * height * channels
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise ParseError(f"truncated payload: {len(payload)} of {need} bytes", source=source)
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    if maxval != 255:
        arr = np.round(arr.astype(np.float64) * (255.0 / maxval)).clip(0, 255).astype(np.uint8)
    if channels == 1:
        arr = arr[:, :, 0]
    return arr.copy()


def decode_pgm(data, source=None):
    return _parse_netpbm(data, b"P5", 1, source)


def decode_ppm(data, source=None):
    return _parse_netpbm(data, b"P6", 3, source)


def encode_pgm(gray):
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise ValueError(f"PGM needs a 2D array, got shape {gray.shape}")
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes()


def encode_ppm(rgb):
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"PPM needs an (h, w, 3) array, got shape {rgb.shape}")
    h, w = rgb.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def netpbm_size(path):
    """``(width, height)`` from a P5/P6 header without reading the payload."""
    with open(path, "rb") as fh:
        head = fh.read(512)
    magic = head[:2]
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"not a binary netpbm file: {magic!r}", source=path)
    tokens = []
    for line in head[2:].split(b"\n"):
        line = line.split(b"#", 1)[0]
        tokens += line.split()
        if len(tokens) >= 2:
            break
    if len(tokens) < 2:
        raise ParseError("truncated header", source=path)
    return int(tokens[0]), int(tokens[1])


def load_mask(path):
    """Road mask as a boolean ``(h, w)`` array; pixel values above 127 are road."""
    return load_gray(path) > 127


def load_gray(path):
    return decode_pgm(Path(path).read_bytes(), source=path)


def load_image(path):
    return decode_ppm(Path(path).read_bytes(), source=path)


def save_image(path, pixels):
    write_bytes_atomic(path, encode_ppm(pixels))


def save_gray(path, gray):
    write_bytes_atomic(path, encode_pgm(gray))


def save_mask(path, mask):
    save_gray(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


# ---------------------------------------------------------------------------
# sprites
# ---------------------------------------------------------------------------

_SPRITE_KEYS = ("image", "mask", "render_orientation", "reference_height_px")


def load_sprite_bank(manifest_path):
    """Load the sprites listed in a JSON manifest.

    Paths inside the manifest are relative to the manifest's directory.
    Orientations outside ``[-pi, pi)`` are wrapped with a
    :class:`ManifestWarning`.
    """
    manifest_path = Path(manifest_path)
    try:
        records = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", source=manifest_path) from None
    if not isinstance(records, list):
        raise ParseError("manifest must be a JSON array", source=manifest_path)
    root = manifest_path.parent
    bank = []
    for i, rec in enumerate(records):
        where = f"record {i}"
        if not isinstance(rec, dict):
            raise ParseError(f"{where} is not an object", source=manifest_path)
        missing = [k for k in _SPRITE_KEYS if k not in rec]
        if missing:
            raise ParseError(f"{where} lacks {', '.join(missing)}", source=manifest_path)
        if not isinstance(rec["image"], str) or not isinstance(rec["mask"], str):
            raise ParseError(f"{where}: image and mask must be paths", source=manifest_path)
        orient = rec["render_orientation"]
        ref_h = rec["reference_height_px"]
        if isinstance(orient, bool) or not isinstance(orient, (int, float)) or not math.isfinite(orient):
            raise ParseError(f"{where}: render_orientation must be a finite number", source=manifest_path)
        if isinstance(ref_h, bool) or not isinstance(ref_h, (int, float)) or not ref_h > 0:
            raise ParseError(f"{where}: reference_height_px must be positive", source=manifest_path)
        wrapped = wrap_angle(orient)
        if wrapped != orient:
            warnings.warn(
                f"{manifest_path}: {where} render_orientation {orient} wrapped to {wrapped:.6f}",
                ManifestWarning,
                stacklevel=2,
            )
        pixels = load_image(root / rec["image"])
        mask = load_gray(root / rec["mask"]).astype(np.float64) / 255.0
        bank.append(SpriteAsset(pixels, mask, wrapped, float(ref_h), name=rec["image"]))
    return bank


# ---------------------------------------------------------------------------
# scenes and output plumbing
# ---------------------------------------------------------------------------


def list_scene_ids(labels_dir, split=None):
    """Sorted scene ids in ``labels_dir``; ``split`` is an optional id-list file."""
    labels_dir = Path(labels_dir)
    if not labels_dir.is_dir():
        raise CorpusError(f"labels directory not found: {labels_dir}")
    ids = sorted(p.stem for p in labels_dir.glob("*.txt"))
    if split is not None:
        wanted = [s.strip() for s in Path(split).read_text().splitlines() if s.strip()]
        have = set(ids)
        missing = [s for s in wanted if s not in have]
        if missing:
            raise CorpusError(f"split lists {len(missing)} ids without labels, e.g. {missing[0]}")
        ids = wanted
    return ids


def load_scene(scene_id, labels_dir, calib_dir, images_dir=None, masks_dir=None):
    label_path = Path(labels_dir) / f"{scene_id}.txt"
    objects = parse_label_file(label_path.read_bytes(), source=label_path)
    image_ref = mask_ref = None
    size = None
    if images_dir is not None and (Path(images_dir) / f"{scene_id}.ppm").exists():
        image_ref = Path(images_dir) / f"{scene_id}.ppm"
        size = netpbm_size(image_ref)
    if masks_dir is not None and (Path(masks_dir) / f"{scene_id}.pgm").exists():
        mask_ref = Path(masks_dir) / f"{scene_id}.pgm"
        size = size or netpbm_size(mask_ref)
    calib_path = Path(calib_dir) / f"{scene_id}.txt"
    calib = parse_calib(calib_path.read_bytes(), image_size=size or DEFAULT_IMAGE_SIZE, source=calib_path)
    return SceneAnnotation(scene_id, calib, objects, road_mask_ref=mask_ref, image_ref=image_ref)


def load_corpus(labels_dir, calib_dir, images_dir=None, masks_dir=None, split=None):
    ids = list_scene_ids(labels_dir, split)
    if not ids:
        raise CorpusError(f"no label files in {labels_dir}")
    return [load_scene(i, labels_dir, calib_dir, images_dir, masks_dir) for i in ids]


def write_bytes_atomic(path, data):
    """Write via a temp file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path, text):
    write_bytes_atomic(path, text.encode("utf-8"))


def dump_json(obj):
    """Deterministic JSON text for sidecars and reports."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
