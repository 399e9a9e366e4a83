"""Copy-paste rendering of sprites at placed boxes, plus augmented label output.

Sprites are assumed to be cropped so that the object's bottom edge is the
bottom row of the sprite.  A sprite is scaled so that ``reference_height_px``
matches the projected box height, centred horizontally on the projected box
and bottom-aligned with it.  Placements are drawn far to near.
"""
from dataclasses import dataclass, field
import logging
from pathlib import Path

import numpy as np

from .dataset_io import (
    LabeledObject,
    dump_json,
    encode_ppm,
    serialize_labels,
    write_bytes_atomic,
    write_text_atomic,
)
from .errors import CorpusError, GeometryError
from .geometry import angle_diff, corrected_render_orientation, fully_in_front, project_box

log = logging.getLogger(__name__)

UPSCALE_WARN = 2.0


def select_sprite(bank, box, rng, jitter_rank=3):
    """Pick a sprite whose render orientation is close to the box's viewpoint.

    Sprites are ranked by wrapped distance to the perspective-corrected yaw and
    one of the best ``jitter_rank`` is chosen uniformly.
    """
    if not bank:
        raise CorpusError("sprite bank is empty")
    target = corrected_render_orientation(box.theta, box.x, box.z)
    dist = np.array([angle_diff(s.render_orientation, target) for s in bank])
    order = np.argsort(dist, kind="stable")
    k = max(1, min(int(jitter_rank), len(bank)))
    return bank[int(order[rng.integers(k)])]


@dataclass(frozen=True)
class Placement:
    box: object
    sprite: object
    bbox2d: tuple
    full_bbox: tuple


@dataclass
class CompositePlan:
    scene_id: str
    placements: list = field(default_factory=list)

    def __post_init__(self):
        self.placements = sorted(self.placements, key=lambda p: -p.box.z)


def plan_composite(scene, boxes, bank, rng, jitter_rank=3):
    placements = []
    for box in boxes:
        if not fully_in_front(scene.calib, box):
            raise GeometryError(f"scene {scene.scene_id}: placed box reaches behind the camera")
        clipped = project_box(scene.calib, box)
        if clipped is None:
            raise GeometryError(f"scene {scene.scene_id}: placed box projects outside the image")
        full = project_box(scene.calib, box, clip=False)
        sprite = select_sprite(bank, box, rng, jitter_rank)
        placements.append(Placement(box, sprite, clipped, full))
    return CompositePlan(scene.scene_id, placements)


def resize_bilinear(arr, out_h, out_w):
    """Bilinear resampling with pixel-centre alignment; keeps trailing channels."""
    arr = np.asarray(arr, dtype=np.float64)
    in_h, in_w = arr.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0, in_h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = ys - y0
    wx = xs - x0
    if arr.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
    else:
        wy = wy[:, None]
        wx = wx[None, :]
    top = arr[y0][:, x0] * (1 - wx) + arr[y0][:, x1] * wx
    bot = arr[y1][:, x0] * (1 - wx) + arr[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def _paste(canvas, placement):
    left, top, right, bottom = placement.full_bbox
    box_h = bottom - top
    if not box_h > 0:
        raise GeometryError("projected box has zero height")
    sprite = placement.sprite
    scale = box_h / sprite.reference_height_px
    if scale > UPSCALE_WARN:
        log.warning("sprite %s upscaled %.1fx", sprite.name, scale)
    sh, sw = sprite.mask.shape
    out_h = max(1, int(round(sh * scale)))
    out_w = max(1, int(round(sw * scale)))
    rgb = resize_bilinear(sprite.pixels, out_h, out_w)
    alpha = np.clip(resize_bilinear(sprite.mask, out_h, out_w), 0.0, 1.0)
    x0 = int(round(0.5 * (left + right) - out_w / 2.0))
    y0 = int(round(bottom - out_h))
    H, W = canvas.shape[:2]
    cx0, cy0 = max(x0, 0), max(y0, 0)
    cx1, cy1 = min(x0 + out_w, W), min(y0 + out_h, H)
    if cx1 <= cx0 or cy1 <= cy0:
        return
    sub_rgb = rgb[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0]
    sub_a = alpha[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0, None]
    region = canvas[cy0:cy1, cx0:cx1]
    canvas[cy0:cy1, cx0:cx1] = sub_a * sub_rgb + (1.0 - sub_a) * region


def composite(scene_image, plan):
    """Alpha-blend every planned sprite into a copy of ``scene_image``."""
    image = np.asarray(scene_image)
    if not plan.placements:
        return image.copy()
    canvas = image.astype(np.float64)
    for placement in plan.placements:
        _paste(canvas, placement)
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


def augmented_objects(scene, boxes, class_name="Car"):
    """Original objects followed by one label per placed box."""
    objs = list(scene.objects)
    for box in boxes:
        bbox = project_box(scene.calib, box)
        if bbox is None:
            raise GeometryError(f"scene {scene.scene_id}: placed box projects outside the image")
        objs.append(LabeledObject.from_box(box, bbox, class_name=class_name))
    return objs


def write_augmented_scene(scene, accepted, out_dir, image=None, sidecar=None):
    """Write ``label_2/<id>.txt``, ``image_2/<id>.ppm`` (if ``image``) and ``meta/<id>.json``."""
    out_dir = Path(out_dir)
    boxes = [s.box for s in accepted]
    objs = augmented_objects(scene, boxes)
    paths = {"label": out_dir / "label_2" / f"{scene.scene_id}.txt"}
    write_text_atomic(paths["label"], serialize_labels(objs))
    if image is not None:
        paths["image"] = out_dir / "image_2" / f"{scene.scene_id}.ppm"
        write_bytes_atomic(paths["image"], encode_ppm(image))
    meta = {
        "scene_id": scene.scene_id,
        "placements": [
            {
                "source": s.source,
                "seed_record": s.seed_record,
                "box": [round(float(v), 6) for v in (*s.box.vector, s.box.alpha)],
            }
            for s in accepted
        ],
    }
    if sidecar:
        meta.update(sidecar)
    paths["meta"] = out_dir / "meta" / f"{scene.scene_id}.json"
    write_text_atomic(paths["meta"], dump_json(meta))
    return paths
