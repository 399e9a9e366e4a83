"""Synthetic straight-road corpus for tests and demos.

A flat four-lane road (3.5 m lanes, centred on the camera) runs straight
ahead of a KITTI-like camera mounted 1.6 m above the ground.  The two left
lanes carry oncoming traffic (yaw +pi/2), the two right lanes traffic driving
away (yaw -pi/2).  Road masks are exact: a pixel is road when its ray hits
the ground within the road edges.
"""
import math
from pathlib import Path

import numpy as np

from .dataset_io import (
    CameraCalib,
    LabeledObject,
    dump_json,
    encode_pgm,
    encode_ppm,
    format_calib,
    serialize_labels,
    write_bytes_atomic,
    write_text_atomic,
)
from .geometry import Box3D, project_box

LANE_WIDTH = 3.5
LANE_CENTERS = (-5.25, -1.75, 1.75, 5.25)
LANE_YAWS = (math.pi / 2, math.pi / 2, -math.pi / 2, -math.pi / 2)
ROAD_HALF_WIDTH = 7.0
CAMERA_HEIGHT = 1.6
KITTI_SIZE = (1242, 375)
KITTI_F = 721.5377
KITTI_C = (609.5593, 172.854)


def fixture_calib(scale=1.0):
    f = KITTI_F * scale
    cu, cv = KITTI_C[0] * scale, KITTI_C[1] * scale
    P = np.array([[f, 0.0, cu, 0.0], [0.0, f, cv, 0.0], [0.0, 0.0, 1.0, 0.0]])
    size = (int(round(KITTI_SIZE[0] * scale)), int(round(KITTI_SIZE[1] * scale)))
    return CameraCalib(P=P, image_size=size)


def road_mask(calib, half_width=ROAD_HALF_WIDTH, camera_height=CAMERA_HEIGHT):
    """Boolean road mask for a flat road ``|x| <= half_width`` at ``y = camera_height``."""
    w, h = calib.image_size
    cu, cv = calib.P[0, 2], calib.P[1, 2]
    u = np.arange(w) + 0.5
    v = np.arange(h) + 0.5
    dv = (v - cv)[:, None]
    below = dv > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        x = (u[None, :] - cu) * camera_height / np.where(below, dv, 1.0)
    return below & (np.abs(x) <= half_width)


def _scene_image(mask, calib, rng):
    w, h = calib.image_size
    cv = calib.P[1, 2]
    img = np.empty((h, w, 3), dtype=np.int16)
    rows = np.arange(h)[:, None]
    img[:] = (96, 120, 72)
    img[np.broadcast_to(rows < cv, (h, w))] = (150, 185, 225)
    img[mask] = (70, 70, 74)
    img += rng.integers(-6, 7, size=img.shape, dtype=np.int16)
    return np.clip(img, 0, 255).astype(np.uint8)


def _place_cars(calib, n_cars, rng, z_range=(8.0, 55.0)):
    boxes = []
    tries = 0
    while len(boxes) < n_cars:
        tries += 1
        if tries > 1000:
            raise RuntimeError("could not place fixture cars")
        lane = int(rng.integers(len(LANE_CENTERS)))
        h = rng.normal(1.52, 0.05)
        w = rng.normal(1.62, 0.05)
        l = rng.normal(3.90, 0.15)
        x = LANE_CENTERS[lane] + rng.normal(0.0, 0.15)
        z = rng.uniform(*z_range)
        theta = LANE_YAWS[lane] + rng.normal(0.0, 0.03)
        box = Box3D.make(x, CAMERA_HEIGHT, z, h, w, l, theta)
        # at least a car length of free road between cars in one lane
        if any(abs(b.x - x) < LANE_WIDTH / 2 and abs(b.z - z) < l + 4.0 for b in boxes):
            continue
        if project_box(calib, box) is None:
            continue
        boxes.append(box)
    return boxes


def _sprite(index, n, rng, size=(64, 96)):
    h, w = size
    pix = np.zeros((h, w, 3), dtype=np.uint8)
    mask = np.zeros((h, w), dtype=np.uint8)
    color = np.array([40 + (index * 53) % 200, 40 + (index * 97) % 200, 40 + (index * 151) % 200])
    # body, cabin and wheels of a crude car silhouette
    mask[h // 3:h - 4, 2:w - 2] = 255
    mask[4:h // 3, w // 4:3 * w // 4] = 255
    mask[h - 6:, 8:24] = 255
    mask[h - 6:, w - 24:w - 8] = 255
    pix[mask > 0] = color
    pix[h - 6:, 8:24] = 20
    pix[h - 6:, w - 24:w - 8] = 20
    pix[6:h // 3, w // 4 + 3:3 * w // 4 - 3] = (170, 200, 220)
    noise = rng.integers(-8, 9, size=pix.shape)
    pix = np.clip(pix.astype(np.int16) + noise * (mask[..., None] > 0), 0, 255).astype(np.uint8)
    orientation = -math.pi + (index + 0.5) * 2.0 * math.pi / n
    return pix, mask, orientation, float(h)


def generate_fixture(out_dir, n_scenes=50, cars_per_scene=4, seed=0, scale=0.5, n_sprites=12):
    """Write a complete synthetic corpus plus a ready-to-use ``config.json``.

    Layout: ``labels/ calib/ images/ masks/ sprites/manifest.json``.  Returns
    the path to the config file.
    """
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    calib = fixture_calib(scale)
    mask = road_mask(calib)
    mask_bytes = encode_pgm(np.where(mask, 255, 0).astype(np.uint8))
    calib_text = format_calib(calib)
    for i in range(n_scenes):
        sid = f"{i:06d}"
        boxes = _place_cars(calib, cars_per_scene, rng)
        objs = [LabeledObject.from_box(b, project_box(calib, b)) for b in boxes]
        write_text_atomic(out / "labels" / f"{sid}.txt", serialize_labels(objs))
        write_text_atomic(out / "calib" / f"{sid}.txt", calib_text)
        write_bytes_atomic(out / "masks" / f"{sid}.pgm", mask_bytes)
        write_bytes_atomic(out / "images" / f"{sid}.ppm", encode_ppm(_scene_image(mask, calib, rng)))
    manifest = []
    for k in range(n_sprites):
        pix, m, orient, ref_h = _sprite(k, n_sprites, rng)
        write_bytes_atomic(out / "sprites" / f"car_{k:02d}.ppm", encode_ppm(pix))
        write_bytes_atomic(out / "sprites" / f"car_{k:02d}_mask.pgm", encode_pgm(m))
        manifest.append({
            "image": f"car_{k:02d}.ppm",
            "mask": f"car_{k:02d}_mask.pgm",
            "render_orientation": orient,
            "reference_height_px": ref_h,
        })
    write_text_atomic(out / "sprites" / "manifest.json", dump_json(manifest))
    config = {
        "labels_dir": "labels",
        "calib_dir": "calib",
        "images_dir": "images",
        "masks_dir": "masks",
        "sprite_manifest": "sprites/manifest.json",
        "seed": int(seed),
    }
    cfg_path = out / "config.json"
    write_text_atomic(cfg_path, dump_json(config))
    return cfg_path
