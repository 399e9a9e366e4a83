"""Build placement priors, sample placements and augment scenes in batch.

Every command reads a JSON config (``--config``); command-line flags override
config values.  Relative paths in a config file are resolved against the
file's directory, relative paths given as flags against the working
directory.  Outputs never carry timestamps or absolute output paths,
so a rerun with the same config and seed reproduces the output tree byte for
byte.

Exit codes: 0 success, 2 configuration error, 3 parse error, 4 I/O error,
5 unusable corpus.
"""
import argparse
from dataclasses import asdict, dataclass, field, fields
import json
import logging
import os
from pathlib import Path
import sys
import zlib

import numpy as np

from . import __version__
from .boxaug import AugmentParams
from .compositor import composite, plan_composite, write_augmented_scene
from .dataset_io import (
    LabeledObject,
    dump_json,
    load_corpus,
    load_image,
    load_mask,
    load_sprite_bank,
    parse_label_file,
    serialize_labels,
    write_bytes_atomic,
    write_text_atomic,
)
from .errors import ConfigError, CorpusError, ParseError, PlacekitError
from .fixture import generate_fixture
from .geometry import project_box
from .metrics import OrientationHistogram, emit_heatmap, on_road, orientation_kl
from .placement import (
    FleetStats,
    GridSpec,
    PlacementPrior,
    PresetDistribution,
    build_prior,
    preset_placements,
    rbp_sample,
    sample_placements,
)

log = logging.getLogger("placekit")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_IO = 4
EXIT_CORPUS = 5

PRIOR_FILE = "prior.bin"
SAMPLERS = ("prior", "rbp", "preset")
_PATH_KEYS = ("labels_dir", "calib_dir", "images_dir", "masks_dir", "sprite_manifest", "split", "prior")


@dataclass
class Config:
    labels_dir: Path = None
    calib_dir: Path = None
    images_dir: Path = None
    masks_dir: Path = None
    sprite_manifest: Path = None
    split: Path = None
    prior: Path = None
    out: Path = None
    seed: int = None
    sampler: str = "prior"
    density: tuple = (1, 3)
    draws_per_box: int = 20
    max_attempts: int = None
    jitter_rank: int = 3
    camera_height: float = 1.6
    classes: tuple = ("Car",)
    workers: int = 1
    augment: AugmentParams = field(default_factory=AugmentParams)
    grid: GridSpec = field(default_factory=GridSpec)

    def resolved(self):
        """JSON-ready view for provenance sidecars (output location left out)."""
        d = {}
        for f in fields(self):
            if f.name in ("out", "workers"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, Path):
                v = str(v)
            elif isinstance(v, AugmentParams):
                v = v.to_dict()
            elif isinstance(v, GridSpec):
                v = {k: list(x) if isinstance(x, tuple) else x for k, x in asdict(v).items()}
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d


def parse_density(text):
    try:
        lo, hi = (int(t) for t in str(text).split(":"))
    except ValueError:
        raise ConfigError(f"density must look like LO:HI, got {text!r}") from None
    if lo < 0 or hi < lo:
        raise ConfigError(f"invalid density range {text!r}")
    return lo, hi


def load_config(path=None, overrides=None):
    raw = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        base = path.parent
    # config paths are relative to the config file, flag paths to the cwd
    from_flags = set()
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
            from_flags.add(k)
    cfg = Config()
    known = {f.name for f in fields(Config)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for k, v in raw.items():
        if k in _PATH_KEYS and v is not None:
            p = Path(v)
            v = p if p.is_absolute() or k in from_flags else base / p
        elif k == "out" and v is not None:
            v = Path(v)
        elif k == "density":
            v = parse_density(v) if isinstance(v, str) else parse_density(f"{v[0]}:{v[1]}")
        elif k == "augment":
            try:
                v = v if isinstance(v, AugmentParams) else AugmentParams.from_dict(v)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"augment: {exc}") from None
        elif k == "grid":
            try:
                v = v if isinstance(v, GridSpec) else GridSpec(
                    **{kk: tuple(x) if isinstance(x, list) else x for kk, x in v.items()})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"grid: {exc}") from None
        elif k == "classes":
            v = tuple(v)
        setattr(cfg, k, v)
    if cfg.seed is None:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {cfg.seed!r}")
    if cfg.sampler not in SAMPLERS:
        raise ConfigError(f"sampler must be one of {SAMPLERS}")
    for k in _PATH_KEYS:
        p = getattr(cfg, k)
        if p is not None and k != "prior" and not p.exists():
            raise ConfigError(f"{k} does not exist: {p}")
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if getattr(cfg, k) is None]
    if missing:
        raise ConfigError(f"missing required setting(s): {', '.join(missing)}")


def scene_seed(seed, scene_id):
    """Per-scene 64-bit seed, independent of scene order and worker count."""
    ss = np.random.SeedSequence([seed, zlib.crc32(scene_id.encode("utf-8"))])
    return int(ss.generate_state(1, np.uint64)[0])


def _corpus(cfg):
    _require(cfg, "labels_dir", "calib_dir")
    return load_corpus(cfg.labels_dir, cfg.calib_dir, cfg.images_dir, cfg.masks_dir, cfg.split)


def _fleet(scenes, classes):
    boxes = [b for s in scenes for b in s.boxes(classes=classes)]
    return FleetStats.from_boxes(boxes) if boxes else FleetStats()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_build_prior(cfg):
    _require(cfg, "out")
    scenes = _corpus(cfg)
    rng = np.random.default_rng(cfg.seed)
    prior = build_prior(scenes, cfg.augment, cfg.draws_per_box, rng, grid=cfg.grid,
                        classes=cfg.classes, workers=cfg.workers)
    n_boxes = sum(len(s.boxes(classes=cfg.classes)) for s in scenes)
    report = {
        "scene_count": len(scenes),
        "box_count": n_boxes,
        "draws_per_box": cfg.draws_per_box,
        "deposit_count": prior.deposits,
        "drop_count": prior.dropped,
    }
    out = cfg.out
    write_bytes_atomic(out / PRIOR_FILE, prior.to_bytes())
    write_text_atomic(out / "prior.json", dump_json({"config": cfg.resolved(), **report}))
    write_text_atomic(out / "report.json", dump_json(report))
    emit_heatmap(prior, out / "heatmap.pgm")
    return report


def _load_prior(cfg):
    if cfg.prior is None:
        raise ConfigError("prior sampler needs a prior file (config 'prior' or --prior)")
    try:
        data = Path(cfg.prior).read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"prior file not found: {cfg.prior}") from None
    return PlacementPrior.from_bytes(data, source=cfg.prior)


class _Sampler:
    """Picklable per-scene sampling closure shared by ``sample`` and ``augment``."""

    def __init__(self, cfg, prior, fleet):
        self.cfg = cfg
        self.prior = prior
        self.fleet = fleet
        self.preset = PresetDistribution(camera_height=cfg.camera_height, dims_mean=fleet.mean)

    def __call__(self, scene, rng, seed_record):
        cfg = self.cfg
        if cfg.sampler == "prior":
            return sample_placements(self.prior, scene, cfg.density, rng, cfg.max_attempts, seed_record)
        if cfg.sampler == "preset":
            return preset_placements(scene, self.preset, cfg.density, rng, cfg.max_attempts, seed_record)
        if scene.road_mask_ref is None:
            raise CorpusError(f"scene {scene.scene_id}: no road mask for rule-based placement")
        mask = load_mask(scene.road_mask_ref)
        return rbp_sample(scene, mask, self.fleet, cfg.density, rng, cfg.max_attempts,
                          cfg.camera_height, self.preset, seed_record)


def _make_sampler(cfg, scenes):
    prior = _load_prior(cfg) if cfg.sampler == "prior" else None
    return _Sampler(cfg, prior, _fleet(scenes, cfg.classes))


def _scene_summary(placements):
    return {
        "accepted": len(placements),
        "target": placements.target,
        "attempts": placements.attempts,
        "exhausted": placements.exhausted,
    }


_WORKER = {}


def _init_worker(state):
    _WORKER.update(state)


def _run_scenes(func, scenes, state, workers):
    if workers > 1 and len(scenes) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(state,)) as ex:
            return list(ex.map(func, scenes))
    _init_worker(state)
    return [func(s) for s in scenes]


def _sample_one(scene):
    cfg, sampler = _WORKER["cfg"], _WORKER["sampler"]
    seed = scene_seed(cfg.seed, scene.scene_id)
    placements = sampler(scene, np.random.default_rng(seed), seed)
    objs = [LabeledObject.from_box(p.box, project_box(scene.calib, p.box)) for p in placements]
    write_text_atomic(cfg.out / "labels" / f"{scene.scene_id}.txt", serialize_labels(objs))
    return scene.scene_id, _scene_summary(placements)


def cmd_sample(cfg):
    _require(cfg, "out")
    scenes = _corpus(cfg)
    state = {"cfg": cfg, "sampler": _make_sampler(cfg, scenes)}
    results = _run_scenes(_sample_one, scenes, state, cfg.workers)
    summary = {"sampler": cfg.sampler, "scenes": dict(results)}
    write_text_atomic(cfg.out / "summary.json", dump_json(summary))
    write_text_atomic(cfg.out / "config.json", dump_json(cfg.resolved()))
    return summary


def _augment_one(scene):
    cfg, sampler, bank = _WORKER["cfg"], _WORKER["sampler"], _WORKER["bank"]
    seed = scene_seed(cfg.seed, scene.scene_id)
    rng = np.random.default_rng(seed)
    placements = sampler(scene, rng, seed)
    if scene.image_ref is None:
        raise CorpusError(f"scene {scene.scene_id}: no image to augment")
    image = load_image(scene.image_ref)
    plan = plan_composite(scene, placements.boxes, bank, rng, cfg.jitter_rank)
    out_image = composite(image, plan)
    summary = _scene_summary(placements)
    sidecar = {"seed": cfg.seed, "scene_seed": seed, "sampler": cfg.sampler, **summary,
               "sprites": [p.sprite.name for p in plan.placements]}
    write_augmented_scene(scene, placements.samples, cfg.out, image=out_image, sidecar=sidecar)
    return scene.scene_id, summary


def cmd_augment(cfg):
    _require(cfg, "out", "sprite_manifest", "images_dir")
    scenes = _corpus(cfg)
    bank = load_sprite_bank(cfg.sprite_manifest)
    state = {"cfg": cfg, "sampler": _make_sampler(cfg, scenes), "bank": bank}
    results = _run_scenes(_augment_one, scenes, state, cfg.workers)
    summary = {"sampler": cfg.sampler, "scenes": dict(results)}
    write_text_atomic(cfg.out / "summary.json", dump_json(summary))
    write_text_atomic(cfg.out / "config.json", dump_json(cfg.resolved()))
    return summary


def cmd_metrics(cfg, boxes_dir=None):
    """Overlap and yaw KL of a box set against the ground truth.

    ``boxes_dir`` holds one KITTI label file per scene (missing files mean no
    boxes); by default the ground-truth labels score themselves.
    """
    scenes = _corpus(cfg)
    boxes_dir = Path(boxes_dir) if boxes_dir is not None else cfg.labels_dir
    gt_hist = OrientationHistogram.from_boxes(
        [b for s in scenes for b in s.boxes(classes=cfg.classes)])
    per_scene = {}
    all_boxes = []
    on = 0
    for s in scenes:
        path = boxes_dir / f"{s.scene_id}.txt"
        objs = parse_label_file(path.read_bytes(), source=path) if path.exists() else []
        boxes = [o.to_box() for o in objs if o.class_name in cfg.classes]
        if boxes:
            if s.road_mask_ref is None:
                raise CorpusError(f"scene {s.scene_id}: no road mask for the overlap metric")
            flags = on_road(boxes, load_mask(s.road_mask_ref), s.calib)
            on += int(flags.sum())
            per_scene[s.scene_id] = {"n_boxes": len(boxes), "overlap": float(flags.mean())}
        else:
            per_scene[s.scene_id] = {"n_boxes": 0, "overlap": None}
        all_boxes += boxes
    if not all_boxes:
        raise CorpusError(f"no boxes of classes {list(cfg.classes)} under {boxes_dir}")
    return {
        "overlap": on / len(all_boxes),
        "theta_kl": orientation_kl(OrientationHistogram.from_boxes(all_boxes), gt_hist),
        "n_boxes": len(all_boxes),
        "params": {"boxes": str(boxes_dir), "classes": list(cfg.classes), "bins": int(gt_hist.bins.size)},
        "per_scene": per_scene,
    }


def cmd_heatmap(prior_path, out_path):
    prior = PlacementPrior.from_bytes(Path(prior_path).read_bytes(), source=prior_path)
    emit_heatmap(prior, out_path)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--workers", type=int, help="scene-level worker processes")
    p.add_argument("--out", help="output directory")
    p.add_argument("--split", help="file listing scene ids to use")


def build_parser():
    parser = argparse.ArgumentParser(prog="placekit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"placekit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("build-prior", help="accumulate a BEV placement prior from labels")
    _common(p)
    p.add_argument("--draws-per-box", type=int)

    for name, helptext in (("sample", "sample boxes per scene into label files"),
                           ("augment", "sample boxes and composite sprites into images")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--sampler", choices=SAMPLERS)
        p.add_argument("--density", help="accepted boxes per scene, LO:HI")
        p.add_argument("--prior", help="prior file from build-prior")
        p.add_argument("--max-attempts", type=int)

    p = sub.add_parser("metrics", help="overlap and yaw KL of a box set")
    _common(p)
    p.add_argument("--boxes", help="directory of label files to score (default: ground truth)")

    p = sub.add_parser("heatmap", help="render a prior file as a PGM heatmap")
    p.add_argument("--prior", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-fixture", help=argparse.SUPPRESS)
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--cars", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=0.5)
    # keep the subcommand out of the usage listing
    sub._choices_actions = [a for a in sub._choices_actions if a.dest != "gen-fixture"]
    return parser


def _overrides(args):
    keys = ("seed", "workers", "out", "split", "sampler", "density", "prior", "max_attempts",
            "draws_per_box")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def _setup_logging():
    level = os.environ.get("PLACEKIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _fail(code, exc):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-fixture":
            cfg_path = generate_fixture(args.out, args.scenes, args.cars, args.seed, args.scale)
            print(cfg_path)
            return EXIT_OK
        if args.command == "heatmap":
            cmd_heatmap(args.prior, args.out)
            return EXIT_OK
        cfg = load_config(args.config, _overrides(args))
        if args.command == "build-prior":
            result = cmd_build_prior(cfg)
        elif args.command == "sample":
            result = cmd_sample(cfg)
        elif args.command == "augment":
            result = cmd_augment(cfg)
        else:
            result = cmd_metrics(cfg, args.boxes)
            if cfg.out is not None:
                write_text_atomic(cfg.out, dump_json(result))
        if args.command != "metrics" or cfg.out is None:
            sys.stdout.write(dump_json(result))
        return EXIT_OK
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except ParseError as exc:
        return _fail(EXIT_PARSE, exc)
    except CorpusError as exc:
        return _fail(EXIT_CORPUS, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except PlacekitError as exc:
        return _fail(EXIT_CORPUS, exc)


if __name__ == "__main__":
    sys.exit(main())
