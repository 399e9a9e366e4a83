import json
import subprocess
import sys

import pytest

from placekit import cli
from placekit.cli import load_config, parse_density, scene_seed
from placekit.errors import ConfigError


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def built(fixture_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("prior")
    assert run("build-prior", "--config", fixture_corpus, "--out", out) == 0
    return out


def test_build_prior_report(built):
    report = json.loads((built / "report.json").read_text())
    assert report["scene_count"] == 50 and report["box_count"] == 200
    assert report["deposit_count"] == 50 * 4 * 20 - report["drop_count"]
    assert (built / "heatmap.pgm").read_bytes().startswith(b"P5\n120 140\n255\n")
    meta = json.loads((built / "prior.json").read_text())
    assert meta["config"]["seed"] == 0


def test_build_prior_is_deterministic(fixture_corpus, built, tmp_path):
    assert run("build-prior", "--config", fixture_corpus, "--out", tmp_path, "--workers", 2) == 0
    assert (tmp_path / "prior.bin").read_bytes() == (built / "prior.bin").read_bytes()
    assert (tmp_path / "heatmap.pgm").read_bytes() == (built / "heatmap.pgm").read_bytes()


def test_empty_labels_dir(tmp_path, capsys):
    (tmp_path / "labels").mkdir()
    (tmp_path / "calib").mkdir()
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"labels_dir": "labels", "calib_dir": "calib", "seed": 1}))
    code = run("build-prior", "--config", cfg, "--out", tmp_path / "o")
    assert code == cli.EXIT_CORPUS
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "CorpusError"


def test_missing_seed_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("{}")
    assert run("sample", "--config", cfg, "--out", tmp_path) == cli.EXIT_CONFIG
    assert "seed" in json.loads(capsys.readouterr().err)["message"]


def test_bad_label_is_parse_error(fixture_corpus, tmp_path, capsys):
    root = fixture_corpus.parent
    (tmp_path / "labels").mkdir()
    (tmp_path / "labels" / "000000.txt").write_text("Car 0 0 oops\n")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"labels_dir": "labels", "calib_dir": str(root / "calib"), "seed": 1}))
    assert run("build-prior", "--config", cfg, "--out", tmp_path / "o") == cli.EXIT_PARSE
    assert "000000.txt" in json.loads(capsys.readouterr().err)["message"]


def test_missing_prior_file(fixture_corpus, tmp_path):
    code = run("sample", "--config", fixture_corpus, "--out", tmp_path, "--prior", tmp_path / "nope.bin")
    assert code == cli.EXIT_CONFIG


def test_missing_heatmap_input_is_io_error(tmp_path):
    assert run("heatmap", "--prior", tmp_path / "nope.bin", "--out", tmp_path / "h.pgm") == cli.EXIT_IO


def test_augment_writes_one_triple_per_scene(fixture_corpus, built, tmp_path):
    out = tmp_path / "aug"
    assert run("augment", "--config", fixture_corpus, "--prior", built / "prior.bin", "--out", out,
               "--density", "1:3") == 0
    for sub, ext in (("image_2", ".ppm"), ("label_2", ".txt"), ("meta", ".json")):
        assert len(list((out / sub).glob("*" + ext))) == 50
    summary = json.loads((out / "summary.json").read_text())
    for s in summary["scenes"].values():
        assert 1 <= s["accepted"] <= 3 or s["exhausted"]
    label = (out / "label_2" / "000000.txt").read_text().splitlines()
    orig = (fixture_corpus.parent / "labels" / "000000.txt").read_text().splitlines()
    assert label[: len(orig)] == orig
    assert len(label) == len(orig) + summary["scenes"]["000000"]["accepted"]


def test_augment_independent_of_workers(fixture_corpus, built, tmp_path):
    trees = []
    for w in (1, 3):
        out = tmp_path / f"w{w}"
        assert run("augment", "--config", fixture_corpus, "--prior", built / "prior.bin",
                   "--out", out, "--workers", w) == 0
        trees.append(read_tree(out))
    assert trees[0] == trees[1]


def test_split_restricts_augment(fixture_corpus, built, tmp_path):
    split = tmp_path / "split.txt"
    split.write_text("000004\n000007\n")
    out = tmp_path / "aug"
    assert run("augment", "--config", fixture_corpus, "--prior", built / "prior.bin",
               "--out", out, "--split", split) == 0
    assert sorted(p.name for p in (out / "label_2").iterdir()) == ["000004.txt", "000007.txt"]


def test_metrics_ground_truth_against_itself(fixture_corpus):
    cfg = load_config(fixture_corpus)
    m = cli.cmd_metrics(cfg)
    assert m["theta_kl"] == pytest.approx(0.0, abs=1e-12)
    assert m["n_boxes"] == 200
    assert set(m) >= {"overlap", "theta_kl", "n_boxes", "params", "per_scene"}


def test_metrics_preset_worse_than_prior(fixture_corpus, built, tmp_path):
    kl = {}
    for sampler in ("prior", "preset"):
        out = tmp_path / sampler
        assert run("sample", "--config", fixture_corpus, "--prior", built / "prior.bin",
                   "--out", out, "--sampler", sampler, "--density", "3:5") == 0
        kl[sampler] = cli.cmd_metrics(load_config(fixture_corpus), out / "labels")["theta_kl"]
    assert kl["preset"] > kl["prior"]


def test_metrics_off_road_boxes(fixture_corpus, tmp_path):
    boxes = tmp_path / "boxes"
    boxes.mkdir()
    # far off to the side of the road, still in front of the camera
    (boxes / "000000.txt").write_text(
        "Car 0.00 0 0.00 0.00 0.00 1.00 1.00 1.50 1.60 3.90 25.00 1.60 20.00 0.00\n")
    m = cli.cmd_metrics(load_config(fixture_corpus), boxes)
    assert m["overlap"] == 0.0 and m["n_boxes"] == 1


def test_metrics_writes_json(fixture_corpus, tmp_path):
    out = tmp_path / "m.json"
    assert run("metrics", "--config", fixture_corpus, "--out", out) == 0
    assert json.loads(out.read_text())["theta_kl"] == pytest.approx(0.0, abs=1e-12)


def test_rbp_sampler_runs(fixture_corpus, tmp_path):
    out = tmp_path / "rbp"
    assert run("sample", "--config", fixture_corpus, "--sampler", "rbp", "--out", out) == 0
    m = cli.cmd_metrics(load_config(fixture_corpus), out / "labels")
    assert m["overlap"] == 1.0


def test_flags_override_config(fixture_corpus, tmp_path):
    cfg = load_config(fixture_corpus, {"seed": 9, "density": "2:4", "out": str(tmp_path)})
    assert cfg.seed == 9 and cfg.density == (2, 4)
    assert cfg.labels_dir == fixture_corpus.parent / "labels"


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"seed": 1, "labels_dir": "nowhere"}))
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text(json.dumps({"seed": 1, "colour": "red"}))
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text(json.dumps({"seed": 1, "augment": {"radius": -1}}))
    with pytest.raises(ConfigError):
        load_config(bad)


@pytest.mark.parametrize("text", ["3", "a:b", "3:1", "-1:2"])
def test_bad_density(text):
    with pytest.raises(ConfigError):
        parse_density(text)


def test_scene_seed_stable():
    assert scene_seed(0, "000001") == scene_seed(0, "000001")
    assert scene_seed(0, "000001") != scene_seed(0, "000002")
    assert scene_seed(0, "000001") != scene_seed(1, "000001")


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "placekit", "gen-fixture", "--out", tmp_path,
                           "--scenes", "2"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "config.json").exists()
    proc = subprocess.run([sys.executable, "-m", "placekit", "sample", "--config", tmp_path / "none.json"],
                          capture_output=True, text=True)
    assert proc.returncode == cli.EXIT_CONFIG


def test_flag_paths_resolve_against_cwd(fixture_corpus, built, tmp_path, monkeypatch):
    monkeypatch.chdir(built.parent)
    out = tmp_path / "s"
    assert run("sample", "--config", fixture_corpus, "--prior", f"{built.name}/prior.bin", "--out", out) == 0
    assert (out / "summary.json").exists()
