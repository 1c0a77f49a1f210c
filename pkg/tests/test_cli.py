import json

import jsonschema
import numpy as np
import pytest
from PIL import Image

from crispbench import load_schema, synthetic
from crispbench.cli import decode_labels, main
from crispbench.edgemap import EdgeProbabilityMap, average_maps, load_gray, resize_bilinear, save_gray
from crispbench.pipeline import Label
from crispbench.tensorio import read_bundle
from datasets import write_dataset


@pytest.fixture(scope="module")
def perfect_manifest(tmp_path_factory):
    return write_dataset(synthetic.perfect_dataset(4, seed=7), tmp_path_factory.mktemp("perfect"))


def run_json(capsys, argv):
    code = main(argv)
    return code, json.loads(capsys.readouterr().out)


def _strip_timing(doc):
    return {k: v for k, v in doc.items() if k != "timing"}


# -- eval -------------------------------------------------------------------------

def test_eval_perfect(tmp_path, perfect_manifest, capsys):
    out = tmp_path / "report.json"
    assert main(["eval", str(perfect_manifest), "--thresholds", "9", "--jobs", "1", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    jsonschema.validate(doc, load_schema("report"))
    assert doc["metrics"]["ods"] == doc["metrics"]["ois"] == doc["metrics"]["ap"] == 1.0
    assert doc["config"] == {"d_fraction": 0.0075, "n_thresholds": 9, "thin_predictions": True}
    assert [im["id"] for im in doc["images"]] == ["img000", "img001", "img002", "img003"]
    csv = out.with_suffix(".csv").read_text().splitlines()
    assert csv[0] == "threshold,precision,recall,f1" and len(csv) == 10
    assert "ODS=1.0000" in capsys.readouterr().err


def test_eval_default_config_echo(perfect_manifest, capsys):
    code, doc = run_json(capsys, ["eval", str(perfect_manifest), "--jobs", "1"])
    assert code == 0
    assert doc["config"] == {"d_fraction": 0.0075, "n_thresholds": 99, "thin_predictions": True}
    assert len(doc["metrics"]["curve"]) == 99


def test_eval_jobs_identical(perfect_manifest, capsys, monkeypatch):
    _, one = run_json(capsys, ["eval", str(perfect_manifest), "--thresholds", "5", "--jobs", "1"])
    monkeypatch.setenv("CRISPBENCH_JOBS", "3")
    _, many = run_json(capsys, ["eval", str(perfect_manifest), "--thresholds", "5"])
    assert json.dumps(_strip_timing(one)) == json.dumps(_strip_timing(many))


def test_eval_missing_files(tmp_path, capsys):
    manifest = tmp_path / "m.jsonl"
    manifest.write_text('{"id": "a", "pred": "p.png", "gt": ["g1.png", "g2.png"]}\n')
    assert main(["eval", str(manifest)]) == 2
    err = capsys.readouterr().err
    assert "p.png" in err and "g1.png" in err and "g2.png" in err
    assert main(["eval", str(tmp_path / "nope.jsonl")]) == 2


def test_eval_failed_entry(perfect_manifest, capsys):
    root = perfect_manifest.parent
    save_gray(EdgeProbabilityMap(np.zeros((5, 5))), root / "pred" / "small.png")
    manifest = root / "with_bad.jsonl"
    manifest.write_text(perfect_manifest.read_text() + json.dumps(
        {"id": "bad", "pred": "pred/small.png", "gt": ["gt/img000_0.png"]}) + "\n")
    code, doc = run_json(capsys, ["eval", str(manifest), "--thresholds", "3", "--jobs", "1"])
    assert code == 3
    assert [f["id"] for f in doc["failed"]] == ["bad"]
    assert doc["metrics"]["ods"] == 1.0
    jsonschema.validate(doc, load_schema("report"))


def test_eval_bad_manifest(tmp_path):
    manifest = tmp_path / "m.jsonl"
    manifest.write_text("{oops\n")
    assert main(["eval", str(manifest)]) == 1


# -- sweep ------------------------------------------------------------------------

def test_sweep_factor_one_equals_eval(perfect_manifest, capsys):
    _, ev = run_json(capsys, ["eval", str(perfect_manifest), "--thresholds", "5", "--jobs", "1"])
    code, sw = run_json(capsys, ["sweep", str(perfect_manifest), "--thresholds", "5", "--jobs", "1",
                                 "--factors", "1"])
    assert code == 0
    jsonschema.validate(sw, load_schema("sweep"))
    rep = sw["sweeps"]["a"]["reports"][0]
    assert {k: rep[k] for k in ev["metrics"]} == ev["metrics"]


def test_sweep_shifted_with_compare(tmp_path, capsys):
    shifted = write_dataset(synthetic.shifted_dataset(2, offset=2, seed=1), tmp_path / "shifted")
    exact = write_dataset(synthetic.shifted_dataset(2, offset=0, seed=1), tmp_path / "exact")
    out = tmp_path / "sweep.json"
    code = main(["sweep", str(exact), "--compare", str(shifted), "--labels", "exact,shifted",
                 "--thresholds", "3", "--jobs", "1", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    jsonschema.validate(doc, load_schema("sweep"))
    assert [r["ods"] for r in doc["sweeps"]["shifted"]["reports"]] == [1.0, 1.0, 0.0]
    assert [g["ods"] for g in doc["gaps"]["by_factor"]] == [0.0, 0.0, 1.0]
    lines = out.with_suffix(".csv").read_text().splitlines()
    assert lines[0] == "factor,d_fraction,ods,ois,ap" and len(lines) == 4


def test_sweep_rejects_bad_factors(perfect_manifest):
    assert main(["sweep", str(perfect_manifest), "--factors", "2"]) == 1
    with pytest.raises(SystemExit):
        main(["sweep", str(perfect_manifest), "--factors", "a,b"])


# -- consensus ----------------------------------------------------------------------

def _write_annotators(root, counts, n=5):
    counts = np.asarray(counts)
    (root / "x").mkdir(parents=True)
    for k in range(n):
        Image.fromarray(((counts > k) * 255).astype(np.uint8), mode="L").save(root / "x" / f"a{k}.png")


def test_consensus_roundtrip(tmp_path, capsys):
    counts = [[0, 1, 2, 3, 4, 5]]
    _write_annotators(tmp_path / "gt", counts)
    code, summary = run_json(capsys, ["consensus", str(tmp_path / "gt"), "--out", str(tmp_path / "lab")])
    assert code == 0
    assert summary == {"x": {"annotators": 5, "positive": 3, "ignore": 2, "negative": 1}}
    pixels = np.asarray(Image.open(tmp_path / "lab" / "x.png"))
    assert pixels.tolist() == [[0, 128, 128, 255, 255, 255]]
    assert decode_labels(pixels).tolist() == [[Label.NEGATIVE, Label.IGNORE, Label.IGNORE,
                                               Label.POSITIVE, Label.POSITIVE, Label.POSITIVE]]
    code, summary = run_json(capsys, ["consensus", str(tmp_path / "gt"), "--min-positive", "1",
                                      "--out", str(tmp_path / "lab1")])
    assert summary["x"]["ignore"] == 0


def test_consensus_errors(tmp_path):
    assert main(["consensus", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit):
        main(["consensus", str(tmp_path), "--min-positive", "0", "--out", str(tmp_path / "o")])
    with pytest.raises(ValueError):
        decode_labels(np.array([[7]]))


# -- fuse -------------------------------------------------------------------------

def test_fuse_matches_composition(tmp_path, rng):
    base = rng.random((9, 12))
    maps = {0.5: EdgeProbabilityMap(rng.random((4, 6))),
            1.0: EdgeProbabilityMap(base),
            2.0: EdgeProbabilityMap(rng.random((18, 24)))}
    dirs = []
    for s, m in maps.items():
        d = tmp_path / f"s{s}"
        d.mkdir()
        save_gray(m, d / "a.png", bits=16)
        dirs.append(str(d))
    assert main(["fuse", *dirs, "--scales", "0.5,1,2", "--out", str(tmp_path / "f")]) == 0
    loaded = [load_gray(f"{d}/a.png") for d in dirs]
    expected = average_maps([resize_bilinear(m, 12, 9) for m in loaded])
    got = load_gray(tmp_path / "f" / "a.png")
    assert got.shape == (9, 12)
    assert np.abs(got.values - expected.values).max() <= 0.5 / 65535 + 1e-12


def test_fuse_errors(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    save_gray(EdgeProbabilityMap(np.zeros((2, 2))), a / "x.png")
    assert main(["fuse", str(a), str(b), "--scales", "1", "--out", str(tmp_path / "o")]) == 1
    assert main(["fuse", str(a), str(b), "--scales", "1,2", "--out", str(tmp_path / "o")]) == 2
    assert main(["fuse", str(a), str(tmp_path / "c"), "--scales", "1,2", "--out", str(tmp_path / "o")]) == 2


# -- net-demo ---------------------------------------------------------------------

def test_net_demo_schedule(capsys):
    assert main(["net-demo"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == [
        "schedule: 256 -> 128 -> 64 -> 32",
        "module 1: top-down (1, 256, 8, 8) + lateral (1, 128, 8, 8) -> (1, 128, 16, 16)",
        "module 2: top-down (1, 128, 16, 16) + lateral (1, 64, 16, 16) -> (1, 64, 32, 32)",
        "module 3: top-down (1, 64, 32, 32) + lateral (1, 32, 32, 32) -> (1, 32, 64, 64)",
        "output: (1, 32, 64, 64)",
    ]


def test_net_demo_dump_is_seeded(tmp_path):
    for name in ("a", "b"):
        assert main(["net-demo", "--levels", "2", "--top", "16", "--size", "4", "--seed", "5",
                     "--dump", str(tmp_path / name), "--with-weights"]) == 0
    doc_a, ta = read_bundle(tmp_path / "a" / "tensors.json")
    doc_b, tb = read_bundle(tmp_path / "b" / "tensors.json")
    assert doc_a == doc_b and doc_a["module_channels"] == [16, 8, 4]
    assert ta["output"].shape == (1, 4, 16, 16)
    assert "module1_up_w" in ta
    assert all(np.array_equal(ta[k], tb[k]) for k in ta)
