import json

import numpy as np
import pytest
from PIL import Image

from patchcluster.cli import main

SYNTH_ARGS = [
    "--num-images", "12", "--grid", "10", "10", "--dim", "12", "--clusters", "4",
    "--anomaly-image-fraction", "0.3", "--anomaly-area-fraction", "0.18", "--seed", "5",
]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run = root / "run"
    assert main(["synth", "--out", str(data), *SYNTH_ARGS]) == 0
    assert (
        main(
            [
                "bank", "--manifest", str(data / "manifest.json"), "--setting", "mix",
                "--patch-size", "1", "--out", str(run / "bank"),
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "score", "--manifest", str(data / "manifest.json"), "--setting", "mix",
                "--bank", str(run / "bank.pcfb"), "--k", "8", "--patch-size", "1",
                "--out", str(run / "scores"),
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "eval", "--manifest", str(data / "manifest.json"),
                "--scores", str(run / "scores"), "--out", str(run / "report.json"),
                "--csv", str(run / "report.csv"),
            ]
        )
        == 0
    )
    return data, run


def test_full_pipeline_report(pipeline):
    data, run = pipeline
    report = json.loads((run / "report.json").read_text())
    assert set(report) >= {"image_auroc", "pixel_auroc", "pro", "image_scores"}
    assert report["image_auroc"] is not None
    assert 0.0 <= report["pixel_auroc"] <= 1.0
    assert 0.0 <= report["pro"] <= 1.0
    assert len(report["image_scores"]) == 12
    csv_text = (run / "report.csv").read_text()
    assert csv_text.splitlines()[0] == "setting,metric,synthetic,mean"


def test_scores_layout(pipeline):
    _, run = pipeline
    doc = json.loads((run / "scores" / "scores.json").read_text())
    assert doc["config"]["k"] == 8
    assert len(doc["maps"]) == 12
    for rel in doc["maps"].values():
        assert (run / "scores" / rel).exists()


def test_heatmaps_written(pipeline, tmp_path):
    data, run = pipeline
    out = tmp_path / "heat"
    assert (
        main(
            [
                "heatmap", "--manifest", str(data / "manifest.json"),
                "--scores", str(run / "scores"), "--out", str(out),
            ]
        )
        == 0
    )
    pngs = sorted(out.glob("*.png"))
    assert len(pngs) == 12
    img = Image.open(pngs[0])
    assert img.size == (80, 80)  # 10x10 grid at stride 8


def test_inputs_not_mutated(pipeline):
    data, _ = pipeline
    manifest_bytes = (data / "manifest.json").read_bytes()
    # rerunning a downstream command leaves inputs untouched
    assert main(
        [
            "bank", "--manifest", str(data / "manifest.json"), "--setting", "test",
            "--patch-size", "1", "--out", str(data.parent / "bank2"),
        ]
    ) == 0
    assert (data / "manifest.json").read_bytes() == manifest_bytes


def test_score_rerun_byte_identical(pipeline, tmp_path):
    data, run = pipeline
    for out in (tmp_path / "s1", tmp_path / "s2"):
        assert (
            main(
                [
                    "score", "--manifest", str(data / "manifest.json"), "--setting", "mix",
                    "--bank", str(run / "bank.pcfb"), "--k", "8", "--patch-size", "1",
                    "--out", str(out),
                ]
            )
            == 0
        )
        assert (
            main(
                [
                    "eval", "--manifest", str(data / "manifest.json"),
                    "--scores", str(out), "--out", str(out / "report.json"),
                ]
            )
            == 0
        )
    s1, s2 = tmp_path / "s1", tmp_path / "s2"
    assert (s1 / "scores.json").read_bytes() == (s2 / "scores.json").read_bytes()
    assert (s1 / "report.json").read_bytes() == (s2 / "report.json").read_bytes()
    maps = json.loads((s1 / "scores.json").read_text())["maps"]
    for rel in maps.values():
        assert (s1 / rel).read_bytes() == (s2 / rel).read_bytes()


def test_insufficient_bank_error_surfaced(pipeline, tmp_path, capsys):
    data, run = pipeline
    code = main(
        [
            "score", "--manifest", str(data / "manifest.json"), "--setting", "mix",
            "--bank", str(run / "bank.pcfb"), "--k", "999999", "--patch-size", "1",
            "--out", str(tmp_path / "fail"),
        ]
    )
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "InsufficientBankError"
    assert "insufficient bank size" in err["message"]


def test_one_class_requires_train_records(pipeline, tmp_path, capsys):
    data, run = pipeline
    code = main(
        [
            "bank", "--manifest", str(data / "manifest.json"), "--setting", "one-class",
            "--patch-size", "1", "--out", str(tmp_path / "oc"),
        ]
    )
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "train records" in err["message"]


def test_one_class_mode_with_train_split(pipeline, tmp_path):
    import shutil

    data, _ = pipeline
    doc = json.loads((data / "manifest.json").read_text())
    for rec in doc["records"]:
        if rec["label"] == "normal":
            rec["split"] = "train"
    manifest_path = tmp_path / "oc_manifest.json"
    manifest_path.write_text(json.dumps(doc))
    # copy the data tree so the manifest's relative paths keep resolving
    shutil.copytree(data / "features", tmp_path / "features")
    shutil.copytree(data / "masks", tmp_path / "masks")
    run = tmp_path / "run"
    assert main(
        [
            "bank", "--manifest", str(manifest_path), "--setting", "one-class",
            "--patch-size", "1", "--out", str(run / "bank"),
        ]
    ) == 0
    assert main(
        [
            "score", "--manifest", str(manifest_path), "--setting", "one-class",
            "--bank", str(run / "bank.pcfb"), "--k", "5", "--start-index", "1",
            "--patch-size", "1", "--out", str(run / "scores"),
        ]
    ) == 0
    assert main(
        [
            "eval", "--manifest", str(manifest_path), "--scores", str(run / "scores"),
            "--out", str(run / "report.json"),
        ]
    ) == 0
    report = json.loads((run / "report.json").read_text())
    # one-class scores only the test split, which here is all-anomalous
    assert report["image_auroc"] is None
    assert report["setting"] == "test"


def make_mvtec_tree(root, with_test=True):
    img = Image.new("L", (32, 32), 128)
    (root / "widget" / "train" / "good").mkdir(parents=True)
    img.save(root / "widget" / "train" / "good" / "000.png")
    if with_test:
        (root / "widget" / "test" / "good").mkdir(parents=True)
        (root / "widget" / "test" / "scratch").mkdir(parents=True)
        (root / "widget" / "ground_truth" / "scratch").mkdir(parents=True)
        img.save(root / "widget" / "test" / "good" / "000.png")
        img.save(root / "widget" / "test" / "scratch" / "000.png")
        Image.new("L", (32, 32), 255).save(
            root / "widget" / "ground_truth" / "scratch" / "000_mask.png"
        )


def test_import_mvtec_fixture_tree(tmp_path, capsys):
    make_mvtec_tree(tmp_path / "mvtec")
    out = tmp_path / "manifests"
    assert main(["import-mvtec", "--root", str(tmp_path / "mvtec"), "--out", str(out)]) == 0
    doc = json.loads((out / "widget.json").read_text())
    records = {r["id"]: r for r in doc["records"]}
    assert len(records) == 3
    assert records["train/good/000"]["split"] == "train"
    assert records["train/good/000"]["label"] == "normal"
    assert records["test/good/000"]["label"] == "normal"
    assert records["test/scratch/000"]["label"] == "anomalous"
    assert records["test/scratch/000"]["mask_path"].endswith("000_mask.png")


def test_import_mvtec_missing_test_dir(tmp_path, capsys):
    make_mvtec_tree(tmp_path / "mvtec", with_test=False)
    code = main(
        ["import-mvtec", "--root", str(tmp_path / "mvtec"), "--out", str(tmp_path / "m")]
    )
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "missing directory" in err["message"]
    assert "test" in err["message"]


def test_import_mvtec_missing_mask_listed(tmp_path, capsys):
    root = tmp_path / "mvtec"
    make_mvtec_tree(root)
    (root / "widget" / "ground_truth" / "scratch" / "000_mask.png").unlink()
    code = main(["import-mvtec", "--root", str(root), "--out", str(tmp_path / "m")])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "missing mask" in err["message"]


def test_unknown_scorer_rejected_by_parser(capsys):
    with pytest.raises(SystemExit):
        main(["score", "--manifest", "x", "--bank", "y", "--scorer", "magic", "--out", "z"])
