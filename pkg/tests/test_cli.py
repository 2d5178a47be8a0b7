import contextlib
import io
import json

import jsonschema
import pytest
import torch

import promptseg3d
from promptseg3d.cli import main
from promptseg3d.config import save_config
from promptseg3d.data.io import load_volume
from promptseg3d.data.manifest import entries_for_split, load_manifest, resolve_path
from promptseg3d.models.vit3d import EncoderConfig
from tests.conftest import make_micro_config
from tests.test_vit3d import _fake_2d_checkpoint


def _run(argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(argv)
    return code, buf.getvalue()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One synth -> train round shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps({"shape": [16, 16, 16],
                                "blob_radius_range": [3.0, 5.0]}))
    code, out = _run(["synth", "--out-dir", str(root / "data"),
                      "--n-cases", "6", "--spec", str(spec), "--seed", "1"])
    assert code == 0
    manifest = json.loads(out)["manifest"]

    config_path = root / "config.json"
    save_config(make_micro_config(), config_path)
    code, out = _run(["train", "--config", str(config_path),
                      "--manifest", manifest,
                      "--out-dir", str(root / "run"), "--epochs", "1"])
    assert code == 0
    train_out = json.loads(out)
    return {"root": root, "manifest": manifest, "config": config_path,
            "ckpt": train_out["checkpoint"], "train_out": train_out}


def test_synth_writes_cases(workspace):
    entries = load_manifest(workspace["manifest"])
    assert len(entries) == 6
    for split in ("train", "val", "test"):
        assert entries_for_split(entries, split)


def test_train_reports_and_persists(workspace):
    out = workspace["train_out"]
    assert out["epochs"] == 1
    assert out["final_loss"] is not None
    root = workspace["root"]
    assert (root / "run" / "checkpoint.pt").exists()
    assert (root / "run" / "history.json").exists()
    assert (root / "run" / "config.json").exists()


def test_infer_round_trip(workspace, tmp_path):
    entries = load_manifest(workspace["manifest"])
    entry = entries_for_split(entries, "test")[0]
    image = resolve_path(entry.image_path, workspace["manifest"])
    gt = resolve_path(entry.mask_path, workspace["manifest"])
    prompts = tmp_path / "prompts.json"
    prompts.write_text(json.dumps(
        {"points": [{"x": 8, "y": 8, "z": 8, "label": "fg"}]}))
    out_mask = tmp_path / "pred.nii.gz"
    code, out = _run(["infer", "--ckpt", workspace["ckpt"],
                      "--volume", str(image), "--prompts", str(prompts),
                      "--out", str(out_mask), "--gt", str(gt)])
    assert code == 0
    payload = json.loads(out)
    assert payload["out"] == str(out_mask)
    assert payload["foreground_voxels"] >= 0
    assert 0.0 <= payload["metrics"]["dice"] <= 1.0
    mask_vol, _ = load_volume(out_mask)
    assert mask_vol.data.shape == (16, 16, 16)


def test_eval_writes_schema_valid_report(workspace, tmp_path):
    report_path = tmp_path / "report.json"
    code, out = _run(["eval", "--manifest", workspace["manifest"],
                      "--ckpt", workspace["ckpt"],
                      "--report", str(report_path), "--split", "test"])
    assert code == 0
    summary = json.loads(out)
    assert summary["split"] == "test"
    assert summary["n_cases"] >= 1
    report = json.loads(report_path.read_text())
    assert report["summary"] == summary
    schema = json.loads(promptseg3d.schema_path("metrics_report").read_text())
    for row in report["cases"]:
        jsonschema.validate(row, schema)


def test_transplant_dry_run(workspace, tmp_path):
    ckpt = tmp_path / "vit2d.pt"
    torch.save(_fake_2d_checkpoint(EncoderConfig(
        n_blocks=2, embed_dim=32, n_heads=2, spatial_patch=8, depth_patch=8,
        pos_embed_grid=2, pos_embed_depth=2, tap_blocks=(1, 2))), ckpt)
    code, out = _run(["transplant", "--checkpoint", str(ckpt),
                      "--config", str(workspace["config"]), "--dry-run"])
    assert code == 0
    plan = json.loads(out)
    assert set(plan) == {"mapping", "skipped_source_keys"}
    assert all(set(r) == {"source", "target", "transform"}
               for r in plan["mapping"])
    assert any(r["transform"] == "collapse_rgb_sum" for r in plan["mapping"])
    assert "pixel_mean" in plan["skipped_source_keys"]


def test_transplant_saves_encoder(workspace, tmp_path):
    ckpt = tmp_path / "vit2d.pt"
    torch.save({"state_dict": _fake_2d_checkpoint(EncoderConfig(
        n_blocks=2, embed_dim=32, n_heads=2, spatial_patch=8, depth_patch=8,
        pos_embed_grid=2, pos_embed_depth=2, tap_blocks=(1, 2)))}, ckpt)
    out_path = tmp_path / "encoder.pt"
    code, out = _run(["transplant", "--checkpoint", str(ckpt),
                      "--config", str(workspace["config"]),
                      "--out", str(out_path)])
    assert code == 0
    stats = json.loads(out)
    assert stats["copied"] > 0 and stats["skipped"] == 5
    saved = torch.load(out_path, weights_only=True)
    assert "encoder_state_dict" in saved and "encoder_config" in saved


def test_bad_inputs_exit_2(tmp_path):
    code, _ = _run(["infer", "--ckpt", str(tmp_path / "missing.pt"),
                    "--volume", "x", "--prompts", "y", "--out", "z"])
    assert code == 2
    bad_config = tmp_path / "bad.json"
    bad_config.write_text("{")
    code, _ = _run(["train", "--config", str(bad_config),
                    "--manifest", "m", "--out-dir", str(tmp_path)])
    assert code == 2
    bad_spec = tmp_path / "spec.json"
    bad_spec.write_text(json.dumps({"blob_count": 3}))
    code, _ = _run(["synth", "--out-dir", str(tmp_path / "d"),
                    "--spec", str(bad_spec)])
    assert code == 2


def test_help_and_missing_command():
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["infer"])  # required flags absent
    assert exc.value.code == 2
