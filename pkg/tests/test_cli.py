import json

import pytest

from rplusx.cli import main


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "scene"
    assert main(["make-synthetic", str(out), "--seed", "2"]) == 0
    return out


def test_ingest(scene_dir, capsys):
    assert main(["ingest", str(scene_dir / "recording.json")]) == 0
    assert json.loads(capsys.readouterr().out)["frames"] == 22


def test_missing_manifest_is_validation_error(tmp_path, capsys):
    assert main(["ingest", str(tmp_path / "nope.json")]) == 2
    assert "MissingAssetError" in capsys.readouterr().err


def test_retrieve(scene_dir, capsys):
    rc = main(["retrieve", str(scene_dir / "recording.json"), "--command", "grasp the can",
               "--vlm-script", str(scene_dir / "vlm_script.json")])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["frames"][1][0] == 12


def test_execute_and_export(scene_dir, tmp_path, capsys):
    args = ["execute", str(scene_dir / "recording.json"), "--command", "grasp the can",
            "--live", str(scene_dir / "live.json"), "--config", str(scene_dir / "config.toml")]
    assert main(args + ["--out", str(tmp_path / "a"), "--formats", "json,svg"]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = (tmp_path / "a" / "result.json").read_bytes(), (tmp_path / "b" / "result.json").read_bytes()
    assert a == b and (tmp_path / "a" / "result.svg").exists()
    capsys.readouterr()
    assert main(["export", str(tmp_path / "a" / "result.json"), "--formats", "ply", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "result.ply").exists()


def test_execute_stage_failure_writes_partial(scene_dir, tmp_path, capsys):
    rc = main(["execute", str(scene_dir / "recording.json"), "--command", "juggle",
               "--live", str(scene_dir / "live.json"), "--config", str(scene_dir / "config.toml"),
               "--out", str(tmp_path)])
    assert rc == 3
    doc = json.loads((tmp_path / "partial.json").read_text())
    assert doc["diagnostics"]["failure"]["stage"] == "retrieval"


def test_bad_config_value(scene_dir, tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("k = 0\n")
    rc = main(["execute", str(scene_dir / "recording.json"), "--command", "x",
               "--live", str(scene_dir / "live.json"), "--config", str(cfg)])
    assert rc == 2


def test_eval_retrieval(scene_dir, capsys):
    rc = main(["eval-retrieval", str(scene_dir / "recording.json"),
               "--annotations", str(scene_dir / "annotations.json"),
               "--vlm-script", str(scene_dir / "vlm_script.json")])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["mean_precision"] == 1.0 and out["mean_recall"] == 1.0


def test_stabilize(scene_dir, capsys):
    assert main(["stabilize", str(scene_dir / "recording.json"), "--clip", "0,9"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert sorted(out["frames"], key=int) == [str(i) for i in range(10)] and out["flagged"] == []
    assert main(["stabilize", str(scene_dir / "recording.json"), "--clip", "0-9"]) == 2
