import json

import pytest

from bfsnet.containers import sha256_file
from bfsnet.errors import DataError, UsageError
from bfsnet.manifest import RunManifest, RunRecord, default_manifest_path, write_manifest


def _run(tmp_path, **kwargs):
    src = tmp_path / "in.csv"
    out = tmp_path / "out.csv"
    src.write_text("frequency_mhz,gain\n0,0\n1,1\n")
    out.write_text("result\n")
    params = dict(command="resample", argv=["resample", "--in", str(src)], params={"step": None},
                  seed=0, workers=1, inputs=[src], outputs=[out])
    params.update(kwargs)
    return RunRecord(**params)


def test_manifest_contents(tmp_path):
    run = _run(tmp_path)
    path = write_manifest(run)
    assert path == tmp_path / "out.csv.manifest.json"
    data = json.loads(path.read_text())
    assert data["tool"] == "bfsnet"
    assert data["inputs"] == {str(tmp_path / "in.csv"): sha256_file(tmp_path / "in.csv")}
    assert len(data["outputs"][str(tmp_path / "out.csv")]) == 64
    assert RunManifest(path).created_at.tzinfo is not None


def test_identical_runs_differ_only_in_timestamp(tmp_path):
    run = _run(tmp_path)
    first = json.loads(write_manifest(run, tmp_path / "a.json").read_text())
    second = json.loads(write_manifest(run, tmp_path / "b.json").read_text())
    first.pop("created_at")
    second.pop("created_at")
    assert first == second


def test_manifest_checks(tmp_path):
    run = _run(tmp_path)
    manifest = RunManifest(write_manifest(run))
    assert manifest.missing_inputs() == []
    assert manifest.changed_inputs() == []
    assert manifest.verify_outputs() == []
    (tmp_path / "out.csv").write_text("other\n")
    (tmp_path / "in.csv").write_text("changed\n")
    assert manifest.verify_outputs() == [str(tmp_path / "out.csv")]
    assert manifest.changed_inputs() == [str(tmp_path / "in.csv")]
    (tmp_path / "in.csv").unlink()
    assert manifest.missing_inputs() == [str(tmp_path / "in.csv")]


def test_manifest_errors(tmp_path):
    with pytest.raises(UsageError):
        default_manifest_path(_run(tmp_path, outputs=[]))
    with pytest.raises(UsageError):
        write_manifest(_run(tmp_path), tmp_path / "missing-dir" / "m.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(DataError):
        RunManifest(broken)
    with pytest.raises(DataError):
        RunManifest(tmp_path / "absent.json").argv
