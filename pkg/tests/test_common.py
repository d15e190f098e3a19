import pytest

from src.adguardian.utils.common import file_sha256, load_json, read_yaml, run_directory, save_json
from src.adguardian.utils.exceptions import RunDirectoryExistsError, RunLockedError

SNAPSHOT = {"experiment": {"name": "exp1", "seed": 42}}


def test_successful_run_leaves_digest_and_snapshot(tmp_path):
    run_dir = tmp_path / "run"
    with run_directory(run_dir, "abc", SNAPSHOT) as owned:
        assert owned == run_dir
        assert (run_dir / ".lock").exists()
        assert not (run_dir / "config_digest.txt").exists()
    assert (run_dir / "config_digest.txt").read_text().strip() == "abc"
    assert read_yaml(run_dir / "config.yaml").experiment.seed == 42
    assert (run_dir / "run.log").exists()
    assert not (run_dir / ".lock").exists()


def test_same_digest_needs_force(tmp_path):
    with run_directory(tmp_path, "abc", SNAPSHOT):
        pass
    with pytest.raises(RunDirectoryExistsError) as excinfo:
        with run_directory(tmp_path, "abc", SNAPSHOT):
            pass
    assert excinfo.value.exit_code == 4
    with run_directory(tmp_path, "abc", SNAPSHOT, force=True):
        pass
    with run_directory(tmp_path, "other", SNAPSHOT):
        pass
    assert (tmp_path / "config_digest.txt").read_text().strip() == "other"


def test_failed_run_leaves_no_digest(tmp_path):
    with pytest.raises(RuntimeError):
        with run_directory(tmp_path, "abc", SNAPSHOT):
            raise RuntimeError("boom")
    assert not (tmp_path / "config_digest.txt").exists()
    assert not (tmp_path / ".lock").exists()


def test_locked_directory(tmp_path):
    (tmp_path / ".lock").write_text("123")
    with pytest.raises(RunLockedError):
        with run_directory(tmp_path, "abc", SNAPSHOT):
            pass
    assert (tmp_path / ".lock").read_text() == "123"


def test_json_and_hash_helpers(tmp_path):
    save_json(tmp_path / "a.json", {"b": 1, "a": [1, 2]})
    save_json(tmp_path / "b.json", {"a": [1, 2], "b": 1})
    assert file_sha256(tmp_path / "a.json") == file_sha256(tmp_path / "b.json")
    assert load_json(tmp_path / "a.json").a == [1, 2]
