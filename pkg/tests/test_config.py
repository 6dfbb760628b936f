import json
import stat
from unittest.mock import patch

import pytest

from flowtopo.config import (
    DEFAULT_RUN_CONFIG,
    delete_named_problem,
    get_config_dir,
    get_problems_dir,
    list_saved_problems,
    resolve_problem_path,
    resolve_run_config,
    save_named_problem,
    write_json_atomic,
)
from flowtopo.errors import ConfigError, ProblemError
from flowtopo.problems import build_problem, load_problem, problem_to_dict


def test_get_config_dir_creates_dir(tmp_path):
    with patch("flowtopo.config.Path.home", return_value=tmp_path):
        config_dir = get_config_dir()
        assert config_dir == tmp_path / ".flowtopo"
        assert config_dir.exists()
        assert stat.S_IMODE(config_dir.stat().st_mode) == 0o700


def test_get_config_dir_mkdir_failure(tmp_path):
    """get_config_dir should not raise even if mkdir fails."""
    with patch("flowtopo.config.Path.home", return_value=tmp_path):
        with patch("pathlib.Path.mkdir", side_effect=OSError("permission denied")):
            assert get_config_dir() == tmp_path / ".flowtopo"


def test_resolve_defaults():
    config = resolve_run_config({"benchmark": "diffuser"})
    assert config["nx"] == 100
    assert config["ny"] == 100
    assert config["epochs"] == 50_000
    assert config["snapshot_epochs"] == DEFAULT_RUN_CONFIG["snapshot_epochs"]
    assert config["bc_samples"] == 25


def test_none_overrides_are_ignored():
    config = resolve_run_config({"benchmark": "rugby", "epochs": None, "seed": 4})
    assert config["epochs"] == 50_000
    assert config["seed"] == 4


def test_exactly_one_problem_source():
    with pytest.raises(ConfigError, match="Exactly one"):
        resolve_run_config({})
    with pytest.raises(ConfigError, match="Exactly one"):
        resolve_run_config({"benchmark": "rugby", "config": "p.json"})


@pytest.mark.parametrize(
    "overrides",
    [
        {"nx": 8},
        {"ny": 15},
        {"epochs": 0},
        {"sweep": 0},
        {"workers": 0},
        {"bc_samples": 1},
        {"hidden": []},
        {"hidden": [64, 0]},
        {"log_every": -1},
        {"ghost_mode": "mirror"},
        {"density_conditioning": "everywhere"},
        {"permeability": "darcy"},
        {"snapshot_epochs": [0, 10]},
        {"learning_rate": 0.1},
    ],
)
def test_invalid_settings(overrides):
    with pytest.raises(ConfigError):
        resolve_run_config({"benchmark": "diffuser", **overrides})


def test_snapshot_epochs_beyond_run_are_dropped(caplog):
    config = resolve_run_config({"benchmark": "diffuser", "epochs": 1000, "snapshot_epochs": [1000, 1, 50000]})
    assert config["snapshot_epochs"] == [1, 1000]
    assert "50000" in caplog.text


def test_write_json_atomic(tmp_path):
    path = tmp_path / "nested" / "data.json"
    assert write_json_atomic(path, {"a": [1, 2]}) is True
    assert json.loads(path.read_text(encoding="utf-8")) == {"a": [1, 2]}
    assert stat.S_IMODE(path.stat().st_mode) == 0o600
    assert not path.with_suffix(".json.tmp").exists()


def test_write_json_atomic_failure(tmp_path):
    path = tmp_path / "data.json"
    with patch("flowtopo.config.os.replace", side_effect=OSError("disk full")):
        assert write_json_atomic(path, {"a": 1}) is False
    assert not path.exists()
    assert list(tmp_path.iterdir()) == []


def test_save_list_and_delete_problems(tmp_path):
    with patch("flowtopo.config.Path.home", return_value=tmp_path):
        assert list_saved_problems() == []
        assert save_named_problem("wide", problem_to_dict(build_problem("diffuser"))) is True
        assert save_named_problem("bend", problem_to_dict(build_problem("pipe-bend"))) is True
        assert list_saved_problems() == ["bend", "wide"]

        path = resolve_problem_path("wide")
        assert path == get_problems_dir() / "wide.json"
        assert load_problem(path) == build_problem("diffuser")

        assert delete_named_problem("wide") is True
        assert list_saved_problems() == ["bend"]
        assert delete_named_problem("wide") is False


def test_save_rejects_path_like_names(tmp_path):
    with patch("flowtopo.config.Path.home", return_value=tmp_path):
        assert save_named_problem("../escape", {}) is False
        assert save_named_problem("", {}) is False


def test_resolve_problem_path_prefers_files(tmp_path):
    file = tmp_path / "mine.json"
    file.write_text("{}", encoding="utf-8")
    with patch("flowtopo.config.Path.home", return_value=tmp_path):
        assert resolve_problem_path(str(file)) == file
        with pytest.raises(ProblemError):
            resolve_problem_path("missing")
