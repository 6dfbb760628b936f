import json
from unittest.mock import patch

import pytest

from flowtopo.__main__ import EXIT_CONFIG, EXIT_OK, build_parser, main

TINY_RUN = ["--grid", "16", "16", "--epochs", "2", "--hidden", "8,8", "--bc-samples", "9", "--log-every", "0"]


def test_parser_requires_a_command():
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args([])
    assert info.value.code == 2


def test_run_needs_a_problem_source():
    with pytest.raises(SystemExit):
        main(["run", "--epochs", "5"])


def test_small_grid_is_a_config_error(tmp_path):
    assert main(["-q", "run", "--benchmark", "diffuser", "--grid", "8", "8", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_tiny_run(tmp_path, capsys):
    code = main(["-q", "run", "--benchmark", "diffuser", *TINY_RUN, "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert capsys.readouterr().out.startswith("J=")
    assert (tmp_path / "history.csv").exists()


def test_tiny_sweep(tmp_path, capsys):
    code = main(["-q", "run", "--benchmark", "rugby", *TINY_RUN, "--sweep", "2", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert "over 2 seeds" in capsys.readouterr().out
    assert (tmp_path / "seed_1" / "rho.pgm").exists()


def test_dump_benchmark(capsys):
    assert main(["problems", "--dump", "pipe-bend"]) == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert data["name"] == "pipe-bend"
    assert len(data["segments"]) == 2


def test_dump_unknown_benchmark():
    assert main(["-q", "problems", "--dump", "nozzle"]) == EXIT_CONFIG


def test_save_list_and_delete(tmp_path, capsys):
    with patch("flowtopo.config.Path.home", return_value=tmp_path):
        assert main(["problems", "--save", "mine", "--from", "double-pipe"]) == EXIT_OK
        capsys.readouterr()
        assert main(["problems"]) == EXIT_OK
        listing = capsys.readouterr().out
        assert "saved      mine" in listing
        assert "benchmark  diffuser" in listing
        assert main(["problems", "--delete", "mine"]) == EXIT_OK


def test_save_needs_source(tmp_path):
    with patch("flowtopo.config.Path.home", return_value=tmp_path):
        assert main(["-q", "problems", "--save", "mine"]) == EXIT_CONFIG


def test_reevaluate_command(tmp_path, capsys):
    main(["-q", "run", "--benchmark", "diffuser", *TINY_RUN, "--out", str(tmp_path)])
    capsys.readouterr()
    assert main(["reevaluate", str(tmp_path)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("J=")


def test_reevaluate_missing_run(tmp_path):
    assert main(["-q", "reevaluate", str(tmp_path / "nothing")]) == EXIT_CONFIG


def test_burgers_command(tmp_path, capsys):
    code = main(["-q", "burgers", "--grid", "16", "8", "--epochs", "3", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert "boundary error" in capsys.readouterr().out
    assert (tmp_path / "u.csv").exists()
