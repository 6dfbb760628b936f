import numpy as np
import pytest

from flowtopo.artifacts import (
    read_field_csv,
    read_history_csv,
    read_pgm,
    read_summary,
    write_field_csv,
    write_history_csv,
    write_pgm,
    write_summary,
)
from flowtopo.grid import Grid


def test_field_csv_reparses_exactly(tmp_path):
    grid = Grid(17, 23)
    field = np.random.default_rng(0).normal(size=grid.shape) * 10.0 ** np.random.default_rng(1).integers(-8, 8)
    path = write_field_csv(tmp_path / "u.csv", field, grid)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "nx,ny,dx,dy"
    assert lines[1].startswith("17,23,")
    assert len(lines) == 2 + 17
    loaded, meta = read_field_csv(path)
    np.testing.assert_array_equal(loaded, field)
    assert meta["dx"] == grid.dx
    assert meta["dy"] == grid.dy


def test_field_csv_rejects_wrong_shape(tmp_path):
    with pytest.raises(ValueError):
        write_field_csv(tmp_path / "bad.csv", np.zeros((3, 3)), Grid(4, 4))


def test_history_csv_round_trip(tmp_path):
    rows = [
        {"epoch": 0, "J": 1.5, "R1": 0.1 / 3.0, "mu_p": 1.0},
        {"epoch": 1, "J": 1.25, "R1": 2.0e-300, "mu_p": 1.05},
    ]
    path = write_history_csv(tmp_path / "history.csv", rows)
    assert path.read_text(encoding="utf-8").splitlines()[0] == "epoch,J,R1,mu_p"
    assert read_history_csv(path) == rows


def test_empty_history_writes_empty_file(tmp_path):
    path = write_history_csv(tmp_path / "history.csv", [])
    assert path.read_text(encoding="utf-8") == ""
    assert read_history_csv(path) == []


def test_pgm_layout(tmp_path):
    rho = np.zeros((3, 2))
    rho[0, 1] = 1.0  # left column, top row
    rho[2, 0] = 0.5  # right column, bottom row
    path = write_pgm(tmp_path / "rho.pgm", rho)
    raw = path.read_bytes()
    header = b"P5\n3 2\n255\n"
    assert raw.startswith(header)
    assert list(raw[len(header) :]) == [255, 0, 0, 0, 0, 128]
    np.testing.assert_array_equal(read_pgm(path), np.rint(rho * 255.0).astype(np.uint8))


def test_pgm_clips_out_of_range_values(tmp_path):
    path = write_pgm(tmp_path / "rho.pgm", np.array([[-0.2, 1.7]]))
    np.testing.assert_array_equal(read_pgm(path), [[0, 255]])


def test_summary_round_trip(tmp_path):
    values = {"problem": "diffuser", "seed": 3, "J": 30.123456789012345, "status": "completed"}
    path = write_summary(tmp_path / "summary.txt", values)
    parsed = read_summary(path)
    assert parsed["problem"] == "diffuser"
    assert int(parsed["seed"]) == 3
    assert float(parsed["J"]) == values["J"]
