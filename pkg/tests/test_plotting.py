import numpy as np
import pytest

from flowtopo.artifacts import write_field_csv, write_history_csv
from flowtopo.grid import Grid

pytest.importorskip("matplotlib")

from flowtopo.plotting import plot_run  # noqa: E402


def test_plot_run_renders_every_figure(tmp_path):
    grid = Grid(16, 16)
    rows = [{"epoch": e, "J": 1.0 / (e + 1), "scaled_R1": 0.5, "scaled_C1": 0.0} for e in range(5)]
    write_history_csv(tmp_path / "history.csv", rows)
    rho = np.random.default_rng(0).uniform(size=grid.shape)
    write_field_csv(tmp_path / "rho.csv", rho, grid)
    (tmp_path / "snapshots").mkdir()
    write_field_csv(tmp_path / "snapshots" / "density_1.csv", rho, grid)

    written = plot_run(tmp_path)

    assert sorted(p.name for p in written) == ["density_1.png", "history.png", "rho.png"]
    for path in written:
        assert path.read_bytes().startswith(b"\x89PNG")
