"""Post-hoc figures of a finished run (needs the ``plot`` extra)."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from flowtopo.artifacts import read_field_csv, read_history_csv

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("J", "scaled_R1", "scaled_R2", "scaled_R3", "scaled_C1")


def _pyplot():
    try:
        import matplotlib
    except ImportError as e:
        raise ImportError("Plotting needs matplotlib: pip install 'flowtopo[plot]'") from e
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_history(history_csv: str | Path, output: str | Path) -> Path:
    """Loss terms against epoch on a log scale."""
    plt = _pyplot()
    rows = read_history_csv(history_csv)
    epochs = np.array([row["epoch"] for row in rows])

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for column in LOSS_COLUMNS:
        if rows and column in rows[0]:
            values = np.abs([row[column] for row in rows])
            ax.semilogy(epochs, np.maximum(values, 1e-300), label=column)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)

    output = Path(output)
    fig.savefig(output, bbox_inches="tight", dpi=150)
    plt.close(fig)
    return output


def plot_density(rho_csv: str | Path, output: str | Path) -> Path:
    """Density field, fluid white and solid black."""
    plt = _pyplot()
    rho, meta = read_field_csv(rho_csv)
    extent = (0.0, meta["dx"] * (meta["nx"] - 1), 0.0, meta["dy"] * (meta["ny"] - 1))

    fig, ax = plt.subplots(figsize=(4.0, 4.0))
    ax.imshow(rho.T, origin="lower", cmap="gray", vmin=0.0, vmax=1.0, extent=extent)
    ax.set_xticks([])
    ax.set_yticks([])

    output = Path(output)
    fig.savefig(output, bbox_inches="tight", dpi=150)
    plt.close(fig)
    return output


def plot_run(run_dir: str | Path) -> list[Path]:
    run_dir = Path(run_dir)
    written = [plot_history(run_dir / "history.csv", run_dir / "history.png")]
    written.append(plot_density(run_dir / "rho.csv", run_dir / "rho.png"))
    for snapshot in sorted((run_dir / "snapshots").glob("density_*.csv")):
        written.append(plot_density(snapshot, snapshot.with_suffix(".png")))
    logger.info(f"Wrote {len(written)} figures to {run_dir}")
    return written
