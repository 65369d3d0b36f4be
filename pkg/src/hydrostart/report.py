"""Report artifacts: CSVs and JSON are canonical, SVG plots are a convenience."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .campaign import CampaignState, HistoryRow, atomic_write_text, summary
from .envelope import EnvelopedTrajectory
from .sensor import SensorEnsemble, predict
from .sim import DynamicTrajectory

HISTORY_COLUMNS = ("j", "phase", "r_o", "o_ini", "omega_trigger", "o_trigger",
                   "largest_cycle", "t_st", "synchronized")


def _history_record(row: HistoryRow) -> list:
    return [row.j, row.phase, *(repr(v) for v in row.theta.as_tuple()),
            repr(row.largest_cycle), repr(row.t_st), int(row.synchronized)]


def write_history_csv(state: CampaignState, path: str | Path) -> None:
    rows = list(state.history) + ([state.final] if state.final is not None else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for r in rows:
            w.writerow(_history_record(r))


def write_envelope_csv(env: EnvelopedTrajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("time_s", "omega", "opening", "upper", "lower"))
        for n in range(len(env)):
            w.writerow([repr(n / env.f_e), repr(float(env.omega[n])), repr(float(env.opening[n])),
                        repr(float(env.upper[n])), repr(float(env.lower[n]))])


def write_dynamic_csv(traj: DynamicTrajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("time_s", "omega", "opening", "setpoint"))
        for n in range(len(traj)):
            w.writerow([repr(n / traj.f_D), repr(float(traj.omega[n])), repr(float(traj.opening[n])),
                        repr(float(traj.setpoint[n]))])


def strain_map(ensemble: SensorEnsemble, n_omega: int = 61, n_o: int = 51,
               omega_max: float = 1.2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Predicted upper envelope ``mu_u + sigma_u`` on a regular (speed, opening) grid."""
    wg = np.linspace(0.0, omega_max, n_omega)
    og = np.linspace(0.0, 1.0, n_o)
    W, O = np.meshgrid(wg, og, indexing="ij")
    p = predict(ensemble, W.ravel(), O.ravel())
    return wg, og, p.sum_u.reshape(W.shape)


def write_strain_map_csv(ensemble: SensorEnsemble, path: str | Path) -> None:
    wg, og, grid = strain_map(ensemble)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("omega", "opening", "mu_plus_sigma_u"))
        for i, wv in enumerate(wg):
            for k, ov in enumerate(og):
                w.writerow([repr(float(wv)), repr(float(ov)), repr(float(grid[i, k]))])


def summary_json(state: CampaignState) -> str:
    return json.dumps(summary(state), indent=1, sort_keys=True) + "\n"


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "hydrostart"
    return plt


def _save_svg(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_envelopes(state: CampaignState, path: str | Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for row, env in zip(state.history, state.enveloped):
        t = np.arange(len(env)) / env.f_e
        line, = ax.plot(t, env.upper, lw=1, label=f"{row.j}: {row.phase}")
        ax.plot(t, env.lower, lw=1, color=line.get_color())
    ax.set_xlabel("time [s]")
    ax.set_ylabel("strain envelope [-]")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def plot_strain_map(state: CampaignState, path: str | Path) -> None:
    plt = _pyplot()
    wg, og, grid = strain_map(state.ensemble)
    fig, ax = plt.subplots(figsize=(6.5, 5))
    mesh = ax.pcolormesh(wg, og, grid.T, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="predicted mu + sigma (upper)")
    for row, env in zip(state.history, state.enveloped):
        ax.plot(env.omega, env.opening, lw=0.8, color="white" if row.phase == "Init" else "red")
    ax.set_xlabel("speed omega [-]")
    ax.set_ylabel("guide vane opening o [-]")
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def write_bundle(state: CampaignState, out_dir: str | Path, plots: bool = True) -> dict[str, Path]:
    """Write the campaign report into ``out_dir`` and return the produced paths."""
    out = Path(out_dir)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    paths = {"history": out / "history.csv", "summary": out / "summary.json",
             "strain_map": out / "strain_map.csv"}
    write_history_csv(state, paths["history"])
    for row, env in zip(state.history, state.enveloped):
        write_envelope_csv(env, out / "trajectories" / f"envelope_{row.j:03d}.csv")
    if state.ensemble is not None:
        write_strain_map_csv(state.ensemble, paths["strain_map"])
    atomic_write_text(paths["summary"], summary_json(state))
    if plots and state.ensemble is not None:
        paths["envelopes_svg"] = out / "envelopes.svg"
        paths["strain_map_svg"] = out / "strain_map.svg"
        plot_envelopes(state, paths["envelopes_svg"])
        plot_strain_map(state, paths["strain_map_svg"])
    return paths
