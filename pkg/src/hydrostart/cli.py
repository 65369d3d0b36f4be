"""Command-line entry point.

Exit codes: 0 success, 1 internal error, 2 validation error, 3 incompatible
state-file version.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import campaign as cp
from .blackbox import MODES, STANDARD, BlackBoxContext, OptBox, alpha_d, make_objective
from .config import RunConfig, load_config
from .envelope import envelope_trajectory, read_measurement_csv
from .errors import CampaignExhausted, StateVersionMismatch, ValidationError
from .mads import OptBudget, mads_optimize
from .report import write_bundle, write_dynamic_csv, write_strain_map_csv
from .sensor import load_ensemble, save_ensemble, train
from .sim import STANDARD_STARTUP, StartupParams, simulate

log = logging.getLogger("hydrostart")

EXIT_OK, EXIT_INTERNAL, EXIT_VALIDATION, EXIT_VERSION = 0, 1, 2, 3


def _theta(values) -> StartupParams:
    return STANDARD_STARTUP if values is None else StartupParams.from_sequence(values)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _state_path(cfg: RunConfig, arg: str | None) -> Path:
    if arg:
        return Path(arg)
    if cfg.state:
        return Path(cfg.state)
    return Path(cfg.out_dir) / "state.json"


def cmd_simulate(args, cfg: RunConfig) -> int:
    theta = _theta(args.theta)
    settings = cfg.campaign_settings()
    traj = simulate(theta, settings.sim_context())
    path = _out_dir(cfg) / "trajectory.csv"
    write_dynamic_csv(traj, path)
    if traj.synchronized:
        print(f"t_st = {traj.t_st:.1f} s")
    else:
        print(f"timeout: no synchronization within {2 * cfg.T_st:g} s")
    print(f"trajectory written to {path}")
    return EXIT_OK


def _load_measurements(paths, cfg: RunConfig):
    trajs = [read_measurement_csv(p, cfg.f_M) for p in paths]
    return trajs, [envelope_trajectory(t, cfg.window_s, cfg.f_e) for t in trajs]


def cmd_train(args, cfg: RunConfig) -> int:
    trajs, envs = _load_measurements(args.data, cfg)
    ensemble = train(envs, cfg.train_config())
    out = _out_dir(cfg)
    save_ensemble(ensemble, out / "ensemble.json")
    write_strain_map_csv(ensemble, out / "strain_map.csv")
    print(f"trained {len(ensemble.members)} members on {sum(len(e) for e in envs)} samples")
    print(f"alpha_d = {alpha_d(trajs):.6g}")
    return EXIT_OK


def cmd_optimize(args, cfg: RunConfig) -> int:
    trajs, _ = _load_measurements(args.data, cfg)
    ensemble = load_ensemble(args.ensemble)
    settings = cfg.campaign_settings()
    box = OptBox()
    ctx = BlackBoxContext(settings.sim_context(), alpha_d(trajs))
    starts = tuple(box.clip(StartupParams.from_sequence(v)) for v in (args.start or [])) or (box.center(),)
    budget = OptBudget(N_I=cfg.N_I, seed=cfg.seed, initial_points=starts)
    res = mads_optimize(make_objective(ensemble, args.mode, ctx), box, budget)
    out = _out_dir(cfg)
    with open(out / "optimization_history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("index", "kind", "r_o", "o_ini", "omega_trigger", "o_trigger",
                    "c_s", "c_c", "alpha_d", "total", "t_st", "best_total"))
        for r in res.history:
            c = r.cost
            w.writerow([r.index, r.kind, *(repr(v) for v in r.theta.as_tuple()),
                        repr(c.c_s), repr(c.c_c), repr(c.alpha_d), repr(c.total), repr(c.t_st),
                        repr(r.best_total)])
    report = {
        "mode": args.mode,
        "theta": res.theta.to_dict(),
        "best": res.best.to_dict(),
        "evaluations": len(res.history),
        "history": [{"theta": r.theta.to_dict(), "cost": r.cost.to_dict(), "kind": r.kind}
                    for r in res.history],
    }
    cp.atomic_write_text(out / "optimization.json", json.dumps(report, indent=1) + "\n")
    print("theta* = " + ", ".join(f"{k}={v:.6g}" for k, v in res.theta.to_dict().items()))
    print(f"cost = {res.best.total:.6g} (c_s = {res.best.c_s:.6g}, t_st = {res.best.t_st:.1f} s)")
    return EXIT_OK


def cmd_demo(args, cfg: RunConfig) -> int:
    settings = cfg.campaign_settings()
    out = _out_dir(cfg)
    state_path = out / "state.json"
    state = cp.run_closed_loop(settings, cfg.plant(), cfg.seed,
                               on_step=lambda s: cp.save_state(s, state_path))
    write_bundle(state, out, plots=not args.no_plots)
    info = cp.summary(state)
    print(f"best standard cycle {info['best_standard_cycle']:.4f}, "
          f"final cycle {state.final.largest_cycle:.4f}, reduction {info['reduction']:.3f}")
    print(f"report written to {out}")
    return EXIT_OK


def _proposal_path(state_path: Path) -> Path:
    return state_path.parent / "proposal.json"


def cmd_campaign(args, cfg: RunConfig) -> int:
    state_path = _state_path(cfg, args.state)
    if args.action == "init":
        if state_path.exists() and not args.force:
            raise ValidationError(f"{state_path} exists; pass --force to overwrite")
        state = cp.new_campaign(cfg.campaign_settings(), cfg.seed)
        cp.save_state(state, state_path)
        print(f"initialized campaign at {state_path}: j = 0, phase {state.phase}")
        return EXIT_OK

    state = cp.load_state(state_path)
    if args.action == "status":
        best = state.best_feasible()
        print(f"phase {state.phase}, j = {state.j} of {state.settings.budgets.N_b}")
        if best is not None:
            print(f"best feasible cycle {best.largest_cycle:.4f} at j = {best.j}")
        if state.final is not None:
            print(f"final test cycle {state.final.largest_cycle:.4f}, t_st = {state.final.t_st:.1f} s")
        return EXIT_OK

    if args.action == "propose":
        if state.phase == cp.DONE:
            if state.final is not None:
                raise CampaignExhausted("campaign finished; nothing left to propose")
            theta, phase = cp.propose_final(state), cp.FINAL
        else:
            theta, phase = cp.propose_next(state), state.phase
        doc = {
            "theta": theta.to_dict(),
            "phase": phase,
            "step": state.j,
            "constraints": {"T_st": state.settings.T_st,
                            "box": {"lower": list(state.settings.box.lower),
                                    "upper": list(state.settings.box.upper)}},
        }
        cp.atomic_write_text(_proposal_path(state_path), json.dumps(doc, indent=1) + "\n")
        print(" ".join(repr(v) for v in theta.as_tuple()))
        return EXIT_OK

    # ingest
    if args.theta is not None:
        theta = StartupParams.from_sequence(args.theta)
    else:
        prop = _proposal_path(state_path)
        if not prop.exists():
            raise ValidationError("no proposal on file; run 'campaign propose' or pass --theta")
        doc = json.loads(prop.read_text())
        if doc.get("step") != state.j:
            raise ValidationError(f"proposal is for step {doc.get('step')}, campaign is at {state.j}")
        theta = StartupParams(**doc["theta"])
    traj = read_measurement_csv(args.measurement, state.settings.f_M, theta)
    if state.phase == cp.DONE:
        new = cp.record_final(state, theta, traj)
        row = new.final
    else:
        new = cp.ingest_measurement(state, theta, traj)
        row = new.history[-1]
    cp.save_state(new, state_path)
    print(f"ingested step {row.j} ({row.phase}): largest cycle {row.largest_cycle:.4f}, "
          f"t_st = {row.t_st:.1f} s; phase now {new.phase}")
    return EXIT_OK


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out-dir", help="directory for artifacts")
    p.add_argument("--T-st", dest="T_st", type=float, help="startup-time limit in seconds")
    p.add_argument("--N-I", dest="N_I", type=int, help="black-box evaluation budget")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hydrostart", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    theta_help = "startup parameters r_o o_ini omega_trigger o_trigger (r_o in fraction/s)"

    p = sub.add_parser("simulate", help="simulate one startup")
    _common(p)
    p.add_argument("--theta", nargs=4, type=float, metavar="X", help=theta_help)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the virtual sensor on measurement CSVs")
    _common(p)
    p.add_argument("data", nargs="+", help="measurement CSV files")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("optimize", help="minimize the black-box cost with a trained sensor")
    _common(p)
    p.add_argument("--ensemble", required=True, help="sensor checkpoint JSON")
    p.add_argument("--mode", choices=MODES, default=STANDARD)
    p.add_argument("--start", nargs=4, type=float, action="append", metavar="X",
                   help="initial point (repeatable); default is the box center")
    p.add_argument("data", nargs="+", help="measurement CSV files defining alpha_d")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("demo", help="closed-loop campaign against the synthetic plant")
    _common(p)
    p.add_argument("--N-init", dest="N_init", type=int)
    p.add_argument("--N-act", dest="N_act", type=int)
    p.add_argument("--N-opt", dest="N_opt", type=int)
    p.add_argument("--no-plots", action="store_true", help="skip SVG output")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("campaign", help="operator-driven campaign steps")
    csub = p.add_subparsers(dest="action", required=True)
    for name, helptext in (("init", "start a new campaign"), ("propose", "propose the next startup"),
                           ("ingest", "add a measured startup"), ("status", "show progress")):
        c = csub.add_parser(name, help=helptext)
        _common(c)
        c.add_argument("--state", help="campaign state file (default <out-dir>/state.json)")
        if name == "init":
            c.add_argument("--force", action="store_true", help="overwrite an existing state")
        if name == "ingest":
            c.add_argument("measurement", help="measurement CSV (time_s, omega, opening, strain)")
            c.add_argument("--theta", nargs=4, type=float, metavar="X", help=theta_help)
        c.set_defaults(func=cmd_campaign)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        overrides = {k: getattr(args, k, None) for k in ("seed", "out_dir", "T_st", "N_I",
                                                         "N_init", "N_act", "N_opt")}
        cfg = load_config(args.config, **overrides)
        return args.func(args, cfg)
    except StateVersionMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except (ValidationError, CampaignExhausted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
