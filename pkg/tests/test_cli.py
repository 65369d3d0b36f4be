import csv
import json
import subprocess
import sys

import pytest

from hydrostart.campaign import DEFAULT_SCHEDULE, CampaignSettings, load_state, plant_run_seed
from hydrostart.cli import main
from hydrostart.config import RunConfig, load_config
from hydrostart.envelope import write_measurement_csv
from hydrostart.errors import ValidationError
from hydrostart.plant import PlantStrainModel, run_startup
from hydrostart.sim import StartupParams

FAST = ["--N-I", "20"]


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_standard(tmp_path, capsys):
    code, out, _ = _run(capsys, "simulate", "--out-dir", tmp_path)
    assert code == 0
    t_st = float(out.split("t_st = ")[1].split()[0])
    assert 0 < t_st < 180
    rows = list(csv.reader(open(tmp_path / "trajectory.csv")))
    assert rows[0][:3] == ["time_s", "omega", "opening"] and len(rows) > 100


def test_simulate_zero_opening_times_out(tmp_path, capsys):
    code, out, _ = _run(capsys, "simulate", "--out-dir", tmp_path, "--theta", 0.01, 0, 0.5, 0)
    assert code == 0 and out.startswith("timeout")


def test_bad_theta_and_config(tmp_path, capsys):
    code, _, err = _run(capsys, "simulate", "--out-dir", tmp_path, "--theta", -1, 0.2, 0.9, 0.1)
    assert code == 2 and "error" in err
    bad = tmp_path / "bad.ini"
    bad.write_text("[hydrostart]\nT_st = ninety\n")
    assert _run(capsys, "simulate", "--config", bad)[0] == 2
    bad.write_text("[hydrostart]\nwobble = 3\n")
    assert _run(capsys, "simulate", "--config", bad)[0] == 2
    bad.write_text("this is not an ini file")
    assert _run(capsys, "simulate", "--config", bad)[0] == 2
    assert _run(capsys, "simulate", "--config", tmp_path / "missing.ini")[0] == 2


def test_config_loading(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[hydrostart]\nT_st = 60\nN_I = 50\nseed = 4\nout_dir = results\n")
    cfg = load_config(ini, seed=9)
    assert cfg.T_st == 60.0 and cfg.N_I == 50 and cfg.seed == 9
    assert cfg.out_dir == str(tmp_path / "results")
    assert cfg.campaign_settings().T_st == 60.0
    with pytest.raises(ValidationError):
        RunConfig(f_e=30.0)
    with pytest.raises(ValidationError):
        RunConfig(N_init=1)


def test_campaign_operator_flow(tmp_path, capsys):
    state = tmp_path / "camp" / "state.json"
    common = ["--state", state, *FAST]
    ini = tmp_path / "c.ini"
    ini.write_text("[hydrostart]\nN_init = 2\nN_act = 0\nN_opt = 1\n")
    assert _run(capsys, "campaign", "init", "--config", ini, *common)[0] == 0
    assert _run(capsys, "campaign", "init", "--config", ini, *common)[0] == 2  # refuses to clobber

    def measure(theta_line, j):
        theta = StartupParams.from_sequence(map(float, theta_line.split()))
        s = load_state(state)
        traj = run_startup(theta, PlantStrainModel(), s.settings.sim_context(), plant_run_seed(s))
        path = tmp_path / f"m{j}.csv"
        write_measurement_csv(traj, path)
        return path

    for j in range(3):
        code, out, _ = _run(capsys, "campaign", "propose", "--config", ini, *common)
        assert code == 0
        prop = json.loads((state.parent / "proposal.json").read_text())
        assert prop["step"] == j and set(prop["constraints"]) == {"T_st", "box"}
        path = measure(out.strip(), j)
        if j == 1:
            bad = tmp_path / "bad.csv"
            bad.write_text("time_s,omega,opening,strain\n0,0,0,0\n0.002,0,0,nan\n")
            before = state.read_text()
            assert _run(capsys, "campaign", "ingest", bad, "--config", ini, *common)[0] == 2
            assert state.read_text() == before
        assert _run(capsys, "campaign", "ingest", path, "--config", ini, *common)[0] == 0
    # final test run
    code, out, _ = _run(capsys, "campaign", "propose", "--config", ini, *common)
    assert code == 0 and json.loads((state.parent / "proposal.json").read_text())["phase"] == "Final"
    assert _run(capsys, "campaign", "ingest", measure(out.strip(), 3), "--config", ini, *common)[0] == 0
    code, out, _ = _run(capsys, "campaign", "status", *common)
    assert code == 0 and "final test cycle" in out
    assert _run(capsys, "campaign", "propose", *common)[0] == 2
    assert load_state(state).final is not None


def test_state_version_mismatch_exit_code(tmp_path, capsys):
    state = tmp_path / "state.json"
    assert _run(capsys, "campaign", "init", "--state", state)[0] == 0
    doc = json.loads(state.read_text())
    doc["schema"] = "hydrostart.campaign/99"
    state.write_text(json.dumps(doc))
    assert _run(capsys, "campaign", "status", "--state", state)[0] == 3


def test_ingest_rejects_stale_proposal(tmp_path, capsys):
    state = tmp_path / "state.json"
    _run(capsys, "campaign", "init", "--state", state)
    (tmp_path / "proposal.json").write_text(json.dumps({"theta": {}, "step": 4}))
    csv_path = tmp_path / "m.csv"
    csv_path.write_text("time_s,omega,opening,strain\n0,0,0,0\n0.002,0,0,1\n")
    assert _run(capsys, "campaign", "ingest", csv_path, "--state", state)[0] == 2


def test_train_and_optimize(tmp_path, capsys):
    paths = []
    ctx = CampaignSettings().sim_context()
    for j, th in enumerate(DEFAULT_SCHEDULE[:4]):
        p = tmp_path / f"m{j}.csv"
        write_measurement_csv(run_startup(th, PlantStrainModel(), ctx, j), p)
        paths.append(p)
    assert _run(capsys, "train", "--out-dir", tmp_path, *paths)[0] == 0
    assert (tmp_path / "ensemble.json").exists() and (tmp_path / "strain_map.csv").exists()
    code, out, _ = _run(capsys, "optimize", "--out-dir", tmp_path, "--ensemble", tmp_path / "ensemble.json",
                        "--mode", "active", *FAST, "--start", 0.05, 0.1, 0.5, 0.1, *paths)
    assert code == 0 and "theta*" in out
    rep = json.loads((tmp_path / "optimization.json").read_text())
    assert rep["evaluations"] <= 20 and rep["mode"] == "active"


def _demo(out_dir, capsys, *extra):
    code, _, err = _run(capsys, "demo", "--out-dir", out_dir, "--seed", 3, "--N-init", 2, "--N-act", 0,
                        "--N-opt", 1, *FAST, *extra)
    assert code == 0, err
    return out_dir


def test_demo_bundle_and_determinism(tmp_path, capsys):
    a = _demo(tmp_path / "a", capsys)
    b = _demo(tmp_path / "b", capsys, "--no-plots")
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    rows = list(csv.reader(open(a / "history.csv")))
    assert len(rows) == 1 + 4  # header, three ingests and the final test
    assert (a / "envelopes.svg").exists() and not (b / "strain_map.svg").exists()
    s = json.loads((a / "summary.json").read_text())
    assert s["reduction"] == pytest.approx(1 - s["final"]["largest_cycle"] / s["best_standard_cycle"])
    assert len(list((a / "trajectories").glob("*.csv"))) == 3


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "hydrostart.cli", "simulate", "--out-dir", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "t_st" in res.stdout
