import sys
from pathlib import Path

from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None)
settings.load_profile("default")


import pytest  # noqa: E402


@pytest.fixture(scope="session")
def plant_ensemble():
    """Sensor trained on the default initial schedule measured on the default plant."""
    from hydrostart.campaign import CampaignBudgets, CampaignSettings, ingest_measurement, new_campaign, \
        plant_run_seed, propose_next
    from hydrostart.plant import PlantStrainModel, run_startup

    settings_ = CampaignSettings(budgets=CampaignBudgets(5, 0, 1))
    state = new_campaign(settings_, seed=0)
    ctx = settings_.sim_context()
    plant = PlantStrainModel()
    for _ in range(5):
        theta = propose_next(state)
        state = ingest_measurement(state, theta, run_startup(theta, plant, ctx, plant_run_seed(state)))
    return state


@pytest.fixture(scope="session")
def verdicts(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_VERDICTS, [])
    return lines


_VERDICTS = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
