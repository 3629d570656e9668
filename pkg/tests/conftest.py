import pytest

from otrange.cli import resolve_input
from otrange.deployer import DeploymentPlan, install_switch
from otrange.ew import RansomTerms
from otrange.fleet import build_fleet
from otrange.project import load_project
from otrange.scenario import load_scenario, run_scenario

PROJECT_PW = "plant-2024"
PLC_PW = "maint-9481"
RANSOM_KEY = "UNLOCK-TEST-0001"


def standard_plan(**overrides) -> DeploymentPlan:
    kwargs = dict(
        deadline_ms=600_000,
        ransom_key=RANSOM_KEY,
        plc_password=PLC_PW,
        project_password=PROJECT_PW,
        poll_interval_ms=1000,
        deadband_misses=1,
    )
    kwargs.update(overrides)
    return DeploymentPlan(**kwargs)


def install_and_arm(fleet, deadline_ms: int = 600_000):
    report = install_switch(fleet, standard_plan(deadline_ms=deadline_ms))
    assert not report.aborted, report.reason
    outcome = fleet.ew.arm_all(RansomTerms(deadline_ms, RANSOM_KEY), fleet.devices)
    assert outcome.armed, outcome.failures
    return report


@pytest.fixture(scope="session")
def fleet3_project():
    return load_project(resolve_input("fleet3"), password=PROJECT_PW)


@pytest.fixture(scope="session")
def poc2_project():
    return load_project(resolve_input("poc2"), password="bench-77")


@pytest.fixture
def fresh_fleet(fleet3_project):
    return build_fleet(fleet3_project, seed=0)


@pytest.fixture
def installed_fleet(fleet3_project):
    fleet = build_fleet(fleet3_project, seed=0)
    install_switch(fleet, standard_plan())
    return fleet


@pytest.fixture
def armed_fleet(fleet3_project):
    fleet = build_fleet(fleet3_project, seed=0)
    install_and_arm(fleet)
    return fleet


@pytest.fixture(scope="session")
def scenario1_result():
    return run_scenario(load_scenario(resolve_input("scenario1")))


@pytest.fixture(scope="session")
def scenario2_result():
    return run_scenario(load_scenario(resolve_input("scenario2")))


@pytest.fixture(scope="session")
def scenario3_result():
    return run_scenario(load_scenario(resolve_input("scenario3")))
