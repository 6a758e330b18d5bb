from .clock import SimClock, Transcript
from .scenarios import SCENARIO_NAMES, ScenarioResult, UnknownScenario, run_scenario
from .server import AccessToken, LocationReport, LocationServer, Ownership, Rejection, reporter_id

__all__ = ["SimClock", "Transcript", "SCENARIO_NAMES", "ScenarioResult", "UnknownScenario", "run_scenario",
           "AccessToken", "LocationReport", "LocationServer", "Ownership", "Rejection", "reporter_id"]
