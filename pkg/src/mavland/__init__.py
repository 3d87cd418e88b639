"""Vision-based autonomous landing for a simulated micro aerial vehicle.

Pipeline per camera frame: detector bounding box -> site state
(:mod:`mavland.geometry`) -> Kalman estimate (:mod:`mavland.estimator`) ->
velocity/yaw/altitude command (:mod:`mavland.controller`) -> vehicle
(:mod:`mavland.simulator`).
"""

from pathlib import Path

__version__ = "0.1.0"

SCENARIO_DIR = Path(__file__).parent / "scenarios"


def bundled_scenario(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``"nominal"``."""
    path = SCENARIO_DIR / f"{name}.yaml"
    if not path.exists():
        raise FileNotFoundError(f"no bundled scenario {name!r}")
    return path
