"""qtune: episodic black-box autotuner for run-time communication-library knobs.

A deep Q-learning agent observes per-run performance statistics, proposes one
control-variable change per application run, and after an exploration phase an
ensemble step distills the run history into a single recommended
configuration.  A synthetic-plant simulator with known optima is included for
closed-loop verification.
"""

from .ensemble import recommend
from .simulator import multi_var_plant, parabola_plant, run_campaign
from .store import (
    TunerConfig,
    complete_run,
    export_settings,
    init_store,
    load_store,
    record_first_run,
)
from .variables import Profile, bundled_profile_path, load_profile, save_profile

__version__ = "0.1.0"

__all__ = [
    "Profile",
    "TunerConfig",
    "bundled_profile_path",
    "complete_run",
    "export_settings",
    "init_store",
    "load_profile",
    "load_store",
    "multi_var_plant",
    "parabola_plant",
    "recommend",
    "record_first_run",
    "run_campaign",
    "save_profile",
    "__version__",
]
