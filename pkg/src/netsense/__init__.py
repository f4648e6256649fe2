"""Posterior CRB and fronthaul-aware design for multi-BS target localisation."""
from .errors import *  # noqa: F401,F403
from .scenario import (
    GaussianPrior,
    SampleSet,
    Scenario,
    draw_samples,
    load_scenario,
    make_scenario,
)
from .fim import pcrb, pcrb_of, pfim

__version__ = "0.1.0"
