from .base import Policy
from .baselines import EDF, SJF, FairShare, Karuna
from .mfs import MFS, RmlqConfig

POLICIES = {"fs": FairShare, "sjf": SJF, "edf": EDF, "karuna": Karuna, "mfs": MFS}

__all__ = ["Policy", "FairShare", "SJF", "EDF", "Karuna", "MFS", "RmlqConfig", "POLICIES"]
