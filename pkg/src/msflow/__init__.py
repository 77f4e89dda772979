"""Flow-level simulator for layered LLM prefill traffic with stage-aware scheduling."""
from .core import INF, Band, Batch, Flow, FlowState, PriorityKey, Request, Stage
from .engine import EventKind, Simulator
from .topology import ConfigError, SimulationError

__version__ = "0.1.0"

__all__ = ["INF", "Band", "Batch", "Flow", "FlowState", "PriorityKey", "Request", "Stage",
           "EventKind", "Simulator", "ConfigError", "SimulationError"]
