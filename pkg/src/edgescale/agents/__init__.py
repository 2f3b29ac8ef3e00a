from .aif import AifAgent
from .ask import AskAgent
from .base import (
    ALL_JOINT_ACTIONS,
    NOOP,
    Agent,
    AgentObservation,
    Assignment,
    ControlLoop,
    CvAction,
    JointAction,
    NoOpAgent,
    QrAction,
    RandomAgent,
    legal_actions,
    perceive,
    run_cycle,
)
from .daci import DaciAgent
from .dqn import DqnAgent

__all__ = [
    "ALL_JOINT_ACTIONS",
    "NOOP",
    "Agent",
    "AgentObservation",
    "AifAgent",
    "AskAgent",
    "Assignment",
    "ControlLoop",
    "CvAction",
    "DaciAgent",
    "DqnAgent",
    "JointAction",
    "NoOpAgent",
    "QrAction",
    "RandomAgent",
    "legal_actions",
    "perceive",
    "run_cycle",
]
