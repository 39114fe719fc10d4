"""Procedure phases and the allowed transitions between them."""
from __future__ import annotations

from enum import Enum


class ProcedurePhase(str, Enum):
    SETUP = "setup"
    GREETING = "greeting"
    RESTING = "resting"
    EXECUTION = "execution"
    COMPLETE = "complete"
    ABORTED = "aborted"


class InvalidTransition(ValueError):
    pass


# Forward flow plus the two abort edges; None marks session start.
ALLOWED_TRANSITIONS: frozenset[tuple[ProcedurePhase | None, ProcedurePhase]] = frozenset(
    {
        (None, ProcedurePhase.SETUP),
        (ProcedurePhase.SETUP, ProcedurePhase.GREETING),
        (ProcedurePhase.GREETING, ProcedurePhase.RESTING),
        (ProcedurePhase.RESTING, ProcedurePhase.EXECUTION),
        (ProcedurePhase.EXECUTION, ProcedurePhase.COMPLETE),
        (ProcedurePhase.RESTING, ProcedurePhase.ABORTED),
        (ProcedurePhase.EXECUTION, ProcedurePhase.ABORTED),
    }
)


def can_transition(current: ProcedurePhase | None, target: ProcedurePhase) -> bool:
    return (current, target) in ALLOWED_TRANSITIONS


def check_transition(current: ProcedurePhase | None, target: ProcedurePhase) -> None:
    if not can_transition(current, target):
        raise InvalidTransition(f"cannot move from {current} to {target}")
