"""Questionnaire scoring: usability (SUS), workload (NASA-TLX, raw), and the
human-robot trust scale."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class ItemOutOfRange(ValueError):
    pass


class WrongItemCount(ValueError):
    pass


class QuestionnaireKind(str, Enum):
    SUS = "sus"
    NASA_TLX = "nasa_tlx"
    HRI_TRUST = "hri_trust"


_ITEM_RANGES = {
    QuestionnaireKind.SUS: (1.0, 5.0),
    QuestionnaireKind.NASA_TLX: (0.0, 100.0),
    QuestionnaireKind.HRI_TRUST: (1.0, 5.0),
}
_ITEM_COUNTS = {
    QuestionnaireKind.SUS: 10,
    QuestionnaireKind.NASA_TLX: 6,
    QuestionnaireKind.HRI_TRUST: None,  # any number of Likert items
}


@dataclass(frozen=True)
class QuestionnaireResponse:
    kind: QuestionnaireKind
    items: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(float(v) for v in self.items))
        expected = _ITEM_COUNTS[self.kind]
        if expected is not None and len(self.items) != expected:
            raise WrongItemCount(
                f"{self.kind.value} needs {expected} items, got {len(self.items)}"
            )
        if expected is None and len(self.items) == 0:
            raise WrongItemCount(f"{self.kind.value} needs at least one item")
        lo, hi = _ITEM_RANGES[self.kind]
        for i, v in enumerate(self.items):
            if not (lo <= v <= hi):
                raise ItemOutOfRange(
                    f"{self.kind.value} item {i + 1} = {v} outside [{lo}, {hi}]"
                )


def score_questionnaire(r: QuestionnaireResponse) -> float:
    """SUS and NASA-TLX normalized to 0..1; trust reported as the raw 1..5 mean."""
    if r.kind is QuestionnaireKind.SUS:
        # Standard scoring: odd items contribute rating-1, even items 5-rating,
        # the sum is scaled by 2.5 onto 0..100.
        total = 0.0
        for i, v in enumerate(r.items, start=1):
            total += (v - 1.0) if i % 2 == 1 else (5.0 - v)
        return total * 2.5 / 100.0
    if r.kind is QuestionnaireKind.NASA_TLX:
        return sum(r.items) / len(r.items) / 100.0
    return sum(r.items) / len(r.items)
