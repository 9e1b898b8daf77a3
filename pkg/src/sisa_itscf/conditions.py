"""Fault condition grid: 2 sides x 3 phases x 8 severities = 48 conditions."""

from __future__ import annotations

from dataclasses import dataclass

SIDES = ("H", "L")
PHASES = ("A", "B", "C")
SEVERITIES = tuple(range(1, 9))
CLASS_NAMES = ("HA", "HB", "HC", "LA", "LB", "LC")
NUM_CONDITIONS = len(SIDES) * len(PHASES) * len(SEVERITIES)


@dataclass(frozen=True, order=True)
class FaultCondition:
    side: str
    phase: str
    severity: int

    def __post_init__(self) -> None:
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}, got {self.side!r}")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"severity must be in 1..8, got {self.severity!r}")

    @property
    def label_name(self) -> str:
        return self.side + self.phase

    @property
    def label(self) -> int:
        return SIDES.index(self.side) * 3 + PHASES.index(self.phase)

    @property
    def condition_id(self) -> int:
        return self.label * len(SEVERITIES) + self.severity - 1

    @classmethod
    def from_id(cls, condition_id: int) -> FaultCondition:
        if not 0 <= condition_id < NUM_CONDITIONS:
            raise ValueError(f"condition id must be in 0..47, got {condition_id}")
        label, sev = divmod(int(condition_id), len(SEVERITIES))
        side, phase = divmod(label, 3)
        return cls(SIDES[side], PHASES[phase], sev + 1)

    @classmethod
    def parse(cls, text: str) -> FaultCondition:
        """Parse ``"LA3"`` style names, or a bare integer condition id."""
        text = text.strip().upper()
        if text.isdigit():
            return cls.from_id(int(text))
        if len(text) < 3 or not text[2:].isdigit():
            raise ValueError(f"cannot parse fault condition {text!r}")
        return cls(text[0], text[1], int(text[2:]))

    def __str__(self) -> str:
        return f"{self.label_name}{self.severity}"


def all_conditions() -> list[FaultCondition]:
    """All 48 conditions in condition-id order."""
    return [FaultCondition.from_id(i) for i in range(NUM_CONDITIONS)]


def label_of(condition_id: int) -> int:
    return FaultCondition.from_id(condition_id).label
