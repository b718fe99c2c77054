"""Drop-rate schedulers: map training progress to the rate used this step.

All schedules ramp from 0 toward a target rate ``target`` except the
constant one.  The bar schedules are step functions: a single step at the
halfway point of training ("bar-step"), or a square wave ("bar-periodic")
whose period is either a fixed number of iterations or the symbolic
``"two-epochs"`` value, which trains normally on even epochs (0-based) and
at the target rate on odd epochs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

KINDS = ("constant", "linear", "cosine", "bar-step", "bar-periodic")
TWO_EPOCHS = "two-epochs"


@dataclass(frozen=True)
class DropSchedule:
    kind: str
    target: float
    total_epochs: int
    iters_per_epoch: int
    period: int | str = TWO_EPOCHS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.target < 1.0:
            raise ValueError(f"target must be in [0, 1), got {self.target}")
        if self.total_epochs < 1 or self.iters_per_epoch < 1:
            raise ValueError(
                f"total_epochs and iters_per_epoch must be >= 1, got "
                f"{self.total_epochs}, {self.iters_per_epoch}"
            )
        if isinstance(self.period, str):
            if self.period != TWO_EPOCHS:
                raise ValueError(
                    f"period must be a positive iteration count or "
                    f"{TWO_EPOCHS!r}, got {self.period!r}"
                )
        elif self.period < 1:
            raise ValueError(f"period must be >= 1 iterations, got {self.period}")

    @property
    def total_iters(self) -> int:
        return self.total_epochs * self.iters_per_epoch


def drop_rate_at(s: DropSchedule, epoch: int, iter_in_epoch: int) -> float:
    """Drop rate applied at a given 0-based (epoch, iteration) position."""
    if not 0 <= epoch < s.total_epochs:
        raise ValueError(
            f"epoch must be in [0, {s.total_epochs}), got {epoch}"
        )
    if not 0 <= iter_in_epoch < s.iters_per_epoch:
        raise ValueError(
            f"iter_in_epoch must be in [0, {s.iters_per_epoch}), got {iter_in_epoch}"
        )
    if s.kind == "constant":
        return s.target

    g = epoch * s.iters_per_epoch + iter_in_epoch
    total = s.total_iters
    if s.kind == "linear":
        t = g / (total - 1) if total > 1 else 0.0
        return s.target * t
    if s.kind == "cosine":
        t = g / (total - 1) if total > 1 else 0.0
        return s.target * (1.0 - math.cos(math.pi * t)) / 2.0
    if s.kind == "bar-step":
        return 0.0 if 2 * g < total else s.target
    # bar-periodic: 0 for the first half of each window, target after.
    if s.period == TWO_EPOCHS:
        return 0.0 if epoch % 2 == 0 else s.target
    pos = g % s.period
    return 0.0 if 2 * pos < s.period else s.target


def schedule_rates(s: DropSchedule) -> list[float]:
    """Drop rate for every training iteration, in order."""
    return [
        drop_rate_at(s, e, i)
        for e in range(s.total_epochs)
        for i in range(s.iters_per_epoch)
    ]


def average_drop_rate(s: DropSchedule) -> float:
    """Mean drop rate over the whole run."""
    rates = schedule_rates(s)
    return math.fsum(rates) / len(rates)
