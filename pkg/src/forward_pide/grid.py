"""Strike and maturity grids for the forward solver."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._validation import as_float_array, check_strictly_increasing


@dataclass(frozen=True)
class GridSpec:
    """Uniform log-strike grid plus output maturities.

    ``substeps`` is the number of time steps on each interval between
    consecutive maturities (the first interval starts at ``t = 0``).
    A leading maturity of exactly 0 is allowed and yields the payoff row.
    """

    k_min: float
    k_max: float
    n_k: int
    maturities: tuple
    substeps: int = 20
    grading: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "k_min", float(self.k_min))
        object.__setattr__(self, "k_max", float(self.k_max))
        object.__setattr__(self, "n_k", int(self.n_k))
        object.__setattr__(self, "substeps", int(self.substeps))
        mats = tuple(float(t) for t in np.atleast_1d(self.maturities))
        object.__setattr__(self, "maturities", mats)
        if not self.k_min < self.k_max:
            raise ValueError("k_min must be below k_max")
        if self.n_k < 16:
            raise ValueError("n_k must be at least 16")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")
        object.__setattr__(self, "grading", float(self.grading))
        if not 1.0 <= self.grading <= 4.0:
            raise ValueError("grading must lie in [1, 4]")
        arr = as_float_array(mats, "maturities")
        if arr.size == 0 or arr[0] < 0:
            raise ValueError("maturities must be nonnegative and non-empty")
        check_strictly_increasing(arr, "maturities")

    @property
    def k(self) -> np.ndarray:
        return np.linspace(self.k_min, self.k_max, self.n_k)

    @property
    def h(self) -> float:
        return (self.k_max - self.k_min) / (self.n_k - 1)

    @property
    def strikes(self) -> np.ndarray:
        return np.exp(self.k)

    def offsets(self) -> np.ndarray:
        """Every node difference ``k_i - k_j``, exactly ``d * h`` for integer d."""
        return self.h * np.arange(-(self.n_k - 1), self.n_k)

    def check_spot(self, spot: float) -> None:
        if not self.k_min < np.log(spot) < self.k_max:
            raise ValueError(
                f"log spot {np.log(spot):.4f} must lie strictly inside "
                f"[{self.k_min}, {self.k_max}]"
            )

    def to_dict(self) -> dict:
        return {
            "k_min": self.k_min,
            "k_max": self.k_max,
            "n_k": self.n_k,
            "maturities": list(self.maturities),
            "substeps": self.substeps,
            "grading": self.grading,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        extra = set(data) - {"k_min", "k_max", "n_k", "maturities", "substeps", "grading"}
        if extra:
            raise ValueError(f"unknown grid keys: {sorted(extra)}")
        return cls(**data)


class TimeStep(NamedTuple):
    start: float
    dt: float
    implicit_euler: bool
    # index into GridSpec.maturities reached at the end of this step, else -1
    maturity_index: int


def time_steps(grid: GridSpec, rannacher_steps: int = 2) -> list[TimeStep]:
    """Step schedule: ``substeps`` per interval, first steps split in two
    implicit-Euler half steps to damp the payoff kink.

    On the first interval the nodes are ``T1 (s / n)^grading`` so steps are
    short where the solution is least smooth.
    """
    steps: list[TimeStep] = []
    prev = 0.0
    n_done = 0
    first = True
    for idx, T in enumerate(grid.maturities):
        if T == 0.0:
            continue
        frac = np.arange(grid.substeps + 1) / grid.substeps
        if first:
            frac = frac**grid.grading
            first = False
        nodes = prev + (T - prev) * frac
        nodes[-1] = T
        for s in range(grid.substeps):
            t0 = nodes[s]
            dt = nodes[s + 1] - t0
            last = idx if s == grid.substeps - 1 else -1
            if n_done < rannacher_steps:
                steps.append(TimeStep(t0, 0.5 * dt, True, -1))
                steps.append(TimeStep(t0 + 0.5 * dt, 0.5 * dt, True, last))
            else:
                steps.append(TimeStep(t0, dt, False, last))
            n_done += 1
        prev = T
    return steps


def step_start_times(grid: GridSpec) -> np.ndarray:
    return np.array([s.start for s in time_steps(grid)])
