"""Simulation time grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True, eq=False)
class PathGrid:
    """Strictly increasing time grid starting at 0."""

    times: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise DomainError("a grid needs at least two time points")
        if t[0] != 0.0:
            raise DomainError("grid must start at t=0")
        if not np.all(np.diff(t) > 0):
            raise DomainError("grid times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    def __len__(self) -> int:
        return self.times.size

    @classmethod
    def uniform(cls, t_end: float, n_steps: int) -> "PathGrid":
        if t_end <= 0 or n_steps < 1:
            raise DomainError("uniform grid needs t_end > 0 and n_steps >= 1")
        return cls(np.linspace(0.0, t_end, n_steps + 1))

    @classmethod
    def geometric(
        cls,
        horizon: float,
        n_steps: int,
        t_end: float | None = None,
        *,
        ratio: float = 0.01,
        floor: float = 1e-8,
    ) -> "PathGrid":
        """Uniform steps of ``horizon / n_steps`` that shrink like ``ratio (T - t)``.

        With ``t_end < horizon`` the grid stops exactly at ``t_end``. With
        ``t_end == horizon`` the geometric part runs until ``T - t`` falls
        below ``floor * T`` and a final step lands on ``T``.
        """
        T = float(horizon)
        t_end = T if t_end is None else float(t_end)
        if not 0 < t_end <= T or n_steps < 1 or not 0 < ratio < 1:
            raise DomainError("invalid geometric grid parameters")
        h_max = T / n_steps
        stop = t_end if t_end < T else T - floor * T
        times = [0.0]
        t = 0.0
        while True:
            h = min(h_max, ratio * (T - t))
            if t + h >= stop * (1.0 - 1e-12):
                break
            t += h
            times.append(t)
        times.append(t_end)
        return cls(np.array(times))
