"""Settings and result records shared by the alternating-optimization solvers."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

from .conic import SolverSettings


@dataclass
class AOSettings:
    outer_tol: float = 1e-4      # relative objective gain that stops the outer loop
    outer_max: int = 30
    inner_tol: float = 1e-4      # same for inner SCA loops
    inner_max: int = 20
    draws: int = 500             # Gaussian randomization candidates
    seed: int = 0                # initialization and randomization seed
    init_fraction: float = 0.9   # share of P_I used by the initial reflection state
    restarts: bool = True        # P2: rerun the transmit SCA from single-user starts after the AO
    conic: SolverSettings = field(default_factory=SolverSettings)


@dataclass
class SolveReport:
    """Objective trace and diagnostics of one solver run."""

    kind: str
    status: str
    objective: float
    trace: List[float]
    iterations: int
    inner_iterations: List[int] = field(default_factory=list)
    residuals: Dict[str, float] = field(default_factory=dict)
    extra: Dict[str, object] = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def relative_gain(new, old):
    return (new - old) / max(abs(old), 1e-300)


def trace_decreases(trace, rel=1e-7):
    """Indices ``k`` where ``trace[k]`` drops below ``trace[k-1]`` by more than ``rel`` (relative)."""
    bad = []
    for k in range(1, len(trace)):
        prev, cur = trace[k - 1], trace[k]
        if math.isfinite(prev) and cur < prev - rel * max(abs(prev), 1e-300):
            bad.append(k)
    return bad


def is_monotone(trace, rel=1e-7):
    return not trace_decreases(trace, rel)
