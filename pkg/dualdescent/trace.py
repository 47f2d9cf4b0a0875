"""Per-iteration records, run results and the CSV trace format."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

BASE_COLUMNS = ("k", "potential", "lip", "h_norm", "mu_norm", "max_block_disp", "resid_max", "feas")


class RunStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    DIVERGED = "diverged"


@dataclass
class IterationRecord:
    """Snapshot after iteration k (state x^{k+1}, mu^{k+1})."""

    k: int
    potential: float
    lip: float
    h_norm: float
    mu_norm: float
    max_block_disp: float
    resid_max: float
    feas: float
    extras: dict[str, float] = field(default_factory=dict)
    x: Optional[np.ndarray] = field(default=None, repr=False)
    mu: Optional[np.ndarray] = field(default=None, repr=False)

    def row(self, extra_columns: Sequence[str]) -> list[Any]:
        base = [self.k, self.potential, self.lip, self.h_norm, self.mu_norm,
                self.max_block_disp, self.resid_max, self.feas]
        return base + [self.extras.get(col, float("nan")) for col in extra_columns]


@dataclass
class RunResult:
    """What a solver run returns: trace, certificate and final state."""

    solver: str
    status: RunStatus
    trace: list[IterationRecord]
    certificate: Any
    x: np.ndarray
    mu: np.ndarray
    rho: float
    params: dict[str, Any] = field(default_factory=dict)
    k_star: Optional[int] = None
    extra_columns: tuple[str, ...] = ()
    info: dict[str, Any] = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        """Number of completed iterations."""
        return len(self.trace)

    @property
    def converged(self) -> bool:
        return self.status == RunStatus.CONVERGED

    def final(self) -> Optional[IterationRecord]:
        return self.trace[-1] if self.trace else None

    def summary(self) -> dict[str, Any]:
        last = self.final()
        return {
            "solver": self.solver,
            "status": self.status.value,
            "iterations": self.iterations,
            "k_star": self.k_star,
            "rho": self.rho,
            "resid_max": last.resid_max if last else None,
            "feas": last.feas if last else None,
            "potential": last.potential if last else None,
            "mu_norm": last.mu_norm if last else None,
            "wall_time": self.wall_time,
            "params": self.params,
            "info": self.info,
        }


def _fmt(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_trace_csv(path: Path, trace: Sequence[IterationRecord], extra_columns: Sequence[str] = (),
                    every: int = 1) -> Path:
    """Write trace rows with full float precision; the last row is always kept."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(BASE_COLUMNS) + list(extra_columns))
        for idx, rec in enumerate(trace):
            if idx % every != 0 and idx != len(trace) - 1:
                continue
            writer.writerow([_fmt(v) for v in rec.row(extra_columns)])
    return path


def read_trace_csv(path: Path) -> list[dict[str, float]]:
    with open(path, newline="") as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]
