"""Numerical tolerances and search defaults shared by every module."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace


@dataclass(frozen=True)
class Tolerances:
    """All thresholds used to turn floating point results into verdicts.

    Every report echoes the instance it was produced with.
    """

    active: float = 1e-6      # g_j >= -active counts as active
    pos: float = 1e-8         # multiplier u_j > pos gives an equality row
    rank: float = 1e-10       # relative singular value cut-off
    soc: float = 1e-8         # curvature below -soc*(1+|H|) is a violation
    drop: float = 1e-10       # minimal objective decrease of a calmness witness
    cluster: float = 1e-4     # merge radius for lower-level minimizers
    feas: float = 1e-8        # constraint violation accepted as feasible
    kkt: float = 1e-8         # stationarity residual accepted as zero
    val: float = 1e-9         # slack on f(x, y) <= V(x) for minimizers
    cone: float = 1e-9        # cone membership slack, scaled by 1 + |d|
    stat: float = 1e-8        # residual of a stationarity certificate
    gph: float = 1e-6         # f - V threshold of the gph S indicator

    def to_dict(self) -> dict:
        return asdict(self)

    def updated(self, **kwargs) -> "Tolerances":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


@dataclass(frozen=True)
class SearchDefaults:
    grid_small_m: int = 2001      # lower-level grid points per dimension for m <= 2
    grid_m3: int = 201            # ... for m == 3
    grid_large_m: int = 31        # ... for m > 3 (coarse, flagged in reports)
    n_starts: int = 64
    n_dirs: int = 257
    mu_list: tuple = (0.0, 1.0, 4.0, 10.0, 40.0, 100.0)
    radii: tuple = (1e-1, 1e-2, 1e-3)
    budget: int = 10_000
    seed: int = 42
    max_branch_zero: int = 10     # cap on |I0| for M-stationarity branches
    max_vertex_p: int = 6         # enumerate multiplier vertices up to this many constraints

    def grid_for(self, m: int) -> int:
        if m <= 2:
            return self.grid_small_m
        if m == 3:
            return self.grid_m3
        return self.grid_large_m

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_TOL = Tolerances()
DEFAULTS = SearchDefaults()
