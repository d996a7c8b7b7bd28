"""Lower-layer LWR traffic dynamics via the cell transmission scheme.

A triangular fundamental diagram (free-flow speed v_f, capacity q_max,
jam density k_jam, derived backward wave speed w_c) drives sending /
receiving flows per cell interface; total density advances by the
conservation law and every tracked vehicle class (per information class
S/H/R/E plus the unequipped class U) is advected proportionally to its
share of the upstream cell.  A capacity factor field models incidents by
scaling q_max in both the sending and receiving functions.

Units: densities veh/km, flows veh/h, speeds km/h, dt in seconds
(converted internally).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .shre import GridSpec

__all__ = [
    "FundamentalDiagram",
    "TrafficState",
    "sending_flow",
    "receiving_flow",
    "advance_total",
    "split_class_flows",
    "update_class_densities",
]

EMPTY_TOL = 1e-12


@dataclass(frozen=True)
class FundamentalDiagram:
    v_f: float  # km/h
    q_max: float  # veh/h
    k_jam: float  # veh/km

    def __post_init__(self):
        if min(self.v_f, self.q_max, self.k_jam) <= 0:
            raise ValueError("all fundamental diagram parameters must be positive")
        if self.k_crit >= self.k_jam:
            raise ValueError(
                f"critical density {self.k_crit:.3f} must be below jam density {self.k_jam}")

    @property
    def k_crit(self) -> float:
        return self.q_max / self.v_f

    @property
    def w_c(self) -> float:
        """Backward wave speed of the triangular diagram (km/h)."""
        return self.q_max / (self.k_jam - self.k_crit)

    def check_cfl(self, grid: GridSpec):
        if self.v_f * grid.dt / 3600.0 > grid.dx * (1 + 1e-12):
            raise ConfigurationError(
                f"CFL violated: v_f*dt = {self.v_f * grid.dt / 3600.0:.6f} km "
                f"exceeds dx = {grid.dx} km")


@dataclass
class TrafficState:
    """Total density plus named per-class density layers.

    For each information class j the layers S_j/H_j/R_j/E_j together with
    the shared unequipped layer U partition k_total cell by cell.
    """

    k_total: np.ndarray
    k_class: dict[str, np.ndarray]

    def copy(self) -> "TrafficState":
        return TrafficState(self.k_total.copy(),
                            {z: v.copy() for z, v in self.k_class.items()})


def _check_density(k, fd: FundamentalDiagram):
    k = np.asarray(k, dtype=float)
    if np.any(k < -EMPTY_TOL) or np.any(k > fd.k_jam * (1 + 1e-12)):
        raise ValueError(f"density outside [0, k_jam={fd.k_jam}]")
    return np.clip(k, 0.0, fd.k_jam)


def sending_flow(k, fd: FundamentalDiagram, capacity_factor=1.0):
    """Maximum flow the upstream cell can send: min(v_f k, factor q_max)."""
    k = _check_density(k, fd)
    return np.minimum(fd.v_f * k, np.asarray(capacity_factor) * fd.q_max)


def receiving_flow(k_downstream, fd: FundamentalDiagram, capacity_factor=1.0):
    """Maximum flow the downstream cell can accept: min(factor q_max, w_c (k_jam - k))."""
    k = _check_density(k_downstream, fd)
    return np.minimum(np.asarray(capacity_factor) * fd.q_max, fd.w_c * (fd.k_jam - k))


def interface_flows(k: np.ndarray, fd: FundamentalDiagram, boundary: str,
                    capacity_factor=1.0, demand: float | None = None) -> np.ndarray:
    """Flow across each of the num_cells+1 interfaces (veh/h).

    flows[j] crosses from cell j-1 into cell j; flows[0] and flows[-1]
    are the domain boundaries (equal for 'periodic', zero for 'closed',
    demand-driven inflow / free outflow for 'open').
    """
    n = k.size
    factor = np.broadcast_to(np.asarray(capacity_factor, dtype=float), (n,))
    q = np.empty(n + 1)
    send = sending_flow(k, fd, factor)
    recv = receiving_flow(k, fd, factor)
    q[1:n] = np.minimum(send[:-1], recv[1:])
    if boundary == "periodic":
        q[0] = q[n] = min(send[-1], recv[0])
    elif boundary == "closed":
        q[0] = q[n] = 0.0
    elif boundary == "open":
        if demand is None:
            demand = fd.q_max
        q[0] = min(demand, recv[0])
        q[n] = send[-1]
    else:
        raise ConfigurationError(f"unknown boundary mode {boundary!r}")
    return q


def advance_total(state: TrafficState, fd: FundamentalDiagram, grid: GridSpec,
                  boundary: str = "periodic", capacity_factor=1.0,
                  demand: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One cell-transmission step of the total density.

    Returns (new k_total, interface flows).  Vehicle count is conserved
    exactly on closed/periodic boundaries.
    """
    fd.check_cfl(grid)
    q = interface_flows(state.k_total, fd, boundary, capacity_factor, demand)
    dt_h = grid.dt / 3600.0
    k_new = state.k_total + (dt_h / grid.dx) * (q[:-1] - q[1:])
    return np.clip(k_new, 0.0, fd.k_jam), q


def split_class_flows(state: TrafficState, flows: np.ndarray, boundary: str,
                      inflow_fractions: dict[str, float] | None = None
                      ) -> dict[str, np.ndarray]:
    """Split each interface flow by the upstream cell's class composition.

    q_z = (k_z / k_total) * q; the per-class flows of one partition sum
    to q exactly.  Empty upstream cells contribute zero (their q is 0).
    For 'open' inflow the boundary composition comes from
    ``inflow_fractions`` (default: all flow assigned pro rata to the
    first cell's composition is wrong for fresh vehicles, so callers
    pass the ambient composition explicitly).
    """
    k = state.k_total
    n = k.size
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = {z: np.where(k > EMPTY_TOL, v / np.where(k > EMPTY_TOL, k, 1.0), 0.0)
                for z, v in state.k_class.items()}
    if np.any((k <= EMPTY_TOL) & (flows[1:n + 1] > 0)):
        raise ValueError("positive outflow from an empty cell")
    out: dict[str, np.ndarray] = {}
    for z, f in frac.items():
        qz = np.empty(n + 1)
        qz[1:n + 1] = f * flows[1:n + 1]
        if boundary == "periodic":
            qz[0] = f[-1] * flows[0]
        elif boundary == "closed":
            qz[0] = 0.0
        else:  # open
            fin = 0.0 if inflow_fractions is None else inflow_fractions.get(z, 0.0)
            qz[0] = fin * flows[0]
        out[z] = qz
    return out


def update_class_densities(state: TrafficState, new_k_total: np.ndarray,
                           class_flows: dict[str, np.ndarray],
                           grid: GridSpec) -> TrafficState:
    """Advance every class layer by its own conservation law."""
    dt_h = grid.dt / 3600.0
    k_class = {}
    for z, qz in class_flows.items():
        kz = state.k_class[z] + (dt_h / grid.dx) * (qz[:-1] - qz[1:])
        if kz.min() < -1e-9:
            raise ValueError(f"class {z} density went negative: {kz.min():.3e}")
        k_class[z] = np.clip(kz, 0.0, None)
    return TrafficState(new_k_total, k_class)
