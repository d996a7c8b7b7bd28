"""Two-layer stepper: traffic advection then information reaction per dt.

Each step (i) advances the total traffic density by cell transmission,
(ii) splits the interface flows by the upstream class composition,
(iii) advects every class layer with its share, and (iv) applies one RK4
step of the SHRE reaction per information class on the post-advection
densities.  The class layers inside the traffic state are the single
source of truth; the SHRE step reads and writes the same arrays.
"""

from __future__ import annotations

import hashlib
import json
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernel as kern
from . import lwr, shre
from .errors import ConfigurationError
from .kernel import KernelParams
from .lwr import FundamentalDiagram, TrafficState
from .queueing import ClassParams
from .shre import CellKernel, ClassState, GridSpec, ShreParams

__all__ = [
    "ClassConfig",
    "IncidentProfile",
    "ScenarioConfig",
    "WorldState",
    "Snapshot",
    "RunOutput",
    "initialize",
    "step",
    "run",
    "config_from_dict",
    "read_field_csv",
    "config_with_class_override",
]

TOOL_VERSION = "0.1.0"
FIELDS = ("s", "h", "r", "e")


@dataclass(frozen=True)
class ClassConfig:
    lam: float
    n_servers: int
    mu: float
    kernel_mode: str = "global"  # "global" | "table"
    a: float | None = None  # km, global mode
    b: float | None = None
    seeds: tuple = ()  # ((cell, density_veh_per_km), ...)

    @property
    def params(self) -> ClassParams:
        return ClassParams(self.lam, self.n_servers, self.mu)


@dataclass(frozen=True)
class IncidentProfile:
    cell_start: int
    cell_end: int  # inclusive
    t_start: float  # seconds
    t_end: float
    capacity_factor: float

    def factors(self, t: float, num_cells: int) -> np.ndarray:
        f = np.ones(num_cells)
        if self.t_start <= t < self.t_end:
            f[self.cell_start:self.cell_end + 1] = self.capacity_factor
        return f


@dataclass(frozen=True)
class ScenarioConfig:
    grid: GridSpec
    fd: FundamentalDiagram
    boundary: str
    k0: float  # veh/km ambient total density
    penetration: float  # market penetration W in (0, 1]
    beta: float  # Hz
    classes: tuple
    incident: IncidentProfile | None = None
    horizon: float = 0.0  # seconds
    snapshot_every: float = 1.0  # seconds
    demand: float | None = None  # veh/h, open boundary
    conv_mode: str = "fft"
    rng_seed: int | None = None
    raw: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0 < self.penetration <= 1:
            raise ConfigurationError(f"market penetration must be in (0,1], got {self.penetration}")
        if self.k0 < 0 or self.k0 > self.fd.k_jam:
            raise ConfigurationError(f"ambient density {self.k0} outside [0, k_jam]")
        self.fd.check_cfl(self.grid)
        for c in self.classes:
            if not c.params.stable:
                raise ConfigurationError(
                    f"class (lambda={c.lam}, n={c.n_servers}, mu={c.mu}) is unstable")

    @property
    def sigma(self) -> float:
        """Equipped-vehicle density W * k0 (veh/km)."""
        return self.penetration * self.k0

    def warnings(self) -> list[str]:
        out = []
        total_servers = sum(c.n_servers for c in self.classes)
        try:
            n_max = kern.lookup_reference(self.k0).n_max
            if total_servers > n_max:
                out.append(
                    f"total servers {total_servers} exceed reference N_max={n_max} "
                    f"at density {self.k0} veh/km")
        except ValueError:
            pass  # density outside the tabulated range; nothing to check
        return out

    def digest(self) -> str:
        src = self.raw if self.raw is not None else repr(self)
        blob = json.dumps(src, sort_keys=True) if isinstance(src, dict) else src
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class WorldState:
    time: float
    traffic: TrafficState
    num_classes: int

    def class_state(self, j: int) -> ClassState:
        """View (shared arrays) of class j's S/H/R/E layers."""
        kc = self.traffic.k_class
        return ClassState(kc[f"S{j}"], kc[f"H{j}"], kc[f"R{j}"], kc[f"E{j}"])

    def set_class_state(self, j: int, st: ClassState):
        kc = self.traffic.k_class
        kc[f"S{j}"], kc[f"H{j}"], kc[f"R{j}"], kc[f"E{j}"] = st.s, st.h, st.r, st.e


def initialize(config: ScenarioConfig) -> WorldState:
    n = config.grid.num_cells
    sigma = config.sigma
    layers: dict[str, np.ndarray] = {"U": np.full(n, (1 - config.penetration) * config.k0)}
    for j, cc in enumerate(config.classes):
        st = ClassState.all_susceptible(sigma, n)
        for cell, density in cc.seeds:
            if density > st.s[cell] + 1e-12:
                raise ConfigurationError(
                    f"seed {density} veh/km exceeds equipped density {sigma} in cell {cell}")
            st = shre.seed_information(st, int(cell), float(density))
        layers[f"S{j}"] = st.s
        layers[f"H{j}"] = st.h
        layers[f"R{j}"] = st.r
        layers[f"E{j}"] = st.e
    traffic = TrafficState(np.full(n, float(config.k0)), layers)
    return WorldState(time=0.0, traffic=traffic, num_classes=len(config.classes))


def _class_kernel(cc: ClassConfig, k_total: np.ndarray, grid: GridSpec):
    if cc.kernel_mode == "table":
        a, b = kern.interp_kernel_params(k_total)
        return CellKernel(a, b, grid.dx)
    return KernelParams(cc.a, cc.b)


def _inflow_fractions(config: ScenarioConfig) -> dict[str, float]:
    fr = {"U": 1 - config.penetration}
    for j in range(len(config.classes)):
        fr[f"S{j}"] = config.penetration
        fr[f"H{j}"] = fr[f"R{j}"] = fr[f"E{j}"] = 0.0
    return fr


def step(world: WorldState, config: ScenarioConfig) -> WorldState:
    grid = config.grid
    t = world.time
    factors = (config.incident.factors(t, grid.num_cells)
               if config.incident is not None else 1.0)
    demand = config.demand
    if demand is None and config.boundary == "open":
        demand = config.fd.v_f * config.k0

    try:
        k_new, flows = lwr.advance_total(world.traffic, config.fd, grid,
                                         config.boundary, factors, demand)
        class_flows = lwr.split_class_flows(world.traffic, flows, config.boundary,
                                            _inflow_fractions(config))
        traffic = lwr.update_class_densities(world.traffic, k_new, class_flows, grid)
    except Exception as exc:
        raise type(exc)(f"traffic layer failed at t={t}: {exc}") from exc

    new_world = WorldState(time=t + grid.dt, traffic=traffic,
                           num_classes=world.num_classes)
    for j, cc in enumerate(config.classes):
        kobj = _class_kernel(cc, traffic.k_total, grid)
        params = ShreParams(config.beta, cc.params, kobj, conv_mode=config.conv_mode)
        try:
            st = shre.rk4_step(new_world.class_state(j), params, grid)
        except Exception as exc:
            raise type(exc)(f"SHRE step for class {j} failed at t={t}: {exc}") from exc
        new_world.set_class_state(j, st)
    return new_world


@dataclass
class Snapshot:
    time: float
    k_total: np.ndarray
    classes: list  # ClassState copies


@dataclass
class RunOutput:
    config: ScenarioConfig
    snapshots: list
    warnings: list
    kernel_mass: list  # effective b per class at the ambient density
    error: str | None = None
    started: float = 0.0
    finished: float = 0.0

    def snapshot_at(self, t: float) -> Snapshot:
        return min(self.snapshots, key=lambda s: abs(s.time - t))

    def write(self, out_dir, layout: str = "wide"):
        """Write one CSV per class per field plus traffic and a manifest.

        layout 'wide': rows are snapshots, columns are cells.  layout
        'long': tidy time_s,cell_index,x_km,value rows (the CLI default).
        """
        import os

        if layout not in ("wide", "long"):
            raise ValueError(f"unknown layout {layout!r}")
        os.makedirs(out_dir, exist_ok=True)
        files = []
        centers = self.config.grid.centers

        def dump(name, rows):
            path = os.path.join(out_dir, name)
            with open(path, "w") as fh:
                if layout == "long":
                    fh.write("time_s,cell_index,x_km,value\n")
                    for t, vec in rows:
                        for i, v in enumerate(vec):
                            fh.write(f"{t:.6f},{i},{centers[i]:.6f},{v:.9g}\n")
                else:
                    fh.write("time_s," + ",".join(f"x_{c:.6f}" for c in centers) + "\n")
                    for t, vec in rows:
                        fh.write(f"{t:.6f}," + ",".join(f"{v:.9g}" for v in vec) + "\n")
            files.append(name)

        dump("traffic_k_total.csv", [(s.time, s.k_total) for s in self.snapshots])
        for j in range(len(self.config.classes)):
            for f in FIELDS:
                dump(f"class{j}_{f}.csv",
                     [(s.time, getattr(s.classes[j], f)) for s in self.snapshots])
        g = self.config.grid
        manifest = {
            "config_sha256": self.config.digest(),
            "grid": {"dx_km": g.dx, "dt_s": g.dt, "num_cells": g.num_cells,
                     "origin_km": g.origin_km},
            "tool_version": TOOL_VERSION,
            "started_unix": self.started,
            "finished_unix": self.finished,
            "snapshot_times_s": [s.time for s in self.snapshots],
            "files": files,
            "warnings": self.warnings,
            "error": self.error,
        }
        tmp = os.path.join(out_dir, "manifest.json.tmp")
        with open(tmp, "w") as fh:
            json.dump(manifest, fh, indent=2)
        os.replace(tmp, os.path.join(out_dir, "manifest.json"))
        return manifest


def run(config: ScenarioConfig, out_dir=None, layout: str = "wide") -> RunOutput:
    """Run a scenario to its horizon, recording snapshots at the cadence.

    Deterministic for identical configs.  On a mid-run numerical failure
    with ``out_dir`` set, the partial snapshot series is flushed and the
    error recorded in the manifest before the exception propagates.
    """
    started = _time.time()
    world = initialize(config)
    kmass = [cc.b if cc.kernel_mode == "global"
             else float(kern.interp_kernel_params([config.k0])[1][0])
             for cc in config.classes]

    def snap(w: WorldState) -> Snapshot:
        return Snapshot(w.time, w.traffic.k_total.copy(),
                        [w.class_state(j).copy() for j in range(w.num_classes)])

    out = RunOutput(config=config, snapshots=[snap(world)],
                    warnings=config.warnings(), kernel_mass=kmass, started=started)
    n_steps = int(round(config.horizon / config.grid.dt))
    every = max(1, int(round(config.snapshot_every / config.grid.dt)))
    try:
        for i in range(1, n_steps + 1):
            world = step(world, config)
            if i % every == 0 or i == n_steps:
                out.snapshots.append(snap(world))
    except Exception as exc:
        out.error = str(exc)
        out.finished = _time.time()
        if out_dir is not None:
            out.write(out_dir, layout)
        raise
    out.finished = _time.time()
    if out_dir is not None:
        out.write(out_dir, layout)
    return out


def read_field_csv(path):
    """Read a field CSV (either layout) back as (times, 2D value array).

    Returns (times_s, values) with values shaped (num_snapshots, num_cells).
    The layout is sniffed from the header line.
    """
    times = []
    data = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header == "time_s,cell_index,x_km,value":
            cur_t = None
            row: list[float] = []
            for line in fh:
                t_s, _idx, _x, val = line.rstrip("\n").split(",")
                t = float(t_s)
                if cur_t is None or t != cur_t:
                    if row:
                        times.append(cur_t)
                        data.append(row)
                    cur_t, row = t, []
                row.append(float(val))
            if row:
                times.append(cur_t)
                data.append(row)
        elif header.startswith("time_s,x_"):
            for line in fh:
                parts = line.rstrip("\n").split(",")
                times.append(float(parts[0]))
                data.append([float(v) for v in parts[1:]])
        else:
            raise ConfigurationError(f"{path}: unexpected header {header!r}")
    return np.asarray(times), np.asarray(data)


def config_from_dict(d: dict) -> ScenarioConfig:
    """Build a ScenarioConfig from the unit-suffixed JSON schema."""
    try:
        g = d["grid"]
        grid = GridSpec(dx=float(g["dx_km"]), dt=float(g["dt_s"]),
                        num_cells=int(g["num_cells"]),
                        origin_km=float(g.get("origin_km", 0.0)))
        f = d["fundamental_diagram"]
        fd = FundamentalDiagram(v_f=float(f["v_f_km_h"]),
                                q_max=float(f["q_max_veh_h"]),
                                k_jam=float(f["k_jam_veh_per_km"]))
        classes = []
        for c in d["classes"]:
            kcfg = c.get("kernel", {"mode": "table"})
            mode = kcfg.get("mode", "global")
            classes.append(ClassConfig(
                lam=float(c["lambda_per_s"]),
                n_servers=int(c["n_servers"]),
                mu=float(c["mu_per_s"]),
                kernel_mode=mode,
                a=float(kcfg["a_km"]) if mode == "global" else None,
                b=float(kcfg["b"]) if mode == "global" else None,
                seeds=tuple((int(s["cell"]), float(s["density_veh_per_km"]))
                            for s in c.get("seeds", ())),
            ))
        incident = None
        if "incident" in d and d["incident"] is not None:
            i = d["incident"]
            incident = IncidentProfile(
                cell_start=int(i["cell_start"]), cell_end=int(i["cell_end"]),
                t_start=float(i["t_start_s"]), t_end=float(i["t_end_s"]),
                capacity_factor=float(i["capacity_factor"]))
        return ScenarioConfig(
            grid=grid, fd=fd,
            boundary=d.get("boundary", "periodic"),
            k0=float(d["k0_veh_per_km"]),
            penetration=float(d["market_penetration"]),
            beta=float(d["beta_hz"]),
            classes=tuple(classes),
            incident=incident,
            horizon=float(d.get("horizon_s", 0.0)),
            snapshot_every=float(d.get("snapshot_every_s", 1.0)),
            demand=float(d["demand_veh_h"]) if "demand_veh_h" in d else None,
            conv_mode=d.get("convolution_mode", "fft"),
            rng_seed=d.get("rng_seed"),
            raw=d,
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"bad scenario config: {exc}") from exc


def config_with_class_override(cfg: ScenarioConfig, n_servers: int,
                               mu: float) -> ScenarioConfig:
    """Copy of cfg with (n, mu) of the single information class replaced."""
    if len(cfg.classes) != 1:
        raise ConfigurationError("sweeps require a single-class base config")
    cc = replace(cfg.classes[0], n_servers=n_servers, mu=mu)
    new = replace(cfg, classes=(cc,), raw=None)
    return new
