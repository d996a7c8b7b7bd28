import copy
import json

import numpy as np
import pytest

from ifpw.coupling import (
    ClassConfig,
    IncidentProfile,
    ScenarioConfig,
    config_from_dict,
    config_with_class_override,
    initialize,
    read_field_csv,
    run,
    step,
)
from ifpw.errors import ConfigurationError
from ifpw.kernel import KernelParams
from ifpw.lwr import FundamentalDiagram
from ifpw.queueing import ClassParams
from ifpw.shre import ClassState, GridSpec, ShreParams, rk4_step, seed_information

FD = FundamentalDiagram(v_f=108.0, q_max=7200.0, k_jam=300.0)
GRID = GridSpec(dx=0.05, dt=0.5, num_cells=64)


def make_config(**overrides):
    base = dict(
        grid=GRID,
        fd=FD,
        boundary="periodic",
        k0=40.0,
        penetration=0.5,
        beta=2.0,
        classes=(ClassConfig(0.5, 11, 0.05, kernel_mode="global",
                             a=0.292, b=0.499, seeds=((32, 5.0),)),),
        horizon=10.0,
        snapshot_every=2.0,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


JSON_CONFIG = {
    "grid": {"dx_km": 0.05, "dt_s": 0.5, "num_cells": 64},
    "fundamental_diagram": {"v_f_km_h": 108.0, "q_max_veh_h": 7200.0,
                            "k_jam_veh_per_km": 300.0},
    "boundary": "periodic",
    "k0_veh_per_km": 40.0,
    "market_penetration": 0.5,
    "beta_hz": 2.0,
    "classes": [{
        "lambda_per_s": 0.5, "n_servers": 11, "mu_per_s": 0.05,
        "kernel": {"mode": "global", "a_km": 0.292, "b": 0.499},
        "seeds": [{"cell": 32, "density_veh_per_km": 5.0}],
    }],
    "horizon_s": 10.0,
    "snapshot_every_s": 2.0,
}


class TestInitialize:
    def test_layer_partition(self):
        world = initialize(make_config())
        kc = world.traffic.k_class
        np.testing.assert_allclose(world.traffic.k_total, 40.0)
        np.testing.assert_allclose(kc["U"], 20.0)  # (1 - 0.5) * 40
        np.testing.assert_allclose(kc["S0"] + kc["R0"], 20.0)  # W * k0
        assert kc["R0"][32] == 5.0
        assert kc["S0"][32] == 15.0
        np.testing.assert_array_equal(kc["H0"], 0.0)

    def test_full_penetration_has_no_unequipped(self):
        world = initialize(make_config(penetration=1.0))
        np.testing.assert_array_equal(world.traffic.k_class["U"], 0.0)
        np.testing.assert_allclose(world.traffic.k_class["S0"] +
                                   world.traffic.k_class["R0"], 40.0)

    def test_seed_exceeding_equipped_density(self):
        cc = ClassConfig(0.5, 11, 0.05, kernel_mode="global",
                         a=0.292, b=0.499, seeds=((32, 25.0),))
        with pytest.raises(ConfigurationError):
            initialize(make_config(classes=(cc,)))

    def test_unstable_class_rejected(self):
        cc = ClassConfig(2.0, 1, 0.05, kernel_mode="global", a=0.292, b=0.499)
        with pytest.raises(ConfigurationError):
            make_config(classes=(cc,))

    def test_bad_penetration(self):
        with pytest.raises(ConfigurationError):
            make_config(penetration=0.0)
        with pytest.raises(ConfigurationError):
            make_config(penetration=1.5)

    def test_server_budget_warning(self):
        # 11 servers fit under N_max=31 at 40 veh/km; 40 do not
        assert make_config().warnings() == []
        cc = ClassConfig(0.5, 40, 0.05, kernel_mode="global", a=0.292, b=0.499)
        w = make_config(classes=(cc,)).warnings()
        assert len(w) == 1 and "N_max" in w[0]


class TestStep:
    def test_conserves_total_vehicles(self):
        cfg = make_config()
        world = initialize(cfg)
        total0 = world.traffic.k_total.sum()
        for _ in range(100):
            world = step(world, cfg)
        assert world.traffic.k_total.sum() == pytest.approx(total0, abs=1e-8)
        # the class layers still partition the total
        np.testing.assert_allclose(sum(world.traffic.k_class.values()),
                                   world.traffic.k_total, atol=1e-8)

    def test_no_seed_is_stationary_information(self):
        cc = ClassConfig(0.5, 11, 0.05, kernel_mode="global", a=0.292, b=0.499)
        cfg = make_config(classes=(cc,))
        world = initialize(cfg)
        for _ in range(20):
            world = step(world, cfg)
        np.testing.assert_array_equal(world.traffic.k_class["R0"], 0.0)
        np.testing.assert_allclose(world.traffic.k_class["S0"], 20.0, atol=1e-9)

    def test_frozen_traffic_reduces_to_pure_reaction(self):
        # at jam density on a ring no vehicle moves, so the coupled step
        # must equal the standalone reaction step
        cfg = make_config(k0=300.0, penetration=20.0 / 300.0)
        world = initialize(cfg)
        ref = seed_information(ClassState.all_susceptible(20.0, 64), 32, 5.0)
        p = ShreParams(2.0, ClassParams(0.5, 11, 0.05), KernelParams(0.292, 0.499))
        for _ in range(40):
            world = step(world, cfg)
            ref = rk4_step(ref, p, GRID)
        got = world.class_state(0)
        np.testing.assert_allclose(got.s, ref.s, atol=1e-9)
        np.testing.assert_allclose(got.r, ref.r, atol=1e-9)

    def test_information_spreads_from_seed(self):
        cfg = make_config()
        world = initialize(cfg)
        for _ in range(60):
            world = step(world, cfg)
        informed = world.class_state(0).informed
        assert informed[32] > 1.0
        assert informed[20] > 0.01  # reached well away from the seed


class TestRun:
    def test_zero_horizon_single_snapshot(self):
        out = run(make_config(horizon=0.0))
        assert len(out.snapshots) == 1
        assert out.snapshots[0].time == 0.0

    def test_snapshot_cadence(self):
        out = run(make_config(horizon=10.0, snapshot_every=2.0))
        assert [s.time for s in out.snapshots] == pytest.approx(
            [0.0, 2.0, 4.0, 6.0, 8.0, 10.0])

    def test_deterministic(self):
        a = run(make_config())
        b = run(make_config())
        for sa, sb in zip(a.snapshots, b.snapshots):
            np.testing.assert_array_equal(sa.k_total, sb.k_total)
            np.testing.assert_array_equal(sa.classes[0].s, sb.classes[0].s)
            np.testing.assert_array_equal(sa.classes[0].r, sb.classes[0].r)

    def test_snapshot_at_picks_nearest(self):
        out = run(make_config())
        assert out.snapshot_at(3.9).time == 4.0
        assert out.snapshot_at(100.0).time == 10.0

    def test_kernel_mass_reported(self):
        out = run(make_config(horizon=0.0))
        assert out.kernel_mass == [0.499]


class TestOutputFiles:
    def test_wide_round_trip(self, tmp_path):
        out = run(make_config(), out_dir=tmp_path, layout="wide")
        times, vals = read_field_csv(tmp_path / "class0_s.csv")
        assert vals.shape == (len(out.snapshots), 64)
        np.testing.assert_allclose(times, [s.time for s in out.snapshots])
        np.testing.assert_allclose(vals[-1], out.snapshots[-1].classes[0].s,
                                   rtol=1e-6)

    def test_long_round_trip(self, tmp_path):
        out = run(make_config(), out_dir=tmp_path, layout="long")
        times, vals = read_field_csv(tmp_path / "class0_r.csv")
        assert vals.shape == (len(out.snapshots), 64)
        np.testing.assert_allclose(vals[-1], out.snapshots[-1].classes[0].r,
                                   rtol=1e-6)

    def test_manifest_contents(self, tmp_path):
        run(make_config(), out_dir=tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["grid"]["num_cells"] == 64
        assert "traffic_k_total.csv" in manifest["files"]
        assert "class0_e.csv" in manifest["files"]
        assert manifest["error"] is None
        assert len(manifest["config_sha256"]) == 64

    def test_unknown_layout(self, tmp_path):
        out = run(make_config(horizon=0.0))
        with pytest.raises(ValueError):
            out.write(tmp_path, layout="diagonal")


class TestConfigParsing:
    def test_round_trip(self):
        cfg = config_from_dict(copy.deepcopy(JSON_CONFIG))
        assert cfg.grid.num_cells == 64
        assert cfg.sigma == pytest.approx(20.0)
        assert cfg.classes[0].seeds == ((32, 5.0),)
        assert cfg.digest() == config_from_dict(copy.deepcopy(JSON_CONFIG)).digest()

    def test_missing_section(self):
        bad = copy.deepcopy(JSON_CONFIG)
        del bad["fundamental_diagram"]
        with pytest.raises(ConfigurationError):
            config_from_dict(bad)

    def test_missing_class_field(self):
        bad = copy.deepcopy(JSON_CONFIG)
        del bad["classes"][0]["mu_per_s"]
        with pytest.raises(ConfigurationError):
            config_from_dict(bad)

    def test_incident_parsed(self):
        d = copy.deepcopy(JSON_CONFIG)
        d["incident"] = {"cell_start": 10, "cell_end": 20, "t_start_s": 60.0,
                         "t_end_s": 300.0, "capacity_factor": 1 / 3}
        cfg = config_from_dict(d)
        f = cfg.incident.factors(100.0, 64)
        assert f[15] == pytest.approx(1 / 3)
        assert f[5] == 1.0
        np.testing.assert_array_equal(cfg.incident.factors(400.0, 64), 1.0)

    def test_class_override(self):
        cfg = config_from_dict(copy.deepcopy(JSON_CONFIG))
        new = config_with_class_override(cfg, n_servers=5, mu=0.2)
        assert new.classes[0].n_servers == 5
        assert new.classes[0].mu == 0.2
        assert new.classes[0].lam == cfg.classes[0].lam

    def test_override_requires_single_class(self):
        cfg = make_config()
        two = ScenarioConfig(**{**cfg.__dict__, "classes": cfg.classes * 2,
                                "raw": None})
        with pytest.raises(ConfigurationError):
            config_with_class_override(two, n_servers=2, mu=0.1)


class TestOperatorSplitting:
    def test_refining_dt_converges(self):
        # halving the coupling step should roughly halve the splitting error
        def final_s(dt):
            grid = GridSpec(dx=0.05, dt=dt, num_cells=64)
            cfg = make_config(grid=grid, horizon=8.0, snapshot_every=8.0)
            return run(cfg).snapshots[-1].classes[0].s

        ref = final_s(0.03125)
        e1 = np.abs(final_s(0.5) - ref).max()
        e2 = np.abs(final_s(0.25) - ref).max()
        assert e2 < e1
        assert e1 / e2 > 1.5
