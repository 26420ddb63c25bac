"""Two-level estimator and energy extrapolation tests."""

import math

import numpy as np
import pytest

from screenbem.estimator import (
    CSV_HEADER,
    ConvergenceRecord,
    compute_indicators,
    energy_value,
    extrapolate_energy,
    format_record,
    records_to_csv,
)
from screenbem.mesh import (
    build_decomposition,
    generate_initial_mesh,
    refine_uniform,
)
from screenbem.solve import solve_pair


def default_mesh(levels=0, n0=2):
    m = generate_initial_mesh(build_decomposition("four-square"), n0)
    for _ in range(levels):
        m = refine_uniform(m)
    return m


class TestExtrapolation:
    def test_recovers_model_limit(self):
        ns = [16.0 * 4**k for k in range(5)]
        es = [1.0 - n**-0.5 for n in ns]
        res = extrapolate_energy(ns, es)
        assert res.converged
        assert res.value == pytest.approx(1.0, abs=1e-10)
        assert res.beta == pytest.approx(0.5, abs=1e-8)

    def test_nonuniform_growth(self):
        ns = [10.0, 23.0, 57.0]
        es = [2.0 - 3.0 * n**-0.7 for n in ns]
        res = extrapolate_energy(ns, es)
        assert res.converged
        assert res.value == pytest.approx(2.0, abs=1e-10)
        assert res.beta == pytest.approx(0.7, abs=1e-8)

    def test_uses_last_three_points_only(self):
        ns = [2.0, 8.0, 32.0, 128.0, 512.0]
        es = [100.0, -5.0] + [1.0 - n**-0.5 for n in ns[2:]]
        res = extrapolate_energy(ns, es)
        assert res.converged
        assert res.value == pytest.approx(1.0, abs=1e-10)

    def test_nonmonotone_tail_flagged(self):
        res = extrapolate_energy([10.0, 20.0, 40.0], [0.5, 0.8, 0.7])
        assert not res.converged
        assert res.value == 0.7
        assert math.isnan(res.beta)

    def test_noncontracting_tail_flagged(self):
        res = extrapolate_energy([10.0, 20.0, 40.0], [0.5, 0.6, 0.8])
        assert not res.converged
        assert res.value == 0.8

    def test_constant_history_converged(self):
        res = extrapolate_energy([10.0, 20.0, 40.0], [0.4, 0.4, 0.4])
        assert res.converged
        assert res.value == 0.4

    def test_input_validation(self):
        with pytest.raises(ValueError):
            extrapolate_energy([1.0, 2.0], [0.1, 0.2])
        with pytest.raises(ValueError):
            extrapolate_energy([1.0, 3.0, 2.0], [0.1, 0.2, 0.3])
        with pytest.raises(ValueError):
            extrapolate_energy([1.0, 2.0, 3.0], [0.1, 0.2])


class TestIndicators:
    def test_global_identity(self):
        sol = solve_pair(default_mesh(1), 100.0)
        est = compute_indicators(sol)
        total = float(est.element_sq.sum())
        assert total == pytest.approx(est.theta_sq, rel=1e-12)
        assert est.theta_sq == pytest.approx(
            est.theta1_sq + 2.0 * sol.nu * est.theta2_sq, rel=1e-14
        )
        assert est.theta == pytest.approx(math.sqrt(est.theta_sq))
        assert est.element_sq.min() >= 0.0

    def test_zero_difference_gives_zero(self):
        sol = solve_pair(default_mesh(0), 100.0)
        sol.u_fine = np.asarray(sol.prolong @ sol.u_coarse)
        est = compute_indicators(sol)
        assert est.theta_sq == 0.0
        assert np.all(est.element_sq == 0.0)

    def test_linear_difference_curl_part(self):
        # d interpolating x has gradient (1, 0) wherever no excluded
        # vertex enters: those coarse elements contribute h_T * area(T)
        sol = solve_pair(default_mesh(1), 100.0)
        fine, coarse = sol.fine, sol.coarse
        dofs_f = sol.blocks.dofs
        u_lin = fine.vertices[dofs_f.dof_vertex, 0]
        sol.u_fine = np.asarray(sol.prolong @ sol.u_coarse) + u_lin
        est = compute_indicators(sol)
        h = coarse.element_diameters()
        c = coarse.element_coords()
        areas = np.abs(
            0.5
            * (
                (c[:, 1, 0] - c[:, 0, 0]) * (c[:, 2, 1] - c[:, 0, 1])
                - (c[:, 1, 1] - c[:, 0, 1]) * (c[:, 2, 0] - c[:, 0, 0])
            )
        )
        interior = (
            np.abs(np.abs(c).max(axis=(1, 2)) - 0.5) > 0.1
        )  # away from the screen boundary
        skel_elems = set()
        for ss in sol.blocks.skeleton.subsegments:
            skel_elems.add(fine.parent[ss.left_element])
            skel_elems.add(fine.parent[ss.right_element])
        for t in np.nonzero(interior)[0]:
            if t in skel_elems:
                continue
            assert est.element_sq[t] == pytest.approx(
                h[t] * areas[t], rel=1e-12
            )

    def test_conforming_has_no_jump_terms(self):
        m = generate_initial_mesh(build_decomposition("single"), 3)
        sol = solve_pair(m, 100.0)
        est = compute_indicators(sol)
        assert est.theta2_sq == 0.0
        assert est.jump_sq_coarse == 0.0
        assert est.theta_sq == est.theta1_sq

    def test_energy_value(self):
        sol = solve_pair(default_mesh(0), 100.0)
        u_c_fine = np.asarray(sol.prolong @ sol.u_coarse)
        e = energy_value(sol.blocks.rhs, u_c_fine)
        assert e == pytest.approx(float(sol.blocks.rhs @ u_c_fine))
        assert 0.0 < e < 1.0


class TestRecords:
    @staticmethod
    def record(**kw):
        base = dict(
            step=0,
            kind="uniform",
            N=16,
            N_fine=64,
            energy=0.4,
            estim1=0.3,
            estim2=0.01,
            theta=0.35,
            nu=100.0,
            jump_sq_coarse=1e-4,
        )
        base.update(kw)
        return ConvergenceRecord(**base)

    def test_backfill(self):
        r = self.record()
        r.backfill_errors(0.45)
        assert r.error1 == pytest.approx(math.sqrt(0.05))
        assert r.error2 == pytest.approx(math.sqrt(100.0 * 1e-4))
        assert r.total**2 == pytest.approx(r.error1**2 + r.error2**2)

    def test_csv_layout(self):
        r = self.record()
        r.backfill_errors(0.45)
        text = records_to_csv([r])
        lines = text.strip().splitlines()
        assert lines[0] == CSV_HEADER
        assert len(CSV_HEADER.split(",")) == 10
        row = lines[1].split(",")
        assert len(row) == 10
        assert row[0] == "0"
        assert row[1] == "uniform"
        assert row[2] == "16"
        assert float(row[3]) == 0.4

    def test_format_round_trips_doubles(self):
        r = self.record(energy=1.0 / 3.0, theta=math.pi)
        row = format_record(r).split(",")
        assert float(row[3]) == 1.0 / 3.0
        assert float(row[8]) == math.pi
