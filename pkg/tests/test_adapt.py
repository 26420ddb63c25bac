"""Marking and study-loop tests."""

import numpy as np
import pytest

from screenbem.adapt import (
    MarkingStats,
    StudyConfig,
    doerfler_mark,
    marking_stats,
    run_study,
)
from screenbem.mesh import build_decomposition, generate_initial_mesh


class TestDoerflerMark:
    def test_greedy_prefix(self):
        marked = doerfler_mark(np.array([9.0, 4.0, 1.0, 1.0, 1.0]), 0.5)
        assert marked.tolist() == [0]

    def test_full_delta_marks_positive_support(self):
        marked = doerfler_mark(np.array([1.0, 0.0, 2.0, 0.0]), 1.0)
        assert marked.tolist() == [0, 2]

    def test_equal_indicators_tie_break(self):
        marked = doerfler_mark(np.ones(8), 0.5)
        assert marked.tolist() == [0, 1]

    def test_order_independent_of_position(self):
        v = np.array([1.0, 9.0, 4.0, 1.0, 1.0])
        marked = doerfler_mark(v, 0.5)
        assert marked.tolist() == [1]

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            doerfler_mark(np.zeros(4), 0.5)
        with pytest.raises(ValueError):
            doerfler_mark(np.array([1.0, -0.1]), 0.5)
        with pytest.raises(ValueError):
            doerfler_mark(np.array([1.0]), 0.0)
        with pytest.raises(ValueError):
            doerfler_mark(np.array([1.0]), 1.5)
        with pytest.raises(ValueError):
            doerfler_mark(np.array([]), 0.5)

    def test_minimality_and_monotonicity_randomized(self):
        # minimality: dropping the smallest marked indicator breaks the
        # bulk criterion; monotonicity: R(d1) subset R(d2) for d1 <= d2
        rng = np.random.default_rng(42)
        for trial in range(1000):
            n = int(rng.integers(1, 60))
            v = rng.uniform(0.0, 1.0, n) ** 2
            if rng.random() < 0.3:
                v[rng.random(n) < 0.5] = 0.0
            if v.sum() == 0.0:
                v[int(rng.integers(0, n))] = rng.uniform(0.1, 1.0)
            d1, d2 = sorted(rng.uniform(0.01, 1.0, 2))
            m1 = doerfler_mark(v, d1)
            m2 = doerfler_mark(v, d2)
            assert set(m1) <= set(m2)
            total = v.sum()
            for delta, m in ((d1, m1), (d2, m2)):
                s = v[m].sum()
                assert s >= delta**2 * total * (1.0 - 1e-12)
                if len(m) > 1:
                    smallest = m[np.argmin(v[m])]
                    rest = s - v[smallest]
                    assert rest < delta**2 * total


class TestMarkingStats:
    def test_boundary_fraction(self):
        dec = build_decomposition("four-square")
        m = generate_initial_mesh(dec, 2)
        all_ids = np.arange(m.num_elements)
        st = marking_stats(m, all_ids, dec, step=0)
        assert isinstance(st, MarkingStats)
        assert st.n_marked == m.num_elements
        on_b = np.abs(np.abs(m.vertices) - 0.5).min(axis=1) < 1e-12
        expected = float(on_b[m.triangles].any(axis=1).sum()) / m.num_elements
        assert st.frac_boundary == pytest.approx(expected)
        # marking everything makes every share match its area share
        for marked_share, area_share in st.interface_shares:
            assert marked_share == pytest.approx(area_share)
            assert area_share > 0.0

    def test_interior_marks(self):
        dec = build_decomposition("four-square")
        m = generate_initial_mesh(dec, 4)
        centroids = m.element_coords().mean(axis=1)
        interior = np.nonzero(np.abs(centroids).max(axis=1) < 0.2)[0][:4]
        st = marking_stats(m, interior, dec, step=3)
        assert st.frac_boundary == 0.0
        assert st.step == 3


class TestRunStudy:
    def test_uniform_short(self):
        res = run_study(StudyConfig(mode="uniform", max_steps=3))
        assert [r.N for r in res.records] == [16, 64, 256]
        assert [r.step for r in res.records] == [0, 1, 2]
        assert all(r.kind == "uniform" for r in res.records)
        thetas = [r.theta for r in res.records]
        assert thetas[0] > thetas[1] > thetas[2]
        energies = [r.energy for r in res.records]
        assert energies[0] < energies[1] < energies[2]
        assert len(res.meshes) == 3
        assert len(res.diagnostics) == 3
        assert res.marking == []
        assert all(d.orthogonality < 1e-12 for d in res.diagnostics)
        for r in res.records:
            assert np.isfinite(r.total) and r.total >= 0.0
            assert r.total**2 == pytest.approx(
                r.error1**2 + r.error2**2, rel=1e-12
            )
            assert r.theta**2 == pytest.approx(
                r.estim1**2 + 2.0 * r.nu * r.estim2**2, rel=1e-12
            )

    def test_adaptive_short(self):
        res = run_study(StudyConfig(mode="adaptive", max_steps=5))
        ns = [r.N for r in res.records]
        assert len(ns) == 5
        assert all(a < b for a, b in zip(ns, ns[1:]))
        assert len(res.marking) == 4
        assert all(ms.n_marked >= 1 for ms in res.marking)
        assert all(r.kind == "adaptive" for r in res.records)

    def test_tol_stops_immediately(self):
        res = run_study(StudyConfig(mode="adaptive", tol=1e9, max_steps=7))
        assert len(res.records) == 1
        assert res.stopped_by_tol

    def test_config_validation(self):
        with pytest.raises(ValueError):
            run_study(StudyConfig(mode="bogus"))
        with pytest.raises(ValueError):
            run_study(StudyConfig(delta=0.0))
        with pytest.raises(ValueError):
            run_study(StudyConfig(nu=-5.0))
        with pytest.raises(ValueError):
            run_study(StudyConfig(max_steps=0))
        with pytest.raises(ValueError):
            run_study(StudyConfig(quad_profile="best"))

    def test_deterministic(self):
        cfg = StudyConfig(mode="adaptive", max_steps=4)
        a = run_study(cfg)
        b = run_study(cfg)
        for ra, rb in zip(a.records, b.records):
            assert ra == rb

    def test_single_subdomain(self):
        res = run_study(
            StudyConfig(mode="uniform", max_steps=3, decomposition="single")
        )
        for r in res.records:
            assert r.error2 == 0.0
            assert r.estim2 == 0.0
