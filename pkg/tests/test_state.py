"""Grid construction, discretized measures, moments, test functions, CSV I/O."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coagfrag import (
    ConfigError,
    DomainError,
    StateMeasure,
    Trajectory,
    build_grid,
    from_density,
    from_spikes,
    function_battery,
    load_state_csv,
    moment_m,
    pair_test,
    piecewise_linear,
    save_state_csv,
)
from coagfrag.state import cell_of, measure_below

E_INV = float(np.exp(-1.0))


class TestGrid:
    def test_uniform_edges(self):
        g = build_grid(4, kind="uniform")
        assert np.array_equal(g.edges, [0.0, 0.25, 0.5, 0.75, 1.0])
        assert g.n == 4
        assert g.widths.sum() == pytest.approx(1.0, abs=0)

    def test_geometric_edges(self):
        g = build_grid(3, kind="geometric", ratio=2.0)
        assert np.array_equal(g.edges, [0.0, 0.25, 0.5, 1.0])

    def test_interior_pivot_is_geometric_mean(self):
        g = build_grid(3, kind="geometric", ratio=2.0)
        assert g.pivots[1] == pytest.approx(np.sqrt(0.25 * 0.5), abs=0)

    def test_first_pivot_is_half_first_edge(self):
        g = build_grid(3, kind="geometric", ratio=2.0)
        assert g.pivots[0] == 0.125

    def test_lattice_pivots_sit_on_right_edges(self):
        g = build_grid(8, kind="uniform", lattice=True)
        assert np.array_equal(g.pivots, g.edges[1:])

    def test_pivots_inside_cells(self):
        g = build_grid(50, kind="geometric", ratio=1.1)
        assert np.all(g.pivots > g.edges[:-1])
        assert np.all(g.pivots <= g.edges[1:])
        assert g.edges[-1] == 1.0

    def test_invalid_sizes_rejected(self):
        with pytest.raises(ConfigError):
            build_grid(1, kind="uniform")
        with pytest.raises(ConfigError):
            build_grid(4, kind="geometric", ratio=1.0)
        with pytest.raises(ConfigError):
            build_grid(4, kind="geometric")
        with pytest.raises(ConfigError):
            build_grid(4, kind="sqrt")

    def test_cell_lookup_half_open(self):
        g = build_grid(4, kind="uniform")
        assert cell_of(g, 0.25) == 0  # edges belong to the left cell
        assert cell_of(g, 0.2500001) == 1
        assert cell_of(g, 1.0) == 3
        with pytest.raises(DomainError):
            cell_of(g, 0.0)
        with pytest.raises(DomainError):
            cell_of(g, 1.1)


class TestFromDensity:
    def test_constant_density(self):
        s = from_density(build_grid(4, kind="uniform"), lambda x: np.ones_like(x))
        assert s.counts == pytest.approx([0.25] * 4, abs=1e-15)
        assert s.atom == 0.0
        assert s.total == pytest.approx(1.0, abs=1e-14)

    def test_zero_density(self):
        s = from_density(build_grid(4, kind="uniform"), lambda x: np.zeros_like(x))
        assert not np.any(s.counts)

    def test_exponential_density_total(self):
        s = from_density(build_grid(100, kind="uniform"), lambda x: np.exp(-x))
        assert s.counts.sum() == pytest.approx(1.0 - E_INV, abs=1e-10)

    def test_negative_density_rejected(self):
        with pytest.raises(DomainError):
            from_density(build_grid(4, kind="uniform"), lambda x: x - 0.5)

    def test_underresolved_small_sizes_warn(self):
        with pytest.warns(UserWarning, match="first cell"):
            from_density(build_grid(4, kind="uniform"), lambda x: np.exp(-100.0 * x))


class TestFromSpikes:
    def test_spike_lands_in_containing_cell(self):
        g = build_grid(64, kind="uniform", lattice=True)
        s = from_spikes(g, [(0.015625, 1.0)])
        assert s.counts[0] == 1.0
        assert s.counts.sum() == 1.0

    def test_spike_at_one_goes_to_last_cell_not_atom(self):
        g = build_grid(4, kind="uniform")
        s = from_spikes(g, [(1.0, 2.0)])
        assert s.counts[-1] == 2.0
        assert s.atom == 0.0

    def test_negative_count_rejected(self):
        with pytest.raises(DomainError):
            from_spikes(build_grid(4, kind="uniform"), [(0.5, -1.0)])


class TestMomentsAndPairing:
    def test_pure_atom_moments_are_one(self):
        g = build_grid(4, kind="uniform")
        s = StateMeasure(grid=g, counts=np.zeros(4), atom=1.0)
        for lam in (-1.0, 0.0, 0.5, 2.0):
            assert moment_m(s, lam) == 1.0

    def test_single_cell_first_moment(self):
        g = build_grid(2, kind="uniform", lattice=True)  # pivots 0.5, 1.0
        s = StateMeasure(grid=g, counts=np.array([2.0, 0.0]), atom=0.0)
        assert moment_m(s, 1.0) == 1.0

    def test_count_moment_equals_total_variation(self):
        g = build_grid(5, kind="uniform")
        s = StateMeasure(grid=g, counts=np.abs(np.sin(np.arange(5.0))), atom=0.4)
        assert moment_m(s, 0.0) == pytest.approx(s.tv(), abs=0)
        assert moment_m(s, 0.0) == pytest.approx(s.total, abs=0)

    def test_pairing_with_identity_on_atom(self):
        g = build_grid(4, kind="uniform")
        s = StateMeasure(grid=g, counts=np.zeros(4), atom=1.0)
        assert pair_test(s, piecewise_linear([1.0], [1.0])) == 1.0

    def test_pairing_with_zero_function(self):
        s = from_density(build_grid(10, kind="uniform"), lambda x: np.ones_like(x))
        assert pair_test(s, piecewise_linear([1.0], [0.0])) == 0.0

    def test_pairing_identity_approximates_first_moment_integral(self):
        s = from_density(build_grid(100, kind="uniform"), lambda x: np.ones_like(x))
        assert pair_test(s, piecewise_linear([1.0], [1.0])) == pytest.approx(0.5, abs=1e-4)

    def test_measure_below_counts_small_pivots(self):
        g = build_grid(4, kind="uniform", lattice=True)  # pivots .25 .5 .75 1
        s = StateMeasure(grid=g, counts=np.array([1.0, 2.0, 4.0, 8.0]), atom=16.0)
        assert measure_below(s, 0.6) == 3.0
        assert measure_below(s, 2.0) == 15.0  # atom excluded by definition

    @given(
        counts=st.lists(
            st.floats(min_value=0.0, max_value=10.0, allow_nan=False), min_size=6, max_size=6
        ),
        atom=st.floats(min_value=0.0, max_value=5.0, allow_nan=False),
        lams=st.tuples(
            st.floats(min_value=-1.0, max_value=3.0, allow_nan=False),
            st.floats(min_value=-1.0, max_value=3.0, allow_nan=False),
        ),
    )
    @settings(max_examples=60, deadline=None)
    def test_moment_nonincreasing_in_order(self, counts, atom, lams):
        g = build_grid(6, kind="uniform")
        s = StateMeasure(grid=g, counts=np.array(counts), atom=atom)
        lo, hi = min(lams), max(lams)
        m_lo, m_hi = moment_m(s, lo), moment_m(s, hi)
        assert m_hi <= m_lo * (1.0 + 1e-12) + 1e-12

    @given(
        c1=st.lists(
            st.floats(min_value=0.0, max_value=5.0, allow_nan=False), min_size=6, max_size=6
        ),
        c2=st.lists(
            st.floats(min_value=0.0, max_value=5.0, allow_nan=False), min_size=6, max_size=6
        ),
        a=st.floats(min_value=0.0, max_value=3.0, allow_nan=False),
        b=st.floats(min_value=0.0, max_value=3.0, allow_nan=False),
        scale=st.floats(min_value=-4.0, max_value=4.0, allow_nan=False),
    )
    @settings(max_examples=60, deadline=None)
    def test_pairing_is_bilinear(self, c1, c2, a, b, scale):
        g = build_grid(6, kind="uniform")
        s1 = StateMeasure(grid=g, counts=np.array(c1), atom=0.5)
        s2 = StateMeasure(grid=g, counts=np.array(c2), atom=1.5)
        combo = StateMeasure(
            grid=g, counts=a * s1.counts + b * s2.counts, atom=a * s1.atom + b * s2.atom
        )
        phi = piecewise_linear([0.3, 0.7, 1.0], [1.0, -0.5, 0.25])
        lhs = pair_test(combo, phi)
        rhs = a * pair_test(s1, phi) + b * pair_test(s2, phi)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)
        # Linearity in the function: scaling every breakpoint value.
        phi_scaled = piecewise_linear(phi.breakpoints, scale * phi.values)
        assert pair_test(s1, phi_scaled) == pytest.approx(
            scale * pair_test(s1, phi), rel=1e-9, abs=1e-9
        )


class TestTestFunction:
    def test_exact_lipschitz_and_sup(self):
        phi = piecewise_linear([0.25, 1.0], [0.5, 0.5])
        assert phi.lip == 2.0
        assert phi.sup == 0.5

    def test_vanishes_at_zero_and_extends_constant(self):
        phi = piecewise_linear([0.5, 1.0], [1.0, -0.25])
        assert phi(0.0) == 0.0
        assert phi(2.0) == phi(1.0) == -0.25

    def test_invalid_constructions_rejected(self):
        with pytest.raises(ConfigError):
            piecewise_linear([], [])
        with pytest.raises(ConfigError):
            piecewise_linear([0.5, 0.25], [1.0, 1.0])
        with pytest.raises(ConfigError):
            piecewise_linear([0.0, 1.0], [1.0, 1.0])
        with pytest.raises(ConfigError):
            piecewise_linear([1.0], [np.inf])

    def test_battery_is_normalized_and_deterministic(self):
        battery = function_battery(20, seed=7)
        again = function_battery(20, seed=7)
        assert len(battery) == 20
        for phi, psi in zip(battery, again):
            assert phi(0.0) == 0.0
            assert phi.sup <= 1.0 + 1e-12
            assert np.array_equal(phi.breakpoints, psi.breakpoints)
            assert np.array_equal(phi.values, psi.values)


class TestTrajectory:
    def test_times_must_increase(self):
        g = build_grid(4, kind="uniform")
        traj = Trajectory(grid=g)
        s = from_density(g, lambda x: np.ones_like(x))
        traj.append(0.0, s)
        traj.append(0.5, s)
        with pytest.raises(ConfigError):
            traj.append(0.5, s)
        assert len(traj) == 2

    def test_state_lookup_by_time(self):
        g = build_grid(4, kind="uniform")
        traj = Trajectory(grid=g)
        s0 = from_density(g, lambda x: np.ones_like(x))
        s1 = from_density(g, lambda x: 2.0 * np.ones_like(x))
        traj.append(0.0, s0)
        traj.append(1.0, s1)
        assert traj.state_at(1.0) is s1
        with pytest.raises(KeyError):
            traj.state_at(0.3)

    def test_moment_series(self):
        g = build_grid(4, kind="uniform")
        traj = Trajectory(grid=g)
        traj.append(0.0, from_density(g, lambda x: np.ones_like(x)))
        traj.append(1.0, from_density(g, lambda x: 3.0 * np.ones_like(x)))
        assert traj.moment_series(0.0) == pytest.approx([1.0, 3.0], abs=1e-12)

    def test_foreign_grid_rejected(self):
        g = build_grid(4, kind="uniform")
        other = build_grid(5, kind="uniform")
        traj = Trajectory(grid=g)
        with pytest.raises(ConfigError):
            traj.append(0.0, from_density(other, lambda x: np.ones_like(x)))


class TestStateCsv:
    def test_round_trip_is_exact(self, tmp_path):
        g = build_grid(5, kind="geometric", ratio=1.7)
        s = StateMeasure(grid=g, counts=np.array([0.1, 0.2, 1.0 / 3.0, 0.0, 2.5]), atom=0.3)
        path = tmp_path / "state.csv"
        save_state_csv(s, path)
        back = load_state_csv(path)
        assert np.array_equal(back.grid.edges, g.edges)
        assert np.array_equal(back.grid.pivots, g.pivots)
        assert np.array_equal(back.counts, s.counts)
        assert back.atom == s.atom

    def test_load_against_known_grid(self, tmp_path):
        g = build_grid(6, kind="uniform", lattice=True)
        s = from_density(g, lambda x: np.exp(-x))
        path = tmp_path / "state.csv"
        save_state_csv(s, path)
        back = load_state_csv(path, grid=g)
        assert back.grid is g
        assert np.array_equal(back.counts, s.counts)

    def test_rejects_foreign_header(self, tmp_path):
        path = tmp_path / "bogus.csv"
        path.write_text("t,dt,m0\n0,0.1,1\n")
        with pytest.raises(ConfigError):
            load_state_csv(path)
