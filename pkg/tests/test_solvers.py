"""Reference solver tests against closed-form and structural oracles.

Each solver is held to an oracle that does not share code with it:
single-mode exponential decay, circular shifts for pure advection,
semigroup composition, dt-halving Richardson ratios for the stepper,
and telescoping mass sums for the finite-volume scheme.
"""

import numpy as np
import pytest

from zeromode.grid import Boundary, GridField, GridSpec
from zeromode.initial_conditions import chebyshev_ic, grf_ic
from zeromode.solvers import (
    ConservationLawSpec,
    SolverError,
    cfl_number,
    dam_break_state,
    solve_allen_cahn,
    solve_convdiff_exact,
    solve_diffusion_exact,
    solve_heat_neumann,
    solve_shallow_water,
    verify_flux_balance,
)

ZERO_FLUX_LAW = ConservationLawSpec("test", flux="whatever", source="zero", boundary_flux_zero=True)


class TestInitialConditions:
    def test_chebyshev_deterministic_and_smooth(self):
        grid = GridSpec.square(32)
        a = chebyshev_ic(123, grid)
        b = chebyshev_ic(123, grid)
        assert (a.values == b.values).all()
        assert not (a.values == chebyshev_ic(124, grid).values).all()

    def test_chebyshev_matches_polynomial_oracle(self):
        """Evaluate the double sum directly from the recurrence."""
        grid = GridSpec.square(8, length=2.0)
        field = chebyshev_ic(5, grid, order=3)
        coeff = np.random.default_rng(5).uniform(-1.0, 1.0, (3, 3))
        xi = 2.0 * grid.coords(0) / 2.0 - 1.0

        def cheb_t(k, x):
            if k == 0:
                return np.ones_like(x)
            if k == 1:
                return x
            tm2, tm1 = np.ones_like(x), x
            for _ in range(2, k + 1):
                tm2, tm1 = tm1, 2 * x * tm1 - tm2
            return tm1

        expected = np.zeros((8, 8))
        for i in range(3):
            for j in range(3):
                expected += coeff[i, j] * np.outer(cheb_t(i, xi), cheb_t(j, xi))
        np.testing.assert_allclose(field.values[0], expected, atol=1e-12)

    def test_grf_real_zero_mean_deterministic(self):
        grid = GridSpec.square(32)
        f = grf_ic(7, grid)
        assert abs(f.values.mean()) < 1e-12
        assert (f.values == grf_ic(7, grid).values).all()

    def test_grf_mode_variance_ratio(self):
        """Sampled mode variances must follow the declared spectral density.

        Monte-Carlo oracle: the ratio of variances at |n|=1 and |n|=2 equals
        (4 pi^2 + tau^2)^alpha-ratio analytically; 5% tolerance at 10^4 draws.
        """
        grid = GridSpec.square(16)
        tau, alpha = 5.0, 2.0
        c1 = np.empty(10_000, dtype=np.complex128)
        c2 = np.empty(10_000, dtype=np.complex128)
        for s in range(10_000):
            spec = np.fft.fftn(grf_ic(s, grid, tau, alpha).values[0]) / grid.n_points
            c1[s] = spec[1, 0]
            c2[s] = spec[2, 0]
        measured = np.mean(np.abs(c1) ** 2) / np.mean(np.abs(c2) ** 2)
        k1 = (2 * np.pi * 1) ** 2
        k2 = (2 * np.pi * 2) ** 2
        expected = ((k2 + tau**2) / (k1 + tau**2)) ** alpha
        assert measured == pytest.approx(expected, rel=0.05)

    def test_grf_needs_periodic_grid(self):
        with pytest.raises(ValueError, match="periodic"):
            grf_ic(0, GridSpec.square(8, boundary=Boundary.WALL))


class TestDiffusionExact:
    def test_single_mode_decay_oracle(self):
        grid = GridSpec.square(32, length=2.0)
        x, y = grid.meshgrid()
        ic = GridField.from_scalar(grid, np.cos(2 * np.pi * 3 * x / 2.0))
        d_coeff, t = 0.05, 0.7
        out = solve_diffusion_exact(ic, d_coeff, t)
        factor = np.exp(-d_coeff * (2 * np.pi * 3 / 2.0) ** 2 * t)
        np.testing.assert_allclose(out.values, ic.values * factor, atol=1e-12)

    def test_mean_preserved_and_t_zero_identity(self):
        grid = GridSpec.square(16)
        ic = chebyshev_ic(0, grid)
        out = solve_diffusion_exact(ic, 0.01, 2.0)
        assert out.values.mean() == pytest.approx(ic.values.mean(), abs=1e-14)
        np.testing.assert_allclose(solve_diffusion_exact(ic, 0.01, 0.0).values, ic.values, atol=1e-12)

    def test_semigroup_property(self):
        grid = GridSpec.square(16)
        ic = chebyshev_ic(1, grid)
        a = solve_diffusion_exact(ic, 0.02, 0.9)
        b = solve_diffusion_exact(solve_diffusion_exact(ic, 0.02, 0.4), 0.02, 0.5)
        np.testing.assert_allclose(a.values, b.values, atol=1e-12)

    def test_rejects_negative_time(self):
        ic = GridField.constant(GridSpec.square(8), 1.0)
        with pytest.raises(ValueError):
            solve_diffusion_exact(ic, 0.01, -1.0)


class TestConvectionDiffusion:
    def test_pure_advection_is_circular_shift(self):
        """With D=0 and v=(1,0), time dx exactly rotates the samples."""
        grid = GridSpec.square(16)
        ic = chebyshev_ic(3, grid)
        dx = grid.spacing[0]
        out = solve_convdiff_exact(ic, 0.0, (1.0, 0.0), 4 * dx)
        np.testing.assert_allclose(out.values[0], np.roll(ic.values[0], 4, axis=0), atol=1e-10)

    def test_reduces_to_diffusion_at_zero_velocity(self):
        grid = GridSpec.square(16)
        ic = chebyshev_ic(4, grid)
        a = solve_convdiff_exact(ic, 0.03, (0.0, 0.0), 0.5)
        b = solve_diffusion_exact(ic, 0.03, 0.5)
        np.testing.assert_allclose(a.values, b.values, atol=1e-13)

    def test_mean_preserved(self):
        grid = GridSpec.square(16)
        ic = chebyshev_ic(5, grid)
        out = solve_convdiff_exact(ic, 0.01, (1.0, 0.5), 0.1)
        assert out.values.mean() == pytest.approx(ic.values.mean(), abs=1e-14)


class TestHeatNeumann:
    def test_cosine_eigenmode_decay(self):
        grid = GridSpec.square(32, boundary=Boundary.NEUMANN)
        x, _ = grid.meshgrid()
        ic = GridField.from_scalar(grid, np.cos(np.pi * x / 1.0))
        d_coeff, t = 0.01, 1.0
        out = solve_heat_neumann(ic, d_coeff, t)
        np.testing.assert_allclose(out.values, ic.values * np.exp(-d_coeff * np.pi**2 * t), atol=1e-10)

    def test_mean_preserved_on_random_ic(self):
        grid = GridSpec.square(24, boundary=Boundary.NEUMANN)
        ic = chebyshev_ic(6, grid)
        out = solve_heat_neumann(ic, 0.01, 0.8)
        assert out.values.mean() == pytest.approx(ic.values.mean(), abs=1e-13)

    def test_long_time_limit_is_uniform_mean(self):
        grid = GridSpec.square(16, boundary=Boundary.NEUMANN)
        ic = chebyshev_ic(7, grid)
        out = solve_heat_neumann(ic, 0.1, 500.0)
        np.testing.assert_allclose(out.values, ic.values.mean(), atol=1e-8)

    def test_rejects_periodic_grid(self):
        with pytest.raises(ValueError, match="Neumann"):
            solve_heat_neumann(GridField.constant(GridSpec.square(8), 1.0), 0.01, 1.0)


class TestAllenCahn:
    def smooth_ic(self, grid, amplitude=0.4):
        x, y = grid.meshgrid()
        u = amplitude * (np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y) + 0.3)
        return GridField.from_scalar(grid, u)

    def test_mass_pinned_over_thousand_steps(self):
        grid = GridSpec.square(32)
        ic = chebyshev_ic(8, grid)
        frames = solve_allen_cahn(ic, 0.01, "dw", dt=1e-4, n_steps=1000)
        assert abs(frames[-1].mean() - frames[0].mean()) < 1e-12

    def test_unprojected_drift_is_small_but_trackable(self):
        grid = GridSpec.square(32)
        ic = chebyshev_ic(8, grid)
        frames = solve_allen_cahn(ic, 0.01, "dw", dt=1e-4, n_steps=1000, project=False)
        drift = abs(frames[-1].mean() - frames[0].mean())
        assert drift < 1e-8  # mean-free nonlinearity keeps it near rounding

    def test_first_order_dt_convergence(self):
        """Richardson oracle: halving dt must halve the final-state change."""
        grid = GridSpec.square(32)
        ic = self.smooth_ic(grid)
        t_final = 0.02
        finals = [
            solve_allen_cahn(ic, 0.01, "dw", dt=t_final / n, n_steps=n)[-1]
            for n in (50, 100, 200)
        ]
        e1 = np.linalg.norm(finals[0] - finals[1])
        e2 = np.linalg.norm(finals[1] - finals[2])
        assert 1.7 <= e1 / e2 <= 2.3

    def test_fh_matches_dw_where_potentials_agree(self):
        # both potentials are odd and smooth near zero; just check fh runs and conserves
        grid = GridSpec.square(32)
        ic = chebyshev_ic(9, grid)
        scaled = GridField(grid, 0.9 * ic.values / np.abs(ic.values).max())
        frames = solve_allen_cahn(scaled, 0.01, "fh", dt=1e-4, n_steps=500, snapshot_stride=100)
        assert frames.shape[0] == 6
        assert abs(frames[-1].mean() - frames[0].mean()) < 1e-12
        assert np.abs(frames).max() < 1.0

    def test_fh_rejects_state_in_clamp_band(self):
        grid = GridSpec.square(8)
        ic = GridField.constant(grid, 0.0)
        ic.values[0, 0, 0] = 0.9999999  # inside the clamp band
        ic.values[0, 1, 1] = -0.5
        with pytest.raises(SolverError) as err:
            solve_allen_cahn(GridField(grid, ic.values), 0.01, "fh", dt=1e-4, n_steps=10)
        assert err.value.step == 1

    def test_unknown_potential_rejected(self):
        grid = GridSpec.square(8)
        with pytest.raises(ValueError, match="potential"):
            solve_allen_cahn(GridField.constant(grid, 0.1), 0.01, "quartic", dt=1e-4, n_steps=1)


class TestShallowWater:
    def grid(self, n=32):
        return GridSpec.square(n, boundary=Boundary.WALL)

    def test_lake_at_rest_is_steady(self):
        grid = self.grid(16)
        state = np.zeros((3, 16, 16))
        state[0] = 1.0
        frames = solve_shallow_water(state, grid, g_r=1.0, dt=0.005, n_steps=50)
        np.testing.assert_allclose(frames[-1], state, atol=1e-14)

    def test_dam_break_mass_conserved(self):
        grid = self.grid()
        state = dam_break_state(grid, radius=0.2, h_inner=2.0, h_outer=1.0)
        frames = solve_shallow_water(state, grid, g_r=1.0, dt=0.005, n_steps=60, snapshot_stride=10)
        masses = frames[:, 0].sum(axis=(1, 2)) * grid.cell_volume
        assert np.abs(masses - masses[0]).max() / masses[0] < 1e-12

    def test_mirror_symmetry(self):
        grid = self.grid()
        state = dam_break_state(grid, center=(0.3, 0.5))
        mirrored = dam_break_state(grid, center=(0.7, 0.5))
        a = solve_shallow_water(state, grid, 1.0, 0.005, 40)[-1]
        b = solve_shallow_water(mirrored, grid, 1.0, 0.005, 40)[-1]
        np.testing.assert_allclose(a[0], b[0, ::-1, :], atol=1e-10)
        np.testing.assert_allclose(a[1], -b[1, ::-1, :], atol=1e-10)

    def test_initial_cfl_precondition(self):
        grid = self.grid()
        state = dam_break_state(grid)
        assert cfl_number(state, grid, 1.0, 0.005) <= 0.45
        with pytest.raises(ValueError, match="CFL"):
            solve_shallow_water(state, grid, 1.0, dt=0.05, n_steps=10)

    def test_positive_depth_required(self):
        grid = self.grid(8)
        state = np.zeros((3, 8, 8))
        with pytest.raises(ValueError, match="positive"):
            solve_shallow_water(state, grid, 1.0, 0.001, 1)


class TestFluxBalance:
    def test_residual_near_zero_for_exact_diffusion(self):
        grid = GridSpec.square(32)
        ic = chebyshev_ic(10, grid)
        times = np.linspace(0.0, 0.5, 11)
        traj = np.stack([solve_diffusion_exact(ic, 0.01, t).values for t in times])
        r = verify_flux_balance(traj, float(times[1]), grid, ZERO_FLUX_LAW)
        assert r.max() < 1e-12

    def test_residual_detects_leak(self):
        """Injected fault oracle: a decaying integral must show up in r(t)."""
        grid = GridSpec.square(16)
        ic = chebyshev_ic(11, grid)
        times = np.linspace(0.0, 0.5, 11)
        traj = np.stack([solve_diffusion_exact(ic, 0.01, t).values * np.exp(-t) for t in times])
        r = verify_flux_balance(traj, float(times[1]), grid, ZERO_FLUX_LAW)
        expected_rate = abs(ic.values.mean())  # d/dt exp(-t) E0 at t=0
        assert r.max() > 0.1 * expected_rate

    def test_needs_three_frames_and_zero_flux_law(self):
        grid = GridSpec.square(8)
        traj = np.zeros((2, 1, 8, 8))
        with pytest.raises(ValueError, match="3 frames"):
            verify_flux_balance(traj, 0.1, grid, ZERO_FLUX_LAW)
        law = ConservationLawSpec("open", flux="f", source="zero", boundary_flux_zero=False)
        with pytest.raises(ValueError, match="boundary"):
            verify_flux_balance(np.zeros((3, 1, 8, 8)), 0.1, grid, law)
