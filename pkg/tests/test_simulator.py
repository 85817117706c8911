"""Time-stepper tests: CFL policy, exact equilibrium preservation, discrete
conservation, positivity/retry policy, the acoustic signal-speed oracle, and
2-D periodic topology."""

import numpy as np
import pytest

from nsfsim import operators as ops
from nsfsim import simulator as sim
from nsfsim.grids import FluidState, Grid1D, Grid2D, StepControl
from nsfsim.simulator import ImplicitSolveError, PositivityError, cfl_dt, run, step
from nsfsim.stationary import ProblemConfig, solve_rb_pipeline, static_uniform
from nsfsim.thermo import GasModel, TransportModel, internal_energy, sound_speed

GAS = GasModel()
TR = TransportModel()


def uniform_state(n=64, rho=1.0, theta=1.0):
    grid = Grid1D(n=n, theta_bottom=theta, theta_top=theta)
    return FluidState(
        grid=grid, t=0.0, rho=np.full(n, rho), theta=np.full(n, theta), u=np.zeros(n + 1)
    )


def rb_reference(n=64):
    grid = Grid1D(n=n, theta_bottom=1.05, theta_top=1.0)
    config = ProblemConfig(grid=grid, m0=1.0, g=0.01)
    return solve_rb_pipeline(config, GAS, TR), config


# ---------------------------------------------------------------------------
# CFL policy
# ---------------------------------------------------------------------------


def test_cfl_rest_state_formula():
    state = uniform_state(n=64)
    control = StepControl(cfl_target=0.4, dt_max=10.0)
    cs = float(sound_speed(GAS, 1.0, 1.0))
    assert cfl_dt(state, control, GAS) == pytest.approx(0.4 * (1.0 / 64) / cs, rel=1e-12)


def test_cfl_halves_with_resolution():
    control = StepControl(cfl_target=0.4, dt_max=10.0)
    dt_a = cfl_dt(uniform_state(n=64), control, GAS)
    dt_b = cfl_dt(uniform_state(n=128), control, GAS)
    assert dt_b == pytest.approx(0.5 * dt_a, rel=1e-12)


def test_cfl_decreases_with_bulk_velocity():
    control = StepControl(cfl_target=0.4, dt_max=10.0)
    state = uniform_state(n=64)
    moving = state.copy()
    moving.u[1:-1] = 1.0
    assert cfl_dt(moving, control, GAS) < cfl_dt(state, control, GAS)


def test_cfl_clamps_to_bounds():
    state = uniform_state(n=64)
    assert cfl_dt(state, StepControl(dt_min=1e-5, dt_max=1e-4), GAS) == 1e-4
    assert cfl_dt(state, StepControl(dt_min=0.05, dt_max=0.2), GAS) == 0.05


# ---------------------------------------------------------------------------
# Equilibrium preservation and conservation
# ---------------------------------------------------------------------------


def test_static_uniform_is_fixed_point():
    grid = Grid1D(n=48, theta_bottom=1.0, theta_top=1.0)
    state = static_uniform(ProblemConfig(grid=grid, m0=2.0)).as_fluid_state()
    out = step(state, 5e-3, GAS, TR, None)
    assert np.array_equal(out.rho, state.rho)
    assert np.max(np.abs(out.theta - state.theta)) < 1e-14
    assert np.max(np.abs(out.u)) < 1e-15


def test_rb_stationary_is_fixed_point():
    reference, config = rb_reference(n=64)
    state = reference.as_fluid_state()
    G = config.potential_field()
    for _ in range(20):
        state = step(state, 2e-3, GAS, TR, G)
    assert np.max(np.abs(state.rho - reference.rho)) < 1e-13
    assert np.max(np.abs(state.theta - reference.theta)) < 1e-13
    assert np.max(np.abs(state.u)) < 1e-13


def test_mass_conserved_on_random_state():
    n = 64
    grid = Grid1D(n=n, theta_bottom=1.0, theta_top=1.0)
    x = grid.centers()
    rng = np.random.default_rng(4)
    state = FluidState(
        grid=grid,
        t=0.0,
        rho=1.0 + 0.3 * np.sin(2 * np.pi * x) + 0.05 * rng.standard_normal(n),
        theta=1.0 + 0.2 * np.cos(2 * np.pi * x) ** 2,
        u=np.concatenate([[0.0], 0.2 * np.sin(np.pi * grid.faces()[1:-1]), [0.0]]),
    )
    m0 = state.total_mass()
    control = StepControl(cfl_target=0.4)
    for _ in range(100):
        state = step(state, cfl_dt(state, control, GAS, TR), GAS, TR, None)
    assert abs(state.total_mass() - m0) / m0 < 1e-13
    assert np.all(state.rho > 0.0)
    assert np.all(state.theta > 0.0)


def sharp_transport_state(n=64):
    """Alternating density with a uniform interior stream: an oversized
    upwind step is guaranteed to empty the light cells."""
    grid = Grid1D(n=n, theta_bottom=1.0, theta_top=1.0)
    rho = np.where(np.arange(n) % 2 == 0, 0.1, 1.9)
    u = np.zeros(n + 1)
    u[1:-1] = 1.0
    return FluidState(grid=grid, t=0.0, rho=rho, theta=np.ones(n), u=u)


def test_positivity_never_clamped():
    # an oversized forced step must raise, not clamp
    with pytest.raises(PositivityError) as err:
        step(sharp_transport_state(), 0.2, GAS, TR, None)
    assert err.value.quantity in ("rho", "theta", "energy")
    assert isinstance(err.value.cell, int)


# ---------------------------------------------------------------------------
# Acoustic signal speed (peak-tracking oracle)
# ---------------------------------------------------------------------------


def test_sound_wave_speed_matches_thermo_oracle():
    # nearly ideal transport so the wave is adiabatic but the highest modes
    # stay damped; an isothermal initial density bump splits into two
    # acoustic pulses whose tracked peak travels at the analytic sound speed
    transport = TransportModel(mu0=2e-3, eta0=0.0, kappa0=1e-2, beta=7.0)
    n = 512
    grid = Grid1D(n=n, theta_bottom=1.0, theta_top=1.0)
    x = grid.centers()
    bump = 1e-6 * np.exp(-(((x - 0.3) / 0.05) ** 2))
    state = FluidState(
        grid=grid, t=0.0, rho=1.0 + bump - bump.mean(), theta=np.ones(n), u=np.zeros(n + 1)
    )
    control = StepControl(cfl_target=0.35, dt_max=1.0)
    times, peaks = [], []
    for target in np.arange(0.07, 0.151, 0.01):
        while state.t < target - 1e-12:
            dt = min(cfl_dt(state, control, GAS, transport), target - state.t)
            state = step(state, dt, GAS, transport, None)
        signal = state.rho - np.mean(state.rho)
        idx = int(np.argmax(np.where(x > 0.42, signal, -np.inf)))
        y0, y1, y2 = signal[idx - 1], signal[idx], signal[idx + 1]
        times.append(state.t)
        peaks.append(x[idx] + 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2) * grid.dx)
    speed = float(np.polyfit(times, peaks, 1)[0])
    expected = float(sound_speed(GAS, 1.0, 1.0))
    assert abs(speed - expected) / expected < 0.02


# ---------------------------------------------------------------------------
# Implicit solves
# ---------------------------------------------------------------------------


def test_implicit_heat_solve_residual_contract():
    n = 64
    grid = Grid1D(n=n, theta_bottom=1.0, theta_top=1.0)
    rng = np.random.default_rng(8)
    rho = 1.0 + 0.2 * rng.random(n)
    theta = 1.0 + 0.3 * rng.random(n)
    e_star = rho * internal_energy(GAS, rho, theta) * (1.0 + 0.05 * rng.standard_normal(n))
    dt = 1e-3
    theta_new = sim._implicit_heat_1d(grid, GAS, TR, rho, e_star, theta, dt)
    resid = rho * internal_energy(GAS, rho, theta_new) - dt * ops.kirchhoff_div_1d(
        grid, TR, theta_new
    ) - e_star
    assert float(np.max(np.abs(resid))) < 1e-10 * max(1.0, float(np.max(np.abs(e_star))))


def test_implicit_velocity_solve_damps_and_preserves_zero():
    n = 32
    grid = Grid1D(n=n, theta_bottom=1.0, theta_top=1.0)
    theta = np.ones(n)
    rb = np.ones(n - 1)
    zero = sim._solve_velocity_1d(grid, TR, theta, rb, np.zeros(n - 1), 1e-2)
    assert np.all(zero == 0.0)
    kicked = sim._solve_velocity_1d(grid, TR, theta, rb, np.sin(np.pi * grid.faces()[1:-1]), 1e-2)
    assert np.max(np.abs(kicked)) < 1.0  # backward Euler contracts


# ---------------------------------------------------------------------------
# Trajectory driver: retries, aborts, cadence
# ---------------------------------------------------------------------------


def test_run_retry_path_halves_and_completes():
    # dt_min = dt_max forces an oversized step; the driver must halve at
    # least once per step and still reach the horizon
    control = StepControl(cfl_target=0.9, dt_min=0.2, dt_max=0.2, max_retries=12)
    result = run(sharp_transport_state(), 0.03, control, GAS, TR, None)
    assert not result.aborted
    assert result.retries >= 1
    assert result.final_state.t >= 0.03 - 1e-12
    assert np.all(result.final_state.rho > 0.0)


def test_run_aborts_after_retry_budget():
    control = StepControl(cfl_target=0.9, dt_min=0.2, dt_max=0.2, max_retries=0)
    result = run(sharp_transport_state(), 1.0, control, GAS, TR, None)
    assert result.aborted
    assert result.abort_reason
    assert result.final_state.t == 0.0


def test_run_sampling_cadence():
    reference, config = rb_reference(n=32)
    state = reference.as_fluid_state()
    seen = []

    def diagnostics(s):
        seen.append(s.t)
        return s.t

    result = run(
        state, 0.1, StepControl(), GAS, TR, config.potential_field(),
        diagnostics=diagnostics, cadence=0.02,
    )
    assert seen[0] == 0.0
    assert seen[-1] == pytest.approx(0.1, abs=1e-9)
    assert len(seen) == 6
    assert len(result.samples) == len(seen)


# ---------------------------------------------------------------------------
# 2-D slab
# ---------------------------------------------------------------------------


def slab_reference(nx=8, nz=8):
    grid = Grid2D(nx=nx, nz=nz, theta_bottom=1.05, theta_top=1.0)
    config = ProblemConfig(grid=grid, m0=grid.volume, g=(0.0, 0.01))
    return solve_rb_pipeline(config, GAS, TR), config


def test_2d_stationary_is_fixed_point():
    reference, config = slab_reference()
    state = reference.as_fluid_state()
    G = config.potential_field()
    for _ in range(10):
        state = step(state, 4e-4, GAS, TR, G)
    assert np.max(np.abs(state.rho - reference.rho)) < 1e-13
    assert np.max(np.abs(state.theta - reference.theta)) < 1e-13
    assert np.max(np.abs(state.u)) < 1e-13
    assert np.max(np.abs(state.w)) < 1e-13


def test_2d_mass_conservation_and_positivity():
    reference, config = slab_reference()
    state = reference.as_fluid_state()
    X, Z = np.meshgrid(state.grid.x_centers(), state.grid.z_centers(), indexing="ij")
    pert = 0.01 * np.sin(2 * np.pi * X / state.grid.lx) * np.sin(np.pi * Z)
    state.rho = state.rho + (pert - pert.mean())
    m0 = state.total_mass()
    control = StepControl()
    G = config.potential_field()
    for _ in range(50):
        state = step(state, cfl_dt(state, control, GAS, TR), GAS, TR, G)
    assert abs(state.total_mass() - m0) / m0 < 1e-13
    assert np.all(state.rho > 0.0) and np.all(state.theta > 0.0)


def test_2d_shift_equivariance():
    # advancing a one-cell-shifted initial state equals shifting the
    # advanced solution: the periodic wrap has no seam
    reference, config = slab_reference(nx=10, nz=6)
    G = config.potential_field()
    state = reference.as_fluid_state()
    X, Z = np.meshgrid(state.grid.x_centers(), state.grid.z_centers(), indexing="ij")
    pert = 0.01 * np.sin(2 * np.pi * X / state.grid.lx) * np.sin(np.pi * Z)
    state.rho = state.rho + (pert - pert.mean())
    state.theta = state.theta + 0.01 * np.cos(2 * np.pi * X / state.grid.lx) * np.sin(np.pi * Z)

    def roll(s):
        out = s.copy()
        for name in ("rho", "theta", "u", "w"):
            setattr(out, name, np.roll(getattr(s, name), 1, axis=0))
        return out

    control = StepControl(dt_max=5e-4)
    a = run(state, 0.02, control, GAS, TR, G).final_state
    b = run(roll(state), 0.02, control, GAS, TR, G).final_state
    worst = max(
        float(np.max(np.abs(np.roll(getattr(a, name), 1, axis=0) - getattr(b, name))))
        for name in ("rho", "theta", "u", "w")
    )
    assert worst < 1e-12


# ---------------------------------------------------------------------------
# Optional minmod reconstruction (config flag; column only)
# ---------------------------------------------------------------------------


def test_minmod_flux_second_order_on_smooth_data():
    # the reconstructed face flux converges at second order where the donor
    # cell is first order
    errors = {"upwind": [], "minmod": []}
    for n in (64, 128, 256):
        grid = Grid1D(n=n, theta_bottom=1.0, theta_top=1.0)
        x = grid.centers()
        q = 1.0 + 0.3 * np.sin(2 * np.pi * x)
        u = np.full(n + 1, 0.7)
        u[0] = u[-1] = 0.0
        exact = 0.7 * (1.0 + 0.3 * np.sin(2 * np.pi * grid.faces()[1:-1]))
        for scheme in errors:
            flux = ops.upwind_flux_1d(u, q, scheme)
            # skip wall-adjacent faces where the slope is dropped
            errors[scheme].append(float(np.max(np.abs(flux[2:-2] - exact[1:-1]))))
    up = np.log2(np.array(errors["upwind"][:-1]) / np.array(errors["upwind"][1:]))
    mm = np.log2(np.array(errors["minmod"][:-1]) / np.array(errors["minmod"][1:]))
    assert np.all(np.abs(up - 1.0) < 0.3)
    assert np.all(mm > 1.6)


def test_minmod_step_preserves_equilibrium_and_mass():
    reference, config = rb_reference(n=64)
    state = reference.as_fluid_state()
    G = config.potential_field()
    for _ in range(20):
        state = step(state, 2e-3, GAS, TR, G, convection="minmod")
    assert np.max(np.abs(state.rho - reference.rho)) < 1e-13
    assert np.max(np.abs(state.theta - reference.theta)) < 1e-13

    # perturbed run conserves mass and positivity as with donor cell
    x = state.grid.centers()
    state.rho = state.rho + 0.01 * (np.sin(2 * np.pi * x) - np.mean(np.sin(2 * np.pi * x)))
    m0 = state.total_mass()
    control = StepControl()
    for _ in range(50):
        state = step(state, cfl_dt(state, control, GAS, TR), GAS, TR, G, convection="minmod")
    assert abs(state.total_mass() - m0) / m0 < 1e-13
    state.validate()
