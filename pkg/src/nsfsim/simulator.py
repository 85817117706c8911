"""Semi-implicit time integration of the evolutionary system.

One step comprises, in order:

(i)   conservative first-order upwind update of rho (exact discrete mass
      conservation),
(ii)  momentum update: upwinded convection, central pressure gradient
      evaluated at the updated density (keeps the acoustic coupling neutrally
      stable), potential force, and a backward-Euler solve for the velocity
      diffusion with viscosities frozen at theta^n,
(iii) internal-energy update: upwind transport of rho*e, the sources
      S:Du - p div u at half-step velocities, and implicit Fourier diffusion
      as a nonlinear solve in theta through the conductivity primitive
      K(theta) (kappa ~ theta^beta is stiff),
(iv)  recovery of theta from rho*e by monotone scalar inversion per cell,
      which seeds the implicit solve,
(v)   boundary enforcement (no-slip walls, Dirichlet temperature traces).

Negative density or temperature is never clamped: a failed step raises
``PositivityError`` and the driver retries with half the step.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from . import operators as ops
from . import thermo
from .grids import FluidState, StepControl

__all__ = [
    "PositivityError",
    "ImplicitSolveError",
    "cfl_dt",
    "step",
    "run",
    "RunResult",
]


class PositivityError(RuntimeError):
    """A step produced a nonpositive density/temperature; retriable."""

    def __init__(self, quantity, cell, value):
        super().__init__(f"{quantity} became nonpositive at cell {cell}: {value}")
        self.quantity = quantity
        self.cell = cell
        self.value = value


class ImplicitSolveError(RuntimeError):
    """The implicit diffusion solve failed to converge."""


def cfl_dt(state: FluidState, control: StepControl, gas, transport=None) -> float:
    """Acoustic CFL estimate, clamped to [dt_min, dt_max].

    dt = cfl_target * min over cells of dx / (|u| + c_s) with the adiabatic
    sound speed from the thermodynamic partials.
    """
    g = state.grid
    cs = thermo.sound_speed(gas, state.rho, state.theta)
    if g.dimension == 1:
        speed = np.maximum(np.abs(state.u[:-1]), np.abs(state.u[1:])) + cs
        dt = control.cfl_target * float(np.min(g.dx / speed))
    else:
        ux = np.maximum(np.abs(state.u), np.abs(np.roll(state.u, -1, axis=0)))
        wz = np.maximum(np.abs(state.w[:, :-1]), np.abs(state.w[:, 1:]))
        rate = (ux + cs) / g.dx + (wz + cs) / g.dz
        dt = control.cfl_target * float(np.min(1.0 / rate))
        if transport is not None:
            # the 2-D split leaves the cross-stress terms explicit
            mu, eta, _ = thermo.transport(transport, state.theta)
            nu = (2.0 * mu + eta) / state.rho
            dt = min(dt, 0.25 * min(g.dx, g.dz) ** 2 / float(np.max(nu)))
    return float(np.clip(dt, control.dt_min, control.dt_max))


# ---------------------------------------------------------------------------
# Implicit heat solve (Newton in theta; off-diagonals are K-increments)
# ---------------------------------------------------------------------------

_HEAT_TOL = 1.0e-11
_HEAT_MAXITER = 50


def _implicit_heat_1d(grid, gas, transport, rho, e_star, theta0, dt):
    theta = theta0.copy()
    scale = max(1.0, float(np.max(np.abs(e_star))))
    lam = dt / grid.dx**2
    for _ in range(_HEAT_MAXITER):
        resid = thermo._volumetric_energy_raw(gas, rho, theta) - dt * ops.kirchhoff_div_1d(
            grid, transport, theta
        ) - e_star
        if float(np.max(np.abs(resid))) <= _HEAT_TOL * scale:
            return theta
        kappa = transport.kappa0 * (1.0 + theta**transport.beta)
        diag = thermo._volumetric_heat_capacity_raw(gas, rho, theta) + 2.0 * lam * kappa
        diag[0] += lam * kappa[0]      # wall half-cell stiffens the end rows
        diag[-1] += lam * kappa[-1]
        upper = np.zeros(grid.n)
        lower = np.zeros(grid.n)
        upper[1:] = -lam * kappa[1:]
        lower[:-1] = -lam * kappa[:-1]
        delta = solve_banded((1, 1), np.vstack([upper, diag, lower]), resid)
        new = theta - delta
        shrink = 1.0
        while np.any(new <= 0.0) and shrink > 1.0e-6:
            shrink *= 0.5
            new = theta - shrink * delta
        theta = new
    raise ImplicitSolveError("implicit heat solve did not converge in 1-D")


def _implicit_heat_2d(grid, gas, transport, rho, e_star, theta0, dt):
    nx, nz = grid.nx, grid.nz
    theta = theta0.copy()
    scale = max(1.0, float(np.max(np.abs(e_star))))
    lx = dt / grid.dx**2
    lz = dt / grid.dz**2
    idx = np.arange(nx * nz).reshape(nx, nz)
    for _ in range(_HEAT_MAXITER):
        resid = thermo._volumetric_energy_raw(gas, rho, theta) - dt * ops.kirchhoff_div_2d(
            grid, transport, theta
        ) - e_star
        if float(np.max(np.abs(resid))) <= _HEAT_TOL * scale:
            return theta
        kappa = transport.kappa0 * (1.0 + theta**transport.beta)
        diag = thermo._volumetric_heat_capacity_raw(gas, rho, theta) + 2.0 * lx * kappa + 2.0 * lz * kappa
        diag[:, 0] += lz * kappa[:, 0]
        diag[:, -1] += lz * kappa[:, -1]
        rows = [idx.ravel()]
        cols = [idx.ravel()]
        vals = [diag.ravel()]
        east = np.roll(idx, -1, axis=0)
        west = np.roll(idx, 1, axis=0)
        rows += [idx.ravel(), idx.ravel()]
        cols += [east.ravel(), west.ravel()]
        vals += [(-lx * np.roll(kappa, -1, axis=0)).ravel(), (-lx * np.roll(kappa, 1, axis=0)).ravel()]
        rows += [idx[:, :-1].ravel(), idx[:, 1:].ravel()]
        cols += [idx[:, 1:].ravel(), idx[:, :-1].ravel()]
        vals += [(-lz * kappa[:, 1:]).ravel(), (-lz * kappa[:, :-1]).ravel()]
        jac = coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nx * nz, nx * nz),
        ).tocsc()
        delta = splu(jac).solve(resid.ravel()).reshape(nx, nz)
        new = theta - delta
        shrink = 1.0
        while np.any(new <= 0.0) and shrink > 1.0e-6:
            shrink *= 0.5
            new = theta - shrink * delta
        theta = new
    raise ImplicitSolveError("implicit heat solve did not converge in 2-D")


# ---------------------------------------------------------------------------
# Implicit velocity solves
# ---------------------------------------------------------------------------


def _solve_velocity_1d(grid, transport, theta, rho_face, m_star, dt):
    ab = ops.viscous_banded_matrix_1d(grid, transport, theta, rho_face, dt)
    u = np.zeros(grid.n + 1)
    u[1:-1] = solve_banded((1, 1), ab, m_star)
    return u


def _laplacian_split_2d(grid, transport, theta, u, w):
    """Explicit remainder of the stress divergence after removing the
    component Laplacians div(mu grad .) that the backward-Euler solve absorbs."""
    dx, dz = grid.dx, grid.dz
    mu_c, _, _ = thermo.transport(transport, theta)
    mu_x = ops._corner_mu(grid, transport, theta)
    vx_full, vz_full = ops.viscous_rhs_2d(grid, transport, theta, u, w)

    # implicit cores
    gx = mu_c * (np.roll(u, -1, axis=0) - u) / dx
    lap_u = (gx - np.roll(gx, 1, axis=0)) / dx
    gu = np.empty((grid.nx, grid.nz + 1))
    gu[:, 1:-1] = mu_x[:, 1:-1] * (u[:, 1:] - u[:, :-1]) / dz
    gu[:, 0] = mu_x[:, 0] * 2.0 * u[:, 0] / dz
    gu[:, -1] = -mu_x[:, -1] * 2.0 * u[:, -1] / dz
    lap_u += (gu[:, 1:] - gu[:, :-1]) / dz

    gw = mu_x * (w - np.roll(w, 1, axis=0)) / dx
    lap_w = np.zeros_like(w)
    lap_w[:, 1:-1] = (np.roll(gw, -1, axis=0) - gw)[:, 1:-1] / dx
    gz = mu_c * (w[:, 1:] - w[:, :-1]) / dz
    lap_w[:, 1:-1] += (gz[:, 1:] - gz[:, :-1]) / dz
    return vx_full - lap_u, (vz_full - lap_w), mu_c, mu_x


def _solve_velocity_2d(grid, transport, theta, rho, m_star_u, m_star_w, dt, mu_c, mu_x):
    """Backward-Euler solve of rb*u - dt*div(mu grad u) = m* per component."""
    nx, nz = grid.nx, grid.nz
    dx, dz = grid.dx, grid.dz
    lx, lz = dt / dx**2, dt / dz**2

    # u system over all (nx, nz) x-faces
    rbu = 0.5 * (np.roll(rho, 1, axis=0) + rho)
    idx = np.arange(nx * nz).reshape(nx, nz)
    diag = rbu + lx * (mu_c + np.roll(mu_c, 1, axis=0)) + lz * (mu_x[:, 1:] + mu_x[:, :-1])
    diag[:, 0] += lz * mu_x[:, 0]       # ghost reflection doubles the wall link
    diag[:, -1] += lz * mu_x[:, -1]
    rows = [idx.ravel(), idx.ravel(), idx.ravel()]
    cols = [idx.ravel(), np.roll(idx, -1, axis=0).ravel(), np.roll(idx, 1, axis=0).ravel()]
    vals = [diag.ravel(), (-lx * mu_c).ravel(), (-lx * np.roll(mu_c, 1, axis=0)).ravel()]
    rows += [idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    cols += [idx[:, 1:].ravel(), idx[:, :-1].ravel()]
    vals += [(-lz * mu_x[:, 1:-1]).ravel(), (-lz * mu_x[:, 1:-1]).ravel()]
    a_u = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nx * nz, nx * nz),
    ).tocsc()
    u_new = splu(a_u).solve(m_star_u.ravel()).reshape(nx, nz)

    # w system over interior z-faces (nx, nz-1)
    rbw = 0.5 * (rho[:, :-1] + rho[:, 1:])
    idw = np.arange(nx * (nz - 1)).reshape(nx, nz - 1)
    mu_xw = mu_x[:, 1:-1]
    diag_w = rbw + lx * (np.roll(mu_xw, -1, axis=0) + mu_xw) + lz * (mu_c[:, 1:] + mu_c[:, :-1])
    rows = [idw.ravel(), idw.ravel(), idw.ravel()]
    cols = [idw.ravel(), np.roll(idw, -1, axis=0).ravel(), np.roll(idw, 1, axis=0).ravel()]
    vals = [diag_w.ravel(), (-lx * np.roll(mu_xw, -1, axis=0)).ravel(), (-lx * mu_xw).ravel()]
    rows += [idw[:, :-1].ravel(), idw[:, 1:].ravel()]
    cols += [idw[:, 1:].ravel(), idw[:, :-1].ravel()]
    vals += [(-lz * mu_c[:, 1:-1]).ravel(), (-lz * mu_c[:, 1:-1]).ravel()]
    a_w = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nx * (nz - 1), nx * (nz - 1)),
    ).tocsc()
    w_new = np.zeros((nx, nz + 1))
    w_new[:, 1:-1] = splu(a_w).solve(m_star_w[:, 1:-1].ravel()).reshape(nx, nz - 1)
    return u_new, w_new


# ---------------------------------------------------------------------------
# One step
# ---------------------------------------------------------------------------


def _check_positive(name, arr):
    if np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
        bad = np.asarray(arr)
        cell = int(np.argmin(np.where(np.isfinite(bad), bad, -np.inf)))
        raise PositivityError(name, cell, float(bad.ravel()[cell]))


def step(state: FluidState, dt: float, gas, transport, G=None, convection: str = "upwind") -> FluidState:
    """Advance one semi-implicit step of size dt; raises PositivityError on
    loss of positivity (retriable) and ImplicitSolveError on solver failure.

    ``convection`` selects the 1-D transport reconstruction ("upwind" or
    "minmod"); the 2-D slab always uses donor-cell upwind."""
    if state.grid.dimension == 1:
        return _step_1d(state, dt, gas, transport, G, convection)
    return _step_2d(state, dt, gas, transport, G)


def _step_1d(state, dt, gas, transport, G, convection="upwind"):
    grid = state.grid
    rho, theta, u = state.rho, state.theta, state.u
    dx = grid.dx

    flux_rho = ops.upwind_flux_1d(u, rho, convection)
    rho1 = rho - dt * np.diff(flux_rho) / dx
    _check_positive("rho", rho1)

    conv, dpdx, grav = ops.momentum_explicit_1d(grid, gas, G, rho1, theta, rho, u)
    m_star = 0.5 * (rho[:-1] + rho[1:]) * u[1:-1] - dt * (conv + dpdx - grav)
    rb1 = 0.5 * (rho1[:-1] + rho1[1:])
    u_new = _solve_velocity_1d(grid, transport, theta, rb1, m_star, dt)

    u_half = 0.5 * (u + u_new)
    evol = rho * thermo.internal_energy(gas, rho, theta)
    conv_e = np.diff(ops.upwind_flux_1d(u, evol, convection)) / dx
    div_half = (u_half[1:] - u_half[:-1]) / dx
    heat = ops.column_viscosity(transport, theta) * div_half**2
    work = thermo.pressure(gas, rho1, theta) * div_half
    e_star = evol + dt * (-conv_e + heat - work)

    floor = 1.5 * gas.p_inf * rho1 ** (5.0 / 3.0)
    if np.any(e_star <= floor):
        cell = int(np.argmin(e_star - floor))
        raise PositivityError("energy", cell, float(e_star[cell] - floor[cell]))

    theta_star = thermo.temperature_from_energy(gas, rho1, e_star, guess=theta)
    theta_new = _implicit_heat_1d(grid, gas, transport, rho1, e_star, theta_star, dt)
    _check_positive("theta", theta_new)
    return FluidState(grid=grid, t=state.t + dt, rho=rho1, theta=theta_new, u=u_new)


def _step_2d(state, dt, gas, transport, G):
    grid = state.grid
    rho, theta, u, w = state.rho, state.theta, state.u, state.w
    dx, dz = grid.dx, grid.dz

    rho1 = rho + dt * ops.mass_rhs_2d(grid, rho, u, w)
    _check_positive("rho", rho1)

    (conv_u, dpdx, grav_u), (conv_w, dpdz, grav_w) = ops.momentum_explicit_2d(
        grid, gas, G, rho1, theta, rho, u, w
    )
    rem_u, rem_w, mu_c, mu_x = _laplacian_split_2d(grid, transport, theta, u, w)
    rbu = 0.5 * (np.roll(rho, 1, axis=0) + rho)
    m_star_u = rbu * u - dt * (conv_u + dpdx - grav_u - rem_u)
    m_star_w = np.zeros_like(w)
    rbw = 0.5 * (rho[:, :-1] + rho[:, 1:])
    m_star_w[:, 1:-1] = rbw * w[:, 1:-1] - dt * (conv_w + dpdz - grav_w - rem_w)[:, 1:-1]
    u_new, w_new = _solve_velocity_2d(
        grid, transport, theta, rho1, m_star_u, m_star_w, dt, mu_c, mu_x
    )

    u_half = 0.5 * (u + u_new)
    w_half = 0.5 * (w + w_new)
    evol = rho * thermo.internal_energy(gas, rho, theta)
    fx_e = np.where(u > 0.0, u * np.roll(evol, 1, axis=0), u * evol)
    fz_e = np.zeros_like(w)
    wi = w[:, 1:-1]
    fz_e[:, 1:-1] = np.where(wi > 0.0, wi * evol[:, :-1], wi * evol[:, 1:])
    conv_e = (np.roll(fx_e, -1, axis=0) - fx_e) / dx + (fz_e[:, 1:] - fz_e[:, :-1]) / dz
    div_half = (np.roll(u_half, -1, axis=0) - u_half) / dx + (w_half[:, 1:] - w_half[:, :-1]) / dz
    heat = ops.shear_heating_2d(grid, transport, theta, u_half, w_half)
    work = thermo.pressure(gas, rho1, theta) * div_half
    e_star = evol + dt * (-conv_e + heat - work)

    floor = 1.5 * gas.p_inf * rho1 ** (5.0 / 3.0)
    if np.any(e_star <= floor):
        cell = int(np.argmin(e_star - floor))
        raise PositivityError("energy", cell, float((e_star - floor).ravel()[cell]))

    theta_star = thermo.temperature_from_energy(gas, rho1, e_star, guess=theta)
    theta_new = _implicit_heat_2d(grid, gas, transport, rho1, e_star, theta_star, dt)
    _check_positive("theta", theta_new)
    return FluidState(
        grid=grid, t=state.t + dt, rho=rho1, theta=theta_new, u=u_new, w=w_new
    )


# ---------------------------------------------------------------------------
# Trajectory driver
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    final_state: FluidState
    steps: int
    retries: int
    wall_time: float
    records: list = field(default_factory=list)
    samples: list = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""


def run(
    initial: FluidState,
    horizon: float,
    control: StepControl,
    gas,
    transport,
    G=None,
    diagnostics=None,
    cadence: float = 0.0,
    sinks=(),
    keep_samples: bool = True,
    sample_every_step: bool = False,
    convection: str = "upwind",
) -> RunResult:
    """Advance to ``t = horizon``, sampling diagnostics at the given cadence.

    ``diagnostics`` is a callable state -> record; records are streamed to
    every sink and collected in the result.  ``sample_every_step`` retains a
    (t, state) pair per accepted step (for windowed inequality residuals,
    whose time-quadrature error must shrink with the step).  On positivity
    failure the step is retried with dt/2 up to ``control.max_retries``
    times, then the run aborts with the offending error recorded.
    """
    t_start = _time.perf_counter()
    state = initial
    result = RunResult(final_state=state, steps=0, retries=0, wall_time=0.0)
    last_sampled = [-np.inf]

    def sample(st):
        if diagnostics is None:
            return
        last_sampled[0] = st.t
        record = diagnostics(st)
        result.records.append(record)
        for sink in sinks:
            sink(record)
        if keep_samples and not sample_every_step:
            result.samples.append((st.t, st.copy()))

    sample(state)
    if sample_every_step and keep_samples:
        result.samples.append((state.t, state.copy()))
    next_sample = state.t + cadence if cadence > 0.0 else np.inf
    while state.t < horizon - 1.0e-12:
        dt = cfl_dt(state, control, gas, transport)
        dt = min(dt, horizon - state.t)
        if cadence > 0.0 and state.t < next_sample:
            dt = min(dt, next_sample - state.t)
        attempt = 0
        while True:
            try:
                new_state = step(state, dt, gas, transport, G, convection)
                break
            except (PositivityError, ImplicitSolveError) as exc:
                attempt += 1
                result.retries += 1
                if attempt > control.max_retries:
                    result.final_state = state
                    result.aborted = True
                    result.abort_reason = str(exc)
                    result.wall_time = _time.perf_counter() - t_start
                    return result
                dt *= 0.5
        state = new_state
        result.steps += 1
        if sample_every_step and keep_samples:
            result.samples.append((state.t, state.copy()))
        if cadence > 0.0 and state.t >= next_sample - 1.0e-12:
            sample(state)
            while next_sample <= state.t + 1.0e-12:
                next_sample += cadence
    if last_sampled[0] < state.t - 1.0e-12:
        sample(state)
    result.final_state = state
    result.wall_time = _time.perf_counter() - t_start
    return result
