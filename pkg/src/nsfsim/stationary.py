"""Stationary states: uniform static, Kirchhoff + hydrostatic pipeline, and
a damped Newton solve of the fully coupled discrete system.

The pipeline and the Newton solver zero the same stencils the time stepper
advances (``operators``), so their output is an exact fixed point of the
integrator.  The Newton solver enforces the prescribed total mass through one
scalar multiplier added to the continuity rows, which also removes their
structural redundancy (upwind fluxes telescope to zero over the domain).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import operators as ops
from . import thermo
from .grids import FluidState, Grid1D

__all__ = [
    "ProblemConfig",
    "StationaryState",
    "NewtonFailure",
    "ShootingFailure",
    "static_uniform",
    "solve_heat_profile_1d",
    "heat_profile_function",
    "solve_hydrostatic_density",
    "solve_stationary_newton",
    "solve_rb_pipeline",
]


class NewtonFailure(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message + f" (residual trace: {trace})")
        self.trace = trace


class ShootingFailure(RuntimeError):
    pass


def _potential_from_gravity(grid, g):
    """G = g . x on the grid centers (1-D scalar g means G = g*x)."""
    if g is None:
        return None
    if grid.dimension == 1:
        return float(g) * grid.centers()
    gx, gz = (float(g[0]), float(g[1])) if np.ndim(g) else (0.0, float(g))
    X, Z = np.meshgrid(grid.x_centers(), grid.z_centers(), indexing="ij")
    return gx * X + gz * Z


@dataclass(frozen=True)
class ProblemConfig:
    """Domain, data, and total mass defining one stationary problem.

    ``grid`` carries the wall temperatures; ``g`` is the gravity strength
    (scalar along the column in 1-D, (gx, gz) or scalar gz in 2-D);
    ``potential`` may override it with an arbitrary per-node field.
    """

    grid: object
    m0: float
    g: object = None
    potential: object = None

    def __post_init__(self):
        if self.m0 <= 0.0:
            raise ValueError("total mass m0 must be positive")
        if self.potential is not None:
            pot = np.asarray(self.potential, dtype=float)
            expected = (self.grid.n,) if self.grid.dimension == 1 else (self.grid.nx, self.grid.nz)
            if pot.shape != expected:
                raise ValueError("potential field shape does not match the grid")

    def potential_field(self):
        if self.potential is not None:
            return np.asarray(self.potential, dtype=float)
        return _potential_from_gravity(self.grid, self.g)

    def wall_theta_values(self) -> np.ndarray:
        g = self.grid
        if g.dimension == 1:
            return np.array([g.theta_bottom, g.theta_top])
        return np.concatenate([g.wall_theta("bottom"), g.wall_theta("top")])

    @property
    def theta_bar(self) -> float:
        """Reference constant boundary temperature (mean of the trace)."""
        return float(np.mean(self.wall_theta_values()))

    @property
    def epsilon_report(self) -> float:
        """max(|G|_C1, |theta_B - theta_bar|_inf): the data smallness measure."""
        walls = self.wall_theta_values()
        eps_theta = float(np.max(np.abs(walls - self.theta_bar)))
        G = self.potential_field()
        if G is None:
            return eps_theta
        if self.grid.dimension == 1:
            grad = np.diff(G) / self.grid.dx
        else:
            gx = (G - np.roll(G, 1, axis=0)) / self.grid.dx
            gz = np.diff(G, axis=1) / self.grid.dz
            grad = np.concatenate([gx.ravel(), gz.ravel()])
        eps_g = float(np.max(np.abs(G)) + np.max(np.abs(grad)))
        return max(eps_theta, eps_g)


@dataclass
class StationaryState:
    """Discrete stationary fields with residual and proximity bookkeeping."""

    grid: object
    rho: np.ndarray
    theta: np.ndarray
    u: np.ndarray
    w: np.ndarray = None
    residual_norms: dict = field(default_factory=dict)
    mass_error: float = 0.0
    proximity: dict = field(default_factory=dict)
    iterations: int = 0

    def as_fluid_state(self, t: float = 0.0) -> FluidState:
        return FluidState(
            grid=self.grid,
            t=t,
            rho=self.rho.copy(),
            theta=self.theta.copy(),
            u=self.u.copy(),
            w=None if self.w is None else self.w.copy(),
        )

    def max_velocity(self) -> float:
        vmax = float(np.max(np.abs(self.u)))
        if self.w is not None:
            vmax = max(vmax, float(np.max(np.abs(self.w))))
        return vmax


def _residual_norms(grid, gas, transport, G, rho, theta, u, w=None):
    if grid.dimension == 1:
        cont, mom, energy = ops.steady_residual_1d(grid, gas, transport, G, rho, theta, u)
        return {
            "continuity": float(np.max(np.abs(cont))),
            "momentum": float(np.max(np.abs(mom))) if mom.size else 0.0,
            "energy": float(np.max(np.abs(energy))),
        }
    cont, mom_u, mom_w, energy = ops.steady_residual_2d(
        grid, gas, transport, G, rho, theta, u, w
    )
    return {
        "continuity": float(np.max(np.abs(cont))),
        "momentum": float(max(np.max(np.abs(mom_u)), np.max(np.abs(mom_w)) if mom_w.size else 0.0)),
        "energy": float(np.max(np.abs(energy))),
    }


def _proximity(config: ProblemConfig, rho, theta, u, w=None):
    rho_flat = config.m0 / config.grid.volume
    dev_u = float(np.max(np.abs(u)))
    if w is not None:
        dev_u = max(dev_u, float(np.max(np.abs(w))))
    return {
        "rho_dev": float(np.max(np.abs(rho - rho_flat))),
        "theta_dev": float(np.max(np.abs(theta - config.theta_bar))),
        "u_dev": dev_u,
        "epsilon": config.epsilon_report,
    }


# ---------------------------------------------------------------------------
# Closed-form static solution
# ---------------------------------------------------------------------------


def static_uniform(config: ProblemConfig, gas=None, transport=None) -> StationaryState:
    """rho = m0/|Omega|, theta = theta_B, u = 0 (constant data, no potential)."""
    grid = config.grid
    walls = config.wall_theta_values()
    if float(np.max(walls) - np.min(walls)) != 0.0:
        raise ValueError("static_uniform requires a constant boundary temperature")
    G = config.potential_field()
    if G is not None and float(np.max(np.abs(G - G.flat[0]))) != 0.0:
        raise ValueError("static_uniform requires a constant (removable) potential")
    theta_b = float(walls[0])
    rho_flat = config.m0 / grid.volume
    if grid.dimension == 1:
        rho = np.full(grid.n, rho_flat)
        theta = np.full(grid.n, theta_b)
        u = np.zeros(grid.n + 1)
        w = None
    else:
        rho = np.full((grid.nx, grid.nz), rho_flat)
        theta = np.full((grid.nx, grid.nz), theta_b)
        u = np.zeros((grid.nx, grid.nz))
        w = np.zeros((grid.nx, grid.nz + 1))
    state = StationaryState(grid=grid, rho=rho, theta=theta, u=u, w=w)
    if gas is not None and transport is not None:
        state.residual_norms = _residual_norms(grid, gas, transport, None, rho, theta, u, w)
    state.mass_error = abs(float(np.sum(rho) * grid.cell_volume) - config.m0)
    state.proximity = _proximity(config, rho, theta, u, w)
    return state


# ---------------------------------------------------------------------------
# Kirchhoff heat profile
# ---------------------------------------------------------------------------


def heat_profile_function(transport, theta_bottom, theta_top):
    """Continuous stationary conduction profile and its derivative.

    K(theta(x)) is linear in x between the plate values, so
    theta(x) = K_inv((1-x) K(Theta_B) + x K(Theta_U)) and
    theta'(x) = (K(Theta_U) - K(Theta_B)) / kappa(theta(x)).
    """
    if theta_bottom <= 0.0 or theta_top <= 0.0:
        raise ValueError("plate temperatures must be positive")
    kb = float(thermo.conductivity_primitive(transport, np.float64(theta_bottom)))
    kt = float(thermo.conductivity_primitive(transport, np.float64(theta_top)))
    slope = kt - kb

    def theta_of_x(x):
        x = np.asarray(x, dtype=float)
        return thermo.invert_conductivity_primitive(transport, kb + slope * x)

    def dtheta_dx(x):
        th = theta_of_x(x)
        kappa = transport.kappa0 * (1.0 + np.asarray(th) ** transport.beta)
        return slope / kappa

    return theta_of_x, dtheta_dx


def solve_heat_profile_1d(transport, theta_bottom, theta_top, grid: Grid1D) -> np.ndarray:
    """Stationary conduction temperature at cell centers.

    Because the discrete heat flux is a K-difference, this profile carries an
    exactly constant flux cell to cell (to inversion tolerance), wall
    half-cells included.
    """
    theta_of_x, _ = heat_profile_function(transport, theta_bottom, theta_top)
    return theta_of_x(grid.centers())


# ---------------------------------------------------------------------------
# Hydrostatic density
# ---------------------------------------------------------------------------


def _march_discrete(gas, theta, dG, rho0):
    """March the interface balance p_{i+1} - p_i = mean(rho) dG_{i+1}."""
    n = theta.size
    rho = np.empty(n)
    rho[0] = rho0
    for i in range(n - 1):
        p_here = float(thermo.pressure(gas, np.float64(rho[i]), np.float64(theta[i])))
        target = p_here
        dgi = dG[i]

        def f(r):
            return (
                float(thermo.pressure(gas, np.float64(r), np.float64(theta[i + 1])))
                - target
                - 0.5 * (rho[i] + r) * dgi
            )

        r = rho[i]
        for _ in range(80):
            fr = f(r)
            dp_drho, _ = thermo.pressure_partials(gas, np.float64(r), np.float64(theta[i + 1]))
            slope = float(dp_drho) - 0.5 * dgi
            r_new = r - fr / slope
            if r_new <= 0.0:
                r_new = 0.5 * r
            if abs(r_new - r) <= 1.0e-15 * max(1.0, r):
                r = r_new
                break
            r = r_new
        if r <= 0.0 or abs(f(r)) > 1.0e-9 * max(1.0, abs(target)):
            raise ShootingFailure(
                "face balance unsolvable while marching (density driven to the "
                "vacuum pressure floor); parameters outside the perturbative regime"
            )
        rho[i + 1] = r
    return rho


def solve_hydrostatic_density(
    gas,
    theta_s,
    g,
    m0: float,
    grid: Grid1D,
    mode: str = "discrete",
    theta_profile=None,
    mass_tol: float = 1.0e-12,
    return_details: bool = False,
):
    """Density in hydrostatic balance with the given temperature field.

    mode="discrete" (default): zeros the stepper's face balance
    p_{i+1} - p_i = 0.5 (rho_i + rho_{i+1}) (G_{i+1} - G_i) exactly, shooting
    on rho(0) until the cell-sum mass matches m0.

    mode="rk4": fourth-order integration of the pointwise balance
    drho/dx = (rho G' - (dp/dtheta) theta') / (dp/drho) with the continuous
    conduction profile ``theta_profile`` = (theta(x), theta'(x)); the total
    mass rides along as an auxiliary quadrature state.
    """
    grid_x = grid.centers()
    rho_flat = m0 / grid.volume

    if mode == "discrete":
        theta_s = np.asarray(theta_s, dtype=float)
        dG = np.full(grid.n - 1, float(g) * grid.dx) if np.ndim(g) == 0 else np.diff(np.asarray(g))

        def mass_of(rho0):
            rho = _march_discrete(gas, theta_s, dG, rho0)
            return float(np.sum(rho) * grid.dx) - m0

        lo, hi = 0.5 * rho_flat, 2.0 * rho_flat
        flo, fhi = mass_of(lo), mass_of(hi)
        for _ in range(60):
            if flo < 0.0 < fhi:
                break
            if flo >= 0.0:
                lo *= 0.5
                flo = mass_of(lo)
            if fhi <= 0.0:
                hi *= 2.0
                fhi = mass_of(hi)
        else:
            raise ShootingFailure(f"mass bracket failed on [{lo}, {hi}]")
        rho0 = brentq(mass_of, lo, hi, xtol=1.0e-15, rtol=8.9e-16, maxiter=200)
        rho = _march_discrete(gas, theta_s, dG, rho0)
        if abs(np.sum(rho) * grid.dx - m0) > mass_tol * max(1.0, m0):
            raise ShootingFailure("mass constraint not met after shooting")
        if return_details:
            return rho, {"rho0": rho0, "mass": float(np.sum(rho) * grid.dx)}
        return rho

    if mode != "rk4":
        raise ValueError("mode must be 'discrete' or 'rk4'")
    if theta_profile is None:
        raise ValueError("rk4 mode needs the continuous theta profile")
    theta_of_x, dtheta_dx = theta_profile
    gval = float(g)

    def rhs(x, y):
        rho_v = y[0]
        th = float(theta_of_x(x))
        dth = float(dtheta_dx(x))
        dp_drho, dp_dtheta = thermo.pressure_partials(gas, np.float64(rho_v), np.float64(th))
        return np.array([(rho_v * gval - float(dp_dtheta) * dth) / float(dp_drho), rho_v])

    def rk4_path(rho0):
        # half step to the first center, then full steps center to center
        y = np.array([rho0, 0.0])
        x = 0.0
        values = np.empty(grid.n)

        def advance(x0, y0, h):
            k1 = rhs(x0, y0)
            k2 = rhs(x0 + 0.5 * h, y0 + 0.5 * h * k1)
            k3 = rhs(x0 + 0.5 * h, y0 + 0.5 * h * k2)
            k4 = rhs(x0 + h, y0 + h * k3)
            return y0 + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        y = advance(x, y, 0.5 * grid.dx)
        x = 0.5 * grid.dx
        values[0] = y[0]
        for i in range(1, grid.n):
            y = advance(x, y, grid.dx)
            x += grid.dx
            values[i] = y[0]
        y = advance(x, y, 0.5 * grid.dx)
        return values, y[1]

    def mass_of(rho0):
        return rk4_path(rho0)[1] - m0

    lo, hi = 0.5 * rho_flat, 2.0 * rho_flat
    flo, fhi = mass_of(lo), mass_of(hi)
    for _ in range(60):
        if flo < 0.0 < fhi:
            break
        if flo >= 0.0:
            lo *= 0.5
            flo = mass_of(lo)
        if fhi <= 0.0:
            hi *= 2.0
            fhi = mass_of(hi)
    else:
        raise ShootingFailure(f"mass bracket failed on [{lo}, {hi}]")
    rho0 = brentq(mass_of, lo, hi, xtol=1.0e-15, rtol=8.9e-16, maxiter=200)
    rho, mass = rk4_path(rho0)
    if np.any(rho <= 0.0):
        raise ShootingFailure("nonpositive density in the integrated profile")
    if return_details:
        return rho, {"rho0": rho0, "mass": mass}
    return rho


def solve_rb_pipeline(config: ProblemConfig, gas, transport) -> StationaryState:
    """Kirchhoff conduction + hydrostatic balance for vertical-gravity data.

    1-D directly; in 2-D (constant plates, vertical gravity) the column
    solution broadcasts across the periodic direction.
    """
    grid = config.grid
    if grid.dimension == 1:
        col = grid
    else:
        tb, tt = grid.wall_theta("bottom"), grid.wall_theta("top")
        if float(np.ptp(tb)) != 0.0 or float(np.ptp(tt)) != 0.0:
            raise ValueError("pipeline needs laterally constant plate temperatures")
        if config.g is not None and np.ndim(config.g) and float(config.g[0]) != 0.0:
            raise ValueError("pipeline needs vertical gravity")
        col = Grid1D(n=grid.nz, theta_bottom=float(tb[0]), theta_top=float(tt[0]), length=grid.lz)
    gval = 0.0 if config.g is None else (float(config.g[-1]) if np.ndim(config.g) else float(config.g))
    theta_col = solve_heat_profile_1d(transport, col.theta_bottom, col.theta_top, col)
    m0_col = config.m0 / (1.0 if grid.dimension == 1 else grid.lx)
    rho_col = solve_hydrostatic_density(gas, theta_col, gval, m0_col, col)
    if grid.dimension == 1:
        rho, theta = rho_col, theta_col
        u, w = np.zeros(grid.n + 1), None
    else:
        rho = np.tile(rho_col, (grid.nx, 1))
        theta = np.tile(theta_col, (grid.nx, 1))
        u = np.zeros((grid.nx, grid.nz))
        w = np.zeros((grid.nx, grid.nz + 1))
    G = config.potential_field()
    state = StationaryState(grid=grid, rho=rho, theta=theta, u=u, w=w)
    state.residual_norms = _residual_norms(grid, gas, transport, G, rho, theta, u, w)
    state.mass_error = abs(float(np.sum(rho) * grid.cell_volume) - config.m0)
    state.proximity = _proximity(config, rho, theta, u, w)
    return state


# ---------------------------------------------------------------------------
# Damped Newton on the coupled system
# ---------------------------------------------------------------------------


def _pack_1d(rho, theta, u, lam):
    return np.concatenate([rho, theta, u[1:-1], [lam]])


def _residual_vector_1d(x, grid, gas, transport, G, m0):
    n = grid.n
    rho = x[:n]
    theta = x[n : 2 * n]
    u = np.zeros(n + 1)
    u[1:-1] = x[2 * n : 3 * n - 1]
    lam = x[-1]
    cont, mom, energy = ops.steady_residual_1d(grid, gas, transport, G, rho, theta, u)
    mass = np.sum(rho) * grid.dx - m0
    return np.concatenate([cont + lam, mom, energy, [mass]])


def _residual_vector_2d(x, grid, gas, transport, G, m0):
    nx, nz = grid.nx, grid.nz
    nc = nx * nz
    rho = x[:nc].reshape(nx, nz)
    theta = x[nc : 2 * nc].reshape(nx, nz)
    u = x[2 * nc : 3 * nc].reshape(nx, nz)
    w = np.zeros((nx, nz + 1))
    w[:, 1:-1] = x[3 * nc : 3 * nc + nx * (nz - 1)].reshape(nx, nz - 1)
    lam = x[-1]
    cont, mom_u, mom_w, energy = ops.steady_residual_2d(grid, gas, transport, G, rho, theta, u, w)
    mass = np.sum(rho) * grid.cell_volume - m0
    return np.concatenate(
        [(cont + lam).ravel(), mom_u.ravel(), mom_w.ravel(), energy.ravel(), [mass]]
    )


def _fd_jacobian(fun, x, f0):
    m, n = f0.size, x.size
    jac = np.empty((m, n))
    for k in range(n):
        h = 1.0e-7 * max(1.0, abs(x[k]))
        xp = x.copy()
        xp[k] += h
        jac[:, k] = (fun(xp) - f0) / h
    return jac


def solve_stationary_newton(
    config: ProblemConfig,
    gas,
    transport,
    initial_guess: StationaryState = None,
    tol: float = 1.0e-9,
    max_iter: int = 50,
) -> StationaryState:
    """Damped Newton on (continuity, momentum, energy, mass) with a scalar
    multiplier shifting the density level.

    Armijo backtracking on the residual 2-norm with floor step 2^-20;
    positivity of (rho, theta) is maintained by shrinking the step.  Raises
    ``NewtonFailure`` with the residual trace on stagnation.
    """
    grid = config.grid
    G = config.potential_field()
    m0 = config.m0

    if initial_guess is None:
        rho_flat = m0 / grid.volume
        tb = config.theta_bar
        if grid.dimension == 1:
            guess = (np.full(grid.n, rho_flat), np.full(grid.n, tb), np.zeros(grid.n + 1), None)
        else:
            guess = (
                np.full((grid.nx, grid.nz), rho_flat),
                np.full((grid.nx, grid.nz), tb),
                np.zeros((grid.nx, grid.nz)),
                np.zeros((grid.nx, grid.nz + 1)),
            )
        rho0, theta0, u0, w0 = guess
    else:
        rho0, theta0 = initial_guess.rho.copy(), initial_guess.theta.copy()
        u0 = initial_guess.u.copy()
        w0 = None if initial_guess.w is None else initial_guess.w.copy()

    if grid.dimension == 1:
        fun = lambda x: _residual_vector_1d(x, grid, gas, transport, G, m0)
        x = _pack_1d(rho0, theta0, u0, 0.0)
        n_rho = grid.n
    else:
        fun = lambda x: _residual_vector_2d(x, grid, gas, transport, G, m0)
        x = np.concatenate([rho0.ravel(), theta0.ravel(), u0.ravel(), w0[:, 1:-1].ravel(), [0.0]])
        n_rho = grid.nx * grid.nz

    def positive(xv):
        return np.all(xv[: 2 * n_rho] > 0.0)

    trace = []
    f = fun(x)
    norm = float(np.max(np.abs(f)))
    trace.append(norm)
    iterations = 0
    while norm > tol and iterations < max_iter:
        jac = _fd_jacobian(fun, x, f)
        try:
            delta = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise NewtonFailure(f"singular Jacobian: {exc}", trace) from exc
        f2 = float(np.dot(f, f))
        s = 1.0
        while True:
            x_try = x + s * delta
            if positive(x_try):
                f_try = fun(x_try)
                if float(np.dot(f_try, f_try)) <= (1.0 - 1.0e-4 * s) * f2 or s < 2.0**-20:
                    break
            s *= 0.5
            if s < 2.0**-21:
                raise NewtonFailure("line search hit the floor step", trace)
        x, f = x_try, f_try
        norm = float(np.max(np.abs(f)))
        trace.append(norm)
        iterations += 1
    if norm > tol:
        raise NewtonFailure(f"no convergence after {iterations} iterations", trace)

    if grid.dimension == 1:
        rho = x[: grid.n]
        theta = x[grid.n : 2 * grid.n]
        u = np.zeros(grid.n + 1)
        u[1:-1] = x[2 * grid.n : 3 * grid.n - 1]
        w = None
    else:
        nc = grid.nx * grid.nz
        rho = x[:nc].reshape(grid.nx, grid.nz)
        theta = x[nc : 2 * nc].reshape(grid.nx, grid.nz)
        u = x[2 * nc : 3 * nc].reshape(grid.nx, grid.nz)
        w = np.zeros((grid.nx, grid.nz + 1))
        w[:, 1:-1] = x[3 * nc : 3 * nc + grid.nx * (grid.nz - 1)].reshape(grid.nx, grid.nz - 1)

    state = StationaryState(grid=grid, rho=rho, theta=theta, u=u, w=w, iterations=iterations)
    state.residual_norms = _residual_norms(grid, gas, transport, G, rho, theta, u, w)
    state.mass_error = abs(float(np.sum(rho) * grid.cell_volume) - m0)
    state.proximity = _proximity(config, rho, theta, u, w)
    return state
