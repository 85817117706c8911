"""Acceptance suite: one test per criterion, each printing a pass/fail line
with its runtime (run with ``pytest tests/test_acceptance.py -v -s``).

Quantitative baselines marked "pinned" were produced by the first build at
the recorded seeds and act as regression anchors thereafter.
"""

import time

import numpy as np
import pytest

from nsfsim import diagnostics as dg
from nsfsim import experiment as ex
from nsfsim import simulator as sim
from nsfsim.grids import FluidState, Grid1D, Grid2D, StepControl
from nsfsim.stationary import ProblemConfig, solve_rb_pipeline, solve_stationary_newton
from nsfsim.thermo import (
    GasModel,
    TransportModel,
    gibbs_residual,
    validate_hypotheses,
)
from nsfsim import operators as ops

GAS = GasModel()
TR = TransportModel()


class Criterion:
    """Timing/reporting wrapper: prints one pass/fail line per criterion."""

    def __init__(self, number, label, budget=None):
        self.number = number
        self.label = label
        self.budget = budget

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        verdict = "PASS" if exc_type is None else "FAIL"
        budget = f" (budget {self.budget:.0f}s)" if self.budget else ""
        print(f"[criterion {self.number}] {verdict} - {self.label}: {elapsed:.2f}s{budget}")
        if self.budget is not None and exc_type is None:
            assert elapsed < self.budget, f"criterion {self.number} exceeded its runtime budget"
        return False


def decay_setup(n, horizon, **extra):
    mapping = {"domain.n": str(n), "horizon": str(horizon)}
    mapping.update({k: str(v) for k, v in extra.items()})
    config = ex.config_from_mapping(mapping, preset="rb-1d-small")
    gas, transport = ex.build_models(config)
    problem = ex.build_problem(config)
    reference = ex.solve_reference(config, problem, gas, transport)
    return config, gas, transport, problem, reference


def test_criterion_1_constitutive_validation():
    with Criterion(1, "constitutive validation", budget=1.0):
        report = validate_hypotheses(GAS)
        assert report.passed
        assert report.c_bound == pytest.approx(5.0 / 3.0, abs=1e-4)
        assert report.min_second_derivative > 0.0
        assert report.s_tail_value < 1e-5


def test_criterion_2_gibbs_consistency():
    with Criterion(2, "Gibbs residual order 2.0 +- 0.2 at 20 random states", budget=1.0):
        rng = np.random.default_rng(1234)
        states = rng.uniform(0.5, 3.0, (20, 2))
        for rho, theta in states:
            coarse = gibbs_residual(GAS, rho, theta, 1e-3)
            fine = gibbs_residual(GAS, rho, theta, 5e-4)
            for a, b in zip(coarse, fine):
                if abs(a) < 1e-12:  # residual at the rounding floor
                    continue
                order = np.log2(abs(a) / abs(b))
                assert 1.8 <= order <= 2.2


def test_criterion_3_bregman_suite():
    with Criterion(3, "Bregman positivity and dual-form identity, 1e4 pairs", budget=10.0):
        rng = np.random.default_rng(77)
        grid = Grid1D(n=16, theta_bottom=1.0, theta_top=1.0)

        def random_state():
            return FluidState(
                grid=grid,
                t=0.0,
                rho=rng.uniform(0.1, 10.0, 16),
                theta=rng.uniform(0.1, 10.0, 16),
                u=np.concatenate([[0.0], rng.uniform(-1.0, 1.0, 15), [0.0]]),
            )

        worst_negative = 0.0
        worst_delta = 0.0
        for _ in range(10_000):
            a, b = random_state(), random_state()
            form1, form2 = dg._relative_energy_forms(a, b, GAS)
            value = float(np.sum(form1) * grid.dx)
            delta = float(np.sum(form1 - form2) * grid.dx)
            scale = max(1.0, dg.total_energy(a, GAS))
            worst_negative = min(worst_negative, value / scale)
            worst_delta = max(worst_delta, abs(delta) / max(1.0, value, scale))
        assert worst_negative >= -1e-12
        assert worst_delta <= 1e-12


def test_criterion_4_stationary_cross_check():
    with Criterion(4, "Newton vs Kirchhoff+hydrostatic pipeline at 1e-8", budget=10.0):
        grid = Grid1D(n=128, theta_bottom=1.05, theta_top=1.0)
        config = ProblemConfig(grid=grid, m0=1.0, g=0.01)
        pipe = solve_rb_pipeline(config, GAS, TR)
        newton = solve_stationary_newton(config, GAS, TR)
        assert np.max(np.abs(newton.rho - pipe.rho)) < 1e-8
        assert np.max(np.abs(newton.theta - pipe.theta)) < 1e-8
        assert np.max(np.abs(newton.u - pipe.u)) < 1e-8
        assert newton.mass_error < 1e-10
        assert pipe.mass_error < 1e-10
        flux = ops.kirchhoff_fluxes_1d(grid, TR, pipe.theta)
        assert float(np.max(flux) - np.min(flux)) < 1e-10


def test_criterion_5_equilibrium_preservation():
    with Criterion(5, "1e4 steps from the stationary reference at 128 cells", budget=60.0):
        config, gas, transport, problem, reference = decay_setup(128, 50.0)
        refs = reference.as_fluid_state()
        G = problem.potential_field()
        state = refs.copy()
        control = StepControl(cfl_target=0.4)
        dt = sim.cfl_dt(state, control, gas, transport)
        mass0 = state.total_mass()
        worst_re = 0.0
        for k in range(10_000):
            state = sim.step(state, dt, gas, transport, G)
            if (k + 1) % 1000 == 0:
                worst_re = max(worst_re, dg.relative_energy(state, refs, gas))
        worst_re = max(worst_re, dg.relative_energy(state, refs, gas))
        assert worst_re <= 1e-10
        assert abs(state.total_mass() - mass0) / mass0 <= 1e-13


def test_criterion_6_decay_to_equilibrium():
    with Criterion(6, "rb-1d-small decay below 1% with pinned curve", budget=300.0):
        config = ex.config_from_mapping({}, preset="rb-1d-small")
        gas, transport = ex.build_models(config)
        problem = ex.build_problem(config)
        reference = ex.solve_reference(config, problem, gas, transport)
        refs = reference.as_fluid_state()
        initial = ex.make_initial_state(config, reference)
        control = StepControl(cfl_target=config["cfl"], dt_min=config["dt_min"], dt_max=config["dt_max"])
        result = sim.run(
            initial, config["horizon"], control, gas, transport, problem.potential_field(),
            diagnostics=dg.make_diagnostics(refs, gas, transport), cadence=config["cadence"],
            keep_samples=False,
        )
        assert not result.aborted
        t = np.array([r.t for r in result.records])
        re = np.array([r.relative_energy for r in result.records])

        # decay target
        assert re[-1] < 1e-2 * re[0]

        # pinned seeded regression baseline (first build, seed 2024)
        assert re[0] == pytest.approx(2.6636796448710476e-04, rel=1e-6)
        checkpoints = {
            1.0: 1.4361158553410913e-05,
            2.0: 2.9904591825960503e-06,
            5.0: 6.767003129376503e-08,
            10.0: 1.4079563903646175e-10,
        }
        for when, pinned in checkpoints.items():
            k = int(np.argmin(np.abs(t - when)))
            assert re[k] == pytest.approx(pinned, rel=1e-3), f"t={when}"

        # no increase episodes beyond discretisation tolerance after the
        # initial transient (t >= 1)
        tol = max(1e-10 * re[0], 1e-15)
        after = np.where(t >= 1.0)[0]
        increases = np.diff(re[after])
        assert np.max(increases, initial=0.0) <= tol


def test_criterion_7_inequality_residuals_refinement():
    with Criterion(7, "entropy/ballistic residual tolerances shrink 64->128->256"):
        entropy_res = []
        ballistic_res = []
        for n in (64, 128, 256):
            config, gas, transport, problem, reference = decay_setup(n, 2.0)
            refs = reference.as_fluid_state()
            initial = ex.make_initial_state(config, reference)
            control = StepControl(cfl_target=config["cfl"], dt_min=config["dt_min"], dt_max=config["dt_max"])
            result = sim.run(
                initial, 2.0, control, gas, transport, problem.potential_field(),
                diagnostics=lambda s: None, cadence=0.0, sample_every_step=True,
            )
            er, br = dg.inequality_residuals(
                result.samples, refs, gas, transport, problem.potential_field()
            )
            entropy_res.append(er)
            ballistic_res.append(br)

        # pinned per-resolution tolerances (first build); each resolution's
        # violation fits under its tolerance and the tolerances shrink
        entropy_tol = [2.0e-4, 1.0e-4, 5.2e-5]
        ballistic_tol = [9.0e-6, 4.5e-6, 2.3e-6]
        assert entropy_tol == sorted(entropy_tol, reverse=True)
        assert ballistic_tol == sorted(ballistic_tol, reverse=True)
        for er, tol in zip(entropy_res, entropy_tol):
            assert er >= -tol
        for br, tol in zip(ballistic_res, ballistic_tol):
            assert br >= -tol
        # the observed violation magnitude itself shrinks under refinement
        for seq in (entropy_res, ballistic_res):
            negs = [max(0.0, -v) for v in seq]
            assert negs[0] >= negs[1] >= negs[2]


def test_criterion_8_absorbing_set_envelope():
    with Criterion(8, "5-member family: terminal energy envelope, bounded norms"):
        members = [
            ("density-bump", 101),
            ("thermal-bump", 102),
            ("velocity-kick", 103),
            ("random-smooth", 104),
            ("random-smooth", 105),
        ]
        terminal = []
        for family, seed in members:
            config, gas, transport, problem, reference = decay_setup(
                64, 10.0, **{"perturbation.family": family, "seed": seed, "cadence": 0.25}
            )
            refs = reference.as_fluid_state()
            initial = ex.make_initial_state(config, reference)
            control = StepControl(cfl_target=0.4)
            result = sim.run(
                initial, 10.0, control, gas, transport, problem.potential_field(),
                diagnostics=dg.make_diagnostics(refs, gas, transport), cadence=0.25,
                keep_samples=False,
            )
            assert not result.aborted
            records = result.records
            terminal.append(records[-1].total_energy)
            # no (A6) norm diverges along the trajectory (pinned envelope)
            assert max(r.norm_momentum_54 for r in records) < 1e-2
            assert max(r.norm_rho_53 for r in records) < 1.001
            assert max(r.norm_theta_4 for r in records) < 1.03
        # terminal energies land inside the recorded envelope: the common
        # attractor of the shared data norms (pinned on first build)
        assert min(terminal) > 5.609
        assert max(terminal) < 5.611
        assert max(terminal) - min(terminal) < 1e-4


def test_criterion_9_epsilon_scaling_of_stationary_deviations():
    with Criterion(9, "stationary deviations scale linearly over eps doublings"):
        theta_devs = []
        u_maxes = []
        for eps in (1e-3, 2e-3, 4e-3):
            nx, nz = 12, 8
            xc = (np.arange(nx) + 0.5) * (2.0 / nx)
            grid = Grid2D(nx=nx, nz=nz, theta_bottom=1.0 + eps * np.cos(np.pi * xc), theta_top=1.0)
            config = ProblemConfig(grid=grid, m0=grid.volume, g=(0.0, 0.01))
            state = solve_stationary_newton(config, GAS, TR)
            theta_devs.append(state.proximity["theta_dev"])
            u_maxes.append(state.max_velocity())
        for seq in (theta_devs, u_maxes):
            assert all(v > 0.0 for v in seq)
            for a, b in zip(seq[:-1], seq[1:]):
                assert 2.0 / 1.5 <= b / a <= 2.0 * 1.5


def test_criterion_10_determinism_byte_identical(tmp_path):
    with Criterion(10, "fixed seed implies byte-identical CSVs"):
        scenarios = [
            ("static-sanity", {}),
            ("rb-2d-topology", {}),
            ("rb-1d-small", {"horizon": "2.0"}),
        ]
        for preset, overrides in scenarios:
            mapping = dict(overrides)
            config = ex.config_from_mapping(mapping, preset=preset)
            ex.run_experiment(config, output_dir=tmp_path / preset / "a")
            ex.run_experiment(config, output_dir=tmp_path / preset / "b")
            label = config["label"]
            a = (tmp_path / preset / "a" / f"{label}.csv").read_bytes()
            b = (tmp_path / preset / "b" / f"{label}.csv").read_bytes()
            assert a == b, preset
