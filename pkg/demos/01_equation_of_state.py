"""Tour of the constitutive closure.

Evaluates the pressure/energy/entropy closure of the radiative monoatomic
gas, checks the Gibbs relation by finite differences, and prints the
hypothesis certification report for the default model and for a
deliberately degenerate one.

Run:  python demos/01_equation_of_state.py
"""

import numpy as np

from nsfsim.thermo import (
    GasModel,
    TransportModel,
    entropy,
    entropy_kernel,
    gibbs_residual,
    internal_energy,
    pressure,
    sound_speed,
    transport,
    validate_hypotheses,
)

gas = GasModel()          # p_inf = 1, a = 3, P_m(Z) = Z/(1+Z)
trans = TransportModel()  # mu = 1+theta, eta = 0, kappa = 1+theta^7

print("== state functions at a few (rho, theta) points ==")
for rho, theta in [(1.0, 1.0), (2.0, 1.0), (0.5, 2.0), (1e-3, 10.0)]:
    p = float(pressure(gas, rho, theta))
    e = float(internal_energy(gas, rho, theta))
    s = float(entropy(gas, rho, theta))
    c = float(sound_speed(gas, rho, theta))
    print(f"  rho={rho:7.3f} theta={theta:6.2f}  p={p:10.4f}  e={e:10.4f}  s={s:9.4f}  c_s={c:7.4f}")

print("\n== transport coefficients ==")
for theta in (0.5, 1.0, 2.0):
    mu, eta, kappa = transport(trans, theta)
    print(f"  theta={theta:4.1f}  mu={float(mu):6.3f}  eta={float(eta):4.1f}  kappa={float(kappa):9.3f}")

print("\n== Gibbs relation residuals (central differences, O(h^2)) ==")
for h in (1e-3, 5e-4, 2.5e-4):
    r1, r2 = gibbs_residual(gas, 1.3, 0.8, h)
    print(f"  h={h:8.1e}  theta-residual={float(r1):+.3e}  rho-residual={float(r2):+.3e}")

print("\n== Third-law tail of the entropy kernel ==")
for z in (1e2, 1e4, 1e6):
    print(f"  S({z:8.0e}) = {float(entropy_kernel(gas, np.float64(z))):.3e}")

print("\n== hypothesis certification, default model ==")
print(validate_hypotheses(gas).to_text())

print("== hypothesis certification, degenerate model (pm_gain = 0) ==")
report = validate_hypotheses(GasModel(pm_gain=0.0))
failing = [name for name, ok in report.checks.items() if not ok]
print(f"pass_all = {report.passed}; failing checks: {failing}")
