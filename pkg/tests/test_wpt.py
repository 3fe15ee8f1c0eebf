import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize_scalar

from activeirs.errors import BudgetExhausted
from activeirs.report import AOSettings, is_monotone
from activeirs.system import (Instance, Precoder, ReflectionState, SystemConfig, amplification_power,
                              feasibility_report, weighted_sum_power)
from activeirs.wpt import (closed_form_phases, energy_kernel, energy_subproblem, initial_reflection,
                           magnitude_step, quad_value, reflect_kernels, sca_lower_bound, sca_reflect_step,
                           solve_wpt)

from conftest import random_channels, random_u


def dual_value(S, C, P_A, P_bar):
    """min over y >= 0 of P_A * max(lambda_max(S - y C), 0) + y P_bar (strong duality for two trace rows)."""
    def f(y):
        return P_A * max(np.linalg.eigvalsh(S - y * C)[-1], 0.0) + y * P_bar
    hi = 1.0
    while f(hi) < f(0) and np.linalg.eigvalsh(S - hi * C)[-1] > 0:
        hi *= 4
    res = minimize_scalar(f, bounds=(0, hi), method="bounded", options={"xatol": 1e-14 * hi})
    return min(res.fun, f(0.0))


def wpt_cfg(M=3, N=4, K_E=2, P_I=0.05, sigma_z2=1e-3):
    return SystemConfig(M=M, N=N, K_I=0, K_E=K_E, P_A=1.0, P_I=P_I, sigma_z2=sigma_z2, alpha=1.0)


def test_energy_subproblem_matches_dual(rng):
    for _ in range(5):
        cfg = wpt_cfg()
        ch = random_channels(rng, cfg.M, cfg.N, 0, cfg.K_E)
        refl = ReflectionState(0.2 * random_u(rng, cfg.N))
        step = energy_subproblem(ch, refl, cfg)
        S = energy_kernel(ch, refl, cfg)
        FT = refl.u[:, None] * ch.F
        C = FT.conj().T @ FT
        P_bar = cfg.P_I - cfg.sigma_z2 * np.sum(np.abs(refl.u) ** 2)
        assert step.value == pytest.approx(dual_value(S, C, cfg.P_A, P_bar), rel=1e-5)
        # the beam is rank one and feasible
        v = step.v0
        assert np.real(v.conj() @ S @ v) == pytest.approx(step.value, rel=1e-5)
        assert np.linalg.norm(v) ** 2 <= cfg.P_A * (1 + 1e-7)
        assert amplification_power(Precoder(np.zeros((0, cfg.M)), v[None]), refl, ch, cfg) <= cfg.P_I * (1 + 1e-7)


def test_energy_subproblem_budget_exhausted(rng):
    cfg = wpt_cfg(P_I=1e-3, sigma_z2=1e-2)
    ch = random_channels(rng, cfg.M, cfg.N, 0, cfg.K_E)
    with pytest.raises(BudgetExhausted):
        energy_subproblem(ch, ReflectionState(np.ones(cfg.N)), cfg)


@given(st.integers(0, 2**32 - 1))
def test_sca_minorizer_exact_and_below(seed):
    rng = np.random.default_rng(seed)
    n = 5
    B = random_u(rng, n * n).reshape(n, n)
    A = B @ B.conj().T
    ul, u = random_u(rng, n), random_u(rng, n)
    assert abs(sca_lower_bound(ul, A, ul) - quad_value(ul, A)) <= 1e-12 * max(1.0, quad_value(ul, A))
    assert sca_lower_bound(u, A, ul) <= quad_value(u, A) + 1e-9 * max(1.0, quad_value(u, A))


def test_closed_form_phases_maximize_linear_term(rng):
    n = 6
    B = random_u(rng, n * n).reshape(n, n)
    A = B @ B.conj().T
    ul = np.append(random_u(rng, n - 1), 1.0)
    ph = closed_form_phases(A, ul)
    a = A @ ul
    mags = np.abs(random_u(rng, n - 1))
    best = np.real(np.vdot(np.append(mags * np.exp(1j * ph), 1.0), a))
    for _ in range(50):
        other = np.append(mags * np.exp(2j * np.pi * rng.random(n - 1)), 1.0)
        assert np.real(np.vdot(other, a)) <= best + 1e-12 * abs(best)


def test_magnitude_step_matches_full_step(rng):
    cfg = wpt_cfg()
    for _ in range(3):
        ch = random_channels(rng, cfg.M, cfg.N, 0, cfg.K_E)
        v0 = random_u(rng, cfg.M)
        v0 = v0 / np.linalg.norm(v0)
        A, K = reflect_kernels(ch, v0, cfg)
        ul = initial_reflection(ch, cfg, beams=v0[None]).u_bar
        full = sca_reflect_step(ch, v0, cfg, ul, kernels=(A, K))
        mag, _ = magnitude_step(A, K, cfg.P_I, ul)
        f_full, f_mag = sca_lower_bound(full, A, ul), sca_lower_bound(mag, A, ul)
        assert f_mag == pytest.approx(f_full, rel=1e-5)


def test_magnitude_step_rejects_nondiagonal(rng):
    A = np.eye(3, dtype=complex)
    K = np.ones((3, 3))
    with pytest.raises(ValueError):
        magnitude_step(A, K, 1.0, np.ones(3))


def test_initial_reflection_uses_fraction(desk_wpt):
    cfg, ch = desk_wpt.config, desk_wpt.channels
    refl = initial_reflection(ch, cfg, seed=0, fraction=0.5)
    assert np.allclose(refl.beta, refl.beta[0])
    S0 = energy_kernel(ch, ReflectionState.off(ch.N), cfg)
    v = math.sqrt(cfg.P_A) * np.linalg.eigh(S0)[1][:, -1]
    amp = amplification_power(Precoder(np.zeros((0, cfg.M)), v[None]), refl, ch, cfg)
    assert amp == pytest.approx(0.5 * cfg.P_I, rel=1e-9)


def test_solve_wpt_improves_and_is_feasible(desk_wpt):
    sol = solve_wpt(desk_wpt, AOSettings())
    cfg, ch = desk_wpt.config, desk_wpt.channels
    assert is_monotone(sol.trace)
    for t in sol.inner_traces:
        assert is_monotone(t)
    assert feasibility_report("P1", sol.precoder, sol.refl, ch, cfg).feasible(1e-6)
    assert sol.objective == pytest.approx(weighted_sum_power(sol.precoder, sol.refl, ch, cfg), rel=1e-9)
    assert sol.objective >= sol.trace[0] * (1 - 1e-9)
    with pytest.raises(ValueError):
        solve_wpt(Instance(SystemConfig(M=4, N=8, K_I=1, K_E=3, P_A=1, P_I=1, sigma_z2=0, sigma_i2=1),
                           random_channels(np.random.default_rng(0), 4, 8, 1, 3)))
