"""Weighted sum-power maximization without information users.

Alternates between the energy-beam SDP (one dedicated energy beam suffices)
and successive convex approximation of the reflect problem in the lifted
vector ``u_bar = [conj(u); 1]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import conic
from .channels import make_rng
from .conic import (Constraint, ConicProgram, FixedEntry, HermitianBlock, Linear, Quad, Trace,
                    VectorBlock, require_optimal)
from .errors import BudgetExhausted, RankTooHigh
from .report import AOSettings, SolveReport, relative_gain
from .sdr import principal, rank_one_extract, rank_reduce
from .system import (Instance, Precoder, ReflectionState, build_lifted, effective_channels,
                     feasibility_report, lift_P, lift_Q, weighted_sum_power)


def energy_kernel(channels, refl, cfg):
    """``S = sum_j alpha_j g_j g_j^H`` for the current reflection state."""
    _, g = effective_channels(channels, refl)
    return np.einsum("j,ja,jb->ab", cfg.alpha_arr, g, g.conj())


def irs_noise_power(channels, refl, cfg):
    """Weighted IRS-noise power collected by the EUs, ``sum_j alpha_j sigma_z^2 ||g_rj^H Theta||^2``."""
    return float(cfg.sigma_z2 * np.dot(cfg.alpha_arr, np.sum(np.abs(channels.g_r.conj() * refl.u) ** 2, axis=1)))


@dataclass
class EnergyStep:
    W: np.ndarray
    v0: np.ndarray
    value: float          # tr(S W) at the relaxed optimum
    rank_fallback: bool   # principal-eigenvector fallback was used
    solution: object = None


def energy_subproblem(channels, refl, cfg, settings: Optional[conic.SolverSettings] = None) -> EnergyStep:
    """Optimal energy covariance for fixed ``Theta`` and its rank-one beam."""
    S = energy_kernel(channels, refl, cfg)
    M = channels.M
    rows = [[np.eye(M)]]
    cons = [Constraint([Trace("W", np.eye(M))], "<=", cfg.P_A, "ap")]
    C = None
    if math.isfinite(cfg.P_I):
        P_bar = cfg.P_I - cfg.sigma_z2 * float(np.sum(np.abs(refl.u) ** 2))
        if P_bar <= 0:
            raise BudgetExhausted(f"IRS noise alone uses {cfg.P_I - P_bar:.3e} W of P_I = {cfg.P_I:.3e} W")
        FT = refl.u[:, None] * channels.F
        C = FT.conj().T @ FT
        cons.append(Constraint([Trace("W", C)], "<=", P_bar, "amp"))
        rows.append([C])
    prog = ConicProgram([HermitianBlock("W", M)], [Trace("W", S)], cons, name="energy")
    sol = require_optimal(conic.solve(prog, settings), "energy subproblem")
    W = rank_reduce([sol["W"]], rows, [S])[0]
    fallback = False
    try:
        v0 = rank_one_extract(W)
    except RankTooHigh:
        fallback = True
        v0 = principal(W)
        v0 = v0 / max(np.linalg.norm(v0), 1e-300) * math.sqrt(max(np.trace(W).real, 0.0))
        scale = 1.0
        if C is not None:
            need = float(np.real(v0.conj() @ C @ v0))
            if need > P_bar:
                scale = min(scale, math.sqrt(P_bar / need))
        v0 = v0 * scale
    return EnergyStep(W=W, v0=v0, value=float(np.real(np.trace(S @ W))), rank_fallback=fallback, solution=sol)


def reflect_kernels(channels, v0, cfg):
    """``(A, K)``: objective kernel and amplification kernel ``Phi + sigma_z^2 P`` for beam ``v0``."""
    lifted = build_lifted(channels, cfg, energy_beam=v0)
    K = lifted.Phi + cfg.sigma_z2 * lift_P(channels.N)
    return lifted.A, K


def sca_lower_bound(u_bar, A, u_bar_l):
    """First-order minorizer ``2 Re{u^H A u_l} - u_l^H A u_l`` of ``u^H A u``."""
    return float(2 * np.real(np.vdot(u_bar, A @ u_bar_l)) - np.real(np.vdot(u_bar_l, A @ u_bar_l)))


def quad_value(u_bar, A):
    return float(np.real(np.vdot(u_bar, A @ u_bar)))


def _reflect_program(A, K, P_I, u_bar_l):
    n = A.shape[0]
    a = A @ u_bar_l
    return ConicProgram(
        [VectorBlock("u", n)], [Linear("u", 2 * a)],
        [Constraint([Quad("u", K)], "<=", P_I, "amp")],
        [FixedEntry("u", n - 1, 1.0, "fixed")],
        objective_constant=-float(np.real(np.vdot(u_bar_l, a))), name="wpt-reflect",
    )


def sca_reflect_step(channels, v0, cfg, u_bar_l, settings=None, kernels=None):
    """One SCA step: maximize the minorizer at ``u_bar_l`` over the amplification ellipsoid."""
    A, K = kernels if kernels is not None else reflect_kernels(channels, v0, cfg)
    return _step(A, K, cfg.P_I, u_bar_l, settings)


def closed_form_phases(A, u_bar_ref):
    """Optimal phases of the entries of ``u_bar`` (first N): ``arg([A u_ref]_n)``, 0 where that entry vanishes.

    The reflection phases are their negatives since ``u_bar = [conj(u); 1]``.
    """
    a = (A @ u_bar_ref)[:-1]
    return np.where(np.abs(a) > 0, np.mod(np.angle(a), 2 * np.pi), 0.0)


def magnitude_step(A, K, P_I, u_bar_l, settings=None):
    """Reflect step with phases fixed in closed form; only the magnitudes are optimized."""
    n = A.shape[0]
    Kd = np.real(np.diag(K))
    if np.abs(K - np.diag(np.diag(K))).max() > 0:
        raise ValueError("magnitude-only step needs a diagonal amplification kernel")
    a = A @ u_bar_l
    phases = closed_form_phases(A, u_bar_l)
    prog = ConicProgram(
        [VectorBlock("b", n - 1, real=True, nonneg=True)],
        [Linear("b", 2 * np.abs(a[:-1]))],
        [Constraint([Quad("b", np.diag(Kd[:-1]))], "<=", P_I - Kd[-1], "amp")],
        objective_constant=float(2 * np.real(a[-1]) - np.real(np.vdot(u_bar_l, a))), name="wpt-magnitude",
    )
    sol = require_optimal(conic.solve(prog, settings), "magnitude step")
    b = np.clip(sol["b"], 0.0, None)
    return np.append(b * np.exp(1j * phases), 1.0), sol


def reflect_sca(A, K, P_I, u_bar0, settings: AOSettings, step=None):
    """Inner SCA loop; returns ``(u_bar, trace)`` with the true objective ``u^H A u`` per iteration."""
    step = step or (lambda ul: _step(A, K, P_I, ul, settings.conic))
    u = np.asarray(u_bar0, dtype=complex)
    trace = [quad_value(u, A)]
    for _ in range(settings.inner_max):
        cand = step(u)
        val = quad_value(cand, A)
        if val < trace[-1]:
            break   # numerical noise; keep the incumbent
        u = cand
        trace.append(val)
        if relative_gain(val, trace[-2]) < settings.inner_tol:
            break
    return u, trace


def _step(A, K, P_I, u_bar_l, conic_settings):
    if not np.any(A):
        return np.asarray(u_bar_l, dtype=complex).copy()
    sol = require_optimal(conic.solve(_reflect_program(A, K, P_I, u_bar_l), conic_settings), "reflect step")
    u = sol["u"].copy()
    u[-1] = 1.0
    return u


def initial_reflection(channels, cfg, seed=0, fraction=0.9, beams=None):
    """Random phases and a common amplitude using ``fraction * P_I`` under the initial beams.

    The default initial beam is ``sqrt(P_A) v_S`` with ``v_S`` the dominant
    eigenvector of the EU kernel over the direct links.  With ``P_I = inf``
    the amplitude is 1.
    """
    rng = make_rng(seed, 1000)
    theta = 2 * np.pi * rng.random(channels.N)
    if not math.isfinite(cfg.P_I):
        return ReflectionState.from_polar(np.ones(channels.N), theta)
    if beams is None:
        S0 = energy_kernel(channels, ReflectionState.off(channels.N), cfg)
        _, V = np.linalg.eigh(S0)
        beams = math.sqrt(cfg.P_A) * V[:, -1][None, :]
    beams = np.atleast_2d(beams)
    incident = float(np.sum(np.abs(channels.F @ beams.T) ** 2))
    beta = math.sqrt(fraction * cfg.P_I / (incident + cfg.sigma_z2 * channels.N))
    return ReflectionState.from_polar(np.full(channels.N, beta), theta)


@dataclass
class WptSolution:
    v0: np.ndarray
    refl: ReflectionState
    trace: List[float]
    iterations: int
    status: str
    objective: float
    inner_iterations: List[int] = field(default_factory=list)
    inner_traces: List[List[float]] = field(default_factory=list)
    report: Optional[SolveReport] = None

    @property
    def precoder(self):
        return Precoder(np.zeros((0, self.v0.size), dtype=complex), self.v0[None, :])


def solve_wpt(instance: Instance, settings: Optional[AOSettings] = None, refl0: Optional[ReflectionState] = None):
    """AO between :func:`energy_subproblem` and the SCA reflect loop."""
    settings = settings or AOSettings()
    cfg, ch = instance.config, instance.channels
    if cfg.K_I != 0:
        raise ValueError("solve_wpt needs K_I = 0; use the sum-power solver otherwise")
    refl = refl0 or initial_reflection(ch, cfg, settings.seed, settings.init_fraction)
    trace, inner_its, inner_traces = [], [], []
    v0 = None
    status = "max_iterations"
    for it in range(1, settings.outer_max + 1):
        step = energy_subproblem(ch, refl, cfg, settings.conic)
        v0 = step.v0
        A, K = reflect_kernels(ch, v0, cfg)
        u_bar, itrace = reflect_sca(A, K, cfg.P_I, refl.u_bar, settings)
        inner_its.append(len(itrace) - 1)
        inner_traces.append(itrace)
        refl = ReflectionState.from_u_bar(u_bar)
        obj = weighted_sum_power(Precoder(np.zeros((0, ch.M)), v0[None, :]), refl, ch, cfg)
        trace.append(obj)
        if it > 1 and relative_gain(trace[-1], trace[-2]) < settings.outer_tol:
            status = "converged"
            break
    prec = Precoder(np.zeros((0, ch.M)), v0[None, :])
    feas = feasibility_report("P1", prec, refl, ch, cfg)
    rep = SolveReport("wpt", status, trace[-1], trace, len(trace), inner_its, feas.residuals)
    return WptSolution(v0=v0, refl=refl, trace=trace, iterations=len(trace), status=status,
                       objective=trace[-1], inner_iterations=inner_its, inner_traces=inner_traces, report=rep)
