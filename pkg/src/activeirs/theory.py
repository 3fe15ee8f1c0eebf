"""Numerical checks of the two energy-beam results.

``verify_theorem1`` solves the sum-power SDR with and without a dedicated
energy covariance at one fixed reflection state, compares the optimal values
and checks that merging the energy covariance into any information block
gives a feasible point of the reduced problem.

``verify_theorem2_construction`` applies the rank-one construction for the
sum-rate SDR to a set of covariance blocks and checks every property it is
supposed to have.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import conic
from .channels import make_rng
from .conic import Constraint, ConicProgram, HermitianBlock, Trace, require_optimal
from .errors import VerificationFailed
from .report import AOSettings
from .sdr import rank_report
from .sumpower import _Ops as _P1Ops, solve_sum_power, w_step_program
from .sumrate import choose_m, construct_rank_one
from .system import Instance, ReflectionState, effective_channels

PSD_TOL = 1e-9       # lambda_min >= -PSD_TOL * lambda_max
SUM_TOL = 1e-8       # Frobenius error of the block sum, relative
RANK_TOL = 1e-6      # lambda_2 / lambda_1 below this counts as rank one


# ---------------------------------------------------------------------------
# Theorem 1


@dataclass
class Theorem1Report:
    zeta1: float                      # with the energy covariance
    zeta2: float                      # information blocks only
    gap: float
    energy_trace: float               # tr(W_E) at the optimum found
    merged_residual: Dict[int, float] = field(default_factory=dict)   # worst relative violation per m
    slack_before: Dict[int, float] = field(default_factory=dict)
    slack_after: Dict[int, float] = field(default_factory=dict)
    passed: bool = True


def _p1_parts(channels, refl, cfg):
    """``(S, R_i, noise_i, C, budget)`` at a fixed reflection state, built from effective channels."""
    h, g = effective_channels(channels, refl)
    S = np.einsum("j,ja,jb->ab", cfg.alpha_arr, g, g.conj())
    R = [np.outer(hi, hi.conj()) for hi in h]
    noise = cfg.sigma_z2 * np.sum(np.abs(channels.h_r.conj() * refl.u) ** 2, axis=1) + cfg.sigma_i2_arr
    FT = refl.u[:, None] * channels.F
    C = FT.conj().T @ FT
    budget = cfg.P_I - cfg.sigma_z2 * float(np.sum(np.abs(refl.u) ** 2))
    eu_noise = cfg.sigma_z2 * float(np.dot(cfg.alpha_arr, np.sum(np.abs(channels.g_r.conj() * refl.u) ** 2, axis=1)))
    return S, R, noise, C, budget, eu_noise


def sdr1_program(channels, refl, cfg):
    """Sum-power SDR with an explicit energy covariance ``WE``."""
    S, R, noise, C, budget, eu_noise = _p1_parts(channels, refl, cfg)
    K, M = cfg.K_I, channels.M
    names = [f"W{i}" for i in range(K)] + ["WE"]
    cons = []
    for i in range(K):
        terms = [Trace(f"W{i}", R[i] / cfg.gamma[i])] + [Trace(n, -R[i]) for n in names if n != f"W{i}"]
        cons.append(Constraint(terms, ">=", float(noise[i]), f"sinr_{i}"))
    cons.append(Constraint([Trace(n, np.eye(M)) for n in names], "<=", cfg.P_A, "ap"))
    if math.isfinite(cfg.P_I):
        cons.append(Constraint([Trace(n, C) for n in names], "<=", budget, "amp"))
    return ConicProgram([HermitianBlock(n, M) for n in names], [Trace(n, S) for n in names], cons,
                        objective_constant=eu_noise, name="p1-sdr1")


def _sinr_slack(R, Ws, i, gamma, noise):
    """``tr(R_i W_i)/gamma_i - sum_{k != i} tr(R_i W_k) - noise_i``."""
    own = float(np.real(np.trace(R[i] @ Ws[i])))
    other = sum(float(np.real(np.trace(R[i] @ W))) for k, W in enumerate(Ws) if k != i)
    return own / gamma - other - float(noise)


def _rel(violation, scale):
    return max(violation, 0.0) / max(scale, 1e-300)


def verify_theorem1(instance: Instance, tol=1e-4, refl: Optional[ReflectionState] = None,
                    settings: Optional[AOSettings] = None, feas_tol=1e-7) -> Theorem1Report:
    """Cross-solve both SDRs at ``refl`` (default: the AO output) and check the merge for every ``m``.

    Raises :class:`VerificationFailed` when the relative gap exceeds ``tol``
    or a merged point violates a constraint by more than ``feas_tol``.
    """
    settings = settings or AOSettings()
    cfg, ch = instance.config, instance.channels
    if refl is None:
        refl = solve_sum_power(instance, settings).refl
    S, R, noise, C, budget, eu_noise = _p1_parts(ch, refl, cfg)
    K = cfg.K_I

    sol1 = require_optimal(conic.solve(sdr1_program(ch, refl, cfg), settings.conic), "SDR with energy block")
    ops = _P1Ops(ch, cfg)
    prog2, _, _ = w_step_program(ops, np.outer(refl.u_bar, refl.u_bar.conj()), cfg)
    sol2 = require_optimal(conic.solve(prog2, settings.conic), "SDR without energy block")
    zeta1, zeta2 = sol1.objective, sol2.objective
    gap = abs(zeta1 - zeta2) / max(abs(zeta2), 1e-300)

    W_hat = [sol1[f"W{i}"] for i in range(K)]
    WE = sol1["WE"]
    rep = Theorem1Report(zeta1, zeta2, gap, float(np.real(np.trace(WE))))
    if gap > tol:
        rep.passed = False
        raise VerificationFailed(f"optimal values differ: zeta1={zeta1:.6e}, zeta2={zeta2:.6e}, gap={gap:.2e}")

    for m in range(K):
        merged = [W + WE if i == m else W for i, W in enumerate(W_hat)]
        worst, where = 0.0, ""
        for i in range(K):
            own = float(np.real(np.trace(R[i] @ merged[i]))) / cfg.gamma[i]
            v = _rel(-_sinr_slack(R, merged, i, cfg.gamma[i], noise[i]), own + float(noise[i]))
            if v > worst:
                worst, where = v, f"sinr_{i}"
        total = sum(float(np.real(np.trace(W))) for W in merged)
        if _rel(total - cfg.P_A, cfg.P_A) > worst:
            worst, where = _rel(total - cfg.P_A, cfg.P_A), "ap"
        if math.isfinite(cfg.P_I):
            amp = sum(float(np.real(np.trace(C @ W))) for W in merged)
            if _rel(amp - budget, budget) > worst:
                worst, where = _rel(amp - budget, budget), "amp"
        lam = np.linalg.eigvalsh((merged[m] + merged[m].conj().T) / 2)
        if lam[0] < -PSD_TOL * max(lam[-1], 1e-300):
            worst, where = max(worst, -lam[0] / max(lam[-1], 1e-300)), f"psd_{m}"
        obj = sum(float(np.real(np.trace(S @ W))) for W in merged) + eu_noise
        rep.merged_residual[m] = worst
        rep.slack_before[m] = _sinr_slack(R, W_hat, m, cfg.gamma[m], noise[m]) - float(np.real(np.trace(R[m] @ WE)))
        rep.slack_after[m] = _sinr_slack(R, merged, m, cfg.gamma[m], noise[m])
        if worst > feas_tol:
            rep.passed = False
            raise VerificationFailed(f"merged point (m={m}) violates {where} by {worst:.2e} (relative)")
        if abs(obj - zeta1) > tol * max(abs(zeta1), 1e-300):
            rep.passed = False
            raise VerificationFailed(f"merged point (m={m}) changes the objective")
    return rep


# ---------------------------------------------------------------------------
# Theorem 2


@dataclass
class Theorem2Report:
    m: int
    blocks: List[np.ndarray]
    beams: List[Optional[np.ndarray]]
    min_eig_ratio: float          # min over blocks of lambda_min / lambda_max
    sum_error: float              # relative Frobenius error of the block sum
    signal_error: float           # relative change of the received total power (max over IUs)
    energy_error: float
    budget_error: float           # AP and amplification rows
    interference_increase: float  # relative, should be <= 0
    dominance: float              # min over i != m of lambda_min(W_i - W*_i) / lambda_max(W_i)
    rank_one_count: int
    rate_before: float
    rate_after: float
    passed: bool = True


def _min_eig_ratio(X):
    lam = np.linalg.eigvalsh((X + X.conj().T) / 2)
    return 1.0 if lam[-1] <= 0 and lam[0] >= 0 else lam[0] / max(abs(lam[-1]), 1e-300)


def _rank_le_one(X):
    if not np.any(X):
        return True
    return rank_report(X, RANK_TOL).rank <= 1


def _sdr_quantities(Ws, h, g, C):
    K = len(Ws)
    total = np.array([sum(float(np.real(h[i].conj() @ W @ h[i])) for W in Ws) for i in range(K)])
    inter = np.array([sum(float(np.real(h[i].conj() @ W @ h[i])) for k, W in enumerate(Ws) if k != i)
                      for i in range(K)])
    energy = np.array([sum(float(np.real(gj.conj() @ W @ gj)) for W in Ws) for gj in g])
    ap = sum(float(np.real(np.trace(W))) for W in Ws)
    amp = sum(float(np.real(np.trace(C @ W))) for W in Ws)
    return total, inter, energy, ap, amp


def verify_theorem2_construction(Ws, instance: Instance, refl: ReflectionState, tol=1e-8, m=None,
                                 raise_on_failure=True) -> Theorem2Report:
    """Apply the remainder-block construction to ``Ws`` and check its properties.

    Checked: PSD blocks, unchanged block sum, unchanged signal/EH/AP/amplification
    values, non-increasing interference, ``W_i - W*_i`` PSD for ``i != m``, at
    least ``K_I - 1`` blocks of rank at most one, and an SDR-level rate that
    does not drop.
    """
    cfg, ch = instance.config, instance.channels
    K = len(Ws)
    h, g = effective_channels(ch, refl)
    FT = refl.u[:, None] * ch.F
    C = FT.conj().T @ FT
    m = choose_m(Ws) if m is None else m
    beams, W_star = construct_rank_one(Ws, h, m)

    before = _sdr_quantities(Ws, h, g, C)
    after = _sdr_quantities(W_star, h, g, C)

    def rel(a, b):
        a, b = np.atleast_1d(a), np.atleast_1d(b)
        return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))) if a.size else 0.0

    noise_i = cfg.sigma_z2 * np.sum(np.abs(ch.h_r.conj() * refl.u) ** 2, axis=1) + cfg.sigma_i2_arr

    def rate(q):
        total, inter = q[0] + noise_i, q[1] + noise_i
        return float(np.dot(cfg.mu_arr, np.log2(total / inter)))

    sum_ref = sum(Ws)
    rep = Theorem2Report(
        m=m, blocks=W_star, beams=beams,
        min_eig_ratio=min(_min_eig_ratio(W) for W in W_star),
        sum_error=float(np.linalg.norm(sum(W_star) - sum_ref) / max(np.linalg.norm(sum_ref), 1e-300)),
        signal_error=rel(after[0], before[0]),
        energy_error=rel(after[2], before[2]),
        budget_error=max(rel(after[3], before[3]), rel(after[4], before[4]) if np.any(C) else 0.0),
        interference_increase=float(np.max((after[1] - before[1]) / np.maximum(before[1] + noise_i, 1e-300)))
        if K else 0.0,
        dominance=min([_min_eig_ratio_rel(Ws[i] - W_star[i], Ws[i]) for i in range(K) if i != m] or [0.0]),
        rank_one_count=sum(_rank_le_one(W) for W in W_star),
        rate_before=rate(before), rate_after=rate(after),
    )
    failures = []
    if rep.min_eig_ratio < -PSD_TOL:
        failures.append(f"block not PSD (lambda_min/lambda_max = {rep.min_eig_ratio:.2e})")
    if rep.sum_error > SUM_TOL:
        failures.append(f"block sum changed by {rep.sum_error:.2e}")
    for name, err in (("signal", rep.signal_error), ("EH", rep.energy_error), ("budget", rep.budget_error)):
        if err > tol:
            failures.append(f"{name} values changed by {err:.2e}")
    if rep.interference_increase > tol:
        failures.append(f"interference grew by {rep.interference_increase:.2e}")
    if rep.dominance < -PSD_TOL:
        failures.append(f"W_i - W*_i not PSD ({rep.dominance:.2e})")
    if rep.rank_one_count < K - 1:
        failures.append(f"only {rep.rank_one_count} rank-one blocks")
    if rep.rate_after < rep.rate_before - tol * max(abs(rep.rate_before), 1.0):
        failures.append(f"rate dropped from {rep.rate_before:.6f} to {rep.rate_after:.6f}")
    if failures:
        rep.passed = False
        if raise_on_failure:
            raise VerificationFailed("; ".join(failures))
    return rep


def _min_eig_ratio_rel(D, ref):
    lam = np.linalg.eigvalsh((D + D.conj().T) / 2)
    top = np.linalg.eigvalsh((ref + ref.conj().T) / 2)[-1]
    return lam[0] / max(abs(top), 1e-300)


def perturbed_blocks(Ws, rng=0, scale=0.2, rank=2):
    """Higher-rank test blocks: each block plus ``rank - 1`` random PSD rank-one terms of relative size ``scale``."""
    gen = make_rng(rng)
    out = []
    for W in Ws:
        M = W.shape[0]
        extra = np.zeros((M, M), dtype=complex)
        for _ in range(rank - 1):
            v = (gen.standard_normal(M) + 1j * gen.standard_normal(M)) / math.sqrt(2)
            extra += np.outer(v, v.conj())
        size = max(float(np.real(np.trace(W))), 1e-300)
        out.append(W + scale * size * extra / max(float(np.real(np.trace(extra))), 1e-300))
    return out
