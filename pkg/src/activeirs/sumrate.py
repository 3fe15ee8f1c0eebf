"""Weighted sum-rate maximization with energy-harvesting targets.

The rate of IU ``i`` is written as ``log2 e^(rho_i - tau_i)`` with slacks
bounding the total received power from below (``e^rho``) and the
interference-plus-noise power from above (``e^tau``).  Energy beams are
dropped.  AO alternates one SCA step on the transmit SDP (``e^tau``
linearized) and one on the reflect QCQP (convex quadratics on the wrong side
replaced by their tangent minorizers ``chi``).  Slacks are natural-log
quantities; reported rates are in bit/s/Hz.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import conic
from .channels import make_rng
from .conic import (Constraint, ConicProgram, Exp, FixedEntry, HermitianBlock, Linear, Quad, Scalar,
                    ScalarBlock, Trace, VectorBlock, require_optimal)
from .errors import Infeasible, NoFeasibleCandidate, SolverError
from .report import AOSettings, SolveReport, relative_gain
from .sdr import principal, rank_one_extract, rank_report, rank_reduce
from .system import (Instance, Precoder, ReflectionState, feasibility_report, harvested_powers, lift_G,
                     lift_H, lift_P, lift_T, lift_Z, weighted_sum_rate)

LN2 = math.log(2.0)
FEAS_TOL = 1e-6
STEP_MARGIN = 1e-5   # relative tightening of the EH, AP and amplification rows inside AO steps
STEP_VIOLATION = 1e-6   # largest solver violation accepted for an AO step (the step is re-checked exactly)
INIT_GAMMA = 0.1   # SINR target of the sum-power run that seeds the AO


def chi(u_bar, B, u_bar_t):
    """Tangent minorizer ``2 Re{u^H B u_t} - u_t^H B u_t`` of ``u^H B u`` (B PSD)."""
    return float(2 * np.real(np.vdot(u_bar, B @ u_bar_t)) - np.real(np.vdot(u_bar_t, B @ u_bar_t)))


def exp_tangent(tau, tau_t):
    """First-order expansion ``e^{tau_t} (tau - tau_t + 1)`` (a lower bound of ``e^tau``)."""
    return math.exp(tau_t) * (tau - tau_t + 1.0)


class _Ops:
    def __init__(self, channels, cfg):
        self.ch, self.cfg = channels, cfg
        self.G, self.H = lift_G(channels), lift_H(channels)
        self.Z, self.T = lift_Z(channels), lift_T(channels)
        self.P = lift_P(channels.N)

    def h(self, u_bar):
        """Effective IU channels ``h_i = H_i^H u_bar`` as rows."""
        return np.einsum("iam,a->im", self.H.conj(), u_bar)

    def g(self, u_bar):
        return np.einsum("jam,a->jm", self.G.conj(), u_bar)

    def Q(self, W):
        diag = np.real(np.einsum("nm,mk,nk->n", self.ch.F, W, self.ch.F.conj()))
        return np.diag(np.append(diag, 0.0)).astype(complex)


def received_powers(ops: _Ops, Ws, u_bar):
    """``(total_i, interference_plus_noise_i)`` for covariance blocks ``Ws``."""
    cfg = ops.cfg
    h = ops.h(u_bar)
    K = cfg.K_I
    P = np.array([[np.real(h[i].conj() @ Ws[k] @ h[i]) for k in range(K)] for i in range(K)])
    noise = cfg.sigma_z2 * np.real(np.einsum("a,iab,b->i", u_bar.conj(), ops.T, u_bar)) + cfg.sigma_i2_arr
    total = P.sum(axis=1) + noise
    return total, total - np.diag(P)


def sdr_rate(ops: _Ops, Ws, u_bar):
    """Weighted sum-rate (bit/s/Hz) of covariance blocks ``Ws``; equals the true rate for rank-one blocks."""
    total, inter = received_powers(ops, Ws, u_bar)
    return float(np.dot(ops.cfg.mu_arr, np.log2(total / inter)))


def harvested_sdr(ops: _Ops, Ws, u_bar):
    g = ops.g(u_bar)
    Wsum = sum(Ws)
    noise = ops.cfg.sigma_z2 * np.real(np.einsum("a,jab,b->j", u_bar.conj(), ops.Z, u_bar))
    return np.real(np.einsum("jm,mk,jk->j", g.conj(), Wsum, g)) + noise


def transmit_program(ops: _Ops, u_bar, tau_t, cfg, margin=0.0):
    """Transmit step with ``e^{tau}`` replaced by its tangent at ``tau_t``.

    ``margin`` tightens the EH, AP and amplification rows by that relative
    amount so a solver-accurate point also passes the exact check.
    """
    ch = ops.ch
    K, M = cfg.K_I, ch.M
    h, g = ops.h(u_bar), ops.g(u_bar)
    refl = ReflectionState.from_u_bar(u_bar)
    R = [np.outer(h[i], h[i].conj()) for i in range(K)]
    noise = cfg.sigma_z2 * np.sum(np.abs(ch.h_r.conj() * refl.u) ** 2, axis=1) + cfg.sigma_i2_arr
    blocks = [HermitianBlock(f"W{i}", M) for i in range(K)]
    blocks += [ScalarBlock(f"rho{i}") for i in range(K)] + [ScalarBlock(f"tau{i}") for i in range(K)]
    cons, rows = [], []
    for i in range(K):
        cons.append(Constraint([Exp(f"rho{i}")] + [Trace(f"W{k}", -R[i]) for k in range(K)], "<=",
                               float(noise[i]), f"signal_{i}"))
        rows.append([R[i]] * K)
    for i in range(K):
        et = math.exp(tau_t[i])
        terms = [Trace(f"W{k}", R[i]) for k in range(K) if k != i] + [Scalar(f"tau{i}", -et)]
        cons.append(Constraint(terms, "<=", et * (1 - tau_t[i]) - float(noise[i]), f"interference_{i}"))
        rows.append([None if k == i else R[i] for k in range(K)])
    eu_noise = cfg.sigma_z2 * np.sum(np.abs(ch.g_r.conj() * refl.u) ** 2, axis=1)
    for j in range(cfg.K_E):
        if cfg.E[j] > 0:
            S = np.outer(g[j], g[j].conj())
            cons.append(Constraint([Trace(f"W{i}", S) for i in range(K)], ">=",
                                   float(cfg.E[j] * (1 + margin) - eu_noise[j]), f"eh_{j}"))
            rows.append([S] * K)
    cons.append(Constraint([Trace(f"W{i}", np.eye(M)) for i in range(K)], "<=", cfg.P_A * (1 - margin), "ap"))
    rows.append([np.eye(M)] * K)
    if math.isfinite(cfg.P_I):
        FT = refl.u[:, None] * ch.F
        C = FT.conj().T @ FT
        budget = cfg.P_I * (1 - margin) - cfg.sigma_z2 * float(np.sum(np.abs(refl.u) ** 2))
        cons.append(Constraint([Trace(f"W{i}", C) for i in range(K)], "<=", budget, "amp"))
        rows.append([C] * K)
    obj = [Scalar(f"rho{i}", cfg.mu[i] / LN2) for i in range(K)] + \
          [Scalar(f"tau{i}", -cfg.mu[i] / LN2) for i in range(K)]
    return ConicProgram(blocks, obj, cons, name="p2-transmit"), rows


def _checked(sol, what, strict):
    """Strict mode raises on any non-optimal solve.  Otherwise a failed solve
    that still produced an iterate is handed back; the AO driver re-checks
    it exactly and discards it unless it is feasible and improving."""
    if sol.status == conic.INFEASIBLE:
        raise Infeasible(f"{what} infeasible ({', '.join(sol.diagnosis)})")
    if strict or sol.status == conic.OPTIMAL:
        return require_optimal(sol, what, STEP_VIOLATION)
    return sol


def transmit_subproblem(channels, refl, tau_t, cfg, settings=None, ops=None, strict=True, margin=0.0):
    """Returns ``(Ws, rho, tau, solution)``; raises :class:`Infeasible` when the EH targets cannot be met."""
    ops = ops or _Ops(channels, cfg)
    prog, _ = transmit_program(ops, refl.u_bar, tau_t, cfg, margin)
    sol = _checked(conic.solve(prog, settings), "transmit step", strict)
    K = cfg.K_I
    return ([sol[f"W{i}"] for i in range(K)], np.array([sol[f"rho{i}"] for i in range(K)]),
            np.array([sol[f"tau{i}"] for i in range(K)]), sol)


def _reflect_kernels(ops: _Ops, Ws, cfg):
    K = cfg.K_I
    Wsum = sum(Ws)
    HW = [[ops.H[i] @ Ws[k] @ ops.H[i].conj().T for k in range(K)] for i in range(K)]
    signal = [sum(HW[i]) + cfg.sigma_z2 * ops.T[i] for i in range(K)]
    interference = [sum((HW[i][k] for k in range(K) if k != i), np.zeros_like(ops.P))
                    + cfg.sigma_z2 * ops.T[i] for i in range(K)]
    energy = [ops.G[j] @ Wsum @ ops.G[j].conj().T + cfg.sigma_z2 * ops.Z[j] for j in range(cfg.K_E)]
    amp = sum(ops.Q(W) for W in Ws) + cfg.sigma_z2 * ops.P
    return signal, interference, energy, amp


def reflect_program(ops: _Ops, Ws, u_bar_t, tau_t, cfg, kernels=None, margin=0.0):
    """Reflect step: tangent minorizers for the convex terms on the ``>=`` side, tangent of ``e^tau``.

    ``margin`` as in :func:`transmit_program`.
    """
    signal, interference, energy, amp = kernels or _reflect_kernels(ops, Ws, cfg)
    n = ops.ch.N + 1
    K = cfg.K_I
    blocks = [VectorBlock("u", n)] + [ScalarBlock(f"rho{i}") for i in range(K)] + \
             [ScalarBlock(f"tau{i}") for i in range(K)]
    cons = []
    for i in range(K):
        B = signal[i]
        const = float(np.real(np.vdot(u_bar_t, B @ u_bar_t)))
        cons.append(Constraint([Exp(f"rho{i}"), Linear("u", -2 * B @ u_bar_t)], "<=",
                               cfg.sigma_i2[i] - const, f"signal_{i}"))
    for i in range(K):
        et = math.exp(tau_t[i])
        cons.append(Constraint([Quad("u", interference[i]), Scalar(f"tau{i}", -et)], "<=",
                               et * (1 - tau_t[i]) - cfg.sigma_i2[i], f"interference_{i}"))
    for j in range(cfg.K_E):
        if cfg.E[j] > 0:
            B = energy[j]
            const = float(np.real(np.vdot(u_bar_t, B @ u_bar_t)))
            cons.append(Constraint([Linear("u", 2 * B @ u_bar_t)], ">=", cfg.E[j] * (1 + margin) + const,
                                   f"eh_{j}"))
    if math.isfinite(cfg.P_I):
        cons.append(Constraint([Quad("u", amp)], "<=", cfg.P_I * (1 - margin), "amp"))
    obj = [Scalar(f"rho{i}", cfg.mu[i] / LN2) for i in range(K)] + \
          [Scalar(f"tau{i}", -cfg.mu[i] / LN2) for i in range(K)]
    return ConicProgram(blocks, obj, cons, [FixedEntry("u", n - 1, 1.0, "fixed")], name="p2-reflect")


def reflect_subproblem(channels, Ws, u_bar_t, tau_t, cfg, settings=None, ops=None, strict=True, margin=0.0):
    """Returns ``(u_bar, rho, tau, solution)``."""
    ops = ops or _Ops(channels, cfg)
    sol = _checked(conic.solve(reflect_program(ops, Ws, u_bar_t, tau_t, cfg, margin=margin), settings),
                   "reflect step", strict)
    u = sol["u"].copy()
    u[-1] = 1.0
    K = cfg.K_I
    return (u, np.array([sol[f"rho{i}"] for i in range(K)]), np.array([sol[f"tau{i}"] for i in range(K)]), sol)


# ---------------------------------------------------------------------------
# recovery


def construct_rank_one(Ws, h, m):
    """Blocks ``w_i = (h_i^H W_i h_i)^{-1/2} W_i h_i`` for ``i != m`` and the remainder block for ``m``.

    Returns ``(beams, W_bar)``: ``beams[i]`` is None for ``i = m`` and for
    zero blocks (whose rank-one replacement is zero).
    """
    K = len(Ws)
    beams, W_bar = [], []
    for i in range(K):
        if i == m:
            beams.append(None)
            W_bar.append(None)
            continue
        q = float(np.real(h[i].conj() @ Ws[i] @ h[i]))
        if q <= 0:
            w = np.zeros(Ws[i].shape[0], dtype=complex)
        else:
            w = Ws[i] @ h[i] / math.sqrt(q)
        beams.append(w)
        W_bar.append(np.outer(w, w.conj()))
    W_bar[m] = sum(Ws) - sum(W_bar[i] for i in range(K) if i != m)
    return beams, W_bar


def choose_m(Ws):
    """Index of the block with the largest second eigenvalue."""
    second = [rank_report(W).eigenvalues[1] if W.shape[0] > 1 else 0.0 for W in Ws]
    return int(np.argmax(second))


@dataclass
class Recovery:
    w: np.ndarray
    method: str          # "rank-one" or "construction"
    m: Optional[int] = None
    feasible_count: int = 0


def recover_precoder(Ws, channels, refl, cfg, draws=500, rng=0, tol=FEAS_TOL) -> Recovery:
    """Rank-one precoder from the converged covariance blocks.

    With every block numerically rank one the beams are extracted directly.
    Otherwise the remainder-block construction is applied and the beam of
    block ``m`` is drawn by Gaussian randomization over ``W_bar_m``, each
    candidate backed off to the AP and amplification budgets and kept only
    if the EH targets hold.
    """
    K = cfg.K_I
    try:
        return Recovery(np.array([rank_one_extract(W) for W in Ws]), "rank-one")
    except Exception:
        pass
    h, _ = _eff(channels, refl)
    m = choose_m(Ws)
    beams, W_bar = construct_rank_one(Ws, h, m)
    others = [beams[i] for i in range(K) if i != m]
    used = sum(float(np.real(np.vdot(b, b))) for b in others)
    FT = refl.u[:, None] * channels.F
    C = FT.conj().T @ FT
    amp_used = sum(float(np.real(b.conj() @ C @ b)) for b in others) + cfg.sigma_z2 * float(np.sum(np.abs(refl.u) ** 2))

    lam, V = np.linalg.eigh((W_bar[m] + W_bar[m].conj().T) / 2)
    root = V * np.sqrt(np.clip(lam, 0, None))
    gen = make_rng(rng, 3000)
    Mdim = channels.M
    g = (gen.standard_normal((Mdim, draws)) + 1j * gen.standard_normal((Mdim, draws))) / math.sqrt(2)
    cands = [principal(W_bar[m])] + [root @ g[:, k] for k in range(draws)]
    best, best_val, count = None, -math.inf, 0
    for xi in cands:
        p = float(np.real(np.vdot(xi, xi)))
        if p <= 0:
            continue
        s = min(1.0, math.sqrt(max(cfg.P_A - used, 0.0) / p))
        a = float(np.real(xi.conj() @ C @ xi))
        if math.isfinite(cfg.P_I) and a > 0:
            s = min(s, math.sqrt(max(cfg.P_I - amp_used, 0.0) / a))
        w = np.array([beams[i] if i != m else s * xi for i in range(K)])
        prec = Precoder(w)
        if not feasibility_report("P2", prec, refl, channels, cfg).feasible(tol):
            continue
        count += 1
        val = weighted_sum_rate(prec, refl, channels, cfg)
        if val > best_val:
            best, best_val = w, val
    if best is None:
        raise NoFeasibleCandidate(f"none of {len(cands)} candidates for block {m} is feasible")
    return Recovery(best, "construction", m, count)


def _eff(channels, refl):
    from .system import effective_channels
    return effective_channels(channels, refl)


# ---------------------------------------------------------------------------
# starting point


@dataclass
class FeasibleStart:
    Ws: List[np.ndarray]
    u_bar: np.ndarray
    rho: np.ndarray
    tau: np.ndarray
    eh_ratio: float      # min_j Q_j / E_j (inf when no target)


def _slacks(ops, Ws, u_bar):
    total, inter = received_powers(ops, Ws, u_bar)
    return np.log(total), np.log(inter)


def _eh_ratio(q, E):
    ratios = [qj / ej for qj, ej in zip(q, E) if ej > 0]
    return min(ratios) if ratios else math.inf


def init_feasible(instance: Instance, settings: Optional[AOSettings] = None) -> FeasibleStart:
    """A point satisfying the EH, AP and amplification constraints.

    First the sum-power solver is run with unit EU weights and a small SINR
    target.  Sum-power optima often starve one EU, so when some target is
    missed a max-min EH alternation (:func:`maxmin_energy`) is run instead.
    """
    from .sumpower import solve_sum_power
    settings = settings or AOSettings()
    cfg, ch = instance.config, instance.channels
    ops = _Ops(ch, cfg)
    best_ratio, best = -math.inf, None
    p1 = replace(cfg, gamma=(INIT_GAMMA,) * cfg.K_I, alpha=(1.0,) * cfg.K_E)
    try:
        sol = solve_sum_power(Instance(p1, ch), settings)
        Ws = [np.outer(w, w.conj()) for w in sol.precoder.w]
        best = (Ws, sol.refl.u_bar)
        best_ratio = _eh_ratio(harvested_sdr(ops, Ws, sol.refl.u_bar), cfg.E)
    except (Infeasible, NoFeasibleCandidate, SolverError):
        pass
    if best is None and not np.any(cfg.E_arr > 0):
        return _plain_start(ops, instance, settings)
    if best_ratio < 1.0:
        ratio, Ws, u_bar = maxmin_energy(ops, instance, settings, u_bar0=None if best is None else best[1])
        if ratio > best_ratio:
            best_ratio, best = ratio, (Ws, u_bar)
    if best_ratio < 1.0 - FEAS_TOL:
        raise Infeasible(f"EH targets unattainable: best min_j Q_j/E_j = {best_ratio:.4g}", ratio=best_ratio)
    Ws, u_bar = best
    rho, tau = _slacks(ops, Ws, u_bar)
    return FeasibleStart(Ws, u_bar, rho, tau, best_ratio)


def maxmin_transmit(ops, u_bar, cfg, conic_settings=None):
    """``max t s.t. Q_j >= t E_j`` over one transmit covariance at a fixed reflection state.

    Returns ``(t, W)`` with ``t`` re-evaluated exactly at the returned ``W``.
    """
    ch = ops.ch
    M = ch.M
    targets = [j for j in range(cfg.K_E) if cfg.E[j] > 0]
    refl = ReflectionState.from_u_bar(u_bar)
    g = ops.g(u_bar)
    eu_noise = cfg.sigma_z2 * np.sum(np.abs(ch.g_r.conj() * refl.u) ** 2, axis=1)
    cons = [Constraint([Trace("W", np.outer(g[j], g[j].conj())), Scalar("t", -cfg.E[j])], ">=",
                       -float(eu_noise[j]), f"eh_{j}") for j in targets]
    cons.append(Constraint([Trace("W", np.eye(M))], "<=", cfg.P_A, "ap"))
    if math.isfinite(cfg.P_I):
        FT = refl.u[:, None] * ch.F
        cons.append(Constraint([Trace("W", FT.conj().T @ FT)], "<=",
                               cfg.P_I - cfg.sigma_z2 * float(np.sum(np.abs(refl.u) ** 2)), "amp"))
    sol = require_optimal(conic.solve(ConicProgram([HermitianBlock("W", M), ScalarBlock("t")], [Scalar("t")],
                                                   cons, name="maxmin-transmit"), conic_settings),
                          "max-min step", STEP_VIOLATION)
    W = sol["W"]
    return _eh_ratio(harvested_sdr(ops, [W], u_bar), cfg.E), W


def maxmin_energy(ops, instance, settings, u_bar0=None):
    """Alternate SDP (transmit covariance) and SCA (reflection) steps on ``max t s.t. Q_j >= t E_j``.

    Stops as soon as ``t >= 1``.  Returns ``(t, Ws, u_bar)`` with the
    covariance split evenly over the IUs.
    """
    from .wpt import initial_reflection
    cfg, ch = instance.config, instance.channels
    M, n = ch.M, ch.N + 1
    targets = [j for j in range(cfg.K_E) if cfg.E[j] > 0]
    u_bar = u_bar0 if u_bar0 is not None else initial_reflection(ch, cfg, settings.seed, settings.init_fraction).u_bar
    t_best, W = -math.inf, None
    for _ in range(settings.outer_max):
        _, W = maxmin_transmit(ops, u_bar, cfg, settings.conic)
        kernels = [ops.G[j] @ W @ ops.G[j].conj().T + cfg.sigma_z2 * ops.Z[j] for j in targets]
        amp = ops.Q(W) + cfg.sigma_z2 * ops.P
        cons = [Constraint([Linear("u", 2 * B @ u_bar), Scalar("t", -cfg.E[j])], ">=",
                           float(np.real(np.vdot(u_bar, B @ u_bar))), f"eh_{j}") for j, B in zip(targets, kernels)]
        if math.isfinite(cfg.P_I):
            cons.append(Constraint([Quad("u", amp)], "<=", cfg.P_I, "amp"))
        sol = require_optimal(conic.solve(ConicProgram([VectorBlock("u", n), ScalarBlock("t")], [Scalar("t")], cons,
                                                       [FixedEntry("u", n - 1, 1.0, "fixed")], name="maxmin-reflect"),
                                          settings.conic), "max-min step", STEP_VIOLATION)
        cand = sol["u"].copy()
        cand[-1] = 1.0
        t_new = _eh_ratio(harvested_sdr(ops, [W], cand), cfg.E)
        t_old = _eh_ratio(harvested_sdr(ops, [W], u_bar), cfg.E)
        if t_new >= t_old:
            u_bar = cand
        t = max(t_new, t_old)
        gain = relative_gain(t, t_best) if math.isfinite(t_best) else math.inf
        t_best = max(t_best, t)
        if t_best >= 1.0 or gain < settings.outer_tol:
            break
    return t_best, [W / cfg.K_I for _ in range(cfg.K_I)], u_bar


def _plain_start(ops, instance, settings):
    """MRT beams with equal power and the default reflection state (only used when E = 0)."""
    from .wpt import initial_reflection
    cfg, ch = instance.config, instance.channels
    refl = initial_reflection(ch, cfg, settings.seed, settings.init_fraction)
    h = ops.h(refl.u_bar)
    w = np.array([hi / max(np.linalg.norm(hi), 1e-300) for hi in h]) * math.sqrt(cfg.P_A / cfg.K_I)
    FT = refl.u[:, None] * ch.F
    if math.isfinite(cfg.P_I):
        need = float(np.sum(np.abs(FT @ w.T) ** 2))
        budget = cfg.P_I - cfg.sigma_z2 * float(np.sum(np.abs(refl.u) ** 2))
        if need > budget:
            w = w * math.sqrt(budget / need)
    Ws = [np.outer(b, b.conj()) for b in w]
    rho, tau = _slacks(ops, Ws, refl.u_bar)
    return FeasibleStart(Ws, refl.u_bar, rho, tau, math.inf)


# ---------------------------------------------------------------------------
# driver


@dataclass
class SumRateSolution:
    precoder: Precoder
    refl: ReflectionState
    rho: np.ndarray
    tau: np.ndarray
    trace: List[float]
    iterations: int
    recovery: str
    status: str
    objective: float
    sdr_objective: float
    W: List[np.ndarray] = field(default_factory=list)
    report: Optional[SolveReport] = None


def solve_sum_rate(instance: Instance, settings: Optional[AOSettings] = None,
                   start: Optional[FeasibleStart] = None, transmit=None, reflect=None) -> SumRateSolution:
    """AO between the transmit and reflect SCA steps, then precoder recovery.

    ``transmit(Ws, u_bar, tau)`` and ``reflect(Ws, u_bar, tau)`` override the
    two steps (the benchmark schemes use this); each returns the new blocks
    or lifted vector.  A step whose result lowers the objective is discarded.
    """
    settings = settings or AOSettings()
    cfg, ch = instance.config, instance.channels
    if cfg.K_I == 0:
        raise ValueError("sum-rate maximization needs at least one IU")
    ops = _Ops(ch, cfg)
    start = start or init_feasible(instance, settings)
    Ws, u_bar = [W.copy() for W in start.Ws], start.u_bar.copy()

    def default_transmit(Ws_, u_, tau_):
        return transmit_subproblem(ch, ReflectionState.from_u_bar(u_), tau_, cfg, settings.conic, ops, False,
                                   STEP_MARGIN)[0]

    def default_reflect(Ws_, u_, tau_):
        return reflect_subproblem(ch, Ws_, u_, tau_, cfg, settings.conic, ops, False, STEP_MARGIN)[0]

    transmit = transmit or default_transmit
    reflect = reflect or default_reflect
    value = sdr_rate(ops, Ws, u_bar)
    trace = [value]
    status = "max_iterations"
    for it in range(1, settings.outer_max + 1):
        prev = value
        _, tau = _slacks(ops, Ws, u_bar)
        cand = transmit(Ws, u_bar, tau)
        v = sdr_rate(ops, cand, u_bar)
        if v >= value and sdr_feasible(ops, cand, u_bar):
            Ws, value = cand, v
        _, tau = _slacks(ops, Ws, u_bar)
        cand_u = reflect(Ws, u_bar, tau)
        v = sdr_rate(ops, Ws, cand_u)
        if v >= value and sdr_feasible(ops, Ws, cand_u):
            u_bar, value = cand_u, v
        trace.append(value)
        if relative_gain(value, prev) < settings.outer_tol:
            status = "converged"
            break

    if settings.restarts:
        cand, v = transmit_restarts(ops, Ws, u_bar, transmit, settings)
        if v > value:
            Ws, value = cand, v
            trace.append(value)

    refl = ReflectionState.from_u_bar(u_bar)
    # purify the final blocks with every constraint value of the transmit step held fixed
    _, tau = _slacks(ops, Ws, u_bar)
    _, rows = transmit_program(ops, u_bar, tau, cfg)
    Ws_r = rank_reduce(Ws, rows)
    rec = recover_precoder(Ws_r, ch, refl, cfg, settings.draws, rng=make_rng(settings.seed, 3001))
    prec = Precoder(rec.w)
    rho, tau = _slacks(ops, [np.outer(w, w.conj()) for w in rec.w], u_bar)
    objective = weighted_sum_rate(prec, refl, ch, cfg)
    feas = feasibility_report("P2", prec, refl, ch, cfg)
    rep = SolveReport("P2", status, objective, trace, len(trace) - 1, [], feas.residuals,
                      {"sdr_objective": value, "recovery": rec.method})
    return SumRateSolution(precoder=prec, refl=refl, rho=rho, tau=tau, trace=trace, iterations=len(trace) - 1,
                           recovery=rec.method, status=status, objective=objective, sdr_objective=value,
                           W=Ws_r, report=rep)


def transmit_restarts(ops, Ws, u_bar, transmit, settings: AOSettings):
    """Rerun the transmit SCA at ``u_bar`` from one single-user start per IU.

    The rate is not concave in the blocks: with nearly collinear IU channels
    the AO can settle on a split of power where serving one IU is better.
    Returns the best feasible blocks found (``Ws`` itself if none beats it)
    and their rate.
    """
    best, best_value = Ws, sdr_rate(ops, Ws, u_bar)
    h = ops.h(u_bar)
    M = h.shape[1]
    for i in range(ops.cfg.K_I):
        norm = np.linalg.norm(h[i])
        if norm == 0:
            continue
        cur = [np.zeros((M, M), dtype=complex) for _ in range(ops.cfg.K_I)]
        cur[i] = np.outer(h[i], h[i].conj()) / norm ** 2   # only sets the first linearization point
        value, ok = -math.inf, False
        for _ in range(settings.inner_max):
            _, tau = _slacks(ops, cur, u_bar)
            try:
                cand = transmit(cur, u_bar, tau)
            except SolverError:
                break
            if not sdr_feasible(ops, cand, u_bar):
                break
            prev, cur, value, ok = value, cand, sdr_rate(ops, cand, u_bar), True
            if math.isfinite(prev) and relative_gain(value, prev) < settings.inner_tol:
                break
        if ok and value > best_value:
            best, best_value = cur, value
    return best, best_value


STEP_TOL = 1e-7   # relative constraint slack allowed for an accepted AO step


def sdr_feasible(ops, Ws, u_bar, tol=STEP_TOL):
    """Exact check of the EH, AP and amplification constraints for covariance blocks."""
    cfg = ops.cfg
    if any(np.linalg.eigvalsh((W + W.conj().T) / 2)[0] < -tol * max(np.trace(W).real, 1e-300) for W in Ws):
        return False
    if sum(np.trace(W).real for W in Ws) > cfg.P_A * (1 + tol):
        return False
    if math.isfinite(cfg.P_I):
        amp = float(np.real(np.vdot(u_bar, (sum(ops.Q(W) for W in Ws) + cfg.sigma_z2 * ops.P) @ u_bar)))
        if amp > cfg.P_I * (1 + tol):
            return False
    q = harvested_sdr(ops, Ws, u_bar)
    return all(qj >= ej * (1 - tol) for qj, ej in zip(q, cfg.E))
