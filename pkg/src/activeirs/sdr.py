"""Post-processing of relaxed PSD solutions.

Numerical rank, rank-one extraction, multi-block rank reduction
(purification along null-space directions) and Gaussian randomization of the
lifted reflection matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .channels import make_rng
from .conic import _trace_coef, herm_from_params
from .errors import NoFeasibleCandidate, NumericalFailure, RankTooHigh

RANK_TOL = 1e-6


@dataclass
class RankReport:
    eigenvalues: np.ndarray   # descending
    rank: int
    trace: float

    @property
    def ratio(self):
        """lambda_2 / lambda_1 (0 for rank-one or zero matrices)."""
        ev = self.eigenvalues
        if ev.size < 2 or ev[0] <= 0:
            return 0.0
        return max(float(ev[1]), 0.0) / float(ev[0])


def _herm(X):
    X = np.asarray(X, dtype=complex)
    return (X + X.conj().T) / 2


def rank_report(X, tol=RANK_TOL) -> RankReport:
    ev = np.linalg.eigvalsh(_herm(X))[::-1]
    top = ev[0] if ev.size else 0.0
    rank = int(np.sum(ev > tol * top)) if top > 0 else 0
    return RankReport(eigenvalues=ev, rank=rank, trace=float(np.sum(ev)))


def principal(X):
    """Scaled principal eigenvector ``sqrt(lambda_1) v_1`` (last column of the ascending eigendecomposition on ties)."""
    lam, V = np.linalg.eigh(_herm(X))
    return np.sqrt(max(lam[-1], 0.0)) * V[:, -1]


def rank_one_extract(X, tol=RANK_TOL):
    """Return ``w`` with ``w w^H ~ X``; the largest-magnitude entry of ``w`` is real positive."""
    rep = rank_report(X, tol)
    if rep.rank > 1:
        raise RankTooHigh(f"lambda_2/lambda_1 = {rep.ratio:.3e} exceeds {tol:g}")
    w = principal(X)
    k = int(np.argmax(np.abs(w))) if w.size else 0
    if w.size and abs(w[k]) > 0:
        w = w * np.exp(-1j * np.angle(w[k]))
    return w


def _factor(X, rel=1e-9):
    lam, V = np.linalg.eigh(_herm(X))
    top = max(lam[-1], 0.0) if lam.size else 0.0
    keep = lam > rel * top if top > 0 else np.zeros(lam.size, bool)
    return V[:, keep] * np.sqrt(lam[keep])


def rank_reduce(blocks: Sequence[np.ndarray], constraints: Sequence[Sequence[np.ndarray]],
                objective: Optional[Sequence[np.ndarray]] = None, rel=1e-9, max_steps=1000):
    """Purify a multi-block PSD solution.

    ``constraints[k][b]`` is the matrix of row ``k`` acting on block ``b``
    (``None`` for no contribution).  Each step finds Hermitian ``Delta_b`` with
    ``sum_b tr(V_b^H A_kb V_b Delta_b) = 0`` for every row and moves
    ``X_b = V_b (I - t Delta_b) V_b^H`` until some block loses rank.  The
    objective is added as an extra preserved row whenever the null space
    allows it.  Stops when ``sum_b rank_b^2`` no longer exceeds the number of
    preserved rows.
    """
    Vs = [_factor(X, rel) for X in blocks]
    rows = [list(c) for c in constraints]
    obj_row = list(objective) if objective is not None else None
    for _ in range(max_steps):
        ranks = [V.shape[1] for V in Vs]
        nvar = sum(r * r for r in ranks)
        if nvar <= len(rows):
            break

        def coef_matrix(row_list):
            out = np.zeros((len(row_list), nvar))
            for k, row in enumerate(row_list):
                off = 0
                for b, V in enumerate(Vs):
                    r = ranks[b]
                    if row[b] is not None and r:
                        out[k, off:off + r * r] = _trace_coef(V.conj().T @ row[b] @ V, r)
                    off += r * r
            return out

        Cmat = coef_matrix(rows + ([obj_row] if obj_row is not None else []))
        if obj_row is not None and nvar <= len(rows) + 1:
            Cmat = Cmat[:-1]
        if Cmat.shape[0]:
            # scale rows so the null space is not dominated by one constraint
            norms = np.linalg.norm(Cmat, axis=1)
            Cmat = Cmat / np.where(norms > 0, norms, 1.0)[:, None]
            _, sv, Vt = np.linalg.svd(Cmat)
            null_dim = nvar - int(np.sum(sv > 1e-12 * max(sv.max(), 1.0)))
            if null_dim <= 0:
                break
            d = Vt[-1]
        else:
            d = np.zeros(nvar)
            d[0] = 1.0
        deltas, off = [], 0
        for r in ranks:
            deltas.append(herm_from_params(d[off:off + r * r], r) if r else np.zeros((0, 0)))
            off += r * r
        top = max((np.linalg.eigvalsh(D)[-1] for D in deltas if D.size), default=0.0)
        bottom = min((np.linalg.eigvalsh(D)[0] for D in deltas if D.size), default=0.0)
        if top <= 0 and bottom >= 0:
            raise NumericalFailure("rank reduction produced a zero direction")
        if top < -bottom:
            deltas = [-D for D in deltas]
            top = -bottom
        t = 1.0 / top
        newV = []
        for V, D in zip(Vs, deltas):
            if V.shape[1] == 0:
                newV.append(V)
                continue
            # factor I - t D directly; the direction of its top eigenvalue drops out exactly
            mu, Q = np.linalg.eigh(D)
            s = 1.0 - t * mu
            keep = s > rel
            newV.append((V @ Q[:, keep]) * np.sqrt(s[keep]))
        if sum(V.shape[1] for V in newV) >= sum(ranks):
            raise NumericalFailure("rank reduction step did not reduce rank")
        Vs = newV
    return [V @ V.conj().T for V in Vs]


@dataclass
class RandomizationResult:
    u_bar: np.ndarray
    objective: float
    feasible_count: int
    draws: int
    source: str   # "principal" or "random"


def backoff_factor(r_bar, amp_kernel, budget):
    """Largest rho in (0, 1] with ``[rho r; 1]^H K [rho r; 1] <= budget`` (K has zero last row/col)."""
    if amp_kernel is None or not np.isfinite(budget):
        return 1.0
    need = float(np.real(np.vdot(r_bar, amp_kernel @ r_bar)))
    if need <= budget:
        return 1.0
    if budget <= 0:
        return 0.0
    return float(np.sqrt(budget / need))


def gaussian_randomize_u(U, evaluator: Callable, draws=500, rng=0, amp_kernel=None, amp_budget=np.inf,
                         project: Optional[Callable] = None, include_principal=True, last_tol=1e-8):
    """Best feasible lifted reflection vector drawn around ``U``.

    Candidates are ``r = U^{1/2} g`` with ``g ~ CN(0, I)``, normalized so the
    last entry is 1, optionally projected (``project`` acts on the first N
    entries), then scaled by the closed-form back-off ``rho``.  ``evaluator``
    maps ``u_bar`` to ``(feasible, objective)``.  The principal-eigenvector
    direction is scored as well when ``include_principal``.
    """
    U = _herm(U)
    if abs(U[-1, -1] - 1.0) > last_tol * max(1.0, abs(U).max()):
        raise ValueError("U[N+1, N+1] must equal 1")
    rng = make_rng(rng)
    lam, V = np.linalg.eigh(U)
    root = V * np.sqrt(np.clip(lam, 0.0, None))
    n = U.shape[0]
    g = (rng.standard_normal((n, draws)) + 1j * rng.standard_normal((n, draws))) / np.sqrt(2.0)
    cands = root @ g
    labelled = [("random", cands[:, k]) for k in range(draws)]
    if include_principal:
        labelled.insert(0, ("principal", principal(U)))

    best = None
    count = 0
    for source, r in labelled:
        if abs(r[-1]) < 1e-12 * max(np.linalg.norm(r), 1e-300):
            continue
        r = r / r[-1]
        if project is not None:
            r = np.append(project(r[:-1]), 1.0)
        rho = backoff_factor(r, amp_kernel, amp_budget)
        u_bar = np.append(rho * r[:-1], 1.0)
        ok, val = evaluator(u_bar)
        if not ok:
            continue
        count += 1
        if best is None or val > best.objective:
            best = RandomizationResult(u_bar=u_bar, objective=float(val), feasible_count=0, draws=draws,
                                       source=source)
    if best is None:
        raise NoFeasibleCandidate(f"none of {len(labelled)} randomization candidates is feasible")
    best.feasible_count = count
    return best


def unit_modulus(x):
    mag = np.abs(x)
    return np.where(mag > 0, x / np.where(mag > 0, mag, 1.0), 1.0 + 0j)


def common_modulus(beta):
    def project(x):
        return beta * unit_modulus(x)
    return project
