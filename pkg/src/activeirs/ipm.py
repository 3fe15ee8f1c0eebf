"""Primal-dual interior-point method for small complex SDPs.

Solves the standard-form pair::

    min  <C, X>            max  b^T y
    s.t. A(X) = b          s.t. A^T(y) + Z = C
         X in K                 Z in K

where ``K`` is a product of Hermitian PSD blocks and one non-negative orthant
(used for inequality slacks).  The search direction is the HKM direction with
Mehrotra's predictor-corrector; the Schur complement is ``m x m`` with ``m``
the number of constraint rows, which is tiny for beamforming SDPs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np
import scipy.linalg as sla


@dataclass
class SdpData:
    C: List[np.ndarray]          # per block (n_b, n_b) Hermitian
    A: List[np.ndarray]          # per block (m, n_b, n_b) Hermitian slices
    c_lp: np.ndarray             # (n_lp,)
    A_lp: np.ndarray             # (m, n_lp)
    b: np.ndarray                # (m,)


@dataclass
class IpmResult:
    status: str                  # "optimal", "infeasible", "max_iter", "failed"
    X: List[np.ndarray]
    x_lp: np.ndarray
    y: np.ndarray
    pobj: float
    dobj: float
    iterations: int
    certificate: np.ndarray = field(default=None)


def _herm(K):
    return (K + np.conj(np.swapaxes(K, -1, -2))) / 2


def _apply_A(data, X, x_lp):
    out = data.A_lp @ x_lp
    for Ab, Xb in zip(data.A, X):
        out = out + np.real(np.einsum("kij,ji->k", Ab, Xb))
    return out


def _apply_AT(data, y):
    return [np.einsum("k,kij->ij", y, Ab) for Ab in data.A], data.A_lp.T @ y


def _max_step(X, dX):
    """Largest alpha with X + alpha dX PSD (inf if unbounded)."""
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    S = sla.solve_triangular(L, dX, lower=True)
    S = sla.solve_triangular(L, S.conj().T, lower=True).conj().T
    lam = np.linalg.eigvalsh(_herm(S))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x, dx):
    neg = dx < 0
    return np.min(-x[neg] / dx[neg]) if np.any(neg) else np.inf


def _inner(X, Z):
    return sum(float(np.real(np.vdot(a, b))) for a, b in zip(X, Z))


def solve_sdp(data: SdpData, eps_feas=1e-9, eps_gap=1e-9, max_iter=100) -> IpmResult:
    m = data.b.size
    dims = [C.shape[0] for C in data.C]
    n_lp = data.c_lp.size
    nu = sum(dims) + n_lp
    b = data.b

    normA = max([float(np.max(np.linalg.norm(Ab.reshape(m, -1), axis=1))) if m else 0.0 for Ab in data.A]
                + [float(np.max(np.abs(data.A_lp))) if data.A_lp.size else 0.0])
    normC = np.sqrt(sum(float(np.sum(np.abs(C) ** 2)) for C in data.C) + float(np.sum(data.c_lp ** 2)))
    rootn = np.sqrt(max(dims + [n_lp, 1]))
    zeta = max(10.0, rootn, rootn * float(np.max((1 + np.abs(b)) / (1 + normA))) if m else 10.0)
    eta = max(10.0, rootn, normA, normC)

    X = [zeta * np.eye(n, dtype=complex) for n in dims]
    Z = [eta * np.eye(n, dtype=complex) for n in dims]
    x = np.full(n_lp, zeta)
    z = np.full(n_lp, eta)
    y = np.zeros(m)
    status = "max_iter"
    it = 0
    cert = None

    for it in range(1, max_iter + 1):
        ATy, ATy_lp = _apply_AT(data, y)
        Rp = b - _apply_A(data, X, x)
        Rd = [C - Zb - Ab for C, Zb, Ab in zip(data.C, Z, ATy)]
        Rd_lp = data.c_lp - z - ATy_lp
        pobj = _inner(data.C, X) + float(data.c_lp @ x)
        dobj = float(b @ y)
        mu = (_inner(X, Z) + float(x @ z)) / nu
        relp = np.linalg.norm(Rp) / (1 + np.linalg.norm(b))
        reld = np.sqrt(sum(float(np.sum(np.abs(R) ** 2)) for R in Rd) + float(Rd_lp @ Rd_lp)) / (1 + normC)
        gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        if relp <= eps_feas and reld <= eps_feas and gap <= eps_gap:
            status = "optimal"
            break
        # primal infeasibility: y with b^T y > 0 and -A^T y in K (data is normalized)
        if relp > eps_feas and dobj > 1e6:
            yb = y / dobj
            Sb, Sb_lp = _apply_AT(data, -yb)
            scale = 1.0 + np.linalg.norm(yb) * normA
            worst = min([np.linalg.eigvalsh(S)[0] for S in Sb] + ([float(Sb_lp.min())] if n_lp else []))
            if worst >= -1e-6 * scale:
                status = "infeasible"
                cert = yb
                break

        try:
            Zinv = [np.linalg.inv(Zb) for Zb in Z]
        except np.linalg.LinAlgError:
            status = "failed"
            break
        Zinv = [_herm(Zi) for Zi in Zinv]
        # Schur complement M_kl = Re tr(A_k X A_l Z^-1) + lp part
        Mmat = (data.A_lp * (x / z)) @ data.A_lp.T
        for Ab, Xb, Zi in zip(data.A, X, Zinv):
            Gb = Xb @ Ab @ Zi
            Mmat = Mmat + np.real(np.einsum("kij,lji->kl", Ab, Gb))
        Mmat = (Mmat + Mmat.T) / 2
        try:
            cho = sla.cho_factor(Mmat)
            solveM = lambda r: sla.cho_solve(cho, r)
        except np.linalg.LinAlgError:
            reg = 1e-14 * np.trace(Mmat) / max(m, 1)
            lu = sla.lu_factor(Mmat + reg * np.eye(m))
            solveM = lambda r: sla.lu_solve(lu, r)

        def direction(sig_mu, corr=None, corr_lp=None):
            # dX = sig_mu Z^-1 - X - K Z^-1 - X dZ Z^-1,  K = dXa dZa (corrector)
            base = []
            for i, (Xb, Zi, Rb) in enumerate(zip(X, Zinv, Rd)):
                T = sig_mu * Zi - Xb - Xb @ Rb @ Zi
                if corr is not None:
                    T = T - corr[i] @ Zi
                base.append(T)
            base_lp = sig_mu / z - x - x * Rd_lp / z
            if corr_lp is not None:
                base_lp = base_lp - corr_lp / z
            rhs = Rp - _apply_A(data, base, base_lp)
            dy = solveM(rhs)
            dATy, dATy_lp = _apply_AT(data, dy)
            dZ = [Rb - Ab for Rb, Ab in zip(Rd, dATy)]
            dz = Rd_lp - dATy_lp
            dX = [_herm(Tb + Xb @ Ab @ Zi) for Tb, Xb, Ab, Zi in zip(base, X, dATy, Zinv)]
            dx = base_lp + x * dATy_lp / z
            return dX, dx, dy, dZ, dz

        def steps(dX, dx, dZ, dz):
            ap = min([_max_step(Xb, d) for Xb, d in zip(X, dX)] + [_max_step_lp(x, dx)])
            ad = min([_max_step(Zb, d) for Zb, d in zip(Z, dZ)] + [_max_step_lp(z, dz)])
            return ap, ad

        dXa, dxa, dya, dZa, dza = direction(0.0)
        ap, ad = steps(dXa, dxa, dZa, dza)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = (_inner([Xb + ap * d for Xb, d in zip(X, dXa)], [Zb + ad * d for Zb, d in zip(Z, dZa)])
                  + float((x + ap * dxa) @ (z + ad * dza))) / nu
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        corr = [a @ d for a, d in zip(dXa, dZa)]
        dX, dx, dy, dZ, dz = direction(sigma * mu, corr, dxa * dza)
        ap, ad = steps(dX, dx, dZ, dz)
        tau = 0.9 if it < 3 else 0.98
        ap, ad = min(1.0, tau * ap), min(1.0, tau * ad)
        if ap < 1e-12 and ad < 1e-12:
            status = "failed"
            break
        X = [_herm(Xb + ap * d) for Xb, d in zip(X, dX)]
        x = x + ap * dx
        y = y + ad * dy
        Z = [_herm(Zb + ad * d) for Zb, d in zip(Z, dZ)]
        z = z + ad * dz

    return IpmResult(status=status, X=X, x_lp=x, y=y, pobj=pobj, dobj=dobj, iterations=it, certificate=cert)
