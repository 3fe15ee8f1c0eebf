"""Physical-layer model of the active-IRS-aided SWIPT downlink.

Conventions
-----------
Channel vectors are stored as rows: ``h_d[i]`` is the column vector
``h_{d,i}`` so that the row channel seen by IU ``i`` is ``h_d[i].conj()``.
The reflection state holds ``u`` with ``Theta = diag(u)``.  The lifted vector
used by the reflect subproblems is ``u_bar = [conj(u); 1]`` so that
``u_bar^H G_j = g_{r,j}^H Theta F + g_{d,j}^H``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(np.asarray(watt, dtype=float)) + 30.0


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def _as_tuple(values, length, name):
    if np.isscalar(values):
        values = [values] * length
    out = tuple(float(x) for x in values)
    if len(out) != length:
        raise DimensionError(f"{name} has {len(out)} entries, expected {length}")
    return out


@dataclass(frozen=True)
class SystemConfig:
    """Sizes, budgets and targets of one system instance (all powers in watts)."""

    M: int
    N: int
    K_I: int
    K_E: int
    P_A: float
    P_I: float
    sigma_z2: float
    sigma_i2: Sequence[float] = ()
    gamma: Sequence[float] = ()
    E: Sequence[float] = ()
    alpha: Sequence[float] = ()
    mu: Sequence[float] = ()

    def __post_init__(self):
        if self.M < 1 or self.N < 1 or self.K_I < 0 or self.K_E < 1:
            raise ValueError("need M >= 1, N >= 1, K_I >= 0, K_E >= 1")
        # scalars are broadcast to the user count
        for name, length, default in (
            ("sigma_i2", self.K_I, None),
            ("gamma", self.K_I, 0.0),
            ("E", self.K_E, 0.0),
            ("alpha", self.K_E, 1.0),
            ("mu", self.K_I, 1.0),
        ):
            value = getattr(self, name)
            if not np.isscalar(value) and len(value) == 0 and length > 0:
                if default is None:
                    raise ValueError(f"{name} is required when K_I > 0")
                value = default
            object.__setattr__(self, name, _as_tuple(value, length, name))
        if not self.P_A > 0 or not self.P_I > 0:
            raise ValueError("P_A and P_I must be positive")
        if self.sigma_z2 < 0 or any(s <= 0 for s in self.sigma_i2):
            raise ValueError("noise variances must be positive (sigma_z2 may be 0)")
        if any(e < 0 for e in self.E) or any(a < 0 for a in self.alpha) or any(m < 0 for m in self.mu):
            raise ValueError("E, alpha and mu must be non-negative")
        if any(g < 0 for g in self.gamma):
            raise ValueError("SINR targets must be non-negative")

    @classmethod
    def from_dbm(cls, M, N, K_I, K_E, P_A_dbm, P_I_dbm, sigma_z2_dbm, sigma_i2_dbm=-80.0,
                 gamma_db=None, E=0.0, alpha=1.0, mu=1.0):
        """Build a config from dBm powers and dB SINR targets; ``E`` stays in watts."""
        gamma = () if gamma_db is None or K_I == 0 else db_to_linear(np.broadcast_to(gamma_db, (K_I,)))
        return cls(
            M=M, N=N, K_I=K_I, K_E=K_E,
            P_A=float(dbm_to_watt(P_A_dbm)),
            P_I=float(dbm_to_watt(P_I_dbm)),
            sigma_z2=float(dbm_to_watt(sigma_z2_dbm)) if sigma_z2_dbm is not None else 0.0,
            sigma_i2=tuple(dbm_to_watt(np.broadcast_to(sigma_i2_dbm, (K_I,)))) if K_I else (),
            gamma=tuple(gamma) if K_I else (),
            E=E, alpha=alpha, mu=mu,
        )

    @property
    def sigma_i2_arr(self):
        return np.asarray(self.sigma_i2, dtype=float)

    @property
    def gamma_arr(self):
        return np.asarray(self.gamma, dtype=float)

    @property
    def E_arr(self):
        return np.asarray(self.E, dtype=float)

    @property
    def alpha_arr(self):
        return np.asarray(self.alpha, dtype=float)

    @property
    def mu_arr(self):
        return np.asarray(self.mu, dtype=float)


@dataclass(frozen=True, eq=False)
class ChannelSet:
    F: np.ndarray
    h_d: np.ndarray
    h_r: np.ndarray
    g_d: np.ndarray
    g_r: np.ndarray

    def __post_init__(self):
        F = np.asarray(self.F, dtype=complex)
        if F.ndim != 2:
            raise DimensionError("F must be an N x M matrix")
        N, M = F.shape
        object.__setattr__(self, "F", F)
        for name, width in (("h_d", M), ("h_r", N), ("g_d", M), ("g_r", N)):
            arr = np.asarray(getattr(self, name), dtype=complex)
            if arr.size == 0:
                arr = arr.reshape(0, width)
            if arr.ndim != 2 or arr.shape[1] != width:
                raise DimensionError(f"{name} must have shape (K, {width}), got {arr.shape}")
            object.__setattr__(self, name, arr)
        if self.h_d.shape[0] != self.h_r.shape[0] or self.g_d.shape[0] != self.g_r.shape[0]:
            raise DimensionError("direct and reflected link counts differ")
        for arr in (self.F, self.h_d, self.h_r, self.g_d, self.g_r):
            if not np.all(np.isfinite(arr)):
                raise DimensionError("channel entries must be finite")

    @property
    def N(self):
        return self.F.shape[0]

    @property
    def M(self):
        return self.F.shape[1]

    @property
    def K_I(self):
        return self.h_d.shape[0]

    @property
    def K_E(self):
        return self.g_d.shape[0]

    def check(self, cfg: SystemConfig):
        if (self.N, self.M, self.K_I, self.K_E) != (cfg.N, cfg.M, cfg.K_I, cfg.K_E):
            raise DimensionError(
                f"channels are (N={self.N}, M={self.M}, K_I={self.K_I}, K_E={self.K_E}), "
                f"config is (N={cfg.N}, M={cfg.M}, K_I={cfg.K_I}, K_E={cfg.K_E})"
            )

    def without_irs_iu_link(self):
        return ChannelSet(self.F, self.h_d, np.zeros_like(self.h_r), self.g_d, self.g_r)


@dataclass(frozen=True, eq=False)
class ReflectionState:
    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=complex).reshape(-1)
        object.__setattr__(self, "u", u)

    @classmethod
    def from_polar(cls, beta, theta):
        return cls(np.asarray(beta, dtype=float) * np.exp(1j * np.asarray(theta, dtype=float)))

    @classmethod
    def from_u_bar(cls, u_bar):
        u_bar = np.asarray(u_bar, dtype=complex)
        return cls(np.conj(u_bar[:-1] / u_bar[-1]))

    @classmethod
    def off(cls, N):
        return cls(np.zeros(N, dtype=complex))

    @property
    def N(self):
        return self.u.size

    @property
    def beta(self):
        return np.abs(self.u)

    @property
    def theta(self):
        return np.mod(np.angle(self.u), 2 * np.pi)

    @property
    def u_bar(self):
        return np.append(np.conj(self.u), 1.0)


@dataclass(frozen=True, eq=False)
class Precoder:
    """Information beams ``w`` (K_I x M) and energy beams ``v`` (n x M)."""

    w: np.ndarray
    v: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.asarray(self.w, dtype=complex)
        if w.ndim == 1:
            w = w.reshape(1, -1) if w.size else w.reshape(0, 0)
        M = w.shape[1] if w.ndim == 2 and w.shape[0] else None
        v = self.v
        if v is None:
            v = np.zeros((0, M or 0), dtype=complex)
        v = np.asarray(v, dtype=complex)
        if v.ndim == 1:
            v = v.reshape(1, -1)
        if M is None:
            M = v.shape[1] if v.size else 0
            w = w.reshape(0, M)
        if v.size == 0:
            v = v.reshape(0, M)
        if v.shape[1] != M:
            raise DimensionError("information and energy beams have different lengths")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "v", v)

    @property
    def beams(self):
        return np.vstack([self.w, self.v])

    def transmit_power(self):
        return float(np.sum(np.abs(self.w) ** 2) + np.sum(np.abs(self.v) ** 2))


@dataclass(frozen=True, eq=False)
class Instance:
    config: SystemConfig
    channels: ChannelSet

    def __post_init__(self):
        self.channels.check(self.config)


# ---------------------------------------------------------------------------
# direct evaluation


def _check_refl(channels, refl):
    if refl.N != channels.N:
        raise DimensionError(f"reflection state has {refl.N} elements, channels expect {channels.N}")


def effective_channels(channels: ChannelSet, refl: ReflectionState):
    """Return ``(h, g)`` with rows ``h_i`` and ``g_j`` (column convention).

    ``h_i^H = h_{r,i}^H Theta F + h_{d,i}^H``, likewise for ``g_j``.
    """
    _check_refl(channels, refl)
    u = refl.u
    h_row = (channels.h_r.conj() * u) @ channels.F + channels.h_d.conj()
    g_row = (channels.g_r.conj() * u) @ channels.F + channels.g_d.conj()
    return h_row.conj(), g_row.conj()


def _gains(eff, beams):
    # |eff_i^H b_k|^2 for every pair
    return np.abs(eff.conj() @ beams.T) ** 2


def sinrs(prec: Precoder, refl: ReflectionState, channels: ChannelSet, cfg: SystemConfig):
    h, _ = effective_channels(channels, refl)
    K = channels.K_I
    if K == 0:
        return np.zeros(0)
    gw = _gains(h, prec.w)
    gv = _gains(h, prec.v).sum(axis=1) if prec.v.shape[0] else np.zeros(K)
    irs_noise = cfg.sigma_z2 * np.sum(np.abs(channels.h_r.conj() * refl.u) ** 2, axis=1)
    signal = np.diag(gw).copy()
    interference = gw.sum(axis=1) - signal + gv
    return signal / (interference + irs_noise + cfg.sigma_i2_arr)


def sinr(i, prec, refl, channels, cfg):
    return float(sinrs(prec, refl, channels, cfg)[i])


def rates(prec, refl, channels, cfg):
    """Achievable rates in bps/Hz."""
    return np.log2(1.0 + sinrs(prec, refl, channels, cfg))


def weighted_sum_rate(prec, refl, channels, cfg):
    return float(np.dot(cfg.mu_arr, rates(prec, refl, channels, cfg)))


def harvested_powers(prec: Precoder, refl: ReflectionState, channels: ChannelSet, cfg: SystemConfig):
    _, g = effective_channels(channels, refl)
    beams = prec.beams
    beam_power = _gains(g, beams).sum(axis=1) if beams.shape[0] else np.zeros(channels.K_E)
    irs_noise = cfg.sigma_z2 * np.sum(np.abs(channels.g_r.conj() * refl.u) ** 2, axis=1)
    return beam_power + irs_noise


def harvested_power(j, prec, refl, channels, cfg):
    return float(harvested_powers(prec, refl, channels, cfg)[j])


def weighted_sum_power(prec, refl, channels, cfg):
    return float(np.dot(cfg.alpha_arr, harvested_powers(prec, refl, channels, cfg)))


def amplification_power(prec: Precoder, refl: ReflectionState, channels: ChannelSet, cfg: SystemConfig):
    _check_refl(channels, refl)
    incident = channels.F @ prec.beams.T  # N x beams
    amplified = np.sum(np.abs(refl.u[:, None] * incident) ** 2)
    return float(amplified + cfg.sigma_z2 * np.sum(np.abs(refl.u) ** 2))


# ---------------------------------------------------------------------------
# lifted operators


@dataclass(frozen=True, eq=False)
class LiftedOperators:
    G: np.ndarray          # (K_E, N+1, M)
    H: np.ndarray          # (K_I, N+1, M)
    Z: np.ndarray          # (K_E, N+1, N+1)
    T: np.ndarray          # (K_I, N+1, N+1)
    P: np.ndarray          # (N+1, N+1)
    Q: np.ndarray = field(default=None)    # (K_I, N+1, N+1) per information beam
    A: np.ndarray = field(default=None)    # WPT objective kernel for the energy beam
    Phi: np.ndarray = field(default=None)  # WPT amplification kernel for the energy beam


def lift_G(channels: ChannelSet):
    """Stacked ``[diag(g_r^H) F; g_d^H]`` for every EU."""
    top = channels.g_r.conj()[:, :, None] * channels.F[None, :, :]
    return np.concatenate([top, channels.g_d.conj()[:, None, :]], axis=1)


def lift_H(channels: ChannelSet):
    top = channels.h_r.conj()[:, :, None] * channels.F[None, :, :]
    return np.concatenate([top, channels.h_d.conj()[:, None, :]], axis=1)


def _diag_stack(values):
    K, n = values.shape
    out = np.zeros((K, n + 1, n + 1), dtype=complex)
    idx = np.arange(n)
    out[:, idx, idx] = values
    return out


def lift_Z(channels):
    return _diag_stack(np.abs(channels.g_r) ** 2)


def lift_T(channels):
    return _diag_stack(np.abs(channels.h_r) ** 2)


def lift_P(N):
    return np.diag(np.append(np.ones(N), 0.0)).astype(complex)


def lift_Q(channels: ChannelSet, W):
    """Amplification kernel of a transmit covariance ``W`` (or beam vector)."""
    W = np.asarray(W, dtype=complex)
    if W.ndim == 1:
        diag = np.abs(channels.F @ W) ** 2
    else:
        diag = np.real(np.einsum("nm,mk,nk->n", channels.F, W, channels.F.conj()))
    return np.diag(np.append(diag, 0.0)).astype(complex)


def build_lifted(channels: ChannelSet, cfg: SystemConfig, beams=None, energy_beam=None):
    """Construct the lifted matrices for the reflect subproblems.

    ``beams`` are the information beams (rows) used for ``Q_i``;
    ``energy_beam`` is the single WPT beam used for ``A`` and ``Phi``.
    """
    channels.check(cfg)
    G, H = lift_G(channels), lift_H(channels)
    Z, T = lift_Z(channels), lift_T(channels)
    P = lift_P(channels.N)
    Q = None
    if beams is not None:
        beams = np.asarray(beams, dtype=complex).reshape(-1, channels.M)
        Q = np.stack([lift_Q(channels, b) for b in beams]) if len(beams) else np.zeros((0,) + P.shape)
    A = Phi = None
    if energy_beam is not None:
        v0 = np.asarray(energy_beam, dtype=complex).reshape(-1)
        Gv = G @ v0  # (K_E, N+1)
        A = np.einsum("j,ja,jb->ab", cfg.alpha_arr, Gv, Gv.conj())
        A = A + cfg.sigma_z2 * np.einsum("j,jab->ab", cfg.alpha_arr, Z)
        Phi = lift_Q(channels, v0)
    return LiftedOperators(G=G, H=H, Z=Z, T=T, P=P, Q=Q, A=A, Phi=Phi)


# ---------------------------------------------------------------------------
# feasibility


@dataclass
class FeasibilityReport:
    """Signed relative residuals per constraint; ``<= 0`` means satisfied."""

    kind: str
    residuals: dict

    @property
    def max_residual(self):
        vals = [v for v in self.residuals.values()]
        return max(vals) if vals else -math.inf

    def feasible(self, tol=1e-6):
        return self.max_residual <= tol

    def to_dict(self):
        return {"kind": self.kind, "residuals": dict(self.residuals), "max_residual": self.max_residual}


def feasibility_report(kind, prec: Precoder, refl: ReflectionState, channels: ChannelSet,
                       cfg: SystemConfig, unit_modulus=False):
    """Evaluate the constraints of ``kind`` ("P1" or "P2") at a candidate point.

    Power residuals are normalized by their budget; SINR residuals are
    ``1 - SINR_i / gamma_i``; EH residuals ``(E_j - Q_j) / E_j`` (absolute when
    ``E_j = 0``).
    """
    kind = kind.upper()
    if kind not in ("P1", "P2"):
        raise ValueError(f"unknown problem kind {kind!r}")
    res = {}
    res["ap_power"] = (prec.transmit_power() - cfg.P_A) / cfg.P_A
    if math.isinf(cfg.P_I):
        res["irs_power"] = -math.inf
    else:
        res["irs_power"] = (amplification_power(prec, refl, channels, cfg) - cfg.P_I) / cfg.P_I
    if kind == "P1":
        s = sinrs(prec, refl, channels, cfg)
        for i, (si, gi) in enumerate(zip(s, cfg.gamma)):
            res[f"sinr_{i}"] = 1.0 - si / gi if gi > 0 else -si
    else:
        q = harvested_powers(prec, refl, channels, cfg)
        for j, (qj, ej) in enumerate(zip(q, cfg.E)):
            res[f"eh_{j}"] = (ej - qj) / ej if ej > 0 else -qj
    if unit_modulus:
        res["unit_modulus"] = float(np.max(np.abs(np.abs(refl.u) - 1.0))) if refl.N else 0.0
    return FeasibilityReport(kind, res)
