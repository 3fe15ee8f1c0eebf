"""Seeded channel realizations for the simulation geometry.

Coordinates (meters): AP at ``(d_A, 0, 0)``, IRS at ``(0, d_IRS, 0)``, EUs
and IUs uniformly (over area) in disks of radius ``r_E``/``r_I`` centred at
``(d_A, d_E, 0)`` and ``(d_A, d_I, 0)`` in the ``z = 0`` plane.

The AP carries a half-wavelength uniform linear array along the x axis and
the IRS one along the y axis; LoS components are the array responses
``exp(j pi k cos(phi))`` towards the other endpoint.  AP-IRS and IRS-user
links are Rician, AP-user links Rayleigh.

Seeding: every draw comes from ``Philox`` keyed by
``SeedSequence([seed, stream])`` with a fixed stream per link
(:data:`STREAMS`), so one link's draws do not depend on another link's
sizes and a trial seed yields the same fading for every sweep value.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .system import ChannelSet, SystemConfig, db_to_linear, dbm_to_watt

STREAMS = {"place_E": 0, "place_I": 1, "F": 2, "h_r": 3, "h_d": 4, "g_r": 5, "g_d": 6}


def make_rng(seed, stream=0):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass(frozen=True)
class Geometry:
    d_A: float = 3.0
    d_IRS: float = 8.0
    d_I: float = 100.0
    d_E: float = 8.0
    r_I: float = 2.0
    r_E: float = 2.0

    def __post_init__(self):
        if min(self.d_A, self.d_IRS, self.d_I, self.d_E) <= 0:
            raise ValueError("distances must be positive")
        if min(self.r_I, self.r_E) < 0:
            raise ValueError("radii must be non-negative")

    @property
    def ap(self):
        return np.array([self.d_A, 0.0, 0.0])

    @property
    def irs(self):
        return np.array([0.0, self.d_IRS, 0.0])


@dataclass(frozen=True)
class FadingConfig:
    wavelength: float = 0.4
    D0: float = 1.0
    alpha_AI: float = 2.2
    alpha_Iu: float = 2.2
    alpha_Au: float = 3.2
    K_factor: float = float(db_to_linear(3.0))

    def __post_init__(self):
        if min(self.alpha_AI, self.alpha_Iu, self.alpha_Au) < 2:
            raise ValueError("path-loss exponents must be >= 2")
        if self.K_factor < 0 or self.wavelength <= 0 or self.D0 <= 0:
            raise ValueError("invalid fading parameters")

    @property
    def C0(self):
        return (self.wavelength / (4 * math.pi)) ** 2


def path_loss(d, alpha, fading: FadingConfig = FadingConfig()):
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return fading.C0 * (d / fading.D0) ** (-alpha)


def place_users(geometry: Geometry, K_I, K_E, seed):
    """Return ``(iu_xyz, eu_xyz)`` arrays of shape (K, 3)."""

    def disk(center, radius, K, stream):
        rng = make_rng(seed, stream)
        r = radius * np.sqrt(rng.random(K))
        phi = 2 * np.pi * rng.random(K)
        pts = np.zeros((K, 3))
        pts[:, 0] = center[0] + r * np.cos(phi)
        pts[:, 1] = center[1] + r * np.sin(phi)
        return pts

    iu = disk((geometry.d_A, geometry.d_I), geometry.r_I, K_I, STREAMS["place_I"])
    eu = disk((geometry.d_A, geometry.d_E), geometry.r_E, K_E, STREAMS["place_E"])
    return iu, eu


def ula_response(n, cos_angle):
    return np.exp(1j * np.pi * np.arange(n) * cos_angle)


def _cos_to(src, dst, axis):
    d = np.asarray(dst, float) - np.asarray(src, float)
    return float(d[axis] / np.linalg.norm(d))


def cn(rng, shape):
    """Standard circularly-symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def rician_channel(shape, pathloss, K, los, rng):
    """``sqrt(PL) (sqrt(K/(K+1)) LoS + sqrt(1/(K+1)) NLoS)``; ``K = inf`` gives pure LoS."""
    los = np.broadcast_to(np.asarray(los, dtype=complex), shape)
    pathloss = np.asarray(pathloss, dtype=float)
    if math.isinf(K):
        return np.sqrt(pathloss) * los
    nlos = cn(rng, shape)
    return np.sqrt(pathloss) * (math.sqrt(K / (K + 1)) * los + math.sqrt(1 / (K + 1)) * nlos)


def generate_scenario(cfg: SystemConfig, geometry: Geometry = Geometry(), fading: FadingConfig = FadingConfig(),
                      seed=0, positions=None) -> ChannelSet:
    """One channel realization for ``cfg``; identical inputs give identical output."""
    M, N, K_I, K_E = cfg.M, cfg.N, cfg.K_I, cfg.K_E
    iu, eu = positions if positions is not None else place_users(geometry, K_I, K_E, seed)
    ap, irs = geometry.ap, geometry.irs
    K = fading.K_factor

    # AP array along x, IRS array along y
    los_F = np.outer(ula_response(N, _cos_to(irs, ap, 1)), ula_response(M, _cos_to(ap, irs, 0)).conj())
    F = rician_channel((N, M), path_loss(np.linalg.norm(ap - irs), fading.alpha_AI, fading), K, los_F,
                       make_rng(seed, STREAMS["F"]))

    def reflected(users, stream):
        if len(users) == 0:
            return np.zeros((0, N), dtype=complex)
        los = np.stack([ula_response(N, _cos_to(irs, p, 1)) for p in users])
        pl = path_loss(np.linalg.norm(users - irs, axis=1), fading.alpha_Iu, fading)[:, None]
        return rician_channel((len(users), N), pl, K, los, make_rng(seed, stream))

    def direct(users, stream):
        if len(users) == 0:
            return np.zeros((0, M), dtype=complex)
        pl = path_loss(np.linalg.norm(users - ap, axis=1), fading.alpha_Au, fading)[:, None]
        return rician_channel((len(users), M), pl, 0.0, 0.0, make_rng(seed, stream))

    return ChannelSet(F=F, h_d=direct(iu, STREAMS["h_d"]), h_r=reflected(iu, STREAMS["h_r"]),
                      g_d=direct(eu, STREAMS["g_d"]), g_r=reflected(eu, STREAMS["g_r"]))


# ---------------------------------------------------------------------------
# scenario documents


@dataclass(frozen=True)
class Scenario:
    """All simulation parameters in input units (dBm, dB, microwatts, meters).

    JSON keys are the field names; ``geometry`` and ``fading`` are nested
    objects with the fields of :class:`Geometry` and :class:`FadingConfig`
    (the Rician factor may be given as ``K_factor_db``).
    """

    M: int = 5
    N: int = 16
    K_I: int = 2
    K_E: int = 4
    P_A_dbm: float = 23.0
    P_I_dbm: float = 5.0
    sigma_z2_dbm: Optional[float] = -80.0
    sigma_i2_dbm: float = -80.0
    gamma_db: float = 5.0
    E_uW: float = 0.0
    alpha: float = 1.0
    mu: float = 1.0
    geometry: Geometry = field(default_factory=Geometry)
    fading: FadingConfig = field(default_factory=FadingConfig)

    def system_config(self) -> SystemConfig:
        return SystemConfig.from_dbm(
            M=self.M, N=self.N, K_I=self.K_I, K_E=self.K_E, P_A_dbm=self.P_A_dbm, P_I_dbm=self.P_I_dbm,
            sigma_z2_dbm=self.sigma_z2_dbm, sigma_i2_dbm=self.sigma_i2_dbm,
            gamma_db=self.gamma_db if self.K_I else None, E=self.E_uW * 1e-6, alpha=self.alpha, mu=self.mu,
        )

    def channels(self, seed) -> ChannelSet:
        return generate_scenario(self.system_config(), self.geometry, self.fading, seed)

    def with_value(self, name, value):
        """Copy with one parameter replaced; geometry/fading fields are addressed by bare name."""
        if name in Geometry.__dataclass_fields__:
            return replace(self, geometry=replace(self.geometry, **{name: float(value)}))
        if name in FadingConfig.__dataclass_fields__:
            return replace(self, fading=replace(self.fading, **{name: float(value)}))
        if name == "K_factor_db":
            return replace(self, fading=replace(self.fading, K_factor=float(db_to_linear(value))))
        if name in ("M", "N", "K_I", "K_E"):
            value = int(value)
        if name not in Scenario.__dataclass_fields__:
            raise KeyError(f"unknown scenario parameter {name!r}")
        return replace(self, **{name: value})

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        geo = Geometry(**doc.pop("geometry", {}))
        fad_doc = dict(doc.pop("fading", {}))
        if "K_factor_db" in fad_doc:
            fad_doc["K_factor"] = float(db_to_linear(fad_doc.pop("K_factor_db")))
        fad = FadingConfig(**fad_doc)
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise KeyError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(geometry=geo, fading=fad, **doc)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return Scenario.from_dict(json.load(fh))


__all__ = [
    "Geometry", "FadingConfig", "Scenario", "path_loss", "place_users", "rician_channel",
    "generate_scenario", "load_scenario", "make_rng", "ula_response", "dbm_to_watt",
]
