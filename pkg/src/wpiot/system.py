"""System parameterization and the handful of physical-layer formulas.

Holds the immutable configuration shared by the Markov-chain analysis and
the block simulator: HAP power, noise, energy-conversion efficiency,
battery capacity and level count, Rician factor, residual self-interference
gain, rate requirement, and the per-device distances that set the mean
channel gains through the path-loss map 1/(1 + d^epsilon).

All internal math runs in watts and joules; dBm values are converted once
at configuration load.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import RicianChannel


class PolicyKind(enum.Enum):
    """The four uplink scheduling policies."""

    THROUGHPUT = "throughput"
    FAIRNESS = "fairness"
    ROUND_ROBIN = "round-robin"
    RANDOM = "random"

    @property
    def analyzable(self) -> bool:
        """Only the two proposed policies have a Markov-chain analysis."""
        return self in (PolicyKind.THROUGHPUT, PolicyKind.FAIRNESS)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt * 1000.0)


@dataclass(frozen=True)
class SystemConfig:
    """Full physical and model parameterization of one network instance."""

    num_iods: int
    hap_power: float            # P_H, watts
    noise_power: float          # N0, watts
    conversion_eff: float       # eta, in (0, 1)
    battery_capacity: float     # C, joules
    num_levels: int             # K, levels above empty
    max_wait: int               # M, fairness deadline in blocks
    rician_factor: float        # Psi
    si_gain: float              # alpha, residual loop gain
    block_duration: float       # T, seconds
    rate_req: float             # R, bits/s/Hz
    distances: tuple[float, ...]  # d_i, meters
    pathloss_exp: float         # epsilon, in [2, 5]

    def __post_init__(self):
        if self.num_iods < 1 or len(self.distances) != self.num_iods:
            raise ValueError("need num_iods >= 1 matching the distance list")
        if not (0 < self.conversion_eff < 1):
            raise ValueError(f"conversion_eff must lie in (0,1), got {self.conversion_eff}")
        if self.battery_capacity <= 0 or self.num_levels < 1 or self.max_wait < 1:
            raise ValueError("battery_capacity, num_levels and max_wait must be positive")
        if self.hap_power <= 0 or self.noise_power <= 0:
            raise ValueError("hap_power and noise_power must be positive")
        if self.block_duration <= 0 or self.rate_req <= 0:
            raise ValueError("block_duration and rate_req must be positive")
        if self.si_gain < 0 or self.rician_factor < 0:
            raise ValueError("si_gain and rician_factor must be non-negative")
        if not (2.0 <= self.pathloss_exp <= 5.0):
            raise ValueError(f"pathloss_exp must lie in [2,5], got {self.pathloss_exp}")
        if any(d <= 0 for d in self.distances):
            raise ValueError("all distances must be positive")
        object.__setattr__(self, "distances", tuple(float(d) for d in self.distances))

    # -- derived quantities ------------------------------------------------

    @property
    def mean_gains(self) -> np.ndarray:
        """H_bar_i = 1/(1 + d_i^epsilon) for every IoD."""
        d = np.asarray(self.distances)
        return 1.0 / (1.0 + d ** self.pathloss_exp)

    @property
    def energy_levels(self) -> np.ndarray:
        """The K+1 battery levels in joules, eps_k = k*C/K."""
        return np.arange(self.num_levels + 1) * (self.battery_capacity / self.num_levels)

    @property
    def mean_harvest(self) -> np.ndarray:
        """phi_i = eta*P_H*H_bar_i*T, the average harvest per EH block."""
        return self.conversion_eff * self.hap_power * self.mean_gains * self.block_duration

    def channel(self, i: int) -> RicianChannel:
        """Fading of IoD i's links; uplink and downlink share the law."""
        return RicianChannel(mean_gain=float(self.mean_gains[i]), rician_factor=self.rician_factor)

    def with_overrides(self, **kwargs) -> "SystemConfig":
        return replace(self, **kwargs)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "num_iods": self.num_iods,
            "hap_power_w": self.hap_power,
            "noise_power_w": self.noise_power,
            "conversion_eff": self.conversion_eff,
            "battery_capacity_j": self.battery_capacity,
            "num_levels": self.num_levels,
            "max_wait": self.max_wait,
            "rician_factor": self.rician_factor,
            "si_gain": self.si_gain,
            "block_duration_s": self.block_duration,
            "rate_req": self.rate_req,
            "distances_m": list(self.distances),
            "pathloss_exp": self.pathloss_exp,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SystemConfig":
        """Build a config from a JSON-compatible document.

        Power fields accept either watts (``hap_power_w``/``noise_power_w``)
        or dBm (``hap_power_dbm``/``noise_power_dbm``); dBm wins if both
        are present.  Unknown keys raise, catching config typos early.
        """
        doc = dict(doc)
        hap = doc.pop("hap_power_w", None)
        if "hap_power_dbm" in doc:
            hap = dbm_to_watt(doc.pop("hap_power_dbm"))
        noise = doc.pop("noise_power_w", None)
        if "noise_power_dbm" in doc:
            noise = dbm_to_watt(doc.pop("noise_power_dbm"))
        if hap is None or noise is None:
            raise ValueError("config needs hap power and noise power (watt or dBm)")
        distances = doc.pop("distances_m")
        known = {
            "num_iods": int,
            "conversion_eff": float,
            "battery_capacity_j": float,
            "num_levels": int,
            "max_wait": int,
            "rician_factor": float,
            "si_gain": float,
            "block_duration_s": float,
            "rate_req": float,
            "pathloss_exp": float,
        }
        kwargs = {}
        for key, cast in known.items():
            if key not in doc:
                raise ValueError(f"config is missing key {key!r}")
            kwargs[key] = cast(doc.pop(key))
        if doc:
            raise ValueError(f"unknown config keys: {sorted(doc)}")
        return cls(
            num_iods=kwargs["num_iods"],
            hap_power=float(hap),
            noise_power=float(noise),
            conversion_eff=kwargs["conversion_eff"],
            battery_capacity=kwargs["battery_capacity_j"],
            num_levels=kwargs["num_levels"],
            max_wait=kwargs["max_wait"],
            rician_factor=kwargs["rician_factor"],
            si_gain=kwargs["si_gain"],
            block_duration=kwargs["block_duration_s"],
            rate_req=kwargs["rate_req"],
            distances=tuple(float(d) for d in distances),
            pathloss_exp=kwargs["pathloss_exp"],
        )


@dataclass(frozen=True)
class EnergyLevel:
    """One discrete battery level, eps_k = k*C/K."""

    index: int
    joules: float


def mean_gain(cfg: SystemConfig, i: int) -> float:
    """Average channel power gain of IoD i under the path-loss map."""
    if not (0 <= i < cfg.num_iods):
        raise IndexError(f"IoD index {i} out of range [0, {cfg.num_iods})")
    return float(cfg.mean_gains[i])


def uplink_sinr(cfg: SystemConfig, transmit_power: float, gain: float) -> float:
    """SINR at the HAP: P_i*H_U / (N0 + P_H*alpha)."""
    if transmit_power < 0 or gain < 0:
        raise ValueError("transmit power and gain must be non-negative")
    return transmit_power * gain / (cfg.noise_power + cfg.hap_power * cfg.si_gain)


def harvested_energy(cfg: SystemConfig, gain: float) -> float:
    """Energy captured in one EH block: eta*P_H*H_D*T."""
    if gain < 0:
        raise ValueError("gain must be non-negative")
    return cfg.conversion_eff * cfg.hap_power * gain * cfg.block_duration


def discretize_energy(cfg: SystemConfig, energy: float) -> EnergyLevel:
    """Floor an energy amount onto the battery grid, capped at level K.

    The retained level is the largest eps_l <= energy; an exact boundary
    keeps the boundary level itself (half-open interval convention).
    """
    if energy < 0:
        raise ValueError("energy must be non-negative")
    step = cfg.battery_capacity / cfg.num_levels
    lvl = min(cfg.num_levels, int(energy / step))
    # int() truncation can land one level low when energy/step sits exactly
    # on an integer that floating division rounded down; nudge upward.
    if lvl < cfg.num_levels and (lvl + 1) * step <= energy:
        lvl += 1
    return EnergyLevel(index=lvl, joules=lvl * step)


def outage_gain_threshold(cfg: SystemConfig, level: int) -> float:
    """Uplink gain below which a transmission from battery level k fails.

    Transmitting the whole level-k charge over one block gives
    P_i = eps_k/T, so log2(1+SINR) < R collapses to
    H_U < K*(2^R - 1)*(alpha*P_H + N0)*T / (k*C).
    """
    if level < 1:
        raise ValueError("outage threshold needs a positive battery level")
    num = cfg.num_levels * (2.0 ** cfg.rate_req - 1.0) * (
        cfg.si_gain * cfg.hap_power + cfg.noise_power
    ) * cfg.block_duration
    return num / (level * cfg.battery_capacity)
