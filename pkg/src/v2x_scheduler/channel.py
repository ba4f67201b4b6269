"""Link models for every V2V / V2I link feeding the ego vehicle.

Large-scale gain = WINNER+ B1 line-of-sight path loss plus log-normal shadowing with
exponential spatial correlation. Small-scale fading is a first-order Gauss-Markov
(AR(1)) process whose correlation is the zero-order Bessel function of the Doppler
phase over one sub-slot. Rates follow Shannon capacity and the per-slot grid budget
counts how many grid payloads fit into the bits accrued over the sub-slots.

All functions are pure given their inputs and an injected ``np.random.Generator``;
they accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import j0

from v2x_scheduler.context import ChannelParams

SPEED_OF_LIGHT_MPS = 299_792_458.0

# Small tolerance so sums of exact multiples of D do not floor one grid short.
_BUDGET_EPS = 1e-9


def path_loss_db(
    distance_m: float | np.ndarray,
    carrier_freq_hz: float,
    min_distance_m: float = 3.0,
) -> float | np.ndarray:
    """Return WINNER+ B1 LOS path loss in dB.

    ``PL = 22.7 log10(d) + 41.0 + 20 log10(f_c[GHz] / 5.0)`` with ``d`` clamped to
    ``min_distance_m`` from below.
    """
    d = np.maximum(np.asarray(distance_m, dtype=np.float64), min_distance_m)
    pl = 22.7 * np.log10(d) + 41.0 + 20.0 * math.log10(carrier_freq_hz / 1e9 / 5.0)
    return float(pl) if pl.ndim == 0 else pl


def shadowing_step(
    prev_shadow_db: float | np.ndarray,
    moved_dist_m: float | np.ndarray,
    sigma_db: float,
    d_corr_m: float,
    rng: np.random.Generator,
) -> float | np.ndarray:
    """Advance log-normal shadowing after the receiver moved ``moved_dist_m``.

    ``rho = exp(-moved / d_corr)``; ``out = rho * prev + sqrt(1 - rho^2) * N(0, sigma^2)``.
    The stationary standard deviation is ``sigma_db``.
    """
    prev = np.asarray(prev_shadow_db, dtype=np.float64)
    moved = np.asarray(moved_dist_m, dtype=np.float64)
    rho = np.exp(-moved / d_corr_m)
    noise = rng.normal(0.0, 1.0, size=np.broadcast(prev, moved).shape) * sigma_db
    out = rho * prev + np.sqrt(np.maximum(0.0, 1.0 - rho**2)) * noise
    return float(out) if out.ndim == 0 else out


def fading_correlation(
    v_rel_mps: float | np.ndarray, carrier_freq_hz: float, dt_s: float
) -> float | np.ndarray:
    """Return the lag-one correlation ``mu = J0(2 pi v f_c dt / c)``."""
    arg = 2.0 * np.pi * np.asarray(v_rel_mps, dtype=np.float64) * carrier_freq_hz * dt_s
    mu = j0(arg / SPEED_OF_LIGHT_MPS)
    return float(mu) if np.ndim(mu) == 0 else mu


def complex_normal(rng: np.random.Generator, size: int | tuple[int, ...] | None = None) -> complex | np.ndarray:
    """Draw circularly symmetric CN(0, 1) samples."""
    re = rng.normal(0.0, math.sqrt(0.5), size=size)
    im = rng.normal(0.0, math.sqrt(0.5), size=size)
    out = re + 1j * im
    return complex(out) if np.ndim(out) == 0 else out


def fading_step(
    h_prev: complex | np.ndarray, mu: float | np.ndarray, rng: np.random.Generator
) -> complex | np.ndarray:
    """Advance small-scale fading one sub-slot: ``h = mu h_prev + e``, ``e ~ CN(0, 1 - mu^2)``.

    The innovation is always drawn, so the random stream consumption does not depend
    on ``mu``.
    """
    h = np.asarray(h_prev, dtype=np.complex128)
    mu_arr = np.asarray(mu, dtype=np.float64)
    shape = np.broadcast(h, mu_arr).shape
    innovation = complex_normal(rng, size=shape)
    out = mu_arr * h + np.sqrt(np.maximum(0.0, 1.0 - mu_arr**2)) * innovation
    return complex(out) if out.ndim == 0 else out


def link_budget_db(params: ChannelParams) -> float:
    """Return the SNR in dB of a unit-gain link.

    ``P + 2 G_ant - NF - N_0 - 10 log10 W``; path loss, shadowing and fading enter
    through the linear gain passed to :func:`snr_linear`.
    """
    noise_dbm = params.noise_psd_dbm_hz + 10.0 * math.log10(params.bandwidth_hz)
    return (
        params.tx_power_dbm
        + 2.0 * params.antenna_gain_dbi
        - params.noise_figure_db
        - noise_dbm
    )


def snr_linear(params: ChannelParams, gain: float | np.ndarray) -> float | np.ndarray:
    """Return the linear SNR for a link with linear power gain ``gain``."""
    if params.bandwidth_hz <= 0:
        return np.zeros_like(np.asarray(gain, dtype=np.float64))
    return 10.0 ** (link_budget_db(params) / 10.0) * np.asarray(gain, dtype=np.float64)


def instantaneous_rate_bps(params: ChannelParams, gain: float | np.ndarray) -> float | np.ndarray:
    """Return the Shannon rate ``W log2(1 + SNR)`` in bits/s.

    A zero bandwidth carries nothing.
    """
    g = np.asarray(gain, dtype=np.float64)
    if params.bandwidth_hz <= 0:
        rate = np.zeros_like(g)
    else:
        rate = params.bandwidth_hz * np.log2(1.0 + snr_linear(params, np.maximum(g, 0.0)))
    return float(rate) if rate.ndim == 0 else rate


def grid_budget(rates_per_subslot: Sequence[float] | np.ndarray, dt_s: float, payload_bits: int) -> int:
    """Return how many grid payloads fit into the bits accrued over one slot.

    Bits are summed over the sub-slots first and floored once per slot; nothing
    carries over to the next slot.
    """
    rates = np.asarray(rates_per_subslot, dtype=np.float64)
    if rates.size == 0:
        return 0
    if np.any(rates < 0):
        raise ValueError("rates must be non-negative")
    bits = float(np.sum(rates) * dt_s)
    return int(math.floor(bits / payload_bits + _BUDGET_EPS))


def large_scale_gain(
    distance_m: float | np.ndarray, shadow_db: float | np.ndarray, params: ChannelParams
) -> float | np.ndarray:
    """Return the linear large-scale power gain ``alpha`` (path loss and shadowing)."""
    loss_db = path_loss_db(distance_m, params.carrier_freq_hz, params.min_distance_m)
    alpha = 10.0 ** (-(np.asarray(loss_db) + np.asarray(shadow_db)) / 10.0)
    return float(alpha) if np.ndim(alpha) == 0 else alpha


@dataclass(frozen=True)
class LinkChannel:
    """State of one collaborator's link to the ego vehicle."""

    alpha_linear: float
    shadow_db: float
    h: complex
    mu: float
    rel_speed_mps: float

    def __post_init__(self) -> None:
        """Validate the link invariants."""
        if not self.alpha_linear > 0:
            raise ValueError(f"alpha_linear must be > 0, got {self.alpha_linear}")
        if abs(self.mu) > 1.0 + 1e-12:
            raise ValueError(f"|mu| must be <= 1, got {self.mu}")

    @property
    def alpha_db(self) -> float:
        """Large-scale gain in dB."""
        return 10.0 * math.log10(self.alpha_linear)

    @property
    def gain(self) -> float:
        """Instantaneous linear power gain ``alpha |h|^2``."""
        return self.alpha_linear * abs(self.h) ** 2

    def advance(self, rng: np.random.Generator) -> "LinkChannel":
        """Return the link after one sub-slot of small-scale fading."""
        return replace(self, h=complex(fading_step(self.h, self.mu, rng)))

    def rate_bps(self, params: ChannelParams) -> float:
        """Return the link's instantaneous Shannon rate."""
        return float(instantaneous_rate_bps(params, self.gain))
