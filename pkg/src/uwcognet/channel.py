"""Underwater acoustic channel mathematics.

Propagation attenuation, ambient-noise spectra, statistical multipath link
gain, per-bit error rates under log-normal SINR, and packet loss.

Unit conventions, used everywhere in the package:
  - frequency f in kHz, distance d in meters, time in seconds
  - power quantities in dB re uPa^2 where marked _db, otherwise linear uPa^2
  - noise PSD in dB re uPa^2/Hz; band integrals therefore run over Hz
  - internal arithmetic on powers is linear; dB only at the boundaries
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, roots_hermite

from .errors import ConfigError

LN10_OVER_10 = math.log(10.0) / 10.0


@dataclass(frozen=True)
class AcousticEnvironment:
    """Static propagation environment.

    spreading_factor: geometric spreading exponent, in [1, 2]
    normalizing_constant: linear attenuation reference (1.0 = 0 dB offset)
    shipping_activity: shipping noise factor in [0, 1]
    wind_speed: m/s, >= 0
    sound_speed: m/s
    """

    spreading_factor: float = 1.05
    normalizing_constant: float = 1.0
    shipping_activity: float = 0.2
    wind_speed: float = 0.0
    sound_speed: float = 1500.0

    def __post_init__(self):
        if not 1.0 <= self.spreading_factor <= 2.0:
            raise ConfigError(f"spreading_factor {self.spreading_factor} outside [1, 2]")
        if self.normalizing_constant <= 0:
            raise ConfigError("normalizing_constant must be positive")
        if not 0.0 <= self.shipping_activity <= 1.0:
            raise ConfigError("shipping_activity outside [0, 1]")
        if self.wind_speed < 0:
            raise ConfigError("wind_speed must be >= 0")
        if self.sound_speed <= 0:
            raise ConfigError("sound_speed must be positive")


def absorption_db_per_km(f_khz):
    """Thorp absorption coefficient in dB/km for f in kHz (f > 0)."""
    f = np.asarray(f_khz, dtype=float)
    if np.any(f <= 0):
        raise ValueError("absorption requires f > 0 kHz")
    f2 = f * f
    out = 0.11 * f2 / (1.0 + f2) + 44.0 * f2 / (4100.0 + f2) + 2.75e-4 * f2 + 0.003
    return float(out) if np.isscalar(f_khz) else out


def attenuation_db(d_m, f_khz, env: AcousticEnvironment):
    """Path attenuation in dB over d meters at f kHz.

    Spreading term k*10*log10(d) plus Thorp absorption, relative to the
    environment's normalizing constant (0 dB when that constant is 1).
    """
    d = np.asarray(d_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("attenuation requires d > 0 m")
    a = absorption_db_per_km(f_khz)
    out = (
        env.spreading_factor * 10.0 * np.log10(d)
        + (d / 1e3) * a
        + 10.0 * math.log10(env.normalizing_constant)
    )
    return float(out) if np.isscalar(d_m) and np.isscalar(f_khz) else out


@dataclass(frozen=True)
class NoisePsd:
    """Ambient-noise PSD split by source, at one frequency.

    Component fields are in dB re uPa^2/Hz; total_linear is the linear sum.
    """

    turbulence_db: float
    shipping_db: float
    wind_db: float
    thermal_db: float
    total_linear: float

    @property
    def total_db(self) -> float:
        return 10.0 * math.log10(self.total_linear)


def noise_psd(f_khz: float, env: AcousticEnvironment) -> NoisePsd:
    """Four-component ambient noise PSD at f kHz (turbulence, shipping,
    wind/waves, thermal), plus their linear-domain total."""
    f = float(f_khz)
    if f <= 0:
        raise ValueError("noise_psd requires f > 0 kHz")
    s = env.shipping_activity
    w = env.wind_speed
    nt = 17.0 - 30.0 * math.log10(f)
    ns = 40.0 + 20.0 * (s - 0.5) + 26.0 * math.log10(f) - 60.0 * math.log10(f + 0.03)
    nw = 50.0 + 7.5 * math.sqrt(w) + 20.0 * math.log10(f) - 40.0 * math.log10(f + 0.4)
    nth = -15.0 + 20.0 * math.log10(f)
    total = sum(10.0 ** (x / 10.0) for x in (nt, ns, nw, nth))
    return NoisePsd(nt, ns, nw, nth, total)


def band_noise_power(f_lo_khz: float, f_hi_khz: float, env: AcousticEnvironment,
                     points: int = 2001) -> float:
    """Total in-band noise power (linear uPa^2) over [f_lo, f_hi] kHz.

    Trapezoid integration of the linear PSD over the band in Hz.
    """
    if not 0 < f_lo_khz < f_hi_khz:
        raise ValueError("band edges must satisfy 0 < f_lo < f_hi")
    f = np.linspace(f_lo_khz, f_hi_khz, points)
    psd = np.array([noise_psd(fi, env).total_linear for fi in f])
    return float(np.trapezoid(psd, f * 1e3))


@dataclass(frozen=True)
class MultipathGeometry:
    """Macro-path layout for the statistical link gain model.

    path_lengths_m: nominal lengths, ascending, direct path first
    reflection_coeffs: cumulative (signed) amplitude coefficient per path;
        the direct path must carry 1.0
    length_deviation_std_m: std of the random per-path length deviation
    micropath_count: scattering micro-paths per macro path (>= 1)
    micropath_delay_spread_s: scale of the random micro-path excess delays
    reference_absorption: linear per-meter absorption factor used in the
        deviation gain exponent; None = evaluate Thorp at band center
    """

    path_lengths_m: tuple
    reflection_coeffs: tuple
    length_deviation_std_m: float = 0.0
    micropath_count: int = 1
    micropath_delay_spread_s: float = 0.0
    reference_absorption: float | None = None

    def __post_init__(self):
        if len(self.path_lengths_m) == 0:
            raise ConfigError("multipath geometry needs at least one path")
        if len(self.path_lengths_m) != len(self.reflection_coeffs):
            raise ConfigError("path_lengths_m and reflection_coeffs lengths differ")
        d = self.path_lengths_m
        if any(d[0] > dl for dl in d):
            raise ConfigError("direct path must be the shortest")
        if abs(self.reflection_coeffs[0]) != 1.0:
            raise ConfigError("direct path reflection coefficient must be 1")
        if self.micropath_count < 1:
            raise ConfigError("micropath_count must be >= 1")


def three_path_geometry(range_m: float, water_depth_m: float = 100.0,
                        node_depth_m: float = 50.0, bottom_loss: float = 0.5,
                        length_deviation_std_m: float = 25.0,
                        micropath_count: int = 5,
                        micropath_delay_spread_s: float = 1e-4) -> MultipathGeometry:
    """Direct + surface-reflected + bottom-reflected geometry for a
    horizontal link between nodes at equal depth."""
    d0 = float(range_m)
    up = 2.0 * node_depth_m
    down = 2.0 * (water_depth_m - node_depth_m)
    d_surf = math.hypot(d0, up)
    d_bot = math.hypot(d0, down)
    lengths = sorted([(d0, 1.0), (d_surf, -1.0), (d_bot, bottom_loss)])
    return MultipathGeometry(
        path_lengths_m=tuple(x[0] for x in lengths),
        reflection_coeffs=tuple(x[1] for x in lengths),
        length_deviation_std_m=length_deviation_std_m,
        micropath_count=micropath_count,
        micropath_delay_spread_s=micropath_delay_spread_s,
    )


@dataclass(frozen=True)
class LinkGainModel:
    """Log-normal in-band power gain of a link: ln G ~ N(mu_ln, sigma_ln^2).

    The gain already contains path attenuation at ref_distance_m, so the
    mean received power for transmit power P is P * exp(mu_ln + sigma_ln^2/2).
    """

    mu_ln: float
    sigma_ln: float
    center_khz: float
    bandwidth_khz: float
    ref_distance_m: float

    def __post_init__(self):
        if self.sigma_ln < 0:
            raise ConfigError("sigma_ln must be >= 0")
        if self.bandwidth_khz <= 0:
            raise ConfigError("bandwidth must be positive")
        if self.center_khz - self.bandwidth_khz / 2 <= 0:
            raise ConfigError("band must lie above 0 kHz")


def fit_link_gain(geometry: MultipathGeometry, center_khz: float, bandwidth_khz: float,
                  env: AcousticEnvironment, sample_count: int, rng,
                  freq_points: int = 64) -> LinkGainModel:
    """Fit the log-normal link gain by Monte Carlo over channel realizations.

    Each realization draws per-path length deviations (scaling amplitudes by
    exp(-xi * dd / 2), xi = a0 - 1 + k/d) and random micro-path delays, sums
    the transfer function over an in-band frequency grid, and averages |H|^2
    across the band. Returns mean/std of ln G over the realizations.
    """
    if sample_count < 10_000:
        raise ValueError("sample_count must be >= 1e4 for a stable fit")
    L = len(geometry.path_lengths_m)
    d = np.asarray(geometry.path_lengths_m, dtype=float)
    gamma_refl = np.asarray(geometry.reflection_coeffs, dtype=float)
    f = np.linspace(center_khz - bandwidth_khz / 2, center_khz + bandwidth_khz / 2,
                    freq_points)
    a_db = absorption_db_per_km(f)

    # direct-path power response 1/A(d0, f) per frequency
    att0_db = attenuation_db(d[0], f, env)
    h0_sq = 10.0 ** (-att0_db / 10.0)

    # relative nominal amplitude of each path vs the direct one
    a_per_m_db = a_db / 1e3
    rel_att_db = (env.spreading_factor * 10.0 * np.log10(d[:, None] / d[0])
                  + (d[:, None] - d[0]) * a_per_m_db[None, :])
    h_bar = gamma_refl[:, None] * 10.0 ** (-rel_att_db / 20.0)  # (L, F)

    a0 = geometry.reference_absorption
    if a0 is None:
        a0 = 10.0 ** (absorption_db_per_km(center_khz) / 1e3 / 10.0)
    xi = a0 - 1.0 + env.spreading_factor / d  # 1/m, per path

    tau = (d - d[0]) / env.sound_speed
    phase_macro = np.exp(-2j * np.pi * (f[None, :] * 1e3) * tau[:, None])  # (L, F)

    n = int(sample_count)
    dd = rng.normal(0.0, geometry.length_deviation_std_m, size=(n, L)) \
        if geometry.length_deviation_std_m > 0 else np.zeros((n, L))
    amp = np.exp(-xi[None, :] * dd / 2.0)  # (n, L)

    m = geometry.micropath_count
    if m > 1 and geometry.micropath_delay_spread_s > 0:
        dtau = rng.exponential(geometry.micropath_delay_spread_s, size=(n, L, m - 1))
        # gamma_l(f) = (1/m) * (1 + sum_i exp(-j 2 pi f dtau_i)), first micro path at 0
        micro = (1.0 + np.exp(
            -2j * np.pi * (f[None, None, None, :] * 1e3) * dtau[..., None]
        ).sum(axis=2)) / m  # (n, L, F)
    else:
        micro = np.ones((1, 1, 1))

    h_sum = ((h_bar[None, :, :] * phase_macro[None, :, :]) * amp[:, :, None] * micro
             ).sum(axis=1)  # (n, F)
    g = (h0_sq[None, :] * np.abs(h_sum) ** 2).mean(axis=1)  # in-band average
    ln_g = np.log(g)
    sigma = float(np.std(ln_g, ddof=1)) if n > 1 else 0.0
    return LinkGainModel(
        mu_ln=float(np.mean(ln_g)),
        sigma_ln=sigma,
        center_khz=center_khz,
        bandwidth_khz=bandwidth_khz,
        ref_distance_m=float(d[0]),
    )


def q_function(x):
    """Standard normal tail probability Q(x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


_GH_NODES: dict = {}


def ber_lognormal(mu_ln_snr: float, sigma_ln_snr: float, order: int = 64) -> float:
    """Average QPSK bit error rate for log-normal per-bit SNR.

    Integrates Q(sqrt(2 g)) against the log-normal density of g via
    Gauss-Hermite quadrature in ln g; exact Q(sqrt(2 e^mu)) when sigma = 0.
    Result clamped to [0, 0.5].
    """
    if not math.isfinite(mu_ln_snr):
        raise ValueError("mu_ln_snr must be finite")
    if sigma_ln_snr < 0:
        raise ValueError("sigma_ln_snr must be >= 0")
    if sigma_ln_snr == 0.0:
        with np.errstate(over="ignore"):
            val = float(q_function(math.sqrt(2.0) * np.sqrt(np.exp(mu_ln_snr))))
        return min(max(val, 0.0), 0.5)
    if order not in _GH_NODES:
        _GH_NODES[order] = roots_hermite(order)
    x, w = _GH_NODES[order]
    with np.errstate(over="ignore"):
        g = np.exp(mu_ln_snr + math.sqrt(2.0) * sigma_ln_snr * x)
        val = float(w @ q_function(np.sqrt(2.0 * g))) / math.sqrt(math.pi)
    return min(max(val, 0.0), 0.5)


def packet_loss(bit_bers) -> float:
    """Packet loss probability 1 - prod_k (1 - p_k), computed in log space."""
    p = np.asarray(bit_bers, dtype=float)
    if p.size == 0:
        return 0.0
    if np.any((p < 0) | (p > 1)):
        raise ValueError("bit error rates must lie in [0, 1]")
    if np.any(p == 1.0):
        return 1.0
    return float(-np.expm1(np.log1p(-p).sum()))


def packet_loss_segments(segments) -> float:
    """Packet loss for a piecewise-constant BER profile.

    segments: iterable of (bit_count, ber) pairs covering the packet.
    """
    log_ok = 0.0
    for count, ber in segments:
        if count < 0:
            raise ValueError("segment bit counts must be >= 0")
        if not 0.0 <= ber <= 1.0:
            raise ValueError("bit error rates must lie in [0, 1]")
        if ber == 1.0 and count > 0:
            return 1.0
        log_ok += count * math.log1p(-ber)
    return -math.expm1(log_ok)
