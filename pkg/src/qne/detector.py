"""Energy-detector statistics under the Gaussian (CLT) approximation.

Everything here works per (player, carrier) and broadcasts over numpy arrays.
The transformed coordinates are

    tau_hat   = sqrt(tau * f)
    gamma_hat = sqrt(tau * f) * (gamma - mu0) / sigma0

in which the false-alarm and missed-detection constraints become linear.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

# Q(x) underflows to exactly 0 far beyond this; keep the argument finite-safe.
_Q_CLAMP = 37.0
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class SignalingModel(str, enum.Enum):
    PSK = "PSK"
    GAUSSIAN = "Gaussian"


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise ValueError("q_function: argument must be finite")


def q_function(x):
    """Gaussian tail probability Q(x) = P(N(0, 1) > x)."""
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    out = ndtr(-np.clip(x, -_Q_CLAMP, _Q_CLAMP))
    return out[()] if out.ndim == 0 else out


def q_density(x):
    """Standard normal density, i.e. -Q'(x)."""
    x = np.clip(np.asarray(x, dtype=float), -_Q_CLAMP, _Q_CLAMP)
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return out[()] if out.ndim == 0 else out


def q_inverse(p):
    """Inverse of the Q-function on (0, 1).

    Uses ``-ndtri(p)`` (accurate in the lower tail) followed by one Newton step
    on Q itself, which brings the round-trip residual to a few ulps.
    """
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("q_inverse: probability must lie strictly inside (0, 1)")
    x = -ndtri(p)
    dens = q_density(x)
    # Newton on Q(x) - p = 0 with Q' = -density.
    x = x + (ndtr(-x) - p) / np.where(dens > 0, dens, 1.0)
    return x[()] if x.ndim == 0 else x


@dataclass(frozen=True)
class DetectorStats:
    """Mean and standard deviation of the energy statistic under H0/H1."""

    mu0: np.ndarray
    mu1: np.ndarray
    sigma0: np.ndarray
    sigma1: np.ndarray

    @property
    def snr_d(self):
        return (self.mu1 - self.mu0) / self.mu0

    @property
    def delta(self):
        return self.mu1 - self.mu0


def detector_stats(noise_var, signal_var, model=SignalingModel.GAUSSIAN) -> DetectorStats:
    noise_var = np.asarray(noise_var, dtype=float)
    signal_var = np.asarray(signal_var, dtype=float)
    if np.any(noise_var <= 0) or np.any(signal_var <= 0):
        raise ValueError("detector_stats: noise and signal variances must be positive")
    model = SignalingModel(model)
    mu0 = noise_var
    mu1 = noise_var + signal_var
    sigma0 = noise_var.copy()
    if model is SignalingModel.PSK:
        sigma1 = np.sqrt(noise_var * (2.0 * signal_var + noise_var))
    else:
        sigma1 = signal_var + noise_var
    return DetectorStats(mu0=mu0, mu1=mu1, sigma0=sigma0, sigma1=np.asarray(sigma1))


def to_hat(gamma, tau, f, stats: DetectorStats):
    """Map (gamma, tau) to (gamma_hat, tau_hat)."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("to_hat: sensing time must be positive")
    tau_hat = np.sqrt(tau * f)
    gamma_hat = tau_hat * (np.asarray(gamma, dtype=float) - stats.mu0) / stats.sigma0
    return gamma_hat, tau_hat


def from_hat(gamma_hat, tau_hat, f, stats: DetectorStats):
    """Inverse of :func:`to_hat`."""
    tau_hat = np.asarray(tau_hat, dtype=float)
    if np.any(tau_hat <= 0):
        raise ValueError("from_hat: tau_hat must be positive")
    tau = tau_hat**2 / f
    gamma = stats.mu0 + stats.sigma0 * np.asarray(gamma_hat, dtype=float) / tau_hat
    return gamma, tau


def p_fa_p_d(gamma, tau, f, stats: DetectorStats):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("p_fa_p_d: sensing time must be positive")
    root_k = np.sqrt(tau * f)
    p_fa = q_function(root_k * (gamma - stats.mu0) / stats.sigma0)
    p_d = q_function(root_k * (gamma - stats.mu1) / stats.sigma1)
    return p_fa, p_d


def p_fa_hat(gamma_hat):
    return q_function(gamma_hat)


def detection_argument(gamma_hat, tau_hat, stats: DetectorStats):
    """(sigma0 * gamma_hat - (mu1 - mu0) * tau_hat) / sigma1.

    Q of this argument is the detection probability, so the miss bound
    P_miss <= alpha reads ``detection_argument <= q_inverse(1 - alpha)``.
    """
    return (stats.sigma0 * gamma_hat - stats.delta * tau_hat) / stats.sigma1


def p_miss_hat(gamma_hat, tau_hat, stats: DetectorStats):
    """Missed-detection probability 1 - Q(detection_argument)."""
    b = np.asarray(detection_argument(gamma_hat, tau_hat, stats), dtype=float)
    _check_finite(b)
    out = ndtr(np.clip(b, -_Q_CLAMP, _Q_CLAMP))
    return out[()] if out.ndim == 0 else out


def monte_carlo_detector(stats: DetectorStats, gamma, tau, f, trials, seed, chunk=2000):
    """Empirical (P_fa, P_d) of the energy test with Gaussian PU signaling.

    Under H0 the samples are y[n] = w[n]; under H1, y[n] = I[n] + w[n] with
    both terms circular complex Gaussian, so y[n] is circular Gaussian with
    power mu1.  The per-sample energy |y[n]|^2 of such a sample is exponential
    with that mean, which is what gets drawn.  K = floor(tau * f) samples per
    trial; the test declares H1 when the average energy exceeds ``gamma``.
    """
    n_samples = int(math.floor(tau * f))
    if n_samples < 1:
        raise ValueError("monte_carlo_detector: need at least one sample (floor(tau*f) >= 1)")
    if trials < 1:
        raise ValueError("monte_carlo_detector: trials must be >= 1")
    rng = np.random.default_rng(seed)
    powers = (float(stats.mu0), float(stats.mu1))
    hits = [0, 0]
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        for i, power in enumerate(powers):
            energy = rng.standard_exponential((m, n_samples)).mean(axis=1) * power
            hits[i] += int(np.count_nonzero(energy > gamma))
        done += m
    return hits[0] / trials, hits[1] / trials
