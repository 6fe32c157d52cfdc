"""Lognormal fading statistics, oceanic scintillation and lognormal-sum matching."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import AllWeightsZero, DegenerateVariance, NonConvergent, NotPositiveDefinite


@dataclass(frozen=True)
class FadingModel:
    """Log-amplitude statistics of alpha = exp(X), X ~ N(mu_X, sigma_X2)."""

    sigma_X2: float
    mu_X: float = 0.0

    def __post_init__(self):
        if self.sigma_X2 < 0:
            raise ValueError("sigma_X2 must be >= 0")

    @classmethod
    def normalized(cls, sigma_X2: float) -> "FadingModel":
        return normalize(sigma_X2)

    @property
    def sigma_X(self) -> float:
        return math.sqrt(self.sigma_X2)

    def mean_alpha2(self) -> float:
        return math.exp(2 * self.mu_X + 2 * self.sigma_X2)


def normalize(sigma_X2: float) -> FadingModel:
    """Fading model with E[alpha^2] = 1, i.e. mu_X = -sigma_X2."""
    if sigma_X2 < 0:
        raise ValueError("sigma_X2 must be >= 0")
    return FadingModel(sigma_X2, -sigma_X2)


def lognormal_pdf(alpha, model: FadingModel):
    if model.sigma_X2 == 0:
        raise DegenerateVariance("sigma_X2 = 0: alpha is the constant exp(mu_X)")
    alpha = np.asarray(alpha, dtype=float)
    s2 = model.sigma_X2
    with np.errstate(divide="ignore"):
        la = np.log(alpha)
    return np.exp(-((la - model.mu_X) ** 2) / (2 * s2)) / (alpha * math.sqrt(2 * math.pi * s2))


def sigma_x2_from_si(sigma_I2: float) -> float:
    if sigma_I2 < 0:
        raise ValueError("scintillation index must be >= 0")
    return 0.25 * math.log1p(sigma_I2)


def si_from_sigma_x2(sigma_X2: float) -> float:
    return math.expm1(4.0 * sigma_X2)


# -- scintillation -------------------------------------------------------------

@dataclass(frozen=True)
class OceanTurbulenceParams:
    epsilon: float = 1e-5  # m^2/s^3
    chi_T: float = 4e-7  # K^2/s
    w: float = -3.0
    wavelength: float = 532e-9
    wave_type: str = "plane"
    inner_scale: float = 1e-3  # Kolmogorov microscale, m

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.chi_T < 0:
            raise ValueError("chi_T must be >= 0")
        if self.wave_type not in ("plane", "spherical"):
            raise ValueError("wave_type is 'plane' or 'spherical'")

    @property
    def k0(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def theta(self) -> float:
        return 1.0 if self.wave_type == "plane" else 0.0


def nikishov_spectrum(params: OceanTurbulenceParams) -> Callable:
    """Oceanic refractive-index power spectrum (temperature + salinity)."""
    if params.w == 0:
        raise ValueError("w must be non-zero")
    A_T, A_S, A_TS = 1.863e-2, 1.9e-4, 9.41e-3
    eta, w = params.inner_scale, params.w
    pref = 0.388e-8 * params.epsilon ** (-1.0 / 3.0) * params.chi_T / w**2

    def phi(kappa):
        kappa = np.asarray(kappa, dtype=float)
        ke = kappa * eta
        delta = 8.284 * ke ** (4.0 / 3.0) + 12.978 * ke**2
        return (pref * kappa ** (-11.0 / 3.0) * (1 + 2.35 * ke ** (2.0 / 3.0))
                * (w**2 * np.exp(-A_T * delta) + np.exp(-A_S * delta) - 2 * w * np.exp(-A_TS * delta)))

    return phi


def _path_factor(a: float, theta: float) -> float:
    """Integral over xi in [0, 1] of 1 - cos(a*xi*(1 - (1-theta)*xi)), in closed form."""
    if theta == 1.0:
        if abs(a) < 1e-4:
            return a * a / 6.0
        return 1.0 - math.sin(a) / a
    # spherical: a*xi*(1-xi) = a/4 - a*(xi-1/2)^2, which reduces to Fresnel integrals
    if abs(a) < 1e-3:
        return a * a / 60.0
    z = 0.5 * math.sqrt(2.0 * a / math.pi)
    S, C = special.fresnel(z)
    return 1.0 - 2.0 * math.sqrt(math.pi / (2.0 * a)) * (math.cos(a / 4) * C + math.sin(a / 4) * S)


def scintillation_index(params: OceanTurbulenceParams, d0: float, spectrum: Callable | None = None,
                        rtol: float = 1e-4) -> float:
    """Weak-turbulence scintillation index of a plane or spherical wave."""
    if d0 <= 0:
        raise ValueError("d0 must be positive")
    if spectrum is None:
        spectrum = nikishov_spectrum(params)
    k0, theta = params.k0, params.theta

    def integrand(log_k):
        k = math.exp(log_k)
        return k * k * float(spectrum(k)) * _path_factor(d0 * k * k / k0, theta)

    # locate the peak on a coarse log grid, then trim where the integrand is negligible
    grid = np.linspace(math.log(1e-6), math.log(1e8), 600)
    vals = np.array([integrand(g) for g in grid])
    if not np.all(np.isfinite(vals)):
        raise NonConvergent("spectrum produced non-finite values")
    peak = vals.max()
    if peak <= 0:
        return 0.0
    significant = np.nonzero(vals >= 1e-12 * peak)[0]
    lo_i, hi_i = significant[0], significant[-1]
    if hi_i == len(grid) - 1:
        raise NonConvergent("integrand does not decay within kappa <= 1e8 1/m")
    lo, hi = grid[max(lo_i - 1, 0)], grid[hi_i + 1]
    val, err = integrate.quad(integrand, lo, hi, epsrel=rtol, epsabs=0.0, limit=500,
                              points=[grid[int(vals.argmax())]])
    if not np.isfinite(val) or err > 10 * rtol * abs(val):
        raise NonConvergent(f"quadrature error estimate {err:.3g} too large for value {val:.3g}")
    return 8.0 * math.pi**2 * k0**2 * d0 * val


# -- correlation ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CorrelationModel:
    R_T: np.ndarray
    R_R: np.ndarray

    def __post_init__(self):
        for name in ("R_T", "R_R"):
            R = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, R)
            if R.shape[0] != R.shape[1] or not np.allclose(R, R.T):
                raise ValueError(f"{name} must be square and symmetric")
            if not np.allclose(np.diag(R), 1.0):
                raise ValueError(f"{name} must have unit diagonal")
            if np.linalg.eigvalsh(R).min() < -1e-12:
                raise NotPositiveDefinite(f"{name} is not positive semi-definite")

    @classmethod
    def exponential(cls, M: int, N: int, rho_tx: float, rho_rx: float | None = None):
        """Entries rho**|i - j| on each side."""
        rho_rx = rho_tx if rho_rx is None else rho_rx
        idx_t, idx_r = np.arange(M), np.arange(N)
        R_T = rho_tx ** np.abs(idx_t[:, None] - idx_t[None, :]).astype(float)
        R_R = rho_rx ** np.abs(idx_r[:, None] - idx_r[None, :]).astype(float)
        return cls(R_T, R_R)

    @classmethod
    def independent(cls, M: int, N: int):
        return cls(np.eye(M), np.eye(N))

    @property
    def R_MIMO(self) -> np.ndarray:
        # TX-major flattening: link (i, j) -> i*N + j
        return np.kron(self.R_T, self.R_R)


def gen_correlated_fading(model: FadingModel, corr: CorrelationModel, M: int, N: int,
                          count: int, seed=None, return_log_amplitude=False):
    """Draw ``count`` correlated fading matrices alpha'^2 of shape (count, M, N)."""
    R = corr.R_MIMO
    if R.shape != (M * N, M * N):
        raise ValueError(f"correlation is {R.shape}, expected {(M * N, M * N)}")
    try:
        C = np.linalg.cholesky(R).T  # upper triangular, R = C^T C
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    X = rng.standard_normal((count, M * N))
    Xp = model.sigma_X * X @ C - model.sigma_X2
    Xp = Xp.reshape(count, M, N)
    if return_log_amplitude:
        return Xp
    return np.exp(2.0 * Xp)


def sample_fading(sigma_X2, count: int, seed=None) -> np.ndarray:
    """Independent normalized lognormal alpha^2 draws, one per entry of ``sigma_X2``."""
    s2 = np.asarray(sigma_X2, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    X = rng.standard_normal((count,) + s2.shape) * np.sqrt(s2) - s2
    return np.exp(2.0 * X)


# -- lognormal sums ------------------------------------------------------------

@dataclass(frozen=True)
class LognormalSumApprox:
    """Equivalent lognormal exp(2z), z ~ N(mu_z, sigma_z2). Fields may be arrays."""

    mu_z: object
    sigma_z2: object

    def as_fading(self) -> FadingModel:
        return FadingModel(float(self.sigma_z2), float(self.mu_z))


def fenton_wilkinson(weights, sigmas) -> LognormalSumApprox:
    """Moment-match sum_i G_i * alpha_i^2 of normalized lognormals.

    ``sigmas`` are the log-amplitude variances. Both inputs broadcast; the
    last axis is summed over, so batches of weight vectors are supported.
    """
    G = np.asarray(weights, dtype=float)
    s2 = np.broadcast_to(np.asarray(sigmas, dtype=float), G.shape)
    if np.any(G < 0):
        raise ValueError("Fenton-Wilkinson weights must be >= 0")
    total = G.sum(axis=-1)
    if np.any(total <= 0):
        raise AllWeightsZero("at least one weight must be positive")
    var_ratio = (G**2 * np.expm1(4.0 * s2)).sum(axis=-1) / total**2
    sigma_z2 = 0.25 * np.log1p(var_ratio)
    mu_z = 0.5 * np.log(total) - sigma_z2
    if np.ndim(sigma_z2) == 0:
        return LognormalSumApprox(float(mu_z), float(sigma_z2))
    return LognormalSumApprox(mu_z, sigma_z2)
