"""Photon-counting BER: Poisson shot noise plus Gaussian thermal noise.

The receiver output is an integrated photoelectron count. Its moment
generating function, conditioned on fading, drives a saddle-point tail
approximation; a Gaussian approximation with matched mean and variance is
the fast alternative. Only equal gain combining is modelled, which is also
the single-receiver case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .ber_analytic import (GhqRule, bit_sequences, fading_grid_size, fading_node_chunks, ghq_rule,
                           q_function, MAX_LINKS, MAX_MEMORY, MAX_TENSOR_EVALUATIONS)
from .errors import CostGuardExceeded, NoEyeOpening, RootBracketFailure
from .link_budget import DiversityLayout
from .turbulence import fenton_wilkinson

LN2 = math.log(2.0)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
DEFAULT_PRUNE_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class CountingModel:
    """Count-domain description of an M x N link with N summed receivers.

    ``m_bd`` is the total background-plus-dark mean count per bit after
    combining and ``sigma_th2`` the thermal variance of one receiver.
    """

    m_s: np.ndarray
    m_I: np.ndarray
    m_bd: float
    sigma_th2: float

    def __post_init__(self):
        m_s = np.atleast_2d(np.asarray(self.m_s, dtype=float))
        m_I = np.asarray(self.m_I, dtype=float)
        if m_I.size == 0:
            m_I = np.zeros(m_s.shape + (0,))
        object.__setattr__(self, "m_s", m_s)
        object.__setattr__(self, "m_I", m_I.reshape(m_s.shape + (-1,)))
        if self.m_bd < 0 or self.sigma_th2 < 0:
            raise ValueError("m_bd and sigma_th2 must be >= 0")

    @classmethod
    def from_layout(cls, layout: DiversityLayout) -> "CountingModel":
        nz = layout.noise
        # background is split over the receivers, dark current is not
        m_bd = layout.N * (nz.n_b_per_rx + nz.n_d) * nz.T_b
        return cls(layout.m_s, layout.m_I, m_bd, nz.sigma_th2)

    @classmethod
    def siso(cls, m_s: float, m_I=(), m_bd: float = 0.0, sigma_th2: float = 0.0):
        return cls(np.array([[m_s]]), np.array(m_I, dtype=float).reshape(1, 1, -1), m_bd, sigma_th2)

    @property
    def M(self) -> int:
        return self.m_s.shape[0]

    @property
    def N(self) -> int:
        return self.m_s.shape[1]

    @property
    def L_max(self) -> int:
        return self.m_I.shape[2]

    @property
    def noise_var(self) -> float:
        return self.N * self.sigma_th2


@dataclass(frozen=True, eq=False)
class LogMgf:
    """ln E[e^{s u}] = var*s^2/2 + lin*(e^s - 1) + sum_j ln((1 + exp(a_j (e^s - 1))) / 2).

    The first two terms are thermal noise and Poisson counts; each ``a_j``
    is a Poisson burst present with probability 1/2 (one ISI bit). Arrays
    broadcast over leading (node) dimensions; ``a`` has a trailing term axis.
    ``shift`` adds a deterministic offset to the count.
    """

    var: float
    lin: np.ndarray
    a: np.ndarray
    shift: float = 0.0

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        em, es = np.expm1(s), np.exp(s)
        K = 0.5 * self.var * s * s + self.lin * em + self.shift * s
        K1 = self.var * s + self.lin * es + self.shift
        K2 = self.var + self.lin * es
        if self.a.shape[-1]:
            y = self.a * em[..., None]
            ae = self.a * es[..., None]
            sig = special.expit(y)
            K = K + (np.logaddexp(0.0, y) - LN2).sum(-1)
            K1 = K1 + (sig * ae).sum(-1)
            K2 = K2 + (sig * (1.0 - sig) * ae * ae + sig * ae).sum(-1)
        return K, K1, K2

    @property
    def mean(self):
        return self.lin + 0.5 * self.a.sum(-1) + self.shift


def _mimo_egc_logmgf(model: CountingModel, alpha2, b0: int, worst_case: bool) -> LogMgf:
    alpha2 = np.asarray(alpha2, dtype=float)
    sig = np.einsum("...ij,ij->...", alpha2, model.m_s)
    lin = model.m_bd + b0 * sig
    a = np.einsum("...ij,ijk->...jk", alpha2, model.m_I)
    a = a.reshape(a.shape[:-2] + (a.shape[-2] * a.shape[-1],))
    if worst_case:
        # every previous bit is 0 when a 1 is sent and 1 when a 0 is sent
        lin = lin + (1 - b0) * a.sum(-1)
        a = a[..., :0]
    return LogMgf(model.noise_var, np.asarray(lin, dtype=float), a)


def mgf_mimo_egc(model: CountingModel, alpha_matrix, s, b0: int, worst_case: bool = False):
    """Log-MGF of the EGC output and its first two s-derivatives."""
    return _mimo_egc_logmgf(model, alpha_matrix, b0, worst_case)(s)


def mgf_siso(model: CountingModel, alpha2, s, b0: int, worst_case: bool = False):
    """Log-MGF of a single-receiver output; ``model`` must be 1 x 1."""
    a2 = np.asarray(alpha2, dtype=float)[..., None, None]
    return mgf_mimo_egc(model, a2, s, b0, worst_case)


# -- saddle point ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SaddlePointSolution:
    beta: np.ndarray
    s0: np.ndarray
    s1: np.ndarray
    q_plus: np.ndarray
    q_minus: np.ndarray

    @property
    def ber(self):
        return 0.5 * (self.q_plus + self.q_minus)


def _tail_kernel(s, lattice: bool, upper: bool):
    """Correction term g(s) of the saddle exponent with its derivatives.

    Continuous outputs use -ln|s|. Integer-valued outputs use the exact
    geometric factor of the lattice tail sum, -ln(1 - e^{-s}) above and
    -ln(1 - e^{s}) below.
    """
    if not lattice:
        return -np.log(np.abs(s)), -1.0 / s, 1.0 / (s * s)
    if upper:
        em = np.expm1(s)
        return -np.log(-np.expm1(-s)), -1.0 / em, np.exp(s) / (em * em)
    em = np.expm1(-s)
    return -np.log(-np.expm1(s)), 1.0 / em, np.exp(-s) / (em * em)


def _solve_increasing(f, lo, hi, tol):
    """Vectorized safeguarded Newton for increasing f with f(lo) < 0 < f(hi)."""
    s = 0.5 * (lo + hi)
    for _ in range(200):
        val, der = f(s)
        done = np.abs(val) <= tol
        if done.all():
            return s
        neg = val < 0
        lo = np.where(neg, s, lo)
        hi = np.where(neg, hi, s)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = s - val / der
        ok = (newton > lo) & (newton < hi) & np.isfinite(newton)
        s_new = np.where(ok, newton, 0.5 * (lo + hi))
        stalled = np.abs(hi - lo) <= 1e-15 * np.abs(s)
        s = np.where(done | stalled, s, s_new)
        if (done | stalled).all():
            return s
    return s


def _bracket(f, start, direction, max_steps=400):
    """Expand from ``start`` (same sign as ``direction``) until f changes sign.

    Returns (lo, hi) with f(lo) < 0 < f(hi).
    """
    near = np.array(start, dtype=float)
    far = np.array(start, dtype=float)
    # shrink towards zero until f has the sign it must have next to the origin
    want_near_neg = direction > 0
    for _ in range(max_steps):
        v = f(near)[0]
        bad = (v >= 0) if want_near_neg else (v <= 0)
        if not bad.any():
            break
        near = np.where(bad, near * 0.25, near)
    else:
        raise RootBracketFailure("could not bracket the saddle point near the origin")
    for _ in range(max_steps):
        v = f(far)[0]
        bad = (v <= 0) if want_near_neg else (v >= 0)
        if not bad.any():
            break
        far = np.where(bad, far * 2.0, far)
    else:
        raise RootBracketFailure("could not bracket the saddle point away from the origin")
    return (near, far) if direction > 0 else (far, near)


def _log_tails(mgf0: LogMgf, mgf1: LogMgf, beta, lattice: bool):
    """ln q_plus, ln q_minus and the saddle points for threshold ``beta``.

    For integer outputs ``beta`` is the smallest count decided as a 1.
    """
    beta = np.asarray(beta, dtype=float)
    b_lo = beta - 1.0 if lattice else beta
    scale = 1e-10 * (np.abs(beta) + 1.0)

    def phi_prime(mgf, thr, upper):
        def f(s):
            _, K1, K2 = mgf(s)
            _, g1, g2 = _tail_kernel(s, lattice, upper)
            return K1 - thr + g1, K2 + g2
        return f

    m0, m1 = mgf0.mean, mgf1.mean
    v0 = np.maximum(mgf0(np.zeros_like(beta))[2], 1e-300)
    v1 = np.maximum(mgf1(np.zeros_like(beta))[2], 1e-300)
    guess0 = np.clip(np.abs(beta - m0) / v0, 1e-8, 50.0)
    guess1 = -np.clip(np.abs(m1 - b_lo) / v1, 1e-8, 50.0)
    f0 = phi_prime(mgf0, beta, True)
    f1 = phi_prime(mgf1, b_lo, False)
    s0 = _solve_increasing(f0, *_bracket(f0, guess0, +1), scale)
    s1 = _solve_increasing(f1, *_bracket(f1, guess1, -1), scale)

    def log_q(mgf, s, thr, upper):
        K, _, K2 = mgf(s)
        g, _, g2 = _tail_kernel(s, lattice, upper)
        return K - s * thr + g - 0.5 * np.log(2.0 * np.pi * (K2 + g2))

    return log_q(mgf0, s0, beta, True), log_q(mgf1, s1, b_lo, False), s0, s1


def _saddle(mgf0: LogMgf, mgf1: LogMgf, rtol: float = 1e-6) -> SaddlePointSolution:
    m0 = np.asarray(mgf0.mean, dtype=float)
    m1 = np.asarray(mgf1.mean, dtype=float)
    if np.any(m1 <= m0):
        raise NoEyeOpening("mean count for a 1 does not exceed the mean count for a 0")
    lattice = mgf0.var == 0 and mgf1.var == 0 and mgf0.shift == int(mgf0.shift) and mgf1.shift == int(mgf1.shift)

    def objective(beta):
        lp, lm, _, _ = _log_tails(mgf0, mgf1, beta, lattice)
        return np.logaddexp(lp, lm)

    # golden-section search for the threshold, independently for every node
    a, b = m0.copy(), m1.copy()
    if lattice:
        a, b = a + 0.5, b + 0.5
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = objective(c), objective(d)
    n_iter = int(math.ceil(math.log(rtol) / math.log(GOLDEN))) + 1
    for _ in range(n_iter):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        d_new = np.where(left, c, a + GOLDEN * (b - a))
        c_new = np.where(left, b - GOLDEN * (b - a), d)
        fd_new = np.where(left, fc, np.nan)
        fc_new = np.where(left, np.nan, fd)
        c, d = c_new, d_new
        need_c = np.isnan(fc_new)
        need_d = np.isnan(fd_new)
        if need_c.any():
            fc_new = np.where(need_c, objective(c), fc_new)
        if need_d.any():
            fd_new = np.where(need_d, objective(d), fd_new)
        fc, fd = fc_new, fd_new
    beta = 0.5 * (a + b)
    if lattice:
        # thresholds on integer outputs are integers
        lo_b, hi_b = np.floor(beta), np.ceil(beta)
        lo_b = np.maximum(lo_b, np.floor(m0) + 1.0)
        beta = np.where(objective(lo_b) <= objective(hi_b), lo_b, hi_b)
    lp, lm, s0, s1 = _log_tails(mgf0, mgf1, beta, lattice)
    return SaddlePointSolution(beta, s0, s1, np.minimum(np.exp(lp), 1.0), np.minimum(np.exp(lm), 1.0))


def saddle_point_ber(mgf0: LogMgf, mgf1: LogMgf, rtol: float = 1e-6):
    """BER = (q_plus + q_minus)/2 at the optimum threshold; returns (ber, solution)."""
    sol = _saddle(mgf0, mgf1, rtol)
    return sol.ber, sol


def poisson_gaussian_mgf(mean: float, var: float = 0.0, shift: float = 0.0) -> LogMgf:
    """Log-MGF of shift + Poisson(mean) + N(0, var)."""
    return LogMgf(var, np.asarray(mean, dtype=float), np.zeros(np.shape(mean) + (0,)), shift)


def gaussian_approx_ber(m0, m1, sigma2):
    """Q((m1 - m0) / (sqrt(m1 + s2) + sqrt(m0 + s2))), Poisson replaced by an equal-variance Gaussian."""
    m0 = np.asarray(m0, dtype=float)
    m1 = np.asarray(m1, dtype=float)
    return q_function((m1 - m0) / (np.sqrt(m1 + sigma2) + np.sqrt(m0 + sigma2)))


# -- fading and sequence averages -----------------------------------------------

def _check_cost(model: CountingModel, sigma_X2, rule: GhqRule, n_patterns: int):
    if model.M * model.N > MAX_LINKS:
        raise CostGuardExceeded(f"M*N = {model.M * model.N} exceeds the tensor-quadrature limit {MAX_LINKS}")
    if model.L_max > MAX_MEMORY:
        raise CostGuardExceeded(f"L_max = {model.L_max} exceeds {MAX_MEMORY}")
    total = fading_grid_size(sigma_X2, rule)
    if total * n_patterns > MAX_TENSOR_EVALUATIONS:
        raise CostGuardExceeded(f"{total} nodes x {n_patterns} patterns exceeds {MAX_TENSOR_EVALUATIONS}")


def _gaussian_conditional(model: CountingModel, alpha2, patterns):
    """Gaussian-approximation BER per node, averaged over the given bit patterns."""
    sig = np.einsum("cij,ij->c", alpha2, model.m_s)
    isi = np.einsum("cij,ijk,sk->cs", alpha2, model.m_I, patterns) if model.L_max else 0.0
    m0 = model.m_bd + isi + np.zeros((alpha2.shape[0], len(patterns)))
    m1 = m0 + sig[:, None]
    return gaussian_approx_ber(m0, m1, model.noise_var)


def counting_exact_ber(model: CountingModel, sigma_X2=0.0, method: str = "saddle",
                       rule: GhqRule | None = None, worst_case: bool = False,
                       prune_tol: float = DEFAULT_PRUNE_TOL) -> float:
    """Photon-counting BER averaged over independent lognormal fading.

    ``method`` is ``"saddle"`` (saddle point on the ISI-mixture MGF) or
    ``"gaussian"`` (Gaussian approximation for every previous-bit pattern).
    ``worst_case`` evaluates the ISI upper bound instead.
    """
    rule = rule or ghq_rule()
    sigma_X2 = np.broadcast_to(np.asarray(sigma_X2, dtype=float), model.m_s.shape)
    L = model.L_max
    if method == "gaussian":
        patterns = np.stack([np.zeros(L), np.ones(L)]) if worst_case else bit_sequences(L)
    elif method == "saddle":
        patterns = np.zeros((1, L))
    else:
        raise ValueError(f"unknown method {method!r}")
    _check_cost(model, sigma_X2, rule, len(patterns))
    parts = []
    for alpha2, w in fading_node_chunks(sigma_X2, rule, prune_tol=prune_tol):
        if method == "saddle":
            mgf0 = _mimo_egc_logmgf(model, alpha2, 0, worst_case)
            mgf1 = _mimo_egc_logmgf(model, alpha2, 1, worst_case)
            cond = _saddle(mgf0, mgf1).ber
        elif worst_case:
            m1 = model.m_bd + np.einsum("cij,ij->c", alpha2, model.m_s)
            m0 = model.m_bd + np.einsum("cij,ijk->c", alpha2, model.m_I)
            cond = gaussian_approx_ber(m0, m1, model.noise_var)
        else:
            cond = _gaussian_conditional(model, alpha2, patterns).mean(axis=1)
        parts.append(float(w @ cond))
    return math.fsum(parts)


# -- lognormal-sum shortcut ------------------------------------------------------

def _collapse(weights, sigma_X2):
    """FW log-amplitude statistics per row; rows of zero weight give (nan, 0)."""
    weights = np.atleast_2d(weights)
    s2 = np.broadcast_to(sigma_X2, weights.shape)
    total = weights.sum(-1)
    mu, sz2 = np.full(len(weights), np.nan), np.zeros(len(weights))
    live = total > 0
    if live.any():
        fw = fenton_wilkinson(weights[live], s2[live])
        mu[live], sz2[live] = fw.mu_z, fw.sigma_z2
    return mu, sz2


def _theta(mu, sz2, z):
    """Equivalent lognormal exp(2(mu + sigma_z z)); zero where the weights vanish."""
    z = np.asarray(z, dtype=float)
    with np.errstate(invalid="ignore"):
        val = np.exp(2.0 * (mu[..., None] + np.sqrt(sz2)[..., None] * z))
    return np.where(np.isnan(mu)[..., None], 0.0, val)


def _approx_weights(model: CountingModel, patterns):
    isi = np.einsum("sk,ijk->sij", patterns, model.m_I) if model.L_max else np.zeros((len(patterns),) + model.m_s.shape)
    tau1 = (model.m_s[None] + isi).reshape(len(patterns), -1)
    tau0 = isi.reshape(len(patterns), -1)
    return tau0, tau1


def counting_approx_means(model: CountingModel, sigma_X2, bits, b0: int, z):
    """Mean counts m_bd + theta, theta the FW-collapsed weighted fading sum.

    ``z`` are standard-normal quantiles of the equivalent log-amplitude.
    """
    patterns = np.atleast_2d(np.asarray(bits, dtype=float))[:, : model.L_max]
    tau0, tau1 = _approx_weights(model, patterns)
    mu, sz2 = _collapse(tau1 if b0 else tau0, np.asarray(sigma_X2, dtype=float).ravel())
    return model.m_bd + _theta(mu, sz2, z)[0]


def _conditional_counting(m0, m1, var, method):
    if method == "gaussian":
        return gaussian_approx_ber(m0, m1, var)
    out = gaussian_approx_ber(m0, m1, var)
    open_eye = m1 > m0
    if open_eye.any():
        ber, _ = saddle_point_ber(poisson_gaussian_mgf(m0[open_eye], var),
                                  poisson_gaussian_mgf(m1[open_eye], var))
        out[open_eye] = ber
    return out


def counting_approx_ber(model: CountingModel, sigma_X2=0.0, method: str = "gaussian",
                        rule: GhqRule | None = None, coupling: str | None = None,
                        worst_case: bool = False) -> float:
    """Photon-counting BER with each weighted fading sum replaced by one lognormal.

    With ``coupling="comonotone"`` (default for a single receiver) the two
    equivalent variables share one Gaussian variate, a 1-D average; with
    ``"independent"`` (default otherwise) they are averaged on a 2-D grid.
    """
    rule = rule or ghq_rule()
    coupling = coupling or ("comonotone" if model.N == 1 else "independent")
    if coupling not in ("comonotone", "independent"):
        raise ValueError(f"unknown coupling {coupling!r}")
    if method not in ("gaussian", "saddle"):
        raise ValueError(f"unknown method {method!r}")
    s2 = np.broadcast_to(np.asarray(sigma_X2, dtype=float), model.m_s.shape).ravel()
    L = model.L_max
    if L > MAX_MEMORY:
        raise CostGuardExceeded(f"L_max = {L} exceeds {MAX_MEMORY}")
    z = math.sqrt(2.0) * rule.nodes
    w = rule.weights / math.sqrt(math.pi)
    if worst_case:
        tau0, _ = _approx_weights(model, np.ones((1, L)))
        _, tau1 = _approx_weights(model, np.zeros((1, L)))
    else:
        tau0, tau1 = _approx_weights(model, bit_sequences(L))
    mu0, v0 = _collapse(tau0, s2)
    mu1, v1 = _collapse(tau1, s2)
    var = model.noise_var
    if coupling == "comonotone":
        m0 = model.m_bd + _theta(mu0, v0, z)
        m1 = model.m_bd + _theta(mu1, v1, z)
        cond = _conditional_counting(m0.ravel(), m1.ravel(), var, method).reshape(m0.shape)
        per_pattern = cond @ w
    else:
        m0 = model.m_bd + _theta(mu0, v0, z)[:, None, :]
        m1 = model.m_bd + _theta(mu1, v1, z)[:, :, None]
        m0, m1 = np.broadcast_arrays(m0, m1)
        cond = _conditional_counting(m0.ravel(), m1.ravel(), var, method).reshape(m0.shape)
        per_pattern = np.einsum("sab,a,b->s", cond, w, w)
    return float(per_pattern.mean())
