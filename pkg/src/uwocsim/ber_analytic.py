"""Closed-form BER of OOK links with lognormal fading, ISI and Gaussian noise.

Signal quantities are in photoelectron counts (see :mod:`link_budget`); the
Q-function arguments are ratios, so the charge-domain factor q cancels.
Fading averages use Gauss-Hermite quadrature, as a tensor product over the
M*N links when several links fade independently.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import (AllChannelsZero, CorrelationUnsupported, CostGuardExceeded, InvalidLayout, MemoryTooLarge,
                     NotMiso)
from .link_budget import DiversityLayout, SignalIntegrals
from .turbulence import FadingModel, fenton_wilkinson

SQRT_PI = math.sqrt(math.pi)
MAX_LINKS = 6
MAX_MEMORY = 12
MAX_SISO_MEMORY = 20
MAX_TENSOR_EVALUATIONS = 2 * 10**9
_CHUNK = 1 << 15


def q_function(x):
    """Gaussian tail probability Q(x) = P(Z > x)."""
    return special.ndtr(-np.asarray(x, dtype=float))


@dataclass(frozen=True, eq=False)
class GhqRule:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def U(self) -> int:
        return len(self.nodes)


def ghq_rule(U: int = 30) -> GhqRule:
    """Physicists' Gauss-Hermite rule of order U (weight exp(-x^2))."""
    if U < 1:
        raise ValueError("GHQ order must be >= 1")
    x, w = np.polynomial.hermite.hermgauss(U)
    return GhqRule(x, w)


def _alpha2_nodes(sigma_X2, mu_X, rule: GhqRule):
    return np.exp(2.0 * rule.nodes * math.sqrt(2.0 * sigma_X2) + 2.0 * mu_X)


def ghq_lognormal_average(C, model: FadingModel, rule: GhqRule | None = None):
    """E[Q(C * alpha^2)] for alpha = exp(X), X ~ N(mu_X, sigma_X2).

    ``C`` may be an array (negative entries are allowed and give values
    above 0.5).
    """
    rule = rule or ghq_rule()
    C = np.asarray(C, dtype=float)
    a2 = _alpha2_nodes(model.sigma_X2, model.mu_X, rule)
    return q_function(C[..., None] * a2) @ rule.weights / SQRT_PI


def bit_sequences(L: int) -> np.ndarray:
    """All 2^L patterns of previous bits, shape (2^L, L), column k-1 is bit b_{-k}."""
    if L == 0:
        return np.zeros((1, 0))
    return np.array(list(itertools.product((0.0, 1.0), repeat=L)))


# -- SISO ------------------------------------------------------------------------

def _isi_sum(m_I, bits):
    return np.asarray(bits, dtype=float) @ np.asarray(m_I, dtype=float) if len(m_I) else 0.0


def siso_conditional_ber(integrals: SignalIntegrals, alpha2, bits, sigma_Tb: float, b0: int):
    """Error probability of one bit given fading, previous bits and the sent bit."""
    isi = _isi_sum(integrals.m_I, bits)
    sign = 1.0 if b0 else -1.0
    return q_function(np.asarray(alpha2) * (integrals.m_s / 2 + sign * isi) / sigma_Tb)


def _siso_terms(integrals: SignalIntegrals, sigma_Tb: float):
    isi = _isi_sum(integrals.m_I, bit_sequences(integrals.L))
    half = integrals.m_s / 2
    return (half + isi) / sigma_Tb, (half - isi) / sigma_Tb


def siso_exact_ber(integrals: SignalIntegrals, model: FadingModel, sigma_Tb: float,
                   rule: GhqRule | None = None) -> float:
    """BER averaged over fading and all 2^L previous-bit patterns."""
    if integrals.L > MAX_SISO_MEMORY:
        raise MemoryTooLarge(
            f"channel memory L={integrals.L} > {MAX_SISO_MEMORY}; use siso_upper_bound_ber instead")
    c1, c0 = _siso_terms(integrals, sigma_Tb)
    p1 = ghq_lognormal_average(c1, model, rule)
    p0 = ghq_lognormal_average(c0, model, rule)
    return float(0.5 * (np.mean(p1) + np.mean(p0)))


def siso_upper_bound_ber(integrals: SignalIntegrals, model: FadingModel, sigma_Tb: float,
                         rule: GhqRule | None = None) -> float:
    """Worst-case ISI: no help for a 1, all previous bits on for a 0."""
    half = integrals.m_s / 2
    total_isi = sum(integrals.m_I)
    p1 = ghq_lognormal_average(half / sigma_Tb, model, rule)
    p0 = ghq_lognormal_average((half - total_isi) / sigma_Tb, model, rule)
    return float(0.5 * (p1 + p0))


# -- combiners -------------------------------------------------------------------

def _combiner_args(alpha2, m_s, isi, sigma_Tb, combiner):
    """Q-function arguments for b0 = 1 and b0 = 0.

    ``alpha2`` is (..., M, N); ``isi`` is (S, M, N) for S bit patterns.
    Returns two arrays of shape (..., S).
    """
    alpha2 = np.asarray(alpha2, dtype=float)
    N = alpha2.shape[-1]
    S = np.einsum("...ij,ij->...j", alpha2, m_s)  # per-receiver signal
    I = np.einsum("...ij,sij->...sj", alpha2, isi)  # per-receiver ISI, per pattern
    S_ = S[..., None, :]
    if combiner == "EGC":
        tot_s = S_.sum(-1)
        tot_i = I.sum(-1)
        scale = 2.0 * math.sqrt(N) * sigma_Tb
        return (tot_s + 2 * tot_i) / scale, (tot_s - 2 * tot_i) / scale
    norm = np.sqrt((S * S).sum(-1))[..., None]
    if np.any(norm == 0):
        raise AllChannelsZero("every combined branch has zero signal")
    num_s = (S_ * S_).sum(-1)
    num_i = 2 * (S_ * I).sum(-1)
    scale = 2.0 * sigma_Tb * norm
    return (num_s + num_i) / scale, (num_s - num_i) / scale


def _pattern_isi(layout: DiversityLayout, bits):
    bits = np.atleast_2d(np.asarray(bits, dtype=float))
    if layout.L_max == 0:
        return np.zeros((bits.shape[0], layout.M, layout.N))
    return np.einsum("sk,ijk->sij", bits[:, : layout.L_max], layout.m_I)


def _conditional(layout, alpha_matrix, bits, sigma_Tb, b0, combiner):
    isi = _pattern_isi(layout, np.asarray(bits, dtype=float)[None, ...])
    a1, a0 = _combiner_args(alpha_matrix, layout.m_s, isi, sigma_Tb, combiner)
    return q_function((a1 if b0 else a0)[..., 0])


def oc_conditional_ber(layout: DiversityLayout, alpha_matrix, bits, sigma_Tb: float, b0: int):
    """Optimal-combiner error probability; ``alpha_matrix`` holds the squared gains alpha_ij^2."""
    return _conditional(layout, alpha_matrix, bits, sigma_Tb, b0, "OC")


def egc_conditional_ber(layout: DiversityLayout, alpha_matrix, bits, sigma_Tb: float, b0: int):
    """Equal-gain error probability; ``alpha_matrix`` holds the squared gains alpha_ij^2."""
    return _conditional(layout, alpha_matrix, bits, sigma_Tb, b0, "EGC")


# -- tensor GHQ over independent links -------------------------------------------

def _check_independent(layout: DiversityLayout):
    R = layout.correlation
    if R is not None and not np.allclose(R.R_MIMO, np.eye(layout.M * layout.N)):
        raise CorrelationUnsupported(
            "quadrature engines assume independent fading; use the bit-level simulator")


def _link_grids(sigma_X2, rule: GhqRule):
    """Per-link alpha^2 nodes and normalized weights; non-fading links collapse to one node."""
    grids = []
    for s2 in np.asarray(sigma_X2, dtype=float).ravel():
        if s2 > 0:
            grids.append((_alpha2_nodes(s2, -s2, rule), rule.weights / SQRT_PI))
        else:
            grids.append((np.ones(1), np.ones(1)))
    return grids


def fading_grid_size(sigma_X2, rule: GhqRule) -> int:
    return math.prod(rule.U if s2 > 0 else 1 for s2 in np.asarray(sigma_X2, dtype=float).ravel())


def fading_node_chunks(sigma_X2, rule: GhqRule, chunk: int = _CHUNK, prune_tol: float = 0.0):
    """Yield (alpha2, weight) blocks of the tensor-product rule over independent links.

    ``alpha2`` has shape (C, M, N) and the weights of the whole grid sum to 1.
    Node tuples lighter than ``prune_tol / grid_size`` are skipped, so the
    total discarded weight is below ``prune_tol``.
    """
    sigma_X2 = np.atleast_2d(np.asarray(sigma_X2, dtype=float))
    M, N = sigma_X2.shape
    grids = _link_grids(sigma_X2, rule)
    shape = tuple(len(g[0]) for g in grids)
    total = math.prod(shape)
    cutoff = prune_tol / total
    for start in range(0, total, chunk):
        idx = np.unravel_index(np.arange(start, min(start + chunk, total)), shape)
        w = np.prod([g[1][ix] for g, ix in zip(grids, idx)], axis=0)
        keep = w >= cutoff if cutoff > 0 else slice(None)
        if cutoff > 0 and not keep.any():
            continue
        a2 = np.stack([g[0][ix[keep]] for g, ix in zip(grids, idx)], axis=-1).reshape(-1, M, N)
        yield a2, w[keep]


def _tensor_average(layout: DiversityLayout, rule: GhqRule, patterns, worst_case: bool):
    """Fading- and pattern-averaged BER by an (M*N)-dimensional quadrature."""
    _check_independent(layout)
    K = layout.M * layout.N
    if K > MAX_LINKS:
        raise CostGuardExceeded(f"M*N = {K} links exceeds the tensor-quadrature limit {MAX_LINKS}")
    total = fading_grid_size(layout.sigma_X2, rule)
    if total * len(patterns) > MAX_TENSOR_EVALUATIONS:
        raise CostGuardExceeded(
            f"{total} quadrature nodes x {len(patterns)} bit patterns exceeds {MAX_TENSOR_EVALUATIONS}")
    isi = _pattern_isi(layout, patterns)
    sigma = layout.sigma_Tb
    partial = []
    for a2, w in fading_node_chunks(layout.sigma_X2, rule):
        a1, a0 = _combiner_args(a2, layout.m_s, isi, sigma, layout.combiner)
        if worst_case:
            # pattern 0 is all zeros, pattern 1 all ones
            cond = 0.5 * (q_function(a1[:, 0]) + q_function(a0[:, 1]))
        else:
            cond = 0.5 * (q_function(a1) + q_function(a0)).mean(axis=1)
        partial.append(float(w @ cond))
    return math.fsum(partial)


def mimo_exact_ber(layout: DiversityLayout, rule: GhqRule | None = None) -> float:
    """Exact BER of an M x N link with the layout's combiner and independent fading."""
    rule = rule or ghq_rule()
    if layout.L_max > MAX_MEMORY:
        raise CostGuardExceeded(f"L_max = {layout.L_max} exceeds {MAX_MEMORY}; use the upper bound")
    return _tensor_average(layout, rule, bit_sequences(layout.L_max), worst_case=False)


def mimo_upper_bound_ber(layout: DiversityLayout, rule: GhqRule | None = None) -> float:
    rule = rule or ghq_rule()
    patterns = np.stack([np.zeros(layout.L_max), np.ones(layout.L_max)])
    return _tensor_average(layout, rule, patterns, worst_case=True)


# -- lognormal-sum shortcuts -----------------------------------------------------

def _fw_q_average(G, sigma_X2, rule: GhqRule):
    """E[Q(sum_k G_k alpha_k^2)] with each weighted sum collapsed to one lognormal.

    ``G`` is (S, K). Positive and negative weights form two independent
    lognormal sums; rows that need both use a 2-D quadrature.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    s2 = np.broadcast_to(np.asarray(sigma_X2, dtype=float), G.shape)
    out = np.empty(G.shape[0])
    xw = rule.weights / SQRT_PI
    pos, neg = np.clip(G, 0, None), np.clip(-G, 0, None)
    has_pos, has_neg = pos.sum(-1) > 0, neg.sum(-1) > 0

    def nodes(weights, rows):
        fw = fenton_wilkinson(weights[rows], s2[rows])
        mu, sz = np.atleast_1d(fw.mu_z), np.atleast_1d(fw.sigma_z2)
        return np.exp(2.0 * rule.nodes[None, :] * np.sqrt(2.0 * sz)[:, None] + 2.0 * mu[:, None])

    out[~has_pos & ~has_neg] = 0.5
    only_pos = has_pos & ~has_neg
    if only_pos.any():
        out[only_pos] = q_function(nodes(pos, only_pos)) @ xw
    only_neg = has_neg & ~has_pos
    if only_neg.any():
        out[only_neg] = q_function(-nodes(neg, only_neg)) @ xw
    both = has_pos & has_neg
    if both.any():
        zp, zn = nodes(pos, both), nodes(neg, both)
        q = q_function(zp[:, :, None] - zn[:, None, :])
        out[both] = np.einsum("rab,a,b->r", q, xw, xw)
    return out


def _approx_weights(layout: DiversityLayout, patterns):
    isi = _pattern_isi(layout, patterns)  # (S, M, N)
    scale = 2.0 * math.sqrt(layout.N) * layout.sigma_Tb
    g1 = (layout.m_s[None] + 2 * isi) / scale
    g0 = (layout.m_s[None] - 2 * isi) / scale
    S = len(patterns)
    return g1.reshape(S, -1), g0.reshape(S, -1)


def _approx_ber(layout: DiversityLayout, rule: GhqRule | None) -> float:
    rule = rule or ghq_rule()
    _check_independent(layout)
    if layout.L_max > MAX_MEMORY:
        raise CostGuardExceeded(f"L_max = {layout.L_max} exceeds {MAX_MEMORY}")
    g1, g0 = _approx_weights(layout, bit_sequences(layout.L_max))
    s2 = layout.sigma_X2.ravel()
    return float(0.5 * (_fw_q_average(g1, s2, rule).mean() + _fw_q_average(g0, s2, rule).mean()))


def miso_approx_ber(layout: DiversityLayout, rule: GhqRule | None = None) -> float:
    """MISO BER with the fading-weighted sum replaced by one moment-matched lognormal."""
    if layout.N != 1:
        raise NotMiso(f"layout has N={layout.N} receivers; the MISO approximation needs N=1")
    return _approx_ber(layout, rule)


def egc_approx_ber(layout: DiversityLayout, rule: GhqRule | None = None) -> float:
    """EGC BER with the M*N-term combined signal collapsed to one lognormal."""
    if layout.combiner != "EGC" and layout.N > 1:
        raise InvalidLayout("the lognormal-sum shortcut applies to equal gain combining")
    return _approx_ber(layout, rule)
