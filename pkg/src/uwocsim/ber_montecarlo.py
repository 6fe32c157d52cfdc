"""Bit-level Monte Carlo BER oracle.

Two timescales: the fading matrix is drawn once per run (a fading draw) and
held for a stream of ``n_bits`` equiprobable OOK bits, which see ISI from
the previous L_max bits and additive Gaussian receiver noise. Errors are
accumulated over many fading draws.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InvalidLayout
from .link_budget import DiversityLayout
from .turbulence import gen_correlated_fading, normalize, sample_fading

WARMUP_BITS = 100
MIN_BITS = 10**4
_MAX_BLOCK_ELEMENTS = 1 << 22


@dataclass
class SimResult:
    ber_estimate: float
    n_bits: int
    n_errors: int
    confidence: tuple
    seed: int
    n_draws: int = 1
    std_error: float = 0.0
    per_draw_errors: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)

    @property
    def bits_per_draw(self) -> int:
        return self.n_bits // max(self.n_draws, 1)

    def per_draw(self) -> list:
        """One result per fading draw (each with a Wilson interval)."""
        n = self.bits_per_draw
        return [SimResult(int(e) / n, n, int(e), wilson_interval(int(e), n), self.seed)
                for e in self.per_draw_errors]

    def contains(self, value: float, n_sigma: float = 3.0) -> bool:
        return abs(value - self.ber_estimate) <= n_sigma * self.std_error


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple:
    z = stats.norm.ppf(0.5 + level / 2)
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (float(max(0.0, min(p, centre - half))), float(min(1.0, max(p, centre + half))))


def _draw_fading(layout: DiversityLayout, n_draws: int, rng) -> np.ndarray:
    M, N = layout.M, layout.N
    if layout.correlation is None:
        return sample_fading(layout.sigma_X2, n_draws, rng)
    s2 = np.unique(layout.sigma_X2)
    if len(s2) != 1:
        raise InvalidLayout("correlated fading requires the same sigma_X2 on every link")
    return gen_correlated_fading(normalize(float(s2[0])), layout.correlation, M, N, n_draws, rng)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(1, block))
    return np.random.Generator(np.random.Philox(ss))


def _simulate_block(args):
    """Errors per draw for one block of fading draws, consumed segment by segment."""
    (seed, block, alpha2, m_s, m_I, sigma, combiner, n_bits) = args
    rng = _block_rng(seed, block)
    D, M, N = alpha2.shape
    L = m_I.shape[2]
    S = np.einsum("dij,ij->dj", alpha2, m_s)  # per-receiver signal
    I = np.einsum("dij,ijk->djk", alpha2, m_I)  # per-receiver ISI per delay
    if combiner == "EGC" or N == 1:
        # the sum of N independent branch noises is one Gaussian of variance N sigma^2
        sig = S.sum(-1)[:, None]
        isi = I.sum(1)[:, None, :]  # (D, 1, L)
        thr = sig / 2
        branch_noise = None
        noise_std = math.sqrt(N) * sigma
    else:
        # optimal combining: metric sum_j S_j r_j against sum_j S_j^2 / 2
        sig = (S * S).sum(-1)[:, None]
        isi = np.einsum("dj,djk->dk", S, I)[:, None, :]
        thr = sig / 2
        branch_noise = S[:, None, :]
        noise_std = sigma
    total = n_bits + WARMUP_BITS
    seg = max(1, min(total, _MAX_BLOCK_ELEMENTS // max(D * (N if branch_noise is not None else 1), 1)))
    errors = np.zeros(D, dtype=np.int64)
    prev = np.zeros((D, L), dtype=np.float32)  # shift register, most recent bit first
    done = 0
    while done < total:
        n = min(seg, total - done)
        bits = rng.integers(0, 2, size=(D, n), dtype=np.int8).astype(np.float32)
        hist = np.concatenate([prev[:, ::-1], bits], axis=1)  # oldest first
        y = bits * sig
        for k in range(1, L + 1):
            y += hist[:, L - k: L - k + n] * isi[:, :, k - 1]
        if branch_noise is None:
            y += noise_std * rng.standard_normal((D, n), dtype=np.float32)
        else:
            z = rng.standard_normal((D, n, N), dtype=np.float32)
            y += noise_std * np.einsum("dnj,dj->dn", z, branch_noise[:, 0, :])
        wrong = (y > thr) != (bits > 0.5)
        skip = max(0, WARMUP_BITS - done)
        errors += wrong[:, skip:].sum(axis=1)
        if L:
            prev = hist[:, -L:][:, ::-1]
        done += n
    return errors


def simulate_ber(layout: DiversityLayout, n_bits: int = 10**7, n_draws: int = 1000, seed: int = 0,
                 workers: int = 1, draws_per_block: int | None = None) -> SimResult:
    """Bit-error rate of ``layout`` by direct simulation.

    Each of ``n_draws`` fading draws carries ``n_bits`` counted bits (after a
    discarded warm-up). The 95% interval uses the spread of the per-draw
    error rates when several draws are made, and a Wilson interval otherwise.
    Results depend only on ``seed``, not on ``workers``.
    """
    if n_bits < MIN_BITS:
        raise InvalidLayout(f"n_bits must be >= {MIN_BITS}")
    if n_draws < 1:
        raise InvalidLayout("n_draws must be >= 1")
    if layout.sigma_Tb <= 0:
        raise InvalidLayout("noise standard deviation must be positive")
    fading_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(0,))))
    alpha2 = _draw_fading(layout, n_draws, fading_rng)
    if draws_per_block is None:
        draws_per_block = max(1, min(n_draws, _MAX_BLOCK_ELEMENTS // min(n_bits, _MAX_BLOCK_ELEMENTS)))
    jobs = []
    for b, start in enumerate(range(0, n_draws, draws_per_block)):
        jobs.append((seed, b, alpha2[start:start + draws_per_block], layout.m_s, layout.m_I,
                     layout.sigma_Tb, layout.combiner, n_bits))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_block, jobs))
    else:
        parts = [_simulate_block(j) for j in jobs]
    per_draw = np.concatenate(parts)
    n_err = int(per_draw.sum())
    total_bits = n_bits * n_draws
    est = n_err / total_bits
    if n_draws > 1:
        rates = per_draw / n_bits
        se = float(rates.std(ddof=1) / math.sqrt(n_draws))
        ci = (float(max(0.0, est - 1.96 * se)), float(min(1.0, est + 1.96 * se)))
    else:
        se = math.sqrt(max(est * (1 - est), 0.0) / total_bits)
        ci = wilson_interval(n_err, total_bits)
    return SimResult(est, total_bits, n_err, ci, seed, n_draws, se, per_draw)
