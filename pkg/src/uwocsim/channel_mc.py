"""
Monte Carlo photon transport for fading-free underwater impulse responses.

Photons are launched from each transmitter into an unbounded homogeneous
medium, scattered with a Henyey-Greenstein phase function and attenuated by
albedo weighting at every interaction. A photon stops when its weight drops
below ``w_th`` or when it crosses the receiver plane ``z = d0``; crossing
photons are binned by arrival time into every receiver whose aperture and
field of view accept them.

Photon histories are processed in fixed-size chunks, each with its own
counter-keyed random stream, so results are bit-identical for any worker
count.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.constants import c as C_LIGHT

from .errors import CacheFormatError, InvalidBinWidth, NoPhotonsReceived

CACHE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class WaterType:
    """Inherent optical properties of a water body (all in 1/m)."""

    a: float
    b: float
    name: str = "custom"

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError(f"absorption and scattering must be >= 0, got a={self.a}, b={self.b}")

    @property
    def c(self) -> float:
        return self.a + self.b

    @property
    def albedo(self) -> float:
        return self.b / self.c if self.c > 0 else 0.0


WATER_PRESETS = {
    "coastal": WaterType(0.179, 0.219, "coastal"),
    "harbor": WaterType(0.366, 1.824, "harbor"),
}


@dataclass(frozen=True)
class LinkGeometry:
    """Transmitter/receiver placement. Transverse coordinates are (x, y) in metres."""

    d0: float
    tx_positions: tuple
    rx_positions: tuple
    rx_aperture_diameters: tuple
    fov_half_angle: float = math.radians(40.0)
    beam_divergence_full_angle: float = math.radians(0.02)
    wavelength: float = 532e-9
    refractive_index: float = 1.331
    separation: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "tx_positions", tuple(tuple(map(float, p)) for p in self.tx_positions))
        object.__setattr__(self, "rx_positions", tuple(tuple(map(float, p)) for p in self.rx_positions))
        object.__setattr__(self, "rx_aperture_diameters", tuple(map(float, self.rx_aperture_diameters)))
        if self.d0 <= 0:
            raise ValueError("d0 must be positive")
        if not self.tx_positions or not self.rx_positions:
            raise ValueError("need at least one transmitter and one receiver")
        if len(self.rx_aperture_diameters) != len(self.rx_positions):
            raise ValueError("one aperture diameter per receiver is required")
        if any(d <= 0 for d in self.rx_aperture_diameters):
            raise ValueError("aperture diameters must be positive")
        for p in self.tx_positions + self.rx_positions:
            if len(p) != 2:
                raise ValueError("positions are 2-D transverse coordinates")

    @classmethod
    def linear_array(cls, d0, M=1, N=1, separation=0.25, total_aperture_diameter=0.20, **kwargs):
        """M transmitters and N receivers spaced ``separation`` apart along x.

        The total receiving area is held fixed, so each aperture has diameter
        ``total_aperture_diameter / sqrt(N)``.
        """
        tx = tuple((i * separation, 0.0) for i in range(M))
        rx = tuple((j * separation, 0.0) for j in range(N))
        diam = (total_aperture_diameter / math.sqrt(N),) * N
        return cls(d0, tx, rx, diam, separation=separation, **kwargs)

    @property
    def M(self) -> int:
        return len(self.tx_positions)

    @property
    def N(self) -> int:
        return len(self.rx_positions)

    def target_rx(self, i: int) -> int:
        """Receiver that transmitter ``i`` is pointed at."""
        return i % self.N

    def aim_direction(self, i: int) -> np.ndarray:
        tx = self.tx_positions[i]
        rx = self.rx_positions[self.target_rx(i)]
        v = np.array([rx[0] - tx[0], rx[1] - tx[1], self.d0])
        return v / np.linalg.norm(v)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class McSettings:
    n_photons: int = 10**7
    w_th: float = 1e-6
    g: float = 0.924
    bin_width: float = 1e-10
    seed: int = 0
    chunk_size: int = 1 << 16
    max_interactions: int = 100_000
    workers: int = 1
    force_first_collision: bool = True

    def __post_init__(self):
        if self.n_photons < 1:
            raise ValueError("n_photons must be >= 1")
        if not 0 < self.w_th < 1:
            raise ValueError("w_th must lie in (0, 1)")
        if not -1 < self.g < 1:
            raise ValueError("asymmetry g must lie in (-1, 1)")
        if not self.bin_width > 0:
            raise InvalidBinWidth(f"bin_width must be positive, got {self.bin_width}")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")


@dataclass(eq=False)
class ImpulseResponse:
    """Time-binned fading-free channel gain.

    ``bins[k]`` is the fraction of transmitted energy arriving in
    ``[t0 + k*bin_width, t0 + (k+1)*bin_width)`` where ``t0 = n*d0/c`` is the
    earliest possible arrival.
    """

    bin_width: float
    bins: np.ndarray
    n_photons: int = 0
    seed: int = 0
    t0: float = 0.0

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=float)
        if not self.bin_width > 0:
            raise InvalidBinWidth(f"bin_width must be positive, got {self.bin_width}")

    @classmethod
    def delta(cls, gain: float, bin_width: float = 1e-10, t0: float = 0.0):
        return cls(bin_width, np.array([gain]), t0=t0)

    @property
    def total_gain(self) -> float:
        return float(self.bins.sum())

    @property
    def times(self) -> np.ndarray:
        """Bin start times relative to ``t0``."""
        return np.arange(len(self.bins)) * self.bin_width

    def mean_delay(self) -> float:
        g = self.total_gain
        return float((self.times * self.bins).sum() / g) if g > 0 else 0.0

    def rms_delay_spread(self) -> float:
        g = self.total_gain
        if g <= 0:
            return 0.0
        mu = self.mean_delay()
        return float(math.sqrt(((self.times - mu) ** 2 * self.bins).sum() / g))

    def occupied_bins(self) -> int:
        return int(np.count_nonzero(self.bins))


def sample_scattering_angle(g, u):
    """Cosine of the Henyey-Greenstein scattering angle by inverse CDF.

    Works elementwise on arrays; ``u`` is uniform on [0, 1).
    """
    u = np.asarray(u, dtype=float)
    if abs(g) < 1e-6:
        return 2.0 * u - 1.0
    frac = (1.0 - g * g) / (1.0 - g + 2.0 * g * u)
    cos_t = (1.0 + g * g - frac * frac) / (2.0 * g)
    return np.clip(cos_t, -1.0, 1.0)


def _rotate(ux, uy, uz, cos_t, phi):
    """New direction at polar angle acos(cos_t), azimuth phi around (ux, uy, uz)."""
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    cp, sp = np.cos(phi), np.sin(phi)
    near_pole = np.abs(uz) > 0.99999
    tmp = np.sqrt(np.maximum(1.0 - uz * uz, 1e-300))
    nx = np.where(near_pole, sin_t * cp, sin_t * (ux * uz * cp - uy * sp) / tmp + ux * cos_t)
    ny = np.where(near_pole, sin_t * sp, sin_t * (uy * uz * cp + ux * sp) / tmp + uy * cos_t)
    nz = np.where(near_pole, np.sign(uz) * cos_t, -sin_t * cp * tmp + uz * cos_t)
    norm = np.sqrt(nx * nx + ny * ny + nz * nz)
    return nx / norm, ny / norm, nz / norm


def _chunk_rng(seed: int, tx: int, chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(tx, chunk))
    return np.random.Generator(np.random.Philox(ss))


def _run_chunk(args):
    water, geom, settings, tx, chunk, n = args
    rng = _chunk_rng(settings.seed, tx, chunk)
    c = water.c
    albedo = water.albedo
    d0 = geom.d0
    time_scale = geom.refractive_index / (C_LIGHT * settings.bin_width)
    cos_fov = math.cos(geom.fov_half_angle)
    rx_xy = np.array(geom.rx_positions)
    rx_r2 = (np.array(geom.rx_aperture_diameters) / 2.0) ** 2

    # launch: uniform in solid angle inside the divergence cone around the aim axis
    aim = geom.aim_direction(tx)
    cos_half = math.cos(geom.beam_divergence_full_angle / 2.0)
    cos_l = 1.0 - rng.random(n) * (1.0 - cos_half)
    phi = 2.0 * np.pi * rng.random(n)
    ux, uy, uz = _rotate(np.full(n, aim[0]), np.full(n, aim[1]), np.full(n, aim[2]), cos_l, phi)
    x = np.full(n, geom.tx_positions[tx][0])
    y = np.full(n, geom.tx_positions[tx][1])
    z = np.zeros(n)
    w = np.ones(n)
    path = np.zeros(n)

    hits_bin = [[] for _ in range(geom.N)]
    hits_w = [[] for _ in range(geom.N)]

    def score(mask, s, weight):
        xc = x[mask] + ux[mask] * s
        yc = y[mask] + uy[mask] * s
        excess = np.maximum(path[mask] + s - d0, 0.0)
        bidx = np.floor(excess * time_scale).astype(np.int64)
        fov_ok = uz[mask] >= cos_fov
        for j in range(geom.N):
            inside = fov_ok & ((xc - rx_xy[j, 0]) ** 2 + (yc - rx_xy[j, 1]) ** 2 <= rx_r2[j])
            if inside.any():
                hits_bin[j].append(bidx[inside])
                hits_w[j].append(weight[inside])

    n_inter = 0
    forced = settings.force_first_collision and c > 0
    while x.size:
        with np.errstate(divide="ignore", invalid="ignore"):
            to_plane = np.where(uz > 0, (d0 - z) / uz, np.inf)
        if forced:
            # score the unscattered part exactly, then force an interaction before the plane
            survive = np.exp(-c * to_plane)
            score(np.ones(x.size, dtype=bool), to_plane, w * survive)
            w = w * (1.0 - survive)
            step = -np.log1p(-rng.random(x.size) * (1.0 - survive)) / c
            step = np.minimum(step, np.nextafter(to_plane, 0.0))
            forced = False
        else:
            step = rng.standard_exponential(x.size) / c if c > 0 else np.full(x.size, np.inf)
        cross = step >= to_plane
        if cross.any():
            score(cross, to_plane[cross], w[cross])
        keep = ~cross
        x, y, z = x[keep], y[keep], z[keep]
        ux, uy, uz = ux[keep], uy[keep], uz[keep]
        w, path, step = w[keep], path[keep], step[keep]
        if not x.size:
            break
        x = x + ux * step
        y = y + uy * step
        z = z + uz * step
        path = path + step
        w = w * albedo
        n_inter += 1
        alive = w >= settings.w_th
        if n_inter >= settings.max_interactions:
            alive[:] = False
        x, y, z = x[alive], y[alive], z[alive]
        ux, uy, uz = ux[alive], uy[alive], uz[alive]
        w, path = w[alive], path[alive]
        if not x.size:
            break
        cos_t = sample_scattering_angle(settings.g, rng.random(x.size))
        ux, uy, uz = _rotate(ux, uy, uz, cos_t, 2.0 * np.pi * rng.random(x.size))

    out = []
    for j in range(geom.N):
        if hits_bin[j]:
            out.append(np.bincount(np.concatenate(hits_bin[j]), weights=np.concatenate(hits_w[j])))
        else:
            out.append(np.zeros(0))
    return out


def _add_padded(acc: np.ndarray, h: np.ndarray) -> np.ndarray:
    if len(h) > len(acc):
        acc = np.concatenate([acc, np.zeros(len(h) - len(acc))])
    acc[: len(h)] += h
    return acc


def simulate_impulse_response(water: WaterType, geom: LinkGeometry, settings: McSettings):
    """Simulate h0 for every (tx, rx) pair.

    Returns a nested list ``h[i][j]`` of :class:`ImpulseResponse`.
    """
    if not settings.bin_width > 0:
        raise InvalidBinWidth(f"bin_width must be positive, got {settings.bin_width}")
    n_chunks = -(-settings.n_photons // settings.chunk_size)
    t0 = geom.refractive_index * geom.d0 / C_LIGHT
    result = []
    for i in range(geom.M):
        jobs = []
        for k in range(n_chunks):
            n = min(settings.chunk_size, settings.n_photons - k * settings.chunk_size)
            jobs.append((water, geom, settings, i, k, n))
        if settings.workers > 1:
            with ProcessPoolExecutor(max_workers=settings.workers) as pool:
                parts = list(pool.map(_run_chunk, jobs))
        else:
            parts = [_run_chunk(job) for job in jobs]
        # fixed chunk order keeps the floating-point sum independent of scheduling
        row = []
        for j in range(geom.N):
            acc = np.zeros(0)
            for part in parts:
                acc = _add_padded(acc, part[j])
            row.append(ImpulseResponse(settings.bin_width, acc / settings.n_photons,
                                       settings.n_photons, settings.seed, t0))
        if all(h.total_gain == 0 for h in row):
            raise NoPhotonsReceived(
                f"no photon from transmitter {i} reached any receiver "
                f"({settings.n_photons} photons, c*d0={water.c * geom.d0:.2f})")
        result.append(row)
    return result


def beer_lambert_gain(water: WaterType, d0: float) -> float:
    if d0 < 0:
        raise ValueError("d0 must be >= 0")
    return math.exp(-water.c * d0)


# -- channel cache -----------------------------------------------------------

def cache_header(water: WaterType, geom: LinkGeometry, settings: McSettings) -> dict:
    return {
        "format_version": CACHE_FORMAT_VERSION,
        "water_a": water.a,
        "water_b": water.b,
        "geometry_digest": geom.digest(),
        "bin_width": settings.bin_width,
        "n_photons": settings.n_photons,
        "seed": settings.seed,
        "g": settings.g,
        "w_th": settings.w_th,
        "force_first_collision": settings.force_first_collision,
        "M": geom.M,
        "N": geom.N,
    }


def save_channel_cache(path, h, header: dict) -> None:
    arrays = {f"h_{i}_{j}": h[i][j].bins for i in range(len(h)) for j in range(len(h[i]))}
    t0 = h[0][0].t0
    hdr = dict(header, t0=t0)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(hdr, sort_keys=True)), **arrays)


def load_channel_cache(path):
    """Read a cache written by :func:`save_channel_cache`; returns (header, h)."""
    with open(path, "rb") as fh:
        data = np.load(io.BytesIO(fh.read()), allow_pickle=False)
    if "header" not in data.files:
        raise CacheFormatError(f"{path}: missing header")
    header = json.loads(str(data["header"]))
    if header.get("format_version") != CACHE_FORMAT_VERSION:
        raise CacheFormatError(
            f"{path}: format_version {header.get('format_version')} != {CACHE_FORMAT_VERSION}")
    h = [[ImpulseResponse(header["bin_width"], data[f"h_{i}_{j}"], header["n_photons"],
                          header["seed"], header.get("t0", 0.0))
          for j in range(header["N"])] for i in range(header["M"])]
    return header, h


def cache_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
