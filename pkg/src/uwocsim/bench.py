"""Scenario configuration, sweeps across BER engines and CSV output."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import optimize

from .ber_analytic import egc_approx_ber, ghq_rule, mimo_exact_ber, mimo_upper_bound_ber
from .ber_counting import CountingModel, counting_exact_ber
from .ber_montecarlo import simulate_ber
from .channel_mc import (WATER_PRESETS, LinkGeometry, McSettings, WaterType, cache_digest, cache_header,
                         load_channel_cache, save_channel_cache)
from .errors import CacheMismatch, ConfigError, CorrelationUnsupported, InvalidLayout, UwocError
from .link_budget import (CHANNEL_MODELS, DEFAULT_TRUNCATION_EPS, DiversityLayout, HardwareParams,
                          build_channel_model, make_layout, peak_power_from_average_dbm)
from .turbulence import CorrelationModel, OceanTurbulenceParams, scintillation_index, sigma_x2_from_si

ENGINES = ("analytic-exact", "analytic-ub", "approx-fw", "counting-saddle", "counting-gaussian", "bitsim")
CSV_HEADER = ("power_dBm", "engine", "ber", "runtime_seconds")


# -- configuration -------------------------------------------------------------

@dataclass
class ScenarioConfig:
    name: str = "coastal-25m"
    water: str = "coastal"  # preset name, or "custom" with water_a / water_b
    water_a: float | None = None
    water_b: float | None = None
    d0: float = 25.0
    data_rate: float = 1e9
    M: int = 1
    N: int = 1
    combiner: str = "EGC"
    sigma_X2: float | None = 0.16  # None derives it from the turbulence section
    rho: float = 0.0
    channel_model: str = "M4"
    separation: float = 0.25
    aperture_diameter: float = 0.20  # total receiving diameter, shared by N apertures
    fov_deg: float = 40.0
    divergence_deg: float = 0.02
    refractive_index: float = 1.331
    L_max: int | None = None
    truncation_eps: float = DEFAULT_TRUNCATION_EPS
    ghq_order: int = 30
    start_dBm: float = 10.0
    stop_dBm: float = 40.0
    step_dB: float = 2.0
    engines: tuple = ("analytic-exact", "counting-gaussian")
    n_photons: int = 10**7
    mc_seed: int = 0
    bin_width: float = 1e-10
    mc_workers: int = 1
    sim_seed: int = 0
    sim_bits: int = 10**6
    sim_draws: int = 1000
    sim_workers: int = 1
    hardware: HardwareParams = field(default_factory=HardwareParams)
    turbulence: OceanTurbulenceParams = field(default_factory=OceanTurbulenceParams)

    def __post_init__(self):
        self.engines = tuple(self.engines)
        self.validate()

    def validate(self) -> None:
        if self.water not in WATER_PRESETS and self.water != "custom":
            raise ConfigError(f"unknown water preset {self.water!r}")
        if self.water == "custom" and (self.water_a is None or self.water_b is None):
            raise ConfigError("custom water needs water_a and water_b")
        if self.d0 <= 0 or self.data_rate <= 0:
            raise ConfigError("d0 and data_rate must be positive")
        if self.M < 1 or self.N < 1:
            raise ConfigError("M and N must be >= 1")
        if self.combiner.upper() not in ("OC", "EGC"):
            raise ConfigError(f"combiner must be OC or EGC, got {self.combiner!r}")
        if self.channel_model.upper() not in CHANNEL_MODELS:
            raise ConfigError(f"channel_model must be one of {CHANNEL_MODELS}")
        if not self.engines:
            raise ConfigError("engine list is empty")
        unknown = [e for e in self.engines if e not in ENGINES]
        if unknown:
            raise ConfigError(f"unknown engines {unknown}, expected a subset of {list(ENGINES)}")
        if not self.step_dB > 0 or self.stop_dBm < self.start_dBm:
            raise ConfigError("power sweep is empty")
        if not 0 <= self.rho < 1:
            raise ConfigError("rho must lie in [0, 1)")
        if self.sigma_X2 is not None and self.sigma_X2 < 0:
            raise ConfigError("sigma_X2 must be >= 0")

    # derived objects

    @property
    def water_type(self) -> WaterType:
        if self.water == "custom":
            return WaterType(self.water_a, self.water_b)
        return WATER_PRESETS[self.water]

    @property
    def geometry(self) -> LinkGeometry:
        return LinkGeometry.linear_array(
            self.d0, self.M, self.N, self.separation, self.aperture_diameter,
            fov_half_angle=math.radians(self.fov_deg),
            beam_divergence_full_angle=math.radians(self.divergence_deg),
            wavelength=self.hardware.wavelength, refractive_index=self.refractive_index)

    @property
    def mc_settings(self) -> McSettings:
        return McSettings(n_photons=self.n_photons, bin_width=self.bin_width, seed=self.mc_seed,
                          workers=self.mc_workers)

    @property
    def bit_time(self) -> float:
        return 1.0 / self.data_rate

    @property
    def powers(self) -> np.ndarray:
        n = int(math.floor((self.stop_dBm - self.start_dBm) / self.step_dB + 1e-9)) + 1
        return self.start_dBm + self.step_dB * np.arange(n)

    def effective_sigma_X2(self) -> float:
        if self.sigma_X2 is not None:
            return self.sigma_X2
        return sigma_x2_from_si(scintillation_index(self.turbulence, self.d0))

    def correlation(self) -> CorrelationModel | None:
        if self.rho == 0:
            return None
        return CorrelationModel.exponential(self.M, self.N, self.rho)

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:16]

    # serialization

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for section, keys in _SECTIONS.items():
            cp[section] = {k: _format(getattr(self, k)) for k in keys}
        cp["hardware"] = {f.name: _format(getattr(self.hardware, f.name)) for f in fields(HardwareParams)}
        cp["turbulence"] = {f.name: _format(getattr(self.turbulence, f.name))
                            for f in fields(OceanTurbulenceParams)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, base: "ScenarioConfig | None" = None) -> "ScenarioConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_string(text)
        cfg = base or cls()
        known = {k: s for s, keys in _SECTIONS.items() for k in keys}
        values = {}
        for section in cp.sections():
            for key, raw in cp[section].items():
                values[(section, key)] = raw
        return cfg.updated({f"{s}.{k}": v for (s, k), v in values.items()}, known)

    def updated(self, assignments: dict, known: dict | None = None) -> "ScenarioConfig":
        """Apply ``{"section.key": "text"}`` overrides, parsing each value by field type."""
        known = known or {k: s for s, keys in _SECTIONS.items() for k in keys}
        top, hw, turb = {}, {}, {}
        hw_fields = {f.name: f for f in fields(HardwareParams)}
        turb_fields = {f.name: f for f in fields(OceanTurbulenceParams)}
        for dotted, raw in assignments.items():
            section, _, key = dotted.partition(".")
            if section == "hardware" and key in hw_fields:
                hw[key] = _parse(raw, getattr(self.hardware, key))
            elif section == "turbulence" and key in turb_fields:
                turb[key] = _parse(raw, getattr(self.turbulence, key))
            elif known.get(key) == section:
                top[key] = _parse(raw, getattr(self, key), key)
            else:
                raise ConfigError(f"unknown setting {dotted!r}")
        try:
            return replace(self, hardware=replace(self.hardware, **hw),
                           turbulence=replace(self.turbulence, **turb), **top)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_ini(fh.read())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_ini())


_SECTIONS = {
    "scenario": ("name", "channel_model", "d0", "data_rate", "L_max", "truncation_eps", "ghq_order"),
    "water": ("water", "water_a", "water_b"),
    "geometry": ("M", "N", "combiner", "separation", "aperture_diameter", "fov_deg", "divergence_deg",
                 "refractive_index"),
    "fading": ("sigma_X2", "rho"),
    "sweep": ("start_dBm", "stop_dBm", "step_dB"),
    "engines": ("engines",),
    "montecarlo": ("n_photons", "mc_seed", "bin_width", "mc_workers"),
    "bitsim": ("sim_seed", "sim_bits", "sim_draws", "sim_workers"),
}

# fields that may be left unset; "auto" stands for None
_OPTIONAL = {"water_a": float, "water_b": float, "sigma_X2": float, "L_max": int}


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ", ".join(map(str, value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, current, key: str | None = None):
    raw = raw.strip()
    try:
        if key in _OPTIONAL:
            return None if raw.lower() in ("auto", "none", "") else _OPTIONAL[key](float(raw))
        if isinstance(current, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(current, int):
            return int(float(raw))
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(p.strip() for p in raw.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r} for {key or type(current).__name__}") from exc
    return raw


PRESETS = {
    "coastal-25m": dict(name="coastal-25m", water="coastal", d0=25.0, data_rate=1e9, sigma_X2=0.16),
    "coastal-30m": dict(name="coastal-30m", water="coastal", d0=30.0, data_rate=2e9, sigma_X2=None,
                        bin_width=5e-11),
    "harbor-8m": dict(name="harbor-8m", water="harbor", d0=8.0, data_rate=2e8, sigma_X2=0.16),
    "harbor-10m": dict(name="harbor-10m", water="harbor", d0=10.0, data_rate=2e8, sigma_X2=0.16),
}
PRESET_ALIASES = {"coastal": "coastal-25m", "harbor": "harbor-10m"}


def preset(name: str, **overrides) -> ScenarioConfig:
    key = PRESET_ALIASES.get(name, name)
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
    return ScenarioConfig(**dict(PRESETS[key], **overrides))


# -- channel -------------------------------------------------------------------

def expected_cache_header(config: ScenarioConfig) -> dict:
    hdr = cache_header(config.water_type, config.geometry, config.mc_settings)
    hdr["channel_model"] = config.channel_model.upper()
    return hdr


def _summary(h) -> list:
    return [{"tx": i, "rx": j, "total_gain": h[i][j].total_gain,
             "rms_delay_spread_s": h[i][j].rms_delay_spread(), "occupied_bins": h[i][j].occupied_bins()}
            for i in range(len(h)) for j in range(len(h[i]))]


def run_channel(config: ScenarioConfig, path, log=print):
    """Simulate every impulse response of ``config`` and write the cache to ``path``."""
    ch = build_channel_model(config.channel_model, config.water_type, config.geometry, config.mc_settings)
    save_channel_cache(path, ch.h, expected_cache_header(config))
    summary = _summary(ch.h)
    if log is not None:
        for row in summary:
            log(f"h0[{row['tx']}][{row['rx']}]: gain {row['total_gain']:.4e}, "
                f"rms delay spread {row['rms_delay_spread_s'] * 1e9:.4f} ns, bins {row['occupied_bins']}")
    return path


def load_channel_for(config: ScenarioConfig, path):
    """Impulse responses from a cache, which must have been produced for ``config``."""
    header, h = load_channel_cache(path)
    expected = expected_cache_header(config)
    got = {k: header.get(k) for k in expected}
    if got != expected:
        diff = sorted(k for k in expected if got[k] != expected[k])
        raise CacheMismatch(f"cache {path} does not match the scenario (differs in {diff})")
    return h


# -- BER sweeps ----------------------------------------------------------------

@dataclass
class BerRow:
    power_dBm: float
    engine: str
    ber: float
    runtime_seconds: float
    error: str | None = None


@dataclass
class BerCurve:
    rows: list
    metadata: dict

    def __post_init__(self):
        order = {e: k for k, e in enumerate(ENGINES)}
        self.rows = sorted(self.rows, key=lambda r: (r.power_dBm, order.get(r.engine, len(order)), r.engine))

    def engine(self, name: str):
        """(powers, bers) of one engine, skipping failed rows."""
        rows = [r for r in self.rows if r.engine == name and r.error is None]
        return np.array([r.power_dBm for r in rows]), np.array([r.ber for r in rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            ber = f"ERROR:{r.error}" if r.error else repr(float(r.ber))
            w.writerow((repr(float(r.power_dBm)), r.engine, ber, f"{r.runtime_seconds:.6f}"))
        return buf.getvalue()

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())
        with open(f"{path}.meta.json", "w") as fh:
            json.dump(self.metadata, fh, indent=2, sort_keys=True)

    @classmethod
    def read_csv(cls, path) -> "BerCurve":
        rows = []
        with open(path) as fh:
            for rec in csv.DictReader(fh):
                err = rec["ber"][6:] if rec["ber"].startswith("ERROR:") else None
                rows.append(BerRow(float(rec["power_dBm"]), rec["engine"],
                                   math.nan if err else float(rec["ber"]), float(rec["runtime_seconds"]), err))
        meta_path = f"{path}.meta.json"
        meta = {}
        if os.path.exists(meta_path):
            with open(meta_path) as fh:
                meta = json.load(fh)
        return cls(rows, meta)


def scenario_layout(config: ScenarioConfig, h) -> DiversityLayout:
    """Layout at 1 W peak power; engines rescale it to each sweep point."""
    ch_fading = config.channel_model.upper() in ("M1", "M4")
    s2 = config.effective_sigma_X2() if ch_fading else 0.0
    corr = config.correlation() if ch_fading else None
    return make_layout(h, 1.0, config.bit_time, config.hardware, config.combiner, s2, corr,
                       config.truncation_eps, config.L_max)


def _counting_model(layout: DiversityLayout) -> CountingModel:
    if layout.correlation is not None:
        raise CorrelationUnsupported("the counting engines average over independent fading only")
    if layout.combiner == "OC" and layout.N > 1:
        raise InvalidLayout("the counting engines model equal gain combining only")
    return CountingModel.from_layout(layout)


def evaluate_engine(engine: str, layout: DiversityLayout, config: ScenarioConfig) -> float:
    rule = ghq_rule(config.ghq_order)
    if engine == "analytic-exact":
        return mimo_exact_ber(layout, rule)
    if engine == "analytic-ub":
        return mimo_upper_bound_ber(layout, rule)
    if engine == "approx-fw":
        return egc_approx_ber(layout, rule)
    if engine == "counting-saddle":
        return counting_exact_ber(_counting_model(layout), layout.sigma_X2, "saddle", rule)
    if engine == "counting-gaussian":
        return counting_exact_ber(_counting_model(layout), layout.sigma_X2, "gaussian", rule)
    if engine == "bitsim":
        return simulate_ber(layout, config.sim_bits, config.sim_draws, config.sim_seed,
                            config.sim_workers).ber_estimate
    raise ConfigError(f"unknown engine {engine!r}")


def run_ber(config: ScenarioConfig, h, engines=None, cache_id: str | None = None) -> BerCurve:
    """BER at every sweep point for every engine; failures become marked rows."""
    engines = tuple(engines or config.engines)
    base = scenario_layout(config, h)
    rows = []
    for p in config.powers:
        layout = base.with_power_scale(float(peak_power_from_average_dbm(p)))
        for engine in engines:
            t = time.perf_counter()
            try:
                ber, err = float(evaluate_engine(engine, layout, config)), None
            except UwocError as exc:
                ber, err = math.nan, type(exc).__name__
            rows.append(BerRow(float(p), engine, ber, time.perf_counter() - t, err))
    meta = {
        "scenario": config.name,
        "scenario_digest": config.digest(),
        "channel_cache": cache_id,
        "seeds": {"mc_seed": config.mc_seed, "sim_seed": config.sim_seed},
        "sigma_X2": float(np.max(base.sigma_X2)),
        "L_max": base.L_max,
        "engines": list(engines),
        "config": config.to_ini(),
    }
    return BerCurve(rows, meta)


def run_ber_from_cache(config: ScenarioConfig, cache_path, engines=None) -> BerCurve:
    h = load_channel_for(config, cache_path)
    return run_ber(config, h, engines, cache_digest(cache_path)[:16])


def power_at_ber(ber_of_dbm, target: float, lo: float = 0.0, hi: float = 50.0, xtol: float = 1e-3) -> float:
    """Average power (dBm) at which a decreasing BER curve reaches ``target``."""
    f = lambda p: math.log(max(ber_of_dbm(p), 1e-300)) - math.log(target)
    if f(lo) < 0 or f(hi) > 0:
        raise ConfigError(f"target BER {target:g} is not bracketed by [{lo}, {hi}] dBm")
    return optimize.brentq(f, lo, hi, xtol=xtol)


def interpolate_power(powers, bers, target: float) -> float:
    """Power at ``target`` by linear interpolation of log BER between sweep points."""
    powers, logb = np.asarray(powers, float), np.log(np.maximum(np.asarray(bers, float), 1e-300))
    lt = math.log(target)
    for k in range(len(powers) - 1):
        a, b = logb[k], logb[k + 1]
        if (a - lt) * (b - lt) <= 0 and a != b:
            return float(powers[k] + (lt - a) / (b - a) * (powers[k + 1] - powers[k]))
    raise ConfigError(f"target BER {target:g} is not crossed by the curve")


# -- scintillation -------------------------------------------------------------

@dataclass
class ScintRow:
    d0: float
    sigma_I2: float
    sigma_X2: float


def run_scint(params: OceanTurbulenceParams, distances) -> list:
    rows = []
    for d in distances:
        si = scintillation_index(params, float(d))
        rows.append(ScintRow(float(d), si, sigma_x2_from_si(si)))
    return rows


def scint_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("d0", "sigma_I2", "sigma_X2"))
    for r in rows:
        w.writerow(tuple(repr(v) for v in dataclasses.astuple(r)))
    return buf.getvalue()
