import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uwocsim.bench import (CSV_HEADER, ENGINES, BerCurve, BerRow, ScenarioConfig, interpolate_power, power_at_ber,
                           preset, run_ber, run_ber_from_cache, run_channel, run_scint, scint_csv)
from uwocsim.channel_mc import ImpulseResponse, cache_digest, simulate_impulse_response
from uwocsim.cli import main
from uwocsim.errors import CacheMismatch, ConfigError
from uwocsim.turbulence import OceanTurbulenceParams

SMALL = {"montecarlo.n_photons": "20000", "sweep.start_dBm": "10", "sweep.stop_dBm": "30", "sweep.step_dB": "5"}


def small(name="coastal-25m", **extra):
    return preset(name).updated(dict(SMALL, **extra))


def test_presets():
    c = preset("coastal")
    assert c.name == "coastal-25m" and c.water_type.a == 0.179 and c.water_type.b == 0.219
    h = preset("harbor-8m")
    assert h.water_type.c == pytest.approx(2.19)
    assert preset("coastal-30m").effective_sigma_X2() == pytest.approx(0.165, rel=0.15)
    with pytest.raises(ConfigError):
        preset("ocean")


def test_config_round_trip():
    cfg = preset("harbor-10m").updated({"geometry.M": "2", "engines.engines": "analytic-exact, bitsim",
                                        "scenario.L_max": "3", "hardware.R_L": "50", "turbulence.chi_T": "1e-6"})
    text = cfg.to_ini()
    again = ScenarioConfig.from_ini(text)
    assert again == cfg
    assert again.to_ini() == text
    assert again.digest() == cfg.digest()
    assert cfg.L_max == 3 and cfg.hardware.R_L == 50.0 and cfg.engines == ("analytic-exact", "bitsim")


@settings(max_examples=40, deadline=None)
@given(d0=st.floats(1.0, 60.0), rate=st.floats(1e6, 1e11), M=st.integers(1, 3), N=st.integers(1, 3),
       s2=st.one_of(st.none(), st.floats(0.0, 0.5)), rho=st.floats(0.0, 0.9),
       engines=st.lists(st.sampled_from(ENGINES), min_size=1, max_size=6, unique=True),
       seed=st.integers(0, 2**31))
def test_config_round_trip_property(d0, rate, M, N, s2, rho, engines, seed):
    cfg = ScenarioConfig(d0=d0, data_rate=rate, M=M, N=N, sigma_X2=s2, rho=rho, engines=tuple(engines),
                         mc_seed=seed, sim_seed=seed + 1)
    assert ScenarioConfig.from_ini(cfg.to_ini()) == cfg


def test_config_validation():
    with pytest.raises(ConfigError):
        ScenarioConfig(engines=("magic",))
    with pytest.raises(ConfigError):
        ScenarioConfig(start_dBm=30, stop_dBm=10)
    with pytest.raises(ConfigError):
        ScenarioConfig(water="lake")
    with pytest.raises(ConfigError):
        preset("coastal").updated({"geometry.colour": "red"})
    with pytest.raises(ConfigError):
        preset("coastal").updated({"geometry.M": "many"})
    assert list(ScenarioConfig(start_dBm=10, stop_dBm=20, step_dB=5).powers) == [10, 15, 20]


def test_channel_cache_and_sweep(tmp_path):
    cfg = small(**{"engines.engines": "analytic-exact,analytic-ub,counting-gaussian,approx-fw"})
    path = tmp_path / "c.npz"
    lines = []
    run_channel(cfg, path, log=lines.append)
    assert len(lines) == 1 and "gain" in lines[0]
    digest = cache_digest(path)
    run_channel(cfg, tmp_path / "d.npz", log=None)
    assert cache_digest(tmp_path / "d.npz") == digest
    curve = run_ber_from_cache(cfg, path)
    assert [r.power_dBm for r in curve.rows] == sorted(r.power_dBm for r in curve.rows)
    for eng in cfg.engines:
        p, b = curve.engine(eng)
        assert len(p) == 5
        assert np.all(np.diff(b) <= 0)
        assert np.all((b >= 0) & (b <= 0.5 + 1e-12))
    assert curve.metadata["seeds"] == {"mc_seed": 0, "sim_seed": 0}
    assert curve.metadata["scenario_digest"] == cfg.digest()
    out = tmp_path / "o.csv"
    curve.write(out)
    assert out.read_text().splitlines()[0] == "power_dBm,engine,ber,runtime_seconds"
    back = BerCurve.read_csv(out)
    assert [(r.power_dBm, r.engine, r.ber) for r in back.rows] == [(r.power_dBm, r.engine, r.ber) for r in curve.rows]
    assert back.metadata["scenario_digest"] == cfg.digest()


def test_cache_mismatch(tmp_path):
    cfg = small()
    run_channel(cfg, tmp_path / "c.npz", log=None)
    with pytest.raises(CacheMismatch):
        run_ber_from_cache(cfg.updated({"scenario.d0": "30"}), tmp_path / "c.npz")
    with pytest.raises(CacheMismatch):
        run_ber_from_cache(cfg.updated({"montecarlo.mc_seed": "5"}), tmp_path / "c.npz")


def test_engine_errors_become_marked_rows():
    cfg = ScenarioConfig(M=2, N=2, combiner="OC", rho=0.3, channel_model="M1", start_dBm=0, stop_dBm=0,
                         engines=("analytic-exact", "counting-saddle", "approx-fw"))
    h = [[ImpulseResponse.delta(1e-4)] * 2] * 2
    curve = run_ber(cfg, h)
    errors = {r.engine: r.error for r in curve.rows}
    assert errors == {"analytic-exact": "CorrelationUnsupported", "counting-saddle": "CorrelationUnsupported",
                      "approx-fw": "InvalidLayout"}
    assert "ERROR:CorrelationUnsupported" in curve.to_csv()


def test_rows_sorted_regardless_of_input_order():
    rows = [BerRow(20.0, "bitsim", 0.1, 1.0), BerRow(10.0, "analytic-ub", 0.2, 1.0),
            BerRow(20.0, "analytic-exact", 0.1, 1.0), BerRow(10.0, "analytic-exact", 0.2, 1.0)]
    curve = BerCurve(rows, {})
    assert [(r.power_dBm, r.engine) for r in curve.rows] == [
        (10.0, "analytic-exact"), (10.0, "analytic-ub"), (20.0, "analytic-exact"), (20.0, "bitsim")]
    assert curve.to_csv().splitlines()[0] == ",".join(CSV_HEADER)


def test_power_helpers():
    f = lambda p: 10 ** (-p / 5)
    assert power_at_ber(f, 1e-6) == pytest.approx(30.0, abs=1e-3)
    assert interpolate_power([20, 25, 30, 35], [f(20), f(25), f(30), f(35)], 1e-6) == pytest.approx(30.0)
    with pytest.raises(ConfigError):
        power_at_ber(f, 1e-20, hi=50.0)


def test_run_scint():
    rows = run_scint(OceanTurbulenceParams(), [25.0, 30.0])
    assert rows[0].sigma_X2 == pytest.approx(0.126, rel=0.15)
    assert rows[1].sigma_X2 == pytest.approx(0.165, rel=0.15)
    assert rows[0].sigma_I2 == pytest.approx(math.expm1(4 * rows[0].sigma_X2))
    assert run_scint(OceanTurbulenceParams(chi_T=0.0), [25.0])[0].sigma_I2 == 0.0
    assert scint_csv(rows).splitlines()[0] == "d0,sigma_I2,sigma_X2"


def _set_args(extra=None):
    args = []
    for k, v in dict(SMALL, **(extra or {})).items():
        args += ["--set", f"{k}={v}"]
    return args


def test_cli_end_to_end(tmp_path, capsys):
    cache = str(tmp_path / "c.npz")
    assert main(["channel", "--preset", "coastal-25m", "--cache", cache] + _set_args()) == 0
    out = str(tmp_path / "o.csv")
    rc = main(["ber", "--preset", "coastal-25m", "--cache", cache, "--out", out,
               "--engines", "analytic-exact,counting-gaussian"] + _set_args())
    assert rc == 0
    text = open(out).read().splitlines()
    assert text[0] == "power_dBm,engine,ber,runtime_seconds"
    assert len(text) == 1 + 5 * 2
    meta = json.load(open(out + ".meta.json"))
    assert meta["seeds"]["mc_seed"] == 0 and meta["channel_cache"]


def test_cli_sim_and_scint(tmp_path, capsys):
    rc = main(["sim", "--preset", "coastal-25m", "--seed", "4"] + _set_args(
        {"sweep.start_dBm": "15", "sweep.stop_dBm": "15", "bitsim.sim_bits": "10000", "bitsim.sim_draws": "20"}))
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "power_dBm,engine,ber,runtime_seconds" and lines[1].startswith("15.0,bitsim,")
    assert main(["scint", "--preset", "coastal-25m", "--distances", "25,30"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "d0,sigma_I2,sigma_X2"


def test_cli_errors_are_machine_readable(tmp_path, capsys):
    cache = str(tmp_path / "c.npz")
    main(["channel", "--preset", "coastal-25m", "--cache", cache] + _set_args())
    capsys.readouterr()
    rc = main(["ber", "--preset", "coastal-25m", "--cache", cache, "--seed", "99"] + _set_args())
    assert rc != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "CacheMismatch"
    rc = main(["ber", "--preset", "nowhere"])
    assert rc != 0
    assert json.loads(capsys.readouterr().err.strip())["error"] == "ConfigError"
    rc = main(["ber", "--config", str(tmp_path / "missing.ini")])
    assert rc != 0
    assert json.loads(capsys.readouterr().err.strip())["error"] == "FileNotFoundError"


def test_cli_config_file(tmp_path, capsys):
    cfg = small(**{"engines.engines": "analytic-ub"})
    ini = tmp_path / "s.ini"
    cfg.save(ini)
    assert main(["ber", "--config", str(ini)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 6 and all(",analytic-ub," in ln for ln in lines[1:])


@pytest.mark.parametrize("name", ["coastal-25m", "coastal-30m", "harbor-8m", "harbor-10m"])
def test_every_preset_sweeps(name):
    cfg = preset(name).updated({"montecarlo.n_photons": "5000", "sweep.start_dBm": "30", "sweep.stop_dBm": "30",
                                "engines.engines": "analytic-ub"})
    h = simulate_impulse_response(cfg.water_type, cfg.geometry, cfg.mc_settings)
    row = run_ber(cfg, h).rows[0]
    assert row.error is None and 0 < row.ber < 0.5
