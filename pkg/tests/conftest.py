import json
import os

import numpy as np
import pytest

from uwocsim.channel_mc import (WATER_PRESETS, LinkGeometry, McSettings, cache_header, load_channel_cache,
                                save_channel_cache, simulate_impulse_response)
from uwocsim.link_budget import make_layout, peak_power_from_average_dbm

CHANNEL_PHOTONS = 10**6
CHANNEL_SEED = 1
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def channel_dir(request):
    return request.config.cache.mkdir("uwocsim-channels")


@pytest.fixture(scope="session")
def coastal_channel(channel_dir):
    """Factory for 25 m coastal impulse-response matrices, cached on disk between runs."""
    memo = {}

    def get(M=1, N=1, d0=25.0, water="coastal", n_photons=CHANNEL_PHOTONS, seed=CHANNEL_SEED):
        key = (M, N, d0, water, n_photons, seed)
        if key in memo:
            return memo[key]
        w = WATER_PRESETS[water]
        geom = LinkGeometry.linear_array(d0, M, N)
        settings = McSettings(n_photons=n_photons, seed=seed)
        header = cache_header(w, geom, settings)
        path = os.path.join(channel_dir, f"{water}_{d0:g}m_{M}x{N}_{n_photons}_{seed}.npz")
        h = None
        if os.path.exists(path):
            stored, h = load_channel_cache(path)
            if {k: stored.get(k) for k in header} != json.loads(json.dumps(header)):
                h = None
        if h is None:
            h = simulate_impulse_response(w, geom, settings)
            save_channel_cache(path, h, header)
        memo[key] = h
        return h

    return get


@pytest.fixture(scope="session")
def coastal_layout(coastal_channel):
    """Layout factory on the cached coastal channels at a given average power."""

    def get(M=1, N=1, dbm=20.0, sigma_X2=0.16, combiner="EGC", L_max=None, data_rate=1e9, **kw):
        h = coastal_channel(M, N)
        return make_layout(h, float(peak_power_from_average_dbm(dbm)), 1.0 / data_rate, combiner=combiner,
                           sigma_X2=sigma_X2, L_max=L_max, **kw)

    return get


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for a criterion, print it, then assert it."""

    def report(criterion: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
