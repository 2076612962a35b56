import numpy as np
import pytest

from ivdoa.core_dsp import StftConfig
from ivdoa.foa_scene import EventLabel, SceneSpec

ACCEPTANCE_LINES = []


def rel_err(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def event(eid, on, off, az_deg, el_deg, **kw):
    return EventLabel(eid, on, off, float(np.radians(az_deg)), float(np.radians(el_deg)), **kw)


def single_source_spec(az_deg=40.0, el_deg=20.0, duration=1.0, seed=0, **kw):
    return SceneSpec(duration, (event(0, 0.0, duration, az_deg, el_deg),), seed=seed, **kw)


def disjoint_pair_spec(seed, reverb=None, duration=2.0, noise_snr=None):
    """Two disjoint-band sources on 10-degree grid directions, overlapping in the middle."""
    rng = np.random.default_rng(seed)
    az = 10 * int(rng.integers(-18, 18))
    sep = 10 * int(rng.integers(4, 19))
    az2 = (az + sep + 180) % 360 - 180
    el1, el2 = (10 * int(v) for v in rng.integers(-4, 5, 2))
    events = (
        event(0, 0.0, 0.8 * duration, az, el1, band=(200.0, 2000.0)),
        event(1, 0.25 * duration, duration, az2, el2, band=(3000.0, 9000.0)),
    )
    return SceneSpec(duration, events, noise_snr=noise_snr, reverb=reverb, seed=seed)


@pytest.fixture(scope="session")
def cfg():
    return StftConfig()


@pytest.fixture(scope="session")
def small_cfg():
    return StftConfig(sample_rate=48000, window_len=1024, hop=256)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
