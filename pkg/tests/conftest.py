import numpy as np
import pytest

from morphoacoustics.lddmm import MatchParams, match
from morphoacoustics.pipeline import SubjectAssets
from morphoacoustics.shapes import icosphere, toy_subject

# gamma weighs |v|^2 (m^2) against a currents norm (m^4): ear-sized meshes need a smaller one
EAR_PARAMS = MatchParams(gamma=1e-6)

_acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(criterion, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        _acceptance_lines.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def unit_sphere():
    return icosphere(2, 1.0, name="sphere_r1")


@pytest.fixture(scope="session")
def big_sphere():
    return icosphere(2, 1.2, name="sphere_r1.2")


@pytest.fixture(scope="session")
def sphere_match(unit_sphere, big_sphere):
    """Criterion-4 instance with default parameters."""
    import time
    t0 = time.perf_counter()
    f, report = match(unit_sphere, big_sphere, MatchParams())
    return f, report, time.perf_counter() - t0


@pytest.fixture(scope="session")
def sphere_match_t20(unit_sphere, big_sphere):
    return match(unit_sphere, big_sphere, MatchParams(n_steps=20))


def _subject(label, **kw):
    full, ht, le = toy_subject(label=label, **kw)
    return SubjectAssets(full, ht, le, label)


@pytest.fixture(scope="session")
def subjects():
    s1 = _subject("1")
    s2 = _subject("2", head_radius=0.1, ear_tilt=0.4, ear_axes=(0.014, 0.004, 0.026))
    return s1, s2


def ear_box(mesh, margin=1e-4):
    return mesh.vertices.min(0) - margin, mesh.vertices.max(0) + margin


@pytest.fixture(scope="session")
def synth_all_result(subjects):
    from morphoacoustics.pipeline import synth_all
    s1, s2 = subjects
    return synth_all(s1, s2, ear_params=EAR_PARAMS)


@pytest.fixture(scope="session")
def synth_ear_result(subjects):
    from morphoacoustics.pipeline import synth_ear_only
    s1, s2 = subjects
    return synth_ear_only(s1, s2.left_ear, EAR_PARAMS, ear_region=ear_box(s1.left_ear))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
