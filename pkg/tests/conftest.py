import numpy as np
import pytest

from bearingda import FaultClass, Segment
from bearingda.demo import simulate_healthy_recording

FS = 12000.0
RPM = 29.95 * 60


def healthy_segment(n=4096, seed=0, fs=FS, rpm=RPM) -> Segment:
    return Segment(simulate_healthy_recording(n, fs, rpm, seed=seed), fs, rpm, FaultClass.Healthy)


def numeric_grad(f, theta: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Central differences with h = rel_step * (1 + |theta|), elementwise."""
    g = np.zeros_like(theta)
    flat, gflat = theta.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = rel_step * (1.0 + abs(orig))
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


@pytest.fixture
def healthy():
    return healthy_segment()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_domains():
    """Preprocessed source/target spectra from simulated recordings, 40 per class."""
    from bearingda import demo, pipeline

    recs = demo.demo_recordings(seconds=3, seed=0, per_class=2)
    source, target = pipeline.build_waveform_domains(recs, 40, seed=0)
    return pipeline.make_domains(source, target, seed=0)
