import numpy as np
import pytest

from stovort import SpectralField, TruncationSpec

# Lines registered by the acceptance tests; printed as a terminal
# summary block so they survive pytest's output capture.
CRITERION_LINES = []


def make_band_limited(trunc: TruncationSpec, seed=0, inside_dealias=True, scale=1.0):
    """Random real field with conjugate-symmetric coefficients.

    ``inside_dealias`` restricts support to the 2/3 band, where the
    quadratic pairing identities hold to roundoff.
    """
    rng = np.random.default_rng(seed)
    K = trunc.K
    side = 2 * K + 1
    c = np.zeros((side, side), dtype=np.complex128)
    c[:, K:] = scale * (
        rng.standard_normal((side, K + 1)) + 1j * rng.standard_normal((side, K + 1))
    )
    c[:K, K] = np.conj(c[:K:-1, K])
    c[K, K] = 0.0
    c[:, :K] = np.conj(c[::-1, :K:-1])
    if inside_dealias:
        c = c * trunc.dealias_mask
    return SpectralField(trunc, c)


def inner(f: SpectralField, g: SpectralField) -> float:
    """L2 pairing of two real fields via their coefficients."""
    return float(np.real(np.sum(f.coeffs * np.conj(g.coeffs))))


@pytest.fixture
def band_limited():
    return make_band_limited


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)
