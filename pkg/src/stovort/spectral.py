"""Spectral representation of mean-zero periodic fields on the square torus.

Conventions used throughout the package:

* Domain: ``[-pi, pi]^2`` with periodic boundary conditions.
* Basis: ``e_k(x) = exp(i k.x) / (2 pi)``, orthonormal in ``L^2``. All
  norms and balance constants in the package are relative to this
  normalization.
* Coefficients: a field is a dense complex array of shape
  ``(2K+1, 2K+1)`` over the square ``|k1|, |k2| <= K``; the coefficient of
  ``e_{(k1, k2)}`` lives at index ``[k1 + K, k2 + K]``. The ``(0, 0)``
  entry is pinned to zero (mean-zero fields only).
* Reality: grid fields are real, so ``coeff(-k) == conj(coeff(k))`` is a
  standing invariant. Every operation in this module preserves it exactly
  (the analysis path reconstructs the negative-k2 half by conjugation
  rather than trusting FFT roundoff).
* Grid: ``N x N`` points ``x_j = (-pi + 2 pi j1 / N, -pi + 2 pi j2 / N)``,
  row-major in ``(j1, j2)``. ``N`` is a power of two with ``N >= 2K + 2``
  so every retained mode is representable and quadratic products cannot
  alias back into the retained band.

The advection kernel applies the 2/3 rule on ``|k|_inf``: products are
formed on the grid and modes above ``floor(2K/3)`` are zeroed. For fields
supported inside the cutoff band this makes the quadratic term an exact
Galerkin convolution, so the enstrophy and energy neutrality identities
hold to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np

__all__ = [
    "TruncationSpec",
    "SpectralField",
    "VelocityField",
    "GridField",
    "grid_coordinates",
    "to_grid",
    "from_grid",
    "grid_values",
    "biot_savart",
    "curl",
    "advect",
    "nonlinear_term",
    "sobolev_norm",
    "lp_norm",
    "AdvectionWorkspace",
]

Wavevector = Tuple[int, int]

_TWO_PI = 2.0 * np.pi


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


@dataclass(frozen=True)
class TruncationSpec:
    """Square spectral truncation ``|k1|, |k2| <= K`` with its FFT grid.

    Parameters
    ----------
    K : int
        Truncation radius in the max norm, ``K >= 2``.
    N : int, optional
        Grid resolution. Defaults to the smallest power of two with
        ``N >= 2K + 2``. Must be a power of two and at least ``2K + 2``.

    Attributes
    ----------
    dealias_cutoff : int
        ``floor(2K/3)``; the advection kernel zeroes modes above this.
    """

    K: int
    N: int = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if not isinstance(self.K, int) or self.K < 2:
            raise ValueError(f"truncation K must be an integer >= 2, got {self.K!r}")
        n = self.N
        if n is None:
            n = _next_pow2(2 * self.K + 2)
            object.__setattr__(self, "N", n)
        if not isinstance(n, int) or n < 2 * self.K + 2:
            raise ValueError(f"grid N must be an integer >= 2K+2 = {2 * self.K + 2}, got {n!r}")
        if n & (n - 1):
            raise ValueError(f"grid N must be a power of two, got {n}")
        object.__setattr__(self, "dealias_cutoff", 2 * self.K // 3)

        K = self.K
        wave = np.arange(-K, K + 1)
        k1 = wave[:, None].astype(np.float64)
        k2 = wave[None, :].astype(np.float64)
        ksq = k1 * k1 + k2 * k2
        ksq_safe = ksq.copy()
        ksq_safe[K, K] = 1.0  # avoid 0/0 at the pinned mean mode
        cut = self.dealias_cutoff
        mask = ((np.abs(k1) <= cut) & (np.abs(k2) <= cut)).astype(np.float64)
        mask[K, K] = 0.0
        # phase (-1)^(k1+k2) maps FFT output (origin at j = 0) to the
        # grid origin at x = (-pi, -pi)
        phase = np.where((wave[:, None] + wave[None, :]) % 2 == 0, 1.0, -1.0)
        object.__setattr__(self, "k1", k1)
        object.__setattr__(self, "k2", k2)
        object.__setattr__(self, "ksq", ksq)
        object.__setattr__(self, "ksq_safe", ksq_safe)
        object.__setattr__(self, "dealias_mask", mask)
        object.__setattr__(self, "phase", phase)
        object.__setattr__(self, "phase_half", phase[:, K:].copy())

    def scatter_rows(self, n: int) -> np.ndarray:
        """Row indices of modes ``k1 = -K..K`` in an ``n``-point FFT layout."""
        return np.arange(-self.K, self.K + 1) % n

    def mode_index(self, k: Wavevector) -> Tuple[int, int]:
        k1, k2 = int(k[0]), int(k[1])
        if max(abs(k1), abs(k2)) > self.K:
            raise ValueError(f"mode {k} outside truncation |k|_inf <= {self.K}")
        return k1 + self.K, k2 + self.K


def _check_symmetry(trunc: TruncationSpec, coeffs: np.ndarray) -> None:
    flipped = np.conj(coeffs[::-1, ::-1])
    scale = np.max(np.abs(coeffs))
    if scale == 0.0:
        return
    if np.max(np.abs(coeffs - flipped)) > 1e-12 * scale:
        raise ValueError("coefficients violate conjugate symmetry coeff(-k) == conj(coeff(k))")


class SpectralField:
    """Mean-zero real field stored as spectral coefficients.

    ``coeffs[k1 + K, k2 + K]`` is the coefficient of ``e_{(k1, k2)}``.
    Construction validates shape, the pinned ``(0, 0)`` entry, finiteness
    and conjugate symmetry; internal hot paths that preserve the
    invariants by construction pass ``validate=False``.
    """

    __slots__ = ("trunc", "coeffs")

    def __init__(self, trunc: TruncationSpec, coeffs: np.ndarray, *, validate: bool = True):
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if validate:
            side = 2 * trunc.K + 1
            if coeffs.shape != (side, side):
                raise ValueError(
                    f"coefficient array must have shape ({side}, {side}), got {coeffs.shape}"
                )
            if not np.all(np.isfinite(coeffs)):
                raise ValueError("coefficients must be finite")
            if coeffs[trunc.K, trunc.K] != 0.0:
                raise ValueError("mean mode (0, 0) must be zero")
            _check_symmetry(trunc, coeffs)
        self.trunc = trunc
        self.coeffs = coeffs

    @classmethod
    def zero(cls, trunc: TruncationSpec) -> "SpectralField":
        side = 2 * trunc.K + 1
        return cls(trunc, np.zeros((side, side), dtype=np.complex128), validate=False)

    @classmethod
    def from_modes(cls, trunc: TruncationSpec, modes: Dict[Wavevector, complex]) -> "SpectralField":
        """Build a field from ``{k: coeff}``, filling ``-k`` by conjugation.

        If both ``k`` and ``-k`` appear they must be conjugate.
        """
        field = cls.zero(trunc)
        c = field.coeffs
        for k, val in modes.items():
            if k == (0, 0):
                raise ValueError("mean mode (0, 0) is not representable")
            i, j = trunc.mode_index(k)
            c[i, j] = val
        for k, val in modes.items():
            i, j = trunc.mode_index((-k[0], -k[1]))
            want = np.conj(complex(val))
            if c[i, j] != 0.0 and not np.isclose(c[i, j], want, rtol=1e-12, atol=0.0):
                raise ValueError(f"modes {k} and {(-k[0], -k[1])} are not conjugate")
            c[i, j] = want
        _check_symmetry(trunc, c)
        return field

    def get(self, k: Wavevector) -> complex:
        i, j = self.trunc.mode_index(k)
        return complex(self.coeffs[i, j])

    def copy(self) -> "SpectralField":
        return SpectralField(self.trunc, self.coeffs.copy(), validate=False)

    def __repr__(self) -> str:  # pragma: no cover
        nz = int(np.count_nonzero(self.coeffs))
        return f"SpectralField(K={self.trunc.K}, N={self.trunc.N}, nonzero_modes={nz})"


@dataclass(frozen=True)
class VelocityField:
    """Divergence-free velocity, one SpectralField per component."""

    u1: SpectralField
    u2: SpectralField

    def __post_init__(self) -> None:
        if self.u1.trunc != self.u2.trunc:
            raise ValueError("velocity components must share one truncation")

    @property
    def trunc(self) -> TruncationSpec:
        return self.u1.trunc


@dataclass(frozen=True)
class GridField:
    """Real values on the ``N x N`` collocation grid of ``trunc``."""

    trunc: TruncationSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        n = self.trunc.N
        if vals.shape != (n, n):
            raise ValueError(f"grid values must have shape ({n}, {n}), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "values", vals)


def grid_coordinates(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Meshgrid ``(x1, x2)`` of the n-point collocation grid, 'ij' indexed."""
    x = -np.pi + _TWO_PI * np.arange(n) / n
    return np.meshgrid(x, x, indexing="ij")


# ---------------------------------------------------------------------------
# transforms

def _grid_values_raw(trunc: TruncationSpec, coeffs: np.ndarray, n: int) -> np.ndarray:
    """Synthesize grid values on an n-point grid (n >= N allowed, exact)."""
    K = trunc.K
    rows = trunc.scatter_rows(n)
    half = np.zeros((n, n // 2 + 1), dtype=np.complex128)
    # scale folded in on the small half-spectrum block, not the big grid
    half[rows, : K + 1] = coeffs[:, K:] * (trunc.phase_half * (n * n / _TWO_PI))
    return np.fft.irfft2(half, s=(n, n))


def _coeffs_from_grid_raw(trunc: TruncationSpec, values: np.ndarray) -> np.ndarray:
    """Analyze an n-point real grid into the (2K+1)^2 coefficient block.

    The negative-k2 half and the k2 = 0 column are rebuilt by conjugation
    so the symmetry invariant holds exactly, not just to FFT roundoff.
    The grid mean (mode (0, 0)) is discarded.
    """
    K = trunc.K
    n = values.shape[0]
    rows = trunc.scatter_rows(n)
    spec = np.fft.rfft2(values)
    side = 2 * K + 1
    c = np.empty((side, side), dtype=np.complex128)
    c[:, K:] = spec[rows, : K + 1] * (trunc.phase_half * (_TWO_PI / (n * n)))
    c[:K, K] = np.conj(c[:K:-1, K])
    c[K, K] = 0.0
    c[:, :K] = np.conj(c[::-1, :K:-1])
    return c


def to_grid(field: SpectralField) -> GridField:
    """Evaluate the field on its collocation grid.

    Exact for every representable field: the synthesis is a plain
    trigonometric sum, so ``from_grid(to_grid(f))`` returns ``f`` up to
    roundoff.
    """
    return GridField(field.trunc, _grid_values_raw(field.trunc, field.coeffs, field.trunc.N))


def grid_values(field: SpectralField, n: int = None) -> np.ndarray:
    """Field values on an ``n x n`` grid (default ``N``; larger n oversamples).

    Oversampling a band-limited field is exact; it is used for grid
    quadrature of quartic integrands where the native grid would alias.
    """
    n = field.trunc.N if n is None else int(n)
    if n < field.trunc.N:
        raise ValueError(f"refuse to undersample: n={n} < N={field.trunc.N}")
    return _grid_values_raw(field.trunc, field.coeffs, n)


def from_grid(grid: GridField) -> SpectralField:
    """Project grid values onto the retained modes.

    Modes beyond the truncation alias in the usual DFT sense; the
    round-trip identity is only claimed for band-limited input. The grid
    mean is discarded (fields are mean-zero by convention).
    """
    return SpectralField(grid.trunc, _coeffs_from_grid_raw(grid.trunc, grid.values), validate=False)


# ---------------------------------------------------------------------------
# calculus on coefficients

def biot_savart(xi: SpectralField) -> VelocityField:
    """Velocity with vorticity ``xi``: ``u_k = -i (k_perp / |k|^2) xi_k``.

    ``k_perp = (-k2, k1)``. The output is divergence-free by construction
    and ``curl(biot_savart(xi)) == xi``.
    """
    t = xi.trunc
    c = xi.coeffs
    u1 = 1j * t.k2 / t.ksq_safe * c
    u2 = -1j * t.k1 / t.ksq_safe * c
    return VelocityField(
        SpectralField(t, u1, validate=False),
        SpectralField(t, u2, validate=False),
    )


def curl(vel: VelocityField) -> SpectralField:
    """Scalar curl ``d(u2)/dx1 - d(u1)/dx2`` in coefficients."""
    t = vel.trunc
    c = 1j * (t.k1 * vel.u2.coeffs - t.k2 * vel.u1.coeffs)
    return SpectralField(t, c, validate=False)


def _advect_raw(
    trunc: TruncationSpec,
    u1c: np.ndarray,
    u2c: np.ndarray,
    xic: np.ndarray,
) -> np.ndarray:
    """Dealiased coefficients of ``u . grad xi`` (pseudo-spectral product)."""
    K, N = trunc.K, trunc.N
    gx = 1j * trunc.k1 * xic
    gy = 1j * trunc.k2 * xic
    rows = trunc.scatter_rows(N)
    stack = np.zeros((4, N, N // 2 + 1), dtype=np.complex128)
    scale = trunc.phase_half * (N * N / _TWO_PI)
    for i, c in enumerate((u1c, u2c, gx, gy)):
        stack[i, rows, : K + 1] = c[:, K:] * scale
    g = np.fft.irfft2(stack, s=(N, N), axes=(-2, -1))
    adv = g[0] * g[2] + g[1] * g[3]
    out = _coeffs_from_grid_raw(trunc, adv)
    out *= trunc.dealias_mask
    return out


def advect(xi: SpectralField, vel: VelocityField) -> SpectralField:
    """Dealiased advection ``P(u . grad xi)`` by an external velocity.

    For inputs supported inside the dealias band the result is the exact
    Galerkin projection of the product, so the pairing identities
    ``<advect(xi, u), phi> == -<advect(phi, u), xi>`` hold to roundoff.
    """
    if xi.trunc != vel.trunc:
        raise ValueError("field and velocity truncations differ")
    c = _advect_raw(xi.trunc, vel.u1.coeffs, vel.u2.coeffs, xi.coeffs)
    return SpectralField(xi.trunc, c, validate=False)


def nonlinear_term(xi: SpectralField) -> SpectralField:
    """Self-advection ``P(u . grad xi)`` with ``u = biot_savart(xi)``."""
    t = xi.trunc
    c = xi.coeffs
    u1c = 1j * t.k2 / t.ksq_safe * c
    u2c = -1j * t.k1 / t.ksq_safe * c
    return SpectralField(t, _advect_raw(t, u1c, u2c, c), validate=False)


# ---------------------------------------------------------------------------
# norms

def sobolev_norm(field: SpectralField, a: float) -> float:
    """``H^a`` norm: ``sqrt(sum |k|^(2a) |coeff_k|^2)``.

    ``a = 0`` is the ``L^2`` norm; for vorticity, ``a = -1`` gives the
    ``L^2`` norm of the velocity (Biot-Savart isometry) and ``a = 1`` the
    palinstrophy root.
    """
    t = field.trunc
    w = t.ksq_safe ** float(a)  # (0,0) coefficient is 0, weight there is moot
    mag = np.abs(field.coeffs) ** 2
    return float(np.sqrt(np.sum(w * mag)))


def lp_norm(field: SpectralField, p: float, oversample: int = 1) -> float:
    """``L^p`` norm by grid quadrature with weight ``(2 pi / n)^2``.

    ``oversample`` multiplies the grid resolution; quadrature of a
    product of band-limited factors is exact once the grid outresolves
    the product bandwidth. ``p = 2`` agrees with the spectral norm to
    roundoff (Parseval).
    """
    if p < 1:
        raise ValueError(f"L^p norm needs p >= 1, got {p}")
    if oversample < 1:
        raise ValueError("oversample must be a positive integer")
    n = field.trunc.N * int(oversample)
    vals = _grid_values_raw(field.trunc, field.coeffs, n)
    w = (_TWO_PI / n) ** 2
    return float((np.sum(np.abs(vals) ** p) * w) ** (1.0 / p))


# ---------------------------------------------------------------------------
# hot-loop kernel

class AdvectionWorkspace:
    """Preallocated buffers and fused prefactors for repeated advection.

    The integrator calls :meth:`self_advection` once per step; buffers
    are reused so the steady-state loop does not allocate grid-sized
    temporaries beyond what the FFT itself needs. The last velocity
    grids are kept for the advective CFL monitor.
    """

    def __init__(self, trunc: TruncationSpec):
        K, N = trunc.K, trunc.N
        self.trunc = trunc
        self._rows = trunc.scatter_rows(N)
        self._stack = np.zeros((4, N, N // 2 + 1), dtype=np.complex128)
        self._tmp = np.empty((4, 2 * K + 1, K + 1), dtype=np.complex128)
        scale = trunc.phase_half * (N * N / _TWO_PI)
        side = 2 * K + 1
        k1 = np.broadcast_to(trunc.k1, (side, side))
        k2 = np.broadcast_to(trunc.k2, (side, side))
        half = np.s_[:, K:]
        # synthesis order: u1, u2, dxi/dx1, dxi/dx2
        self._pref_self = np.stack([
            (1j * k2 / trunc.ksq_safe)[half] * scale,
            (-1j * k1 / trunc.ksq_safe)[half] * scale,
            (1j * k1)[half] * scale,
            (1j * k2)[half] * scale,
        ])
        self._post = trunc.phase_half * (_TWO_PI / (N * N))
        self.u1_grid = None
        self.u2_grid = None

    def self_advection(self, coeffs: np.ndarray) -> np.ndarray:
        """Dealiased ``u . grad xi`` coefficients with ``u`` from ``xi``."""
        t = self.trunc
        K, N = t.K, t.N
        np.multiply(self._pref_self, coeffs[:, K:], out=self._tmp)
        self._stack[:, self._rows, : K + 1] = self._tmp
        g = np.fft.irfft2(self._stack, s=(N, N), axes=(-2, -1))
        self.u1_grid = g[0]
        self.u2_grid = g[1]
        adv = g[0] * g[2]
        adv += g[1] * g[3]
        spec = np.fft.rfft2(adv)
        side = 2 * K + 1
        out = np.empty((side, side), dtype=np.complex128)
        out[:, K:] = spec[self._rows, : K + 1] * self._post
        out[:K, K] = np.conj(out[:K:-1, K])
        out[K, K] = 0.0
        out[:, :K] = np.conj(out[::-1, :K:-1])
        out *= t.dealias_mask
        return out

    def max_speed(self) -> float:
        """Max pointwise speed of the last synthesized velocity grids."""
        if self.u1_grid is None:
            return 0.0
        return float(np.sqrt(np.max(self.u1_grid**2 + self.u2_grid**2)))
