"""Forcing description and sampling for the stochastic vorticity input.

The stirring acts on finitely many Fourier modes. Amplitudes are stored
for representatives in the half lattice

    Z2+ = {k : k1 > 0} U {(0, k2) : k2 > 0}

with the opposite mode implied: ``q_{-k} = q_k``, and samples satisfy
``coeff(-k) = conj(coeff(k))`` so the forcing is a real field. In
vorticity form the per-mode increment over a window ``h`` is

    coeff(k) = i |k| sqrt(q_k) g_k,   g_k complex Gaussian,
    E[Re g_k]^2 = E[Im g_k]^2 = h,

which gives ``E|coeff(k)|^2 = 2 h q_k |k|^2`` and a mean input rate of
``total_q = sum over +-k of |k|^2 q_k`` squared-vorticity units per unit
time (the constant every stationary balance in the package is checked
against).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np

from .spectral import SpectralField, TruncationSpec, Wavevector

__all__ = [
    "NoiseSpec",
    "RngState",
    "HMReport",
    "default_forcing",
    "in_half_lattice",
    "total_q",
    "velocity_q",
    "check_hm_condition",
    "sample_curl_increment",
    "ou_stationary_moments",
    "ou_stationary_enstrophy",
]

_UINT64 = 1 << 64


def in_half_lattice(k: Wavevector) -> bool:
    """True if k is the canonical representative of the pair {k, -k}."""
    k1, k2 = k
    return k1 > 0 or (k1 == 0 and k2 > 0)


def _canonical(k: Wavevector) -> Wavevector:
    return k if in_half_lattice(k) else (-k[0], -k[1])


@dataclass(frozen=True)
class NoiseSpec:
    """Finite set of forced modes with amplitudes, keyed in Z2+.

    ``entries`` is a sorted tuple of ``((k1, k2), q)`` with every key in
    the half lattice and every ``q > 0``. The empty spec (no stirring)
    is allowed; it drives nothing and fails the nondegeneracy check.
    """

    entries: Tuple[Tuple[Wavevector, float], ...]

    def __post_init__(self) -> None:
        seen = set()
        norm = []
        for k, q in self.entries:
            try:
                k = (int(k[0]), int(k[1]))
                q = float(q)
            except (TypeError, ValueError, IndexError):
                raise ValueError(f"forcing entry must be ((k1, k2), q), got {(k, q)!r}") from None
            if k == (0, 0):
                raise ValueError("mode (0, 0) cannot be forced (fields are mean-zero)")
            if not in_half_lattice(k):
                raise ValueError(
                    f"forced mode {k} is not in the canonical half lattice; "
                    f"specify {_canonical(k)} (the opposite mode is implied)"
                )
            if k in seen:
                raise ValueError(f"duplicate forced mode {k}")
            if not (math.isfinite(q) and q > 0.0):
                raise ValueError(f"amplitude for mode {k} must be finite and > 0, got {q!r}")
            seen.add(k)
            norm.append((k, q))
        object.__setattr__(self, "entries", tuple(sorted(norm)))

    @classmethod
    def from_modes(cls, modes: Mapping[Wavevector, float]) -> "NoiseSpec":
        """Canonicalize a ``{k: q}`` mapping; ``k`` and ``-k`` must agree."""
        canon: Dict[Wavevector, float] = {}
        for k, q in modes.items():
            rep = _canonical(tuple(int(x) for x in k))
            if rep == (0, 0):
                raise ValueError("mode (0, 0) cannot be forced")
            q = float(q)
            if rep in canon and canon[rep] != q:
                raise ValueError(f"conflicting amplitudes for modes +-{rep}")
            canon[rep] = q
        return cls(tuple(sorted(canon.items())))

    @property
    def modes(self) -> Tuple[Wavevector, ...]:
        """Canonical (half-lattice) forced modes, sorted."""
        return tuple(k for k, _ in self.entries)

    @property
    def amplitudes(self) -> Tuple[float, ...]:
        return tuple(q for _, q in self.entries)

    def full_modes(self) -> Tuple[Wavevector, ...]:
        """Both signs of every forced mode."""
        out = []
        for k, _ in self.entries:
            out.append(k)
            out.append((-k[0], -k[1]))
        return tuple(sorted(out))

    def max_mode(self) -> int:
        """Largest |k|_inf over forced modes (0 for the empty spec)."""
        if not self.entries:
            return 0
        return max(max(abs(k[0]), abs(k[1])) for k, _ in self.entries)

    def digest(self) -> str:
        """Stable hash of the forcing table, for manifests and drift checks."""
        h = hashlib.blake2b(digest_size=8)
        for (k1, k2), q in self.entries:
            h.update(f"{k1} {k2} {q!r};".encode())
        return h.hexdigest()


def default_forcing() -> NoiseSpec:
    """Canonical minimal nondegenerate stirring: +-(1,0), +-(1,1), q = 1.

    Two distinct mode norms (1 and sqrt 2) whose integer combinations
    generate the whole lattice; ``total_q = 6``.
    """
    return NoiseSpec.from_modes({(1, 0): 1.0, (1, 1): 1.0})


def total_q(spec: NoiseSpec) -> float:
    """Mean squared-vorticity input rate: ``sum_{+-k} |k|^2 q_k``."""
    return 2.0 * sum((k[0] ** 2 + k[1] ** 2) * q for k, q in spec.entries)


def velocity_q(spec: NoiseSpec) -> float:
    """Mean squared-velocity input rate: ``sum_{+-k} q_k``."""
    return 2.0 * sum(q for _, q in spec.entries)


# ---------------------------------------------------------------------------
# nondegeneracy (uniqueness-of-invariant-measure) check

@dataclass(frozen=True)
class HMReport:
    """Outcome of the nondegeneracy check on a forced mode set."""

    two_norms: bool
    generates_lattice: bool
    norms_squared: Tuple[int, ...]

    @property
    def ok(self) -> bool:
        return self.two_norms and self.generates_lattice

    def describe(self) -> str:
        names = []
        for n in self.norms_squared:
            r = math.isqrt(n)
            names.append(str(r) if r * r == n else f"√{n}")
        norms = "{" + ",".join(names) + "}"
        if self.ok:
            return f"PASS: norms {norms}, lattice generated"
        reasons = []
        if not self.two_norms:
            reasons.append(f"needs two distinct mode norms, has {norms}")
        if not self.generates_lattice:
            reasons.append("integer combinations do not generate the full lattice")
        return "FAIL: " + "; ".join(reasons)


def check_hm_condition(spec: NoiseSpec) -> HMReport:
    """Check the two-part nondegeneracy condition on the forced set.

    (a) at least two forced modes with different Euclidean norms, and
    (b) the integer span of the forced modes is the whole lattice.
    Part (b) is decided from the Smith invariants of the stacked mode
    matrix: gcd of all entries and gcd of all 2x2 minors both equal 1.
    """
    modes = spec.modes
    norms2 = tuple(sorted({k[0] ** 2 + k[1] ** 2 for k in modes}))
    two_norms = len(norms2) >= 2
    if not modes:
        return HMReport(False, False, norms2)
    d1 = 0
    for k in modes:
        d1 = math.gcd(d1, abs(k[0]))
        d1 = math.gcd(d1, abs(k[1]))
    d2 = 0
    for i in range(len(modes)):
        for j in range(i + 1, len(modes)):
            det = modes[i][0] * modes[j][1] - modes[i][1] * modes[j][0]
            d2 = math.gcd(d2, abs(det))
    generates = d1 == 1 and d2 == 1
    return HMReport(two_norms, generates, norms2)


# ---------------------------------------------------------------------------
# counter-based randomness

@dataclass
class RngState:
    """Counter-based random stream: key (seed, stream), per-call counter.

    Built on a counter-block cipher generator, so draws are addressed
    rather than sequential: call ``i`` of stream ``s`` under seed ``m``
    is the same bits no matter what was drawn before it or in parallel.
    Checkpointing stores the three integers; restoring them resumes the
    stream bit-exactly.
    """

    seed: int
    stream: int = 0
    counter: int = 0

    def __post_init__(self) -> None:
        for name in ("seed", "stream", "counter"):
            v = getattr(self, name)
            try:
                v = int(v)
            except (TypeError, ValueError):
                raise ValueError(f"{name} must be an integer, got {v!r}") from None
            if not 0 <= v < _UINT64:
                raise ValueError(f"{name} must be in [0, 2^64), got {v}")
            setattr(self, name, v)

    def generator_at(self, counter: int) -> np.random.Generator:
        """Generator addressed at an explicit counter value (no advance)."""
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        ctr = np.array([0, 0, 0, counter], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=ctr))

    def draw_normals(self, n: int) -> np.ndarray:
        """n standard normals from the current counter; advances by one."""
        g = self.generator_at(self.counter)
        self.counter = (self.counter + 1) % _UINT64
        return g.standard_normal(n)

    def copy(self) -> "RngState":
        return RngState(self.seed, self.stream, self.counter)


# ---------------------------------------------------------------------------
# sampling and closed forms

def _mode_arrays(spec: NoiseSpec) -> Tuple[np.ndarray, np.ndarray]:
    """(modes, q) as arrays in canonical order; modes shape (m, 2)."""
    if not spec.entries:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    modes = np.array([k for k, _ in spec.entries], dtype=np.int64)
    q = np.array([q for _, q in spec.entries])
    return modes, q


def sample_curl_increment(
    spec: NoiseSpec,
    trunc: TruncationSpec,
    h: float,
    rng: RngState,
) -> SpectralField:
    """One increment of the vorticity noise over a window of length h.

    Per canonical mode ``k``: ``i |k| sqrt(q_k) (z1 + i z2) sqrt(h)``
    with independent standard normals ``z1, z2`` (so each real component
    has variance ``h``), and the opposite mode filled by conjugation.
    Draws consume one counter tick regardless of the mode count.
    """
    if h <= 0 or not math.isfinite(h):
        raise ValueError(f"window length must be positive and finite, got {h}")
    if spec.max_mode() > trunc.K:
        raise ValueError(
            f"forced mode outside truncation: |k|_inf = {spec.max_mode()} > K = {trunc.K}"
        )
    field = SpectralField.zero(trunc)
    m = len(spec.entries)
    if m == 0:
        rng.draw_normals(0)  # keep the counter cadence identical either way
        return field
    modes, q = _mode_arrays(spec)
    z = rng.draw_normals(2 * m) * math.sqrt(h)
    g = z[0::2] + 1j * z[1::2]
    amp = np.sqrt((modes[:, 0] ** 2 + modes[:, 1] ** 2).astype(np.float64) * q)
    vals = 1j * amp * g
    K = trunc.K
    c = field.coeffs
    c[modes[:, 0] + K, modes[:, 1] + K] = vals
    c[K - modes[:, 0], K - modes[:, 1]] = np.conj(vals)
    return field


def ou_stationary_moments(spec: NoiseSpec, nu: float, gamma: float) -> Dict[Wavevector, float]:
    """Stationary ``E|xi_k|^2`` of the linear dynamics, canonical modes only.

    With the quadratic drift rate ``lambda_k = nu |k|^2 + gamma`` the
    linearized mode is an Ornstein-Uhlenbeck process with stationary
    second moment ``q_k |k|^2 / lambda_k``. The opposite mode has the
    same moment.
    """
    if gamma <= 0:
        raise ValueError(f"damping gamma must be > 0, got {gamma}")
    if nu < 0:
        raise ValueError(f"viscosity nu must be >= 0, got {nu}")
    out = {}
    for k, q in spec.entries:
        ksq = k[0] ** 2 + k[1] ** 2
        out[k] = q * ksq / (nu * ksq + gamma)
    return out


def ou_stationary_enstrophy(spec: NoiseSpec, nu: float, gamma: float) -> float:
    """Stationary mean squared vorticity of the linear dynamics (both signs)."""
    return 2.0 * sum(ou_stationary_moments(spec, nu, gamma).values())
