"""Two-qubit state primitives: spectra, Haar orbits, partial transpose, PPT test.

Everything here works on 4x4 matrices.  Batched variants take arrays with a
leading batch axis and are what the Monte Carlo engine uses in its hot loop;
the scalar variants validate their inputs and are meant for interactive use.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EPS_DET",
    "EPS_EIG",
    "Ensemble",
    "PPTVerdict",
    "Spectrum",
    "ValidationError",
    "check_density_matrix",
    "haar",
    "haar_orthogonal",
    "haar_unitary",
    "hermitian_eigenvalues",
    "is_separable",
    "max_concurrence",
    "max_concurrence_batch",
    "orbit_point",
    "orbit_points",
    "partial_transpose",
    "partial_transpose_first",
    "pt_determinants",
    "separable_mask",
]

EPS_DET = 1e-12
EPS_EIG = 1e-10

_SUM_TOL = 1e-12
_HERM_TOL = 1e-10


class ValidationError(ValueError):
    """Raised when an input violates a domain invariant."""


class Ensemble(enum.IntEnum):
    """Dyson index of the orbit: 1 for real-symmetric, 2 for complex-Hermitian."""

    REAL = 1
    COMPLEX = 2

    @classmethod
    def parse(cls, value) -> "Ensemble":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().lower()
            if key in ("real", "1"):
                return cls.REAL
            if key in ("complex", "2"):
                return cls.COMPLEX
            raise ValidationError(f"unknown ensemble {value!r}")
        try:
            return cls(int(value))
        except ValueError as exc:
            raise ValidationError(f"beta must be 1 or 2, got {value!r}") from exc

    @property
    def beta(self) -> int:
        return int(self)


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of a 4x4 density matrix in non-increasing order."""

    values: tuple[float, float, float, float]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) != 4:
            raise ValidationError(f"spectrum needs 4 entries, got {len(vals)}")
        if not all(np.isfinite(vals)):
            raise ValidationError("spectrum entries must be finite")
        if abs(sum(vals) - 1.0) > _SUM_TOL:
            raise ValidationError(f"spectrum sums to {sum(vals)!r}, not 1")
        if vals[3] < 0.0:
            raise ValidationError("spectrum has a negative entry")
        if any(vals[i] < vals[i + 1] for i in range(3)):
            raise ValidationError(f"spectrum is not sorted descending: {vals}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_unsorted(cls, values) -> "Spectrum":
        return cls(tuple(sorted((float(v) for v in values), reverse=True)))

    def as_array(self) -> np.ndarray:
        return np.array(self.values)


def max_concurrence(s: Spectrum | tuple | np.ndarray) -> float:
    """Largest concurrence attainable on the unitary orbit of ``diag(s)``.

    ``max(0, l1 - l3 - 2 sqrt(l2 l4))`` for ``l1 >= l2 >= l3 >= l4``.
    """
    if not isinstance(s, Spectrum):
        s = Spectrum(tuple(s))
    l1, l2, l3, l4 = s.values
    return min(1.0, max(0.0, l1 - l3 - 2.0 * np.sqrt(l2 * l4)))


def max_concurrence_batch(lam: np.ndarray) -> np.ndarray:
    """Vectorized :func:`max_concurrence` on rows already sorted descending."""
    lam = np.asarray(lam, dtype=float)
    c = lam[..., 0] - lam[..., 2] - 2.0 * np.sqrt(lam[..., 1] * lam[..., 3])
    return np.clip(c, 0.0, 1.0)


def _ginibre(rng: np.random.Generator, shape, complex_: bool) -> np.ndarray:
    if complex_:
        z = rng.standard_normal(shape + (2,))
        return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)
    return rng.standard_normal(shape)


def _haar_from_ginibre(z: np.ndarray) -> np.ndarray:
    # QR alone is biased; rescaling columns by the phases of diag(R) makes it exact Haar.
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    phase = d / np.abs(d)
    return q * phase[..., None, :]


def haar_orthogonal(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Haar-distributed element of O(4); shape ``(4, 4)`` or ``(size, 4, 4)``."""
    shape = (4, 4) if size is None else (size, 4, 4)
    return _haar_from_ginibre(_ginibre(rng, shape, complex_=False))


def haar_unitary(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Haar-distributed element of U(4); shape ``(4, 4)`` or ``(size, 4, 4)``."""
    shape = (4, 4) if size is None else (size, 4, 4)
    return _haar_from_ginibre(_ginibre(rng, shape, complex_=True))


def haar(ens: Ensemble, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    if Ensemble.parse(ens) is Ensemble.REAL:
        return haar_orthogonal(rng, size)
    return haar_unitary(rng, size)


def orbit_points(lam: np.ndarray, ens: Ensemble, rng: np.random.Generator) -> np.ndarray:
    """Conjugate each row of ``lam`` (shape ``(n, 4)``) by an independent Haar draw."""
    lam = np.asarray(lam, dtype=float)
    q = haar(ens, rng, lam.shape[0])
    rho = (q * lam[:, None, :]) @ np.conj(np.swapaxes(q, -1, -2))
    # symmetrize away rounding so downstream Hermiticity checks are exact
    return 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))


def orbit_point(s: Spectrum, ens: Ensemble, rng: np.random.Generator) -> np.ndarray:
    """A Haar-random member of the spectral orbit of ``diag(s)``."""
    if not isinstance(s, Spectrum):
        s = Spectrum(tuple(s))
    return orbit_points(s.as_array()[None, :], ens, rng)[0]


def partial_transpose(rho: np.ndarray) -> np.ndarray:
    """Transpose the second qubit: ``[(i,j),(k,l)] -> [(i,l),(k,j)]``.

    Index convention is ``row = 2*i + j``.  Accepts a trailing ``(4, 4)`` shape
    with any leading batch axes.
    """
    rho = np.asarray(rho)
    lead = rho.shape[:-2]
    t = rho.reshape(lead + (2, 2, 2, 2))
    n = len(lead)
    axes = tuple(range(n)) + (n, n + 3, n + 2, n + 1)
    return t.transpose(axes).reshape(lead + (4, 4))


def partial_transpose_first(rho: np.ndarray) -> np.ndarray:
    """Transpose the first qubit: ``[(i,j),(k,l)] -> [(k,j),(i,l)]``."""
    rho = np.asarray(rho)
    lead = rho.shape[:-2]
    t = rho.reshape(lead + (2, 2, 2, 2))
    n = len(lead)
    axes = tuple(range(n)) + (n + 2, n + 1, n, n + 3)
    return t.transpose(axes).reshape(lead + (4, 4))


def _check_hermitian(m: np.ndarray, tol: float = _HERM_TOL) -> None:
    if m.shape[-2:] != (4, 4):
        raise ValidationError(f"expected 4x4 matrices, got shape {m.shape}")
    dev = np.abs(m - np.conj(np.swapaxes(m, -1, -2)))
    if dev.size and dev.max() > tol:
        raise ValidationError(f"matrix is not Hermitian (max deviation {dev.max():.3g})")


def check_density_matrix(rho: np.ndarray) -> np.ndarray:
    """Validate a 4x4 density matrix and return it as an array."""
    rho = np.asarray(rho)
    _check_hermitian(rho, 1e-12)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > 1e-12:
        raise ValidationError(f"trace is {tr!r}, not 1")
    if hermitian_eigenvalues(rho)[-1] < -1e-10:
        raise ValidationError("density matrix is not positive semidefinite")
    return rho


def _jacobi_sweeps(a: np.ndarray, tol: float, max_sweeps: int) -> np.ndarray:
    n = a.shape[-1]
    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]
    idx = np.arange(a.shape[0])
    for _ in range(max_sweeps):
        off = np.abs(a[:, np.triu_indices(n, 1)[0], np.triu_indices(n, 1)[1]])
        if off.max(initial=0.0) < tol:
            break
        for p, q in pairs:
            apq = a[:, p, q]
            r = np.abs(apq)
            active = r > 0.0
            if not active.any():
                continue
            safe_r = np.where(active, r, 1.0)
            phase = np.where(active, apq / safe_r, 1.0)
            app = a[:, p, p].real
            aqq = a[:, q, q].real
            theta = (aqq - app) / (2.0 * safe_r)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(theta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            # G = diag(.., conj(phase) at q, ..) @ R  zeroes a[p, q]
            g = np.zeros_like(a)
            g[:, range(n), range(n)] = 1.0
            g[idx, p, p] = c
            g[idx, q, q] = c * np.conj(phase)
            g[idx, p, q] = s
            g[idx, q, p] = -s * np.conj(phase)
            a = np.conj(np.swapaxes(g, -1, -2)) @ a @ g
    return a


def hermitian_eigenvalues(m: np.ndarray, *, tol: float = 1e-13, max_sweeps: int = 50) -> np.ndarray:
    """Eigenvalues of a 4x4 Hermitian matrix (or a stack), sorted descending.

    Cyclic Jacobi rotations; complex entries are handled with phase-adjusted
    real rotations.  Converges when every off-diagonal magnitude is below
    ``tol`` times the matrix scale.
    """
    m = np.asarray(m)
    single = m.ndim == 2
    _check_hermitian(m)
    a = m.reshape((-1, 4, 4))
    a = a.astype(complex if np.iscomplexobj(a) else float, copy=True)
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    a = _jacobi_sweeps(a, tol * scale, max_sweeps)
    ev = np.sort(np.diagonal(a, axis1=-2, axis2=-1).real, axis=-1)[..., ::-1]
    return ev[0] if single else ev.reshape(m.shape[:-2] + (4,))


def pt_determinants(rho: np.ndarray) -> np.ndarray:
    """Determinant of the partial transpose for a stack of density matrices."""
    return np.linalg.det(partial_transpose(rho)).real


def separable_mask(rho: np.ndarray, eps_det: float = EPS_DET, eps_eig: float = EPS_EIG) -> np.ndarray:
    """Batched PPT verdict via the sign of ``det(rho^PT)``.

    A two-qubit partial transpose has at most one negative eigenvalue, so the
    determinant sign decides PPT.  Inside the band ``|det| <= eps_det`` the
    determinant is uninformative (nearly product pure states have
    ``det = -(ab)^3``), and the minimum eigenvalue decides instead, with
    ``>= -eps_eig`` counted as separable.
    """
    pt = partial_transpose(rho)
    det = np.linalg.det(pt).real
    verdict = det >= 0.0
    band = np.abs(det) <= eps_det
    if band.any():
        verdict[band] = hermitian_eigenvalues(pt[band])[..., -1] >= -eps_eig
    return verdict


@dataclass(frozen=True)
class PPTVerdict:
    separable: bool
    pt_determinant: float
    min_pt_eigenvalue: float
    near_boundary: bool

    def __bool__(self) -> bool:
        return self.separable


def is_separable(
    rho: np.ndarray, eps_det: float = EPS_DET, eps_eig: float = EPS_EIG
) -> PPTVerdict:
    """Peres-Horodecki test, exact for two qubits.

    The verdict comes from the determinant sign, or from the Jacobi minimum
    eigenvalue inside the determinant's indeterminate band; both numbers are
    reported.
    """
    rho = check_density_matrix(rho)
    pt = partial_transpose(rho)
    det = float(np.linalg.det(pt).real)
    min_eig = float(hermitian_eigenvalues(pt)[-1])
    near = abs(det) <= eps_det
    return PPTVerdict(
        separable=(min_eig >= -eps_eig) if near else det >= 0.0,
        pt_determinant=det,
        min_pt_eigenvalue=min_eig,
        near_boundary=near or abs(min_eig) <= eps_eig,
    )
