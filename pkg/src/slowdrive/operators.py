"""Dense complex operator primitives: Hermitian matrices, spectral decompositions,
unitary exponentials, and the operator (largest-singular-value) norm.

Everything is finite-dimensional and dense. All types are immutable after
construction and all functions are pure, so values are safe to share across
threads.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "OperatorError",
    "EigensolverError",
    "HermitianOperator",
    "UnitaryOperator",
    "SpectralLevel",
    "SpectralDecomposition",
    "operator_norm",
    "hermitian_eigendecomposition",
    "unitary_exponential",
    "format_matrix",
    "parse_matrix",
    "write_matrix",
    "read_matrix",
    "pauli",
    "direct_sum",
]

HERMITICITY_RTOL = 1e-12
DECOMPOSITION_TOL = 1e-10
DEFAULT_DRIFT_TOL = 1e-8


class OperatorError(ValueError):
    """Invalid operator data (non-square, non-finite, non-Hermitian, ...)."""


class EigensolverError(RuntimeError):
    """Eigendecomposition failed or did not meet its residual contract."""


def _as_square_complex(entries) -> np.ndarray:
    a = np.asarray(entries, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise OperatorError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 1:
        raise OperatorError("dimension must be >= 1")
    if not np.all(np.isfinite(a.view(float))):
        raise OperatorError("matrix entries must be finite")
    return a


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class HermitianOperator:
    """A Hermitian matrix, exactly symmetrized at construction.

    Construction rejects input whose anti-Hermitian part exceeds
    ``HERMITICITY_RTOL`` relative to the max-entry scale.
    """

    matrix: np.ndarray

    def __post_init__(self):
        a = _as_square_complex(self.matrix)
        scale = np.abs(a).max()
        defect = np.abs(a - a.conj().T).max()
        if scale > 0 and defect > HERMITICITY_RTOL * scale:
            raise OperatorError(
                f"matrix is not Hermitian: max|A - A†| = {defect:.3e} "
                f"exceeds {HERMITICITY_RTOL:.0e} * max|A| = {HERMITICITY_RTOL * scale:.3e}"
            )
        object.__setattr__(self, "matrix", _freeze(0.5 * (a + a.conj().T)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def norm(self) -> float:
        """Spectral norm, computed from the (real) eigenvalues."""
        return float(np.abs(np.linalg.eigvalsh(self.matrix)).max())


@dataclass(frozen=True)
class UnitaryOperator:
    """A matrix together with its measured unitarity drift ||U†U - 1||."""

    matrix: np.ndarray
    drift: float = field(init=False)
    drift_tol: float = DEFAULT_DRIFT_TOL

    def __post_init__(self):
        a = _as_square_complex(self.matrix)
        drift = operator_norm(a.conj().T @ a - np.eye(a.shape[0]))
        if drift > self.drift_tol:
            raise OperatorError(
                f"unitarity drift {drift:.3e} exceeds tolerance {self.drift_tol:.3e}"
            )
        object.__setattr__(self, "matrix", _freeze(a))
        object.__setattr__(self, "drift", drift)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dagger(self) -> np.ndarray:
        return self.matrix.conj().T


@dataclass(frozen=True)
class SpectralLevel:
    eigenvalue: float
    multiplicity: int
    projection: np.ndarray  # rank-`multiplicity` orthogonal projection


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues clustered into distinct levels with orthogonal projections.

    Invariants (validated at construction, all at 1e-10):
    the projections are idempotent, mutually orthogonal, and sum to the
    identity; sum(E * P_E) reconstructs the operator; level eigenvalues are
    strictly increasing with gaps > cluster_tol.
    """

    levels: tuple[SpectralLevel, ...]
    cluster_tol: float
    operator: np.ndarray  # the decomposed matrix, kept for residual checks

    def __post_init__(self):
        dim = self.operator.shape[0]
        eye = np.eye(dim)
        acc = np.zeros((dim, dim), dtype=complex)
        rebuilt = np.zeros((dim, dim), dtype=complex)
        values = [lv.eigenvalue for lv in self.levels]
        for i, lv in enumerate(self.levels):
            p = lv.projection
            if operator_norm(p @ p - p) > DECOMPOSITION_TOL:
                raise EigensolverError(f"projection {i} is not idempotent")
            for other in self.levels[i + 1:]:
                if operator_norm(p @ other.projection) > DECOMPOSITION_TOL:
                    raise EigensolverError("projections are not mutually orthogonal")
            acc += p
            rebuilt += lv.eigenvalue * p
        if operator_norm(acc - eye) > DECOMPOSITION_TOL:
            raise EigensolverError("projections do not sum to the identity")
        scale = max(operator_norm(self.operator), 1.0)
        residual = operator_norm(rebuilt - self.operator)
        if residual > DECOMPOSITION_TOL * scale:
            raise EigensolverError(
                f"spectral reconstruction residual {residual:.3e} exceeds "
                f"{DECOMPOSITION_TOL:.0e} relative tolerance"
            )
        gaps = np.diff(values)
        if len(gaps) and gaps.min() <= self.cluster_tol:
            raise EigensolverError("level eigenvalues are not separated by > cluster_tol")
        object.__setattr__(self, "levels", tuple(self.levels))

    @property
    def dim(self) -> int:
        return self.operator.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([lv.eigenvalue for lv in self.levels])

    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)


def operator_norm(a) -> float:
    """Largest singular value of a (not necessarily square) complex matrix."""
    a = np.asarray(a, dtype=complex)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def hermitian_eigendecomposition(
    h: HermitianOperator, cluster_tol: float | None = None
) -> SpectralDecomposition:
    """Full eigendecomposition of a Hermitian operator, clustered into levels.

    Eigenvalues closer than ``cluster_tol`` (chained) merge into a single
    level whose projection spans the joint eigenspace. Default tolerance is
    1e-9 * ||H||, so exactly degenerate levels always merge.
    """
    if cluster_tol is not None and cluster_tol < 0:
        raise ValueError("cluster_tol must be >= 0")
    a = h.matrix
    if cluster_tol is None:
        cluster_tol = 1e-9 * h.norm()
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK rarely fails
        raise EigensolverError(f"eigensolver did not converge: {exc}") from exc
    residual = operator_norm(a @ v - v * w)
    if residual > 1e-8 * max(1.0, float(np.abs(w).max(initial=0.0))):
        raise EigensolverError(f"eigenpair residual too large: {residual:.3e}")

    levels: list[SpectralLevel] = []
    start = 0
    for i in range(1, len(w) + 1):
        if i == len(w) or w[i] - w[i - 1] > cluster_tol:
            block = v[:, start:i]
            proj = block @ block.conj().T
            proj = 0.5 * (proj + proj.conj().T)
            levels.append(
                SpectralLevel(
                    eigenvalue=float(w[start:i].mean()),
                    multiplicity=i - start,
                    projection=_freeze(proj),
                )
            )
            start = i
    return SpectralDecomposition(levels=tuple(levels), cluster_tol=cluster_tol, operator=a)


def unitary_exponential(
    h: HermitianOperator,
    t: float,
    decomposition: SpectralDecomposition | None = None,
    drift_tol: float = 1e-10,
) -> UnitaryOperator:
    """exp(-i t H), assembled from the eigendecomposition of H.

    The eigendecomposition route keeps the result exactly unitary up to
    eigensolver error even for large phases t*||H||; a series would not.
    """
    if decomposition is None:
        w, v = np.linalg.eigh(h.matrix)
        u = (v * np.exp(-1j * t * w)) @ v.conj().T
    else:
        u = np.zeros((decomposition.dim, decomposition.dim), dtype=complex)
        for lv in decomposition.levels:
            u += np.exp(-1j * t * lv.eigenvalue) * lv.projection
    return UnitaryOperator(u, drift_tol=drift_tol)


# --- matrix text format -------------------------------------------------
#
# Fixture format: first line "dim N", then N lines of N entries "re+imj"
# separated by single spaces. Tokens parse with Python's complex().


def _format_entry(z: complex) -> str:
    return f"{z.real:.17g}{z.imag:+.17g}j"


def format_matrix(a) -> str:
    a = _as_square_complex(a)
    lines = [f"dim {a.shape[0]}"]
    for row in a:
        lines.append(" ".join(_format_entry(z) for z in row))
    return "\n".join(lines) + "\n"


def parse_matrix(text: str | io.TextIOBase) -> np.ndarray:
    if isinstance(text, str):
        lines = text.splitlines()
    else:
        lines = text.read().splitlines()
    lines = [ln for ln in lines if ln.strip()]
    if not lines or not lines[0].startswith("dim "):
        raise OperatorError('matrix text must start with a "dim N" line')
    n = int(lines[0].split()[1])
    if len(lines) < n + 1:
        raise OperatorError(f"expected {n} matrix rows, found {len(lines) - 1}")
    rows = []
    for ln in lines[1 : n + 1]:
        tokens = ln.split()
        if len(tokens) != n:
            raise OperatorError(f"expected {n} entries per row, found {len(tokens)}")
        rows.append([complex(tok) for tok in tokens])
    return np.array(rows, dtype=complex)


def write_matrix(path, a) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_matrix(a))


def read_matrix(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_matrix(fh.read())


def pauli(which: str) -> np.ndarray:
    """The 2x2 Pauli matrices, keyed 'x', 'y', 'z', and 'i' for the identity."""
    mats = {
        "i": np.eye(2, dtype=complex),
        "x": np.array([[0, 1], [1, 0]], dtype=complex),
        "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
        "z": np.array([[1, 0], [0, -1]], dtype=complex),
    }
    return mats[which].copy()


def direct_sum(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Block-diagonal direct sum of square complex matrices."""
    dims = [b.shape[0] for b in blocks]
    out = np.zeros((sum(dims), sum(dims)), dtype=complex)
    pos = 0
    for b, d in zip(blocks, dims):
        out[pos : pos + d, pos : pos + d] = b
        pos += d
    return out
