"""Dense matrix helpers, a deterministic seeded RNG, and the regularized
least-squares solver used for prototype swapping.

All numerical work is done in 64-bit floats on numpy arrays. The binary
matrix format ("GZM1") stores 32-bit floats which are widened on load.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve

from .errors import (
    DataFormatError,
    DegenerateVectorError,
    ShapeError,
    SingularMatrixError,
    ValidationError,
)

# Norms below this are treated as zero.
EPS_NORM = 1e-12

# Cholesky pivots below this mark the Gram matrix as singular.
EPS_PIVOT = 1e-12

GZM_MAGIC = b"GZSLMAT1"


# ---------------------------------------------------------------------------
# Deterministic RNG
# ---------------------------------------------------------------------------
class Rng:
    """Seeded random generator with platform-stable streams.

    Two instances built from the same seed produce byte-identical draw
    sequences. ``derive`` creates an independent substream identified by
    integer keys, so callers can re-create e.g. the epoch-3 shuffle stream
    without replaying earlier consumption.
    """

    def __init__(self, seed: int, _keys: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._keys = _keys
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=_keys)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def derive(self, *keys: int) -> "Rng":
        """Independent substream for (seed, *keys); deterministic and
        insensitive to how much this instance has already been consumed."""
        return Rng(self.seed, self._keys + tuple(int(k) for k in keys))

    # Thin delegation; keeps call sites uniform.
    def standard_normal(self, shape=None):
        return self.generator.standard_normal(shape)

    def random(self, shape=None):
        return self.generator.random(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def bytes(self, n: int) -> bytes:
        return self.generator.bytes(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, keys={self._keys})"


# ---------------------------------------------------------------------------
# Array validation
# ---------------------------------------------------------------------------
def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Convert to a C-contiguous float64 2-D array, rejecting NaN/Inf."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} contains non-finite entries")
    return m


def as_vector(values, name: str = "vector") -> np.ndarray:
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} contains non-finite entries")
    return m


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------
def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two vectors, in [-1, 1]."""
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape != v.shape:
        raise ShapeError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < EPS_NORM or nv < EPS_NORM:
        raise DegenerateVectorError("cosine similarity of a (near-)zero vector")
    s = float(u @ v / (nu * nv))
    return min(1.0, max(-1.0, s))


def cholesky_spd(gram: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises SingularMatrixError when the factorization fails or any pivot
    (squared diagonal entry of the factor) falls below EPS_PIVOT.
    """
    try:
        lower = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"matrix is not positive definite: {exc}") from exc
    if np.any(np.diag(lower) ** 2 < EPS_PIVOT):
        raise SingularMatrixError("Cholesky pivot below tolerance; matrix is singular")
    return lower


def ridge_solve(phi_a, phi_b, lambda_beta: float) -> np.ndarray:
    """Closed-form Tikhonov-regularized linear map between prototype domains.

    Given prototypes as columns of ``phi_a`` (A_dim x n) and ``phi_b``
    (B_dim x n), returns the B_dim x A_dim matrix

        beta = phi_b phi_a^T (phi_a phi_a^T + lambda_beta I)^{-1},

    the minimizer of ||phi_b - beta phi_a||_F^2 + lambda_beta ||beta||_F^2.
    With lambda_beta = 0 the Gram matrix must be nonsingular.
    """
    phi_a = as_matrix(phi_a, "phi_a")
    phi_b = as_matrix(phi_b, "phi_b")
    if phi_a.shape[1] != phi_b.shape[1]:
        raise ShapeError(
            f"prototype count mismatch: {phi_a.shape[1]} vs {phi_b.shape[1]}"
        )
    lambda_beta = float(lambda_beta)
    if lambda_beta < 0:
        raise ValidationError(f"lambda_beta must be >= 0, got {lambda_beta}")
    a_dim = phi_a.shape[0]
    gram = phi_a @ phi_a.T + lambda_beta * np.eye(a_dim)
    lower = cholesky_spd(gram)
    cross = phi_b @ phi_a.T
    # Solve beta @ gram = cross, i.e. gram @ beta.T = cross.T.
    beta_t = cho_solve((lower, True), cross.T, check_finite=False)
    return np.ascontiguousarray(beta_t.T)


# ---------------------------------------------------------------------------
# Matrix file I/O
# ---------------------------------------------------------------------------
def save_matrix(path, matrix) -> None:
    """Write a matrix in the GZM1 binary format.

    Layout: 8-byte magic "GZSLMAT1", rows and cols as little-endian uint64,
    then rows*cols little-endian float32 values in row-major order.
    """
    m = as_matrix(matrix)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(GZM_MAGIC)
        fh.write(struct.pack("<QQ", m.shape[0], m.shape[1]))
        fh.write(m.astype("<f4").tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    """Read a matrix from a GZM1 binary file or a headerless CSV file.

    CSV files hold one row per line. Values are widened to float64.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(len(GZM_MAGIC))
        if head == GZM_MAGIC:
            dims = fh.read(16)
            if len(dims) != 16:
                raise DataFormatError(f"{path}: truncated GZM1 header")
            rows, cols = struct.unpack("<QQ", dims)
            payload = fh.read()
            expected = rows * cols * 4
            if len(payload) != expected:
                raise DataFormatError(
                    f"{path}: expected {expected} payload bytes, found {len(payload)}"
                )
            data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
            m = data.reshape(rows, cols)
        else:
            m = _load_csv_matrix(path)
    if not np.all(np.isfinite(m)):
        raise DataFormatError(f"{path}: non-finite values in matrix")
    return np.ascontiguousarray(m)


def _load_csv_matrix(path: Path) -> np.ndarray:
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, record in enumerate(csv.reader(fh), start=1):
                if not record:
                    continue
                try:
                    rows.append([float(x) for x in record])
                except ValueError as exc:
                    raise DataFormatError(f"{path}:{line_no}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path}: neither GZM1 nor text CSV") from exc
    if not rows:
        raise DataFormatError(f"{path}: empty matrix file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DataFormatError(f"{path}: ragged CSV rows")
    return np.asarray(rows, dtype=np.float64)


def save_matrix_csv(path, matrix) -> None:
    m = as_matrix(matrix)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for row in m:
            writer.writerow([repr(float(x)) for x in row])


def load_int_lines(path) -> np.ndarray:
    """Read one integer per line (labels, split tags)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(int(line))
            except ValueError as exc:
                raise DataFormatError(f"{path}:{line_no}: not an integer: {line!r}") from exc
    return np.asarray(values, dtype=np.int64)


def save_int_lines(path, values) -> None:
    values = np.asarray(values, dtype=np.int64)
    with open(path, "w", encoding="utf-8") as fh:
        for v in values:
            fh.write(f"{int(v)}\n")
