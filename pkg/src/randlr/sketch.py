"""Random sketch operators and their fast application.

Randomness comes from a counter-based Philox4x64-10 generator keyed by
``(seed, stream)``. Uniforms take the top 53 bits of each raw 64-bit word;
Gaussians use Box-Muller on consecutive uniform pairs. Because the mapping
from ``(seed, stream)`` to numbers is fixed, the same spec always produces
the same operator, on any platform running this code.

The subsampled DCT sketch is ``X = sqrt(n/k) * D @ C.T @ S`` where ``D`` holds
random signs, ``C`` is the orthonormal DCT-II matrix and ``S`` selects ``k``
columns uniformly without replacement, so ``X.T @ X = (n/k) I``.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import DimensionError

__all__ = [
    "SketchKind",
    "SketchSpec",
    "SketchOperator",
    "philox_words",
    "uniforms",
    "gaussians",
    "generate",
    "apply_right",
    "apply_left",
]

_MASK64 = (1 << 64) - 1


class SketchKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    DCT = "dct"
    COUNTSKETCH = "countsketch"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"subsampleddct": "dct", "srft": "dct", "count": "countsketch"}
        value = str(value).lower()
        return cls(aliases.get(value, value))


def philox_words(seed, stream, count):
    """``count`` raw 64-bit words from Philox keyed by ``(seed, stream)``."""
    bitgen = np.random.Philox(key=np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64))
    if count == 0:
        return np.zeros(0, dtype=np.uint64)
    return bitgen.random_raw(count)


def uniforms(words):
    """Map raw words to doubles in [0, 1) using their top 53 bits."""
    return (words >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def gaussians(seed, stream, count):
    """Standard normals by Box-Muller; two uniforms per pair of outputs."""
    npairs = (count + 1) // 2
    u = uniforms(philox_words(seed, stream, 2 * npairs))
    u1 = 1.0 - u[0::2]  # in (0, 1]
    u2 = u[1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.empty(2 * npairs)
    z[0::2] = rad * np.cos(theta)
    z[1::2] = rad * np.sin(theta)
    return z[:count]


@dataclass(frozen=True)
class SketchSpec:
    kind: SketchKind
    ambient_dim: int
    sketch_dim: int
    seed: int
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", SketchKind.parse(self.kind))
        if self.ambient_dim < 1 or self.sketch_dim < 1:
            raise DimensionError(f"sketch dimensions must be positive: {self.ambient_dim}x{self.sketch_dim}")
        # Gaussian blocks may be wide (used for thin appended blocks in updates)
        if self.kind is not SketchKind.GAUSSIAN and self.sketch_dim > self.ambient_dim:
            raise DimensionError(
                f"sketch_dim {self.sketch_dim} exceeds ambient_dim {self.ambient_dim}"
            )

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "ambient_dim": self.ambient_dim,
            "sketch_dim": self.sketch_dim,
            "seed": self.seed,
            "stream": self.stream,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(SketchKind.parse(d["kind"]), int(d["ambient_dim"]), int(d["sketch_dim"]),
                   int(d["seed"]), int(d.get("stream", 0)))


@dataclass(frozen=True, eq=False)
class SketchOperator:
    """A generated sketch ``X`` of shape ``(ambient_dim, sketch_dim)``."""

    spec: SketchSpec
    dense_matrix: np.ndarray = field(default=None, repr=False)  # Gaussian
    signs: np.ndarray = field(default=None, repr=False)  # DCT, CountSketch
    indices: np.ndarray = field(default=None, repr=False)  # DCT: selected cols; CS: bucket per row

    @property
    def shape(self):
        return (self.spec.ambient_dim, self.spec.sketch_dim)

    @property
    def kind(self):
        return self.spec.kind

    def _countsketch_matrix(self):
        n, k = self.shape
        return sp.csr_array((self.signs, (np.arange(n), self.indices)), shape=(n, k))

    def dense(self):
        """Explicit ``ambient_dim x sketch_dim`` matrix (testing/oracles)."""
        if self.kind is SketchKind.GAUSSIAN:
            return self.dense_matrix.copy()
        if self.kind is SketchKind.COUNTSKETCH:
            return self._countsketch_matrix().toarray()
        return apply_right(np.eye(self.spec.ambient_dim), self)


def generate(spec):
    """Build the operator described by ``spec``; a pure function of it."""
    n, k = spec.ambient_dim, spec.sketch_dim
    if spec.kind is SketchKind.GAUSSIAN:
        G = gaussians(spec.seed, spec.stream, n * k).reshape((n, k), order="F")
        return SketchOperator(spec, dense_matrix=G)

    words = philox_words(spec.seed, spec.stream, 2 * n if spec.kind is SketchKind.COUNTSKETCH else n + k)
    signs = np.where(words[:n] >> np.uint64(63), -1.0, 1.0)
    u = uniforms(words[n:])
    if spec.kind is SketchKind.COUNTSKETCH:
        buckets = np.minimum((u * k).astype(np.int64), k - 1)
        return SketchOperator(spec, signs=signs, indices=buckets)

    # partial Fisher-Yates: k draws without replacement from range(n)
    perm = np.arange(n)
    for i in range(k):
        j = i + min(int(u[i] * (n - i)), n - i - 1)
        perm[i], perm[j] = perm[j], perm[i]
    return SketchOperator(spec, signs=signs, indices=perm[:k].copy())


def apply_right(A, op):
    """``A @ X`` for dense or sparse ``A``."""
    n, k = op.shape
    if A.shape[1] != n:
        raise DimensionError(f"A has {A.shape[1]} columns but the sketch acts on {n}")
    if op.kind is SketchKind.GAUSSIAN:
        return kernels.matmul(A, op.dense_matrix)
    if op.kind is SketchKind.COUNTSKETCH:
        X = op._countsketch_matrix()
        if sp.issparse(A):
            return np.asarray((sp.csr_array(A) @ X).toarray())
        return np.asarray((X.T @ np.asarray(A, dtype=np.float64).T).T)
    # sign-scale columns, DCT along rows, keep the sampled frequencies
    if sp.issparse(A):
        AD = np.asarray(sp.csr_array(A).multiply(op.signs[None, :]).toarray())
    else:
        AD = np.asarray(A, dtype=np.float64) * op.signs[None, :]
    return math.sqrt(n / k) * kernels.dct2_rows(AD)[:, op.indices]


def apply_left(op, A):
    """``Y.T @ A`` for dense or sparse ``A`` (``op`` plays ``Y``)."""
    m, k = op.shape
    if A.shape[0] != m:
        raise DimensionError(f"A has {A.shape[0]} rows but the sketch acts on {m}")
    if op.kind is SketchKind.GAUSSIAN:
        if sp.issparse(A):
            return np.asarray((sp.csr_array(A).T @ op.dense_matrix).T)
        return kernels.matmul(op.dense_matrix, A, transpose_a=True)
    if op.kind is SketchKind.COUNTSKETCH:
        Y = op._countsketch_matrix()
        if sp.issparse(A):
            return np.asarray((Y.T @ sp.csr_array(A)).toarray())
        return np.asarray(Y.T @ np.asarray(A, dtype=np.float64))
    if sp.issparse(A):
        DA = np.asarray(sp.csr_array(A).multiply(op.signs[:, None]).toarray())
    else:
        DA = np.asarray(A, dtype=np.float64) * op.signs[:, None]
    return math.sqrt(m / k) * kernels.dct2_cols(DA)[op.indices, :]
