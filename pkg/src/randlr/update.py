"""Single-pass maintenance of a generalized Nystrom approximant.

The state keeps the sketches ``F = A X``, ``G = Y^T A`` and the raw core
``Y^T A X``. Appending rows or columns, or adding a perturbation ``E``, only
touches the new data; the core is refactorized afterwards at O(r^3) cost.

Sketches grow as block matrices. Every block ("tile") is an independent
sketch operator drawn from its own Philox stream, and the next free stream
number is part of the state, so replaying the same updates from a saved
state reproduces the same numbers.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import kernels, stability
from .decomp import Approximant, Method, default_oversampling
from .errors import DimensionError
from .sketch import SketchKind, SketchSpec, apply_left, apply_right, generate
from .stability import EpsilonPolicy

__all__ = [
    "Tile",
    "BlockSketch",
    "UpdatableState",
    "append_rows",
    "append_cols",
    "additive_update",
    "resample_increase_rank",
]


@dataclass(frozen=True)
class Tile:
    row0: int
    col0: int
    spec: SketchSpec

    @property
    def rows(self):
        return self.spec.ambient_dim

    @property
    def cols(self):
        return self.spec.sketch_dim

    def to_dict(self):
        return {"row0": self.row0, "col0": self.col0, "spec": self.spec.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["row0"]), int(d["col0"]), SketchSpec.from_dict(d["spec"]))


@dataclass(frozen=True, eq=False)
class BlockSketch:
    """A sketch matrix assembled from tiles that partition its rows and columns."""

    shape: tuple
    tiles: tuple
    _ops: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def single(cls, spec):
        return cls((spec.ambient_dim, spec.sketch_dim), (Tile(0, 0, spec),))

    def _op(self, tile):
        op = self._ops.get(tile.spec)
        if op is None:
            op = self._ops[tile.spec] = generate(tile.spec)
        return op

    def with_tile(self, tile, shape):
        return BlockSketch(shape, self.tiles + (tile,), dict(self._ops))

    def apply_right(self, A):
        """``A @ X``."""
        if A.shape[1] != self.shape[0]:
            raise DimensionError(f"operand has {A.shape[1]} columns, sketch has {self.shape[0]} rows")
        out = np.zeros((A.shape[0], self.shape[1]))
        for t in self.tiles:
            block = A[:, t.row0:t.row0 + t.rows]
            out[:, t.col0:t.col0 + t.cols] += apply_right(block, self._op(t))
        return out

    def apply_left(self, A):
        """``Y^T @ A``."""
        if A.shape[0] != self.shape[0]:
            raise DimensionError(f"operand has {A.shape[0]} rows, sketch has {self.shape[0]} rows")
        out = np.zeros((self.shape[1], A.shape[1]))
        for t in self.tiles:
            block = A[t.row0:t.row0 + t.rows, :]
            out[t.col0:t.col0 + t.cols, :] += apply_left(self._op(t), block)
        return out

    def dense(self):
        out = np.zeros(self.shape)
        for t in self.tiles:
            out[t.row0:t.row0 + t.rows, t.col0:t.col0 + t.cols] = self._op(t).dense()
        return out

    def to_dict(self):
        return {"shape": list(self.shape), "tiles": [t.to_dict() for t in self.tiles]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(int(v) for v in d["shape"]), tuple(Tile.from_dict(t) for t in d["tiles"]))


@dataclass(frozen=True, eq=False)
class UpdatableState:
    F: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    core_raw: np.ndarray = field(repr=False)
    X: BlockSketch
    Y: BlockSketch
    r: int
    ell: int
    seed: int
    kind: SketchKind
    next_stream: int = 2
    mode: str = "stabilized"  # or "plain" / "fallback"
    policy: EpsilonPolicy = field(default_factory=EpsilonPolicy)

    @property
    def shape(self):
        return (self.F.shape[0], self.G.shape[1])

    @classmethod
    def from_matrix(cls, A, r, ell=None, seed=0, kind=SketchKind.GAUSSIAN, mode="stabilized", policy=None):
        """Sketch ``A`` once (X from stream 0, Y from stream 1)."""
        ell = default_oversampling(r) if ell is None else ell
        m, n = A.shape
        if r < 1 or ell < 1 or r + ell > min(m, n):
            raise DimensionError(f"need r >= 1, ell >= 1, r + ell <= min(m, n); got r={r}, ell={ell}")
        kind = SketchKind.parse(kind)
        X = BlockSketch.single(SketchSpec(kind, n, r, seed, 0))
        Y = BlockSketch.single(SketchSpec(kind, m, r + ell, seed, 1))
        F = X.apply_right(A)
        G = Y.apply_left(A)
        return cls(F, G, X.apply_right(G), X, Y, r, ell, seed, kind, 2, mode, policy or EpsilonPolicy())

    def _fresh_spec(self, ambient, sketch_dim):
        kind = self.kind if sketch_dim <= ambient else SketchKind.GAUSSIAN
        return SketchSpec(kind, ambient, sketch_dim, self.seed, self.next_stream)

    def build_core(self):
        M = self.core_raw
        if self.mode == "plain":
            core = stability.build_core_plain(M)
            return replace(core, report=stability.detect(core.T))
        if self.mode == "fallback":
            return stability.core_with_fallback(M, self.policy)
        eps = self.policy.resolve(kernels.spectral_norm_estimate(M))
        core = stability.build_core_truncated(M, eps, self.policy.path)
        return replace(core, report=stability.detect(kernels.thin_qr(M)[1]))

    def approximant(self):
        """Snapshot as an :class:`Approximant` (refactorizes the core)."""
        method = Method.GN_STABILIZED if self.mode == "stabilized" else Method.GN_PLAIN
        return Approximant(method, self.shape, self.r, self.ell, self.seed, self.kind,
                           F=self.F, G=self.G, core=self.build_core(), policy=self.policy)


def append_rows(state, B):
    """Approximant of ``[A; B]`` from ``B`` alone, with a fresh Y block for the new rows."""
    B = B if sp.issparse(B) else np.atleast_2d(np.asarray(B, dtype=np.float64))
    m, n = state.shape
    if B.shape[1] != n:
        raise DimensionError(f"appended rows have {B.shape[1]} columns, expected {n}")
    mh = B.shape[0]
    if mh == 0:
        return state
    tile = Tile(m, 0, state._fresh_spec(mh, state.Y.shape[1]))
    Y = state.Y.with_tile(tile, (m + mh, state.Y.shape[1]))
    YtB = apply_left(Y._op(tile), B)
    return replace(
        state,
        F=np.vstack([state.F, state.X.apply_right(B)]),
        G=state.G + YtB,
        core_raw=state.core_raw + state.X.apply_right(YtB),
        Y=Y,
        next_stream=state.next_stream + 1,
    )


def append_cols(state, B):
    """Approximant of ``[A, B]`` from ``B`` alone, with a fresh X block for the new columns."""
    B = B if sp.issparse(B) else np.atleast_2d(np.asarray(B, dtype=np.float64))
    m, n = state.shape
    if B.shape[0] != m:
        raise DimensionError(f"appended columns have {B.shape[0]} rows, expected {m}")
    nh = B.shape[1]
    if nh == 0:
        return state
    tile = Tile(n, 0, state._fresh_spec(nh, state.X.shape[1]))
    X = state.X.with_tile(tile, (n + nh, state.X.shape[1]))
    BXt = apply_right(B, X._op(tile))
    YtB = state.Y.apply_left(B)
    return replace(
        state,
        F=state.F + BXt,
        G=np.hstack([state.G, YtB]),
        core_raw=state.core_raw + apply_right(YtB, X._op(tile)),
        X=X,
        next_stream=state.next_stream + 1,
    )


def additive_update(state, E):
    """Sketches of ``A + E``: one pass over ``E`` only."""
    if E.shape != state.shape:
        raise DimensionError(f"perturbation has shape {E.shape}, state is {state.shape}")
    YtE = state.Y.apply_left(E)
    return replace(
        state,
        F=state.F + state.X.apply_right(E),
        G=state.G + YtE,
        core_raw=state.core_raw + state.X.apply_right(YtE),
    )


def resample_increase_rank(state, A, delta_r):
    """Grow the rank by ``delta_r``; one pass over the current ``A`` for the new columns.

    Oversampling grows by ``ceil(delta_r * ell / r)`` to keep ``ell/r`` fixed.
    """
    if delta_r < 0:
        raise ValueError("delta_r must be non-negative")
    if delta_r == 0:
        return state
    m, n = state.shape
    if A.shape != (m, n):
        raise DimensionError(f"A has shape {A.shape}, state is {state.shape}")
    delta_ell = math.ceil(delta_r * state.ell / state.r)
    r, ell = state.r + delta_r, state.ell + delta_ell
    if r + ell > min(m, n):
        raise DimensionError(f"rank cap exceeded: r + ell = {r + ell} > {min(m, n)}")
    kx, ky = state.X.shape[1], state.Y.shape[1]
    x_tile = Tile(0, kx, state._fresh_spec(n, delta_r))
    X = state.X.with_tile(x_tile, (n, kx + delta_r))
    y_spec = SketchSpec(state._fresh_spec(m, delta_ell).kind, m, delta_ell, state.seed, state.next_stream + 1)
    y_tile = Tile(0, ky, y_spec)
    Y = state.Y.with_tile(y_tile, (m, ky + delta_ell))

    F_new = apply_right(A, X._op(x_tile))
    G_new = apply_left(Y._op(y_tile), A)
    top = np.hstack([state.core_raw, apply_right(state.G, X._op(x_tile))])
    core_raw = np.vstack([top, X.apply_right(G_new)])
    return replace(
        state,
        F=np.hstack([state.F, F_new]),
        G=np.vstack([state.G, G_new]),
        core_raw=core_raw,
        X=X,
        Y=Y,
        r=r,
        ell=ell,
        next_stream=state.next_stream + 2,
    )
