"""Randomized low-rank approximation algorithms.

Two families share the :class:`Approximant` container:

* range-finder methods (HMT, subspace iteration) keep ``Q`` and the small SVD
  ``Q^T A = U0 diag(s0) V0^T``;
* Nystrom-type methods (classical, Nystrom+HMT, generalized Nystrom) keep
  ``F = A X``, ``G = Y^T A`` and a :class:`~randlr.stability.CoreFactor` for
  the pseudoinverse of ``Y^T A X``. The product is never multiplied out
  unless :func:`materialize` is asked to.
"""

import enum
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import kernels, stability
from .errors import CapExceededError, DimensionError, NotSymmetricError
from .sketch import SketchKind, SketchSpec, apply_left, apply_right, generate
from .stability import CoreFactor, EpsilonPolicy

__all__ = [
    "Method",
    "Approximant",
    "NotPSDWarning",
    "default_oversampling",
    "hmt",
    "subspace_iteration",
    "nystrom_psd",
    "nystrom_hmt",
    "gn_plain",
    "gn_stabilized",
    "gn_fallback",
    "approximate",
    "apply",
    "materialize",
    "MATERIALIZE_CAP",
]

MATERIALIZE_CAP = 10**7


class Method(str, enum.Enum):
    HMT = "hmt"
    NYSTROM = "nystrom"
    NYSTROM_HMT = "nystrom-hmt"
    SUBSPACE_ITER = "subspace"
    GN_PLAIN = "gn"
    GN_STABILIZED = "sgn"

    @property
    def is_range_finder(self):
        return self in (Method.HMT, Method.SUBSPACE_ITER)


class NotPSDWarning(UserWarning):
    """The Nystrom core has clearly negative eigenvalues."""


def default_oversampling(r):
    return math.ceil(r / 2)


@dataclass(frozen=True, eq=False)
class Approximant:
    method: Method
    shape: tuple
    r: int
    ell: int = 0
    seed: int = 0
    kind: SketchKind = SketchKind.GAUSSIAN
    power: int = 0
    # Nystrom family; G is None for the symmetric methods (G = F^T)
    F: np.ndarray = field(default=None, repr=False)
    G: np.ndarray = field(default=None, repr=False)
    core: CoreFactor = field(default=None, repr=False)
    # range-finder family
    Q: np.ndarray = field(default=None, repr=False)
    U0: np.ndarray = field(default=None, repr=False)
    s0: np.ndarray = field(default=None, repr=False)
    V0: np.ndarray = field(default=None, repr=False)
    x_spec: SketchSpec = None
    y_spec: SketchSpec = None
    policy: EpsilonPolicy = None

    @property
    def row_factor(self):
        return self.F.T if self.G is None else self.G

    @property
    def report(self):
        return None if self.core is None else self.core.report

    @property
    def flagged(self):
        rep = self.report
        return bool(rep is not None and rep.flagged)

    @property
    def path(self):
        return None if self.core is None else self.core.path

    @property
    def memory_entries(self):
        """Number of stored floats."""
        if self.method.is_range_finder:
            return self.Q.size + self.U0.size + self.s0.size + self.V0.size
        arrays = [self.F, self.G] + list(self.core.arrays().values())
        return sum(a.size for a in arrays if a is not None)

    def factors(self):
        """``(L, Rt)`` with ``A_hat = L @ Rt``; O((m+n) k^2) work, for measurement."""
        if self.method.is_range_finder:
            return self.Q @ self.U0, self.s0[:, None] * self.V0.T
        return self.F, self.core.apply(self.row_factor)

    def singular_values(self):
        if not self.method.is_range_finder:
            raise TypeError("generalized Nystrom output carries no approximate SVD")
        return self.s0.copy()


def _check_rank(A, r, ell=0):
    m, n = A.shape
    if r < 1 or r + ell > min(m, n):
        raise DimensionError(f"need 1 <= r and r + ell <= min(m, n); got r={r}, ell={ell} for {m}x{n}")


def _transpose_mul(A, Q):
    """A^T Q as a dense array, for dense or sparse A."""
    return kernels.matmul(A, Q, transpose_a=True)


def hmt(A, r, power=0, seed=0, kind=SketchKind.GAUSSIAN):
    """Randomized range finder; ``power >= 1`` turns it into subspace iteration.

    Subspace iteration re-orthonormalizes after every multiplication by A or A^T.
    """
    _check_rank(A, r)
    if power < 0:
        raise ValueError("power must be >= 0")
    m, n = A.shape
    spec = SketchSpec(kind, n, r, seed, stream=0)
    Q, _ = kernels.thin_qr(apply_right(A, generate(spec)))
    for _ in range(power):
        W, _ = kernels.thin_qr(_transpose_mul(A, Q))
        Q, _ = kernels.thin_qr(kernels.matmul(A, W))
    B = _transpose_mul(A, Q).T  # Q^T A
    U0, s0, V0 = kernels.svd(B)
    return Approximant(
        Method.HMT if power == 0 else Method.SUBSPACE_ITER, (m, n), r, 0, seed,
        SketchKind.parse(kind), power, Q=Q, U0=U0, s0=s0, V0=V0, x_spec=spec,
    )


def subspace_iteration(A, r, power=2, seed=0, kind=SketchKind.GAUSSIAN):
    if power < 1:
        raise ValueError("subspace iteration needs power >= 1")
    return hmt(A, r, power=power, seed=seed, kind=kind)


def _check_symmetric(A):
    m, n = A.shape
    if m != n:
        raise NotSymmetricError(f"Nystrom needs a square matrix, got {m}x{n}")
    asym = A - A.T
    skew = kernels.fro_norm(asym) if sp.issparse(asym) else float(np.linalg.norm(asym))
    if skew > 1e-8 * kernels.fro_norm(A):
        raise NotSymmetricError(f"matrix is not symmetric (||A - A^T||_F = {skew:.3e})")


def _nystrom_core(core_matrix, policy):
    C = 0.5 * (core_matrix + core_matrix.T)
    lam = np.linalg.eigvalsh(C)
    if lam.size and lam[0] < -1e-8 * max(abs(lam[-1]), abs(lam[0])):
        warnings.warn("Nystrom core is indefinite; input is likely not PSD", NotPSDWarning, stacklevel=3)
    return stability.core_with_fallback(core_matrix, policy)


def nystrom_psd(A, r, seed=0, kind=SketchKind.GAUSSIAN, policy=None):
    """Classical Nystrom ``A X (X^T A X)^+ (A X)^T`` for symmetric PSD ``A``."""
    _check_symmetric(A)
    _check_rank(A, r)
    n = A.shape[0]
    spec = SketchSpec(kind, n, r, seed, stream=0)
    X = generate(spec)
    F = apply_right(A, X)
    M = apply_left(X, F)  # X^T A X
    core = _nystrom_core(M, policy)
    return Approximant(Method.NYSTROM, (n, n), r, 0, seed, SketchKind.parse(kind),
                       F=F, core=core, x_spec=spec, y_spec=spec, policy=policy)


def nystrom_hmt(A, r, seed=0, kind=SketchKind.GAUSSIAN, policy=None):
    """Nystrom with the orthonormalized range-finder basis ``Q = orth(A Omega)`` as sketch."""
    _check_symmetric(A)
    _check_rank(A, r)
    n = A.shape[0]
    spec = SketchSpec(kind, n, r, seed, stream=0)
    Q, _ = kernels.thin_qr(apply_right(A, generate(spec)))
    F = kernels.matmul(A, Q)
    M = Q.T @ F
    core = _nystrom_core(M, policy)
    return Approximant(Method.NYSTROM_HMT, (n, n), r, 0, seed, SketchKind.parse(kind),
                       F=F, core=core, x_spec=spec, policy=policy)


def _gn_sketches(A, r, ell, seed, kind):
    if ell is None:
        ell = default_oversampling(r)
    if ell < 1:
        raise DimensionError("oversampling ell must be positive")
    _check_rank(A, r, ell)
    m, n = A.shape
    x_spec = SketchSpec(kind, n, r, seed, stream=0)
    y_spec = SketchSpec(kind, m, r + ell, seed, stream=1)
    X = generate(x_spec)
    F = apply_right(A, X)
    G = apply_left(generate(y_spec), A)
    M = apply_right(G, X)  # (Y^T A) X
    return ell, x_spec, y_spec, F, G, M


def _gn(A, r, ell, seed, kind, method, build):
    ell, x_spec, y_spec, F, G, M = _gn_sketches(A, r, ell, seed, kind)
    core = build(M)
    return Approximant(method, A.shape, r, ell, seed, SketchKind.parse(kind),
                       F=F, G=G, core=core, x_spec=x_spec, y_spec=y_spec)


def gn_plain(A, r, ell=None, seed=0, kind=SketchKind.GAUSSIAN, threshold=1.0):
    """Plain generalized Nystrom: ``((A X) R^{-1}) (Q^T (Y^T A))``.

    The instability report is attached but never acted on here. Raises
    :class:`~randlr.errors.SingularCoreError` on an exactly singular R.
    """
    def build(M):
        core = stability.build_core_plain(M)
        return replace(core, report=stability.detect(core.T, threshold))

    return _gn(A, r, ell, seed, kind, Method.GN_PLAIN, build)


def gn_stabilized(A, r, ell=None, policy=None, seed=0, kind=SketchKind.GAUSSIAN):
    """Stabilized generalized Nystrom with an epsilon-pseudoinverse core."""
    policy = policy or EpsilonPolicy()

    def build(M):
        eps = policy.resolve(kernels.spectral_norm_estimate(M))
        core = stability.build_core_truncated(M, eps, policy.path)
        # the detector only reports here; truncation already happened
        return replace(core, report=stability.detect(kernels.thin_qr(M)[1]))

    approx = _gn(A, r, ell, seed, kind, Method.GN_STABILIZED, build)
    return replace(approx, policy=policy)


def gn_fallback(A, r, ell=None, policy=None, seed=0, kind=SketchKind.GAUSSIAN, threshold=1.0):
    """Plain GN that switches to the stabilized core when ``detect`` fires."""
    policy = policy or EpsilonPolicy()
    approx = _gn(A, r, ell, seed, kind, Method.GN_PLAIN,
                 lambda M: stability.core_with_fallback(M, policy, threshold))
    return replace(approx, policy=policy)


def approximate(A, method, r, ell=None, seed=0, kind=SketchKind.GAUSSIAN, policy=None,
                power=None, fallback=False):
    """Dispatch by method name (``hmt``, ``nystrom``, ``nystrom-hmt``, ``subspace``, ``gn``, ``sgn``)."""
    method = Method(method)
    if method is Method.HMT:
        return hmt(A, r, power=power or 0, seed=seed, kind=kind)
    if method is Method.SUBSPACE_ITER:
        return subspace_iteration(A, r, power=2 if power is None else power, seed=seed, kind=kind)
    if method is Method.NYSTROM:
        return nystrom_psd(A, r, seed=seed, kind=kind, policy=policy)
    if method is Method.NYSTROM_HMT:
        return nystrom_hmt(A, r, seed=seed, kind=kind, policy=policy)
    if method is Method.GN_STABILIZED:
        return gn_stabilized(A, r, ell, policy=policy, seed=seed, kind=kind)
    if fallback:
        return gn_fallback(A, r, ell, policy=policy, seed=seed, kind=kind)
    return gn_plain(A, r, ell, seed=seed, kind=kind)


def apply(approx, W, side="right"):
    """``A_hat @ W`` (side='right') or ``W @ A_hat`` (side='left') in factored form."""
    W = np.asarray(W, dtype=np.float64)
    m, n = approx.shape
    if side == "right":
        if W.shape[0] != n:
            raise DimensionError(f"W must have {n} rows, got {W.shape[0]}")
        if approx.method.is_range_finder:
            return approx.Q @ (approx.U0 @ (approx.s0[:, None] * (approx.V0.T @ W)))
        return approx.F @ approx.core.apply(approx.row_factor @ W)
    if side == "left":
        if W.shape[-1] != m:
            raise DimensionError(f"W must have {m} columns, got {W.shape[-1]}")
        if approx.method.is_range_finder:
            return (((W @ approx.Q) @ approx.U0) * approx.s0[None, :]) @ approx.V0.T
        return approx.core.apply_left(W @ approx.F) @ approx.row_factor
    raise ValueError("side must be 'right' or 'left'")


def materialize(approx, cap=MATERIALIZE_CAP):
    """Explicit ``m x n`` approximant, formed as ``(F Z T^{-1}) (Q^T G)``."""
    m, n = approx.shape
    if m * n > cap:
        raise CapExceededError(f"{m}x{n} exceeds the materialization cap of {cap} entries")
    if approx.method.is_range_finder:
        return (approx.Q @ approx.U0) @ (approx.s0[:, None] * approx.V0.T)
    core = approx.core
    FZ = approx.F if core.Z is None else approx.F @ core.Z
    return core.solve_right(FZ) @ (core.Q.T @ approx.row_factor)
