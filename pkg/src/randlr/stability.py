"""Construction of the (epsilon-)pseudoinverse of the sketched core matrix.

The core ``M = Y.T A X`` is small, ``(r + l) x r``, and usually very
ill-conditioned. Its pseudoinverse is never formed; a :class:`CoreFactor`
stores it as ``Z T^{-1} Q^T`` with ``Q`` orthonormal, ``T`` triangular and
``Z`` orthonormal (or the identity), and only ever applies it to vectors.
"""

import enum
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la

from . import kernels
from .errors import DimensionError, SingularCoreError

__all__ = [
    "UNIT_ROUNDOFF",
    "CorePath",
    "EpsilonPolicy",
    "InstabilityReport",
    "CoreFactor",
    "build_core_plain",
    "build_core_truncated",
    "detect",
    "core_with_fallback",
]

UNIT_ROUNDOFF = 2.0**-53


class CorePath(str, enum.Enum):
    PLAIN_QR = "PlainQR"
    SVD_TRUNCATE = "SVDTruncate"
    RRQR_TRUNCATE = "RRQRTruncate"
    DIAG_PERTURB = "DiagPerturb"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).replace("_", "").replace("-", "").lower()
        for member in cls:
            if member.value.lower() == key or member.name.replace("_", "").lower() == key:
                return member
        aliases = {"svd": cls.SVD_TRUNCATE, "rrqr": cls.RRQR_TRUNCATE, "diag": cls.DIAG_PERTURB,
                   "plain": cls.PLAIN_QR, "qr": cls.PLAIN_QR}
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown core path {value!r}")


@dataclass(frozen=True)
class EpsilonPolicy:
    """How the truncation threshold is chosen.

    ``relative``: eps = coefficient * (estimate of ||M||_2), computed at build
    time. ``absolute``: eps = coefficient, for runs that normalize ||A||_2 = 1.
    """

    mode: str = "relative"
    coefficient: float = 10 * UNIT_ROUNDOFF
    path: CorePath = CorePath.RRQR_TRUNCATE

    def __post_init__(self):
        if self.mode not in ("relative", "absolute"):
            raise ValueError(f"epsilon mode must be 'relative' or 'absolute', not {self.mode!r}")
        if not self.coefficient > 0:
            raise ValueError("epsilon coefficient must be positive")
        object.__setattr__(self, "path", CorePath.parse(self.path))

    def resolve(self, norm_estimate):
        if self.mode == "absolute":
            return float(self.coefficient)
        # floor keeps eps > 0 for an all-zero core, so everything is truncated
        return max(float(self.coefficient) * float(norm_estimate), np.finfo(np.float64).tiny)

    def to_dict(self):
        return {"mode": self.mode, "coefficient": self.coefficient, "path": self.path.value}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mode"], float(d["coefficient"]), CorePath.parse(d["path"]))


@dataclass(frozen=True)
class InstabilityReport:
    normR: float
    normRinv: float
    condition_estimate: float
    flagged: bool
    threshold: float

    def to_dict(self):
        return {
            "normR": self.normR,
            "normRinv": self.normRinv,
            "condition_estimate": self.condition_estimate,
            "flagged": self.flagged,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["normR"]), float(d["normRinv"]), float(d["condition_estimate"]),
                   bool(d["flagged"]), float(d["threshold"]))


@dataclass(frozen=True, eq=False)
class CoreFactor:
    """Factored (epsilon-)pseudoinverse ``Z T^{-1} Q^T`` of an ``rows x cols`` core.

    ``Q`` is ``rows x k``, ``T`` is ``k x k`` triangular (lower iff ``lower``)
    and ``Z`` is ``cols x k``; ``Z is None`` means the identity (``k = cols``).
    """

    Q: np.ndarray = field(repr=False)
    T: np.ndarray = field(repr=False)
    Z: np.ndarray = field(default=None, repr=False)
    lower: bool = False
    path: CorePath = CorePath.PLAIN_QR
    eps_used: float = 0.0
    report: InstabilityReport = None
    switched: bool = False

    @property
    def rows(self):
        return self.Q.shape[0]

    @property
    def cols(self):
        return self.T.shape[0] if self.Z is None else self.Z.shape[0]

    @property
    def rank(self):
        return self.T.shape[0]

    def _solve(self, B, trans=False):
        if self.rank == 0:
            return np.zeros((0,) + B.shape[1:])
        return kernels.tri_solve(self.T, B, lower=self.lower, trans=trans)

    def apply(self, V):
        """``pinv(M) @ V`` for ``V`` with ``rows`` rows."""
        V = np.asarray(V, dtype=np.float64)
        if V.shape[0] != self.rows:
            raise DimensionError(f"core expects {self.rows} rows, got {V.shape[0]}")
        out = self._solve(self.Q.T @ V)
        return out if self.Z is None else self.Z @ out

    def apply_left(self, W):
        """``W @ pinv(M)`` for ``W`` with ``cols`` columns, as ((W Z) T^{-1}) Q^T."""
        W = np.asarray(W, dtype=np.float64)
        if W.shape[-1] != self.cols:
            raise DimensionError(f"core expects {self.cols} columns, got {W.shape[-1]}")
        WZ = W if self.Z is None else W @ self.Z
        return self.solve_right(WZ) @ self.Q.T

    def solve_right(self, B):
        """``B T^{-1}`` (``B`` already multiplied by ``Z``)."""
        if self.rank == 0:
            return np.zeros((B.shape[0], 0))
        return kernels.tri_solve_right(B, self.T, lower=self.lower)

    def dense(self):
        """Explicit pseudoinverse; for tests only."""
        return self.apply(np.eye(self.rows))

    def arrays(self):
        out = {"core_Q": self.Q, "core_T": self.T}
        if self.Z is not None:
            out["core_Z"] = self.Z
        return out


def build_core_plain(M):
    """Thin QR of the core; the applicator is ``v -> R^{-1} (Q^T v)``."""
    M = np.asarray(M, dtype=np.float64)
    if M.shape[0] < M.shape[1]:
        raise DimensionError(f"core must be tall, got {M.shape}")
    Q, R = kernels.thin_qr(M)
    if np.any(np.diag(R) == 0.0):
        raise SingularCoreError(
            "R has an exact zero on its diagonal; use the stabilized method (sgn)"
        )
    return CoreFactor(Q=Q, T=R, path=CorePath.PLAIN_QR)


def _svd_truncate(M, eps):
    U, s, V = kernels.svd(M)
    k = int(np.count_nonzero(s > eps))
    return CoreFactor(Q=U[:, :k], T=np.diag(s[:k]), Z=V[:, :k],
                      path=CorePath.SVD_TRUNCATE, eps_used=eps)


def _rrqr_truncate(M, eps):
    n = M.shape[1]
    Q1, R, perm = la.qr(M, mode="economic", pivoting=True, check_finite=False)
    small = np.flatnonzero(np.abs(np.diag(R)) < eps)
    k = int(small[0]) if small.size else n
    if k == 0:
        return CoreFactor(Q=Q1[:, :0], T=np.zeros((0, 0)), Z=np.zeros((n, 0)),
                          path=CorePath.RRQR_TRUNCATE, eps_used=eps)
    # M[:, perm] ~ Q1_k R1 with R1 = R[:k] fat; R1^T = Q2 R2, so
    # pinv(M) ~ P Q2 R2^{-T} Q1_k^T
    Q2, R2 = kernels.thin_qr(R[:k, :].T)
    Z = np.empty_like(Q2)
    Z[perm] = Q2
    return CoreFactor(Q=Q1[:, :k], T=R2.T.copy(), Z=Z, lower=True,
                      path=CorePath.RRQR_TRUNCATE, eps_used=eps)


def _diag_perturb(M, eps):
    # column pivoting first, so every entry below a raised diagonal is
    # already smaller than eps
    n = M.shape[1]
    Q, R, perm = la.qr(M, mode="economic", pivoting=True, check_finite=False)
    R = np.triu(R)
    d = np.diag(R)
    small = np.abs(d) < eps
    if np.any(small):
        idx = np.flatnonzero(small)
        R[idx, idx] = np.where(d[idx] < 0, -eps, eps)
    Z = np.zeros((n, n))
    Z[perm, np.arange(n)] = 1.0
    return CoreFactor(Q=Q, T=R, Z=Z, path=CorePath.DIAG_PERTURB, eps_used=eps)


def build_core_truncated(M, eps, path=CorePath.RRQR_TRUNCATE):
    """epsilon-pseudoinverse of ``M`` via SVD truncation, truncated pivoted QR,
    or diagonal perturbation of R."""
    M = np.asarray(M, dtype=np.float64)
    if M.shape[0] < M.shape[1]:
        raise DimensionError(f"core must be tall, got {M.shape}")
    if not eps > 0:
        raise ValueError("eps must be positive")
    path = CorePath.parse(path)
    if path is CorePath.SVD_TRUNCATE:
        return _svd_truncate(M, eps)
    if path is CorePath.RRQR_TRUNCATE:
        return _rrqr_truncate(M, eps)
    if path is CorePath.DIAG_PERTURB:
        return _diag_perturb(M, eps)
    raise ValueError(f"{path} is not a truncating path")


def detect(R, threshold=1.0, iters=10):
    """Flag ``R`` when its estimated condition number times u exceeds ``threshold``."""
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DimensionError(f"R must be square, got {R.shape}")
    est = kernels.estimate_norms(R, iters=iters)
    normR, normRinv = est["normR"], est["normRinv"]
    with np.errstate(over="ignore", invalid="ignore"):
        cond = normR * normRinv
    if not np.isfinite(cond):
        cond = float("inf")
    flagged = bool(not np.isfinite(normRinv) or cond * UNIT_ROUNDOFF > threshold)
    return InstabilityReport(normR, normRinv, float(cond), flagged, float(threshold))


def core_with_fallback(M, policy=None, threshold=1.0):
    """Plain QR core, switched to the policy's truncating path when ``detect`` fires."""
    policy = policy or EpsilonPolicy()
    M = np.asarray(M, dtype=np.float64)
    try:
        core = build_core_plain(M)
    except SingularCoreError:
        Q, R = kernels.thin_qr(M)
        report = detect(R, threshold)
        eps = policy.resolve(report.normR)
        return replace(build_core_truncated(M, eps, policy.path), report=report, switched=True)
    report = detect(core.T, threshold)
    if not report.flagged:
        return replace(core, report=report)
    eps = policy.resolve(report.normR)
    return replace(build_core_truncated(M, eps, policy.path), report=report, switched=True)
