"""Test matrices, error oracles, theoretical bounds, flop model and sweeps."""

import csv
import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from . import decomp, kernels
from .errors import CapExceededError, DimensionError, HypothesisError
from .sketch import SketchKind, gaussians

__all__ = [
    "SpectrumSpec",
    "BoundInputs",
    "gallery",
    "optimal_error",
    "tail_norm",
    "frobenius_error_factored",
    "dense_error",
    "bound_hmt",
    "bound_gn",
    "bound_sgn",
    "efloat_bound",
    "realfloat_estimate",
    "gauss_pinv_moment_bound",
    "flop_model",
    "flop_breakdown",
    "Report",
    "SweepConfig",
    "run_sweep",
    "CSV_HEADER",
    "write_csv",
    "write_jsonl",
    "read_csv",
    "SVD_CAP",
]

SVD_CAP = 2.5e7  # entries
CSV_HEADER = ["method", "m", "n", "r", "ell", "seed", "spectrum", "error_f", "opt_error_f",
              "bound", "wall_ms", "flops_model", "flagged", "path"]

# Philox streams reserved for test matrices (sketches use 0, 1, 2, ...)
_GALLERY_STREAM_U = 1 << 32
_GALLERY_STREAM_V = (1 << 32) + 1


@dataclass(frozen=True)
class SpectrumSpec:
    """Singular value profile.

    ``geometric``: ``a**(i-1)`` when ``b`` is None, else log-spaced from ``a``
    down to ``b``. ``algebraic``: ``i**-a``. ``exponential``: ``exp(-a*i)``.
    ``flat``: all ones. ``rank`` zeroes every value past that index.
    """

    kind: str
    a: float = 1.0
    b: float = None
    rank: int = None

    def __post_init__(self):
        if self.kind not in ("geometric", "algebraic", "exponential", "flat"):
            raise ValueError(f"unknown spectrum kind {self.kind!r}")

    def values(self, k):
        i = np.arange(1, k + 1, dtype=np.float64)
        if self.kind == "geometric":
            if self.b is None:
                s = self.a ** (i - 1)
            elif k == 1:
                s = np.array([self.a])
            else:
                s = self.a * (self.b / self.a) ** ((i - 1) / (k - 1))
        elif self.kind == "algebraic":
            s = i ** (-self.a)
        elif self.kind == "exponential":
            s = np.exp(-self.a * i)
        else:
            s = np.ones(k)
        if self.rank is not None:
            s[self.rank:] = 0.0
        return s

    @property
    def label(self):
        if self.kind == "flat":
            text = "flat"
        elif self.b is None:
            text = f"{self.kind}:{self.a:g}"
        else:
            text = f"{self.kind}:{self.a:g}:{self.b:g}"
        return text if self.rank is None else f"{text}/rank{self.rank}"

    @classmethod
    def parse(cls, text):
        """``geometric:0.9``, ``geometric:1:1e-15``, ``algebraic:1``, ``exponential:0.1``,
        ``flat``; an optional ``/rankK`` suffix truncates."""
        text = text.strip()
        rank = None
        if "/rank" in text:
            text, _, rk = text.partition("/rank")
            rank = int(rk)
        parts = text.split(":")
        kind = {"geo": "geometric", "alg": "algebraic", "exp": "exponential",
                "algebraicpower": "algebraic"}.get(parts[0].lower(), parts[0].lower())
        nums = [float(p) for p in parts[1:]]
        if kind == "flat":
            return cls("flat", rank=rank)
        if not nums:
            raise ValueError(f"spectrum {text!r} needs a parameter")
        return cls(kind, nums[0], nums[1] if len(nums) > 1 else None, rank)


@dataclass(frozen=True)
class BoundInputs:
    r: int
    r_hat: int
    tail_f: float
    ell: int = None
    tail_2: float = None


def _haar_columns(rows, cols, seed, stream):
    G = gaussians(seed, stream, rows * cols).reshape((rows, cols), order="F")
    Q, R = kernels.thin_qr(G)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d[None, :]


def gallery(spec, m, n=None, seed=0, psd=False):
    """``U diag(sigma) V^T`` with Haar-distributed orthonormal factors.

    With ``psd`` the result is ``Q diag(lambda) Q^T`` (requires ``m == n``).
    """
    n = m if n is None else n
    if m < 1 or n < 1:
        raise DimensionError(f"invalid gallery size {m}x{n}")
    if psd and m != n:
        raise DimensionError("a PSD gallery matrix must be square")
    k = min(m, n)
    s = spec.values(k)
    U = _haar_columns(m, k, seed, _GALLERY_STREAM_U)
    if psd:
        A = (U * s[None, :]) @ U.T
        return 0.5 * (A + A.T)
    V = _haar_columns(n, k, seed, _GALLERY_STREAM_V)
    return (U * s[None, :]) @ V.T


def singular_values(A, cap=SVD_CAP):
    if A.shape[0] * A.shape[1] > cap:
        raise CapExceededError(f"{A.shape} exceeds the dense SVD cap")
    A = kernels.as_dense(A)
    return kernels.svd(A)[1]


def tail_norm(sigma, k):
    """Frobenius norm of the singular values past index ``k``."""
    return float(np.sqrt(np.sum(np.asarray(sigma[k:]) ** 2)))


def optimal_error(A, r_hat, cap=SVD_CAP):
    """``||A - A_{r_hat}||_F`` via a dense SVD."""
    return tail_norm(singular_values(A, cap), r_hat)


def dense_error(A, approx):
    """``||A - A_hat||_F`` through the materialized approximant."""
    return float(np.linalg.norm(kernels.as_dense(A) - decomp.materialize(approx)))


def frobenius_error_factored(A, approx):
    """``||A - A_hat||_F`` without an ``m x n`` residual.

    Uses ``||A||^2 - 2<A, A_hat> + ||A_hat||^2``; accuracy is limited by
    cancellation to roughly ``sqrt(u) ||A||_F``.
    """
    L, Rt = approx.factors()
    normA2 = kernels.fro_norm(A) ** 2
    LtA = kernels.matmul(A, L, transpose_a=True).T  # k x n
    cross = float(np.sum(LtA * Rt))
    hat2 = float(np.sum((L.T @ L) * (Rt @ Rt.T)))
    return math.sqrt(max(normA2 - 2.0 * cross + hat2, 0.0))


def _check_rhat(r, r_hat):
    if not (0 <= r_hat <= r - 2):
        raise HypothesisError(f"bounds need 0 <= r_hat <= r - 2, got r={r}, r_hat={r_hat}")


def bound_hmt(b):
    _check_rhat(b.r, b.r_hat)
    return math.sqrt(1.0 + b.r / (b.r - b.r_hat - 1)) * b.tail_f


def bound_gn(b):
    if b.ell is None or b.ell < 2:
        raise HypothesisError("the plain GN bound needs ell >= 2")
    return math.sqrt(1.0 + (b.r + b.ell) / (b.ell - 1)) * bound_hmt(b)


def bound_sgn(b):
    """Stabilized GN bound without its additive roundoff term."""
    if b.ell is None or b.ell < 1:
        raise HypothesisError("the SGN bound needs ell >= 1")
    return 2.0 * math.sqrt(math.e) * (b.r + b.ell) / b.ell * bound_hmt(b)


def efloat_bound(r, ell, hmt_error_f):
    """Proven roundoff bound for computed SGN, in units of the HMT error."""
    return (4.0 * math.e * math.sqrt(r) * (r + ell) / ell + 1.0) * hmt_error_f


def realfloat_estimate(r, ell, hmt_error_f, hmt_error_2):
    """Heuristic (not a bound) for the computed SGN error; reporting only."""
    a, b = math.sqrt(r + ell), math.sqrt(r)
    return (a + b) / (a - b) * hmt_error_f + 2.0 * math.sqrt(r * (r + ell)) / (a - b) * hmt_error_2


def gauss_pinv_moment_bound(m, n):
    """Upper bound on ``E ||G^+||_2^2`` for an ``m x n`` Gaussian."""
    if not (m - 1 >= n >= 2):
        raise HypothesisError(f"need m - 1 >= n >= 2, got m={m}, n={n}")
    return math.e**2 * m / ((m - n) ** 2 - 1)


def flop_breakdown(m, n, r, ell, kind=SketchKind.DCT):
    """Leading flop terms of generalized Nystrom (log base 2).

    Returns ``{"sketch", "core", "lower_order"}``; ``core`` is exact
    (a Fraction) for integer inputs.
    """
    if min(m, n, r) <= 0 or ell < 0:
        raise ValueError("dimensions must be positive")
    kind = SketchKind.parse(kind)
    r_f, ell_f = Fraction(r), Fraction(ell)
    core = 2 * (r_f + ell_f) * r_f**2 - Fraction(2, 3) * r_f**3
    if kind is SketchKind.GAUSSIAN:
        sketch = 2.0 * m * n * (2 * r + ell)  # A X and Y^T A
        lower = 2.0 * n * (r + ell) * r  # (Y^T A) X
    elif kind is SketchKind.COUNTSKETCH:
        sketch = 2.0 * m * n  # dense input: one pass per sketch
        lower = 2.0 * n * (r + ell)
    else:
        sketch = 10.0 * m * n * math.log2(n) if n > 1 else 0.0
        lower = 5.0 * n * r * math.log2(n) if n > 1 else 0.0
    return {"sketch": sketch, "core": core, "lower_order": lower}


def flop_model(m, n, r, ell, kind=SketchKind.DCT):
    """Sketch plus QR-core flops; lower-order terms are excluded."""
    f = flop_breakdown(m, n, r, ell, kind)
    return f["sketch"] + float(f["core"])


@dataclass
class Report:
    method: str
    m: int
    n: int
    r: int
    ell: int
    seed: int
    spectrum: str
    error_f: float = float("nan")
    opt_error_f: float = float("nan")
    bound: float = float("nan")
    wall_ms: float = float("nan")
    flops_model: float = float("nan")
    flagged: bool = False
    path: str = ""
    kind: str = "gaussian"
    bound_reference: bool = False
    failure: str = None

    def csv_row(self):
        d = asdict(self)
        return [d[k] for k in CSV_HEADER]


def _ell_for(policy, r):
    """``half`` (ceil(r/2)), ``fixed:K``, ``ratio:C`` or a bare integer."""
    if isinstance(policy, int):
        return policy
    policy = str(policy)
    if policy in ("half", "default"):
        return decomp.default_oversampling(r)
    if policy.startswith("fixed:"):
        return int(policy.split(":", 1)[1])
    if policy.startswith("ratio:"):
        return max(1, math.ceil(float(policy.split(":", 1)[1]) * r))
    return int(policy)


@dataclass
class SweepConfig:
    methods: list = field(default_factory=lambda: ["gn"])
    ranks: list = field(default_factory=list)
    spectra: list = field(default_factory=list)  # SpectrumSpec or strings
    m: int = 200
    n: int = None
    seeds: list = field(default_factory=lambda: [0])
    repetitions: int = 1
    ell_policies: list = field(default_factory=lambda: ["half"])
    kind: str = "gaussian"
    matrix_seed: int = 0
    psd: bool = False
    r_hat_ratio: float = 0.75
    error: str = "auto"  # "dense", "factored" or "auto"
    fallback: bool = False
    against_svd: bool = False
    jobs: int = 1


def _bound_for(method, r, ell, sigma, r_hat_ratio):
    if sigma is None:
        return float("nan")
    r_hat = min(r - 2, int(math.floor(r_hat_ratio * r)))
    if r_hat < 0:
        return float("nan")
    b = BoundInputs(r, r_hat, tail_norm(sigma, r_hat), ell)
    try:
        if method in ("hmt", "subspace"):
            return bound_hmt(b)
        if method == "gn":
            return bound_gn(b)
        if method == "sgn":
            return bound_sgn(b)
    except HypothesisError:
        pass
    return float("nan")


_MATRIX_CACHE = {}


def _sweep_matrix(spec, cfg):
    n = cfg.n or cfg.m
    key = (spec, cfg.m, n, cfg.matrix_seed, cfg.psd)
    if key not in _MATRIX_CACHE:
        _MATRIX_CACHE.clear()
        A = gallery(spec, cfg.m, n, cfg.matrix_seed, cfg.psd)
        if cfg.m * n <= SVD_CAP and min(cfg.m, n) <= 2000:
            sigma = singular_values(A)
        else:
            sigma = np.sort(np.abs(spec.values(min(cfg.m, n))))[::-1]
        _MATRIX_CACHE[key] = (A, sigma)
    return _MATRIX_CACHE[key]


def _run_cell(cell):
    cfg, spec, method, r, ell_policy, seed = cell
    n = cfg.n or cfg.m
    A, sigma = _sweep_matrix(spec, cfg)
    kind = SketchKind.parse(cfg.kind)
    ell = _ell_for(ell_policy, r) if method in ("gn", "sgn") else 0
    rep = Report(method, cfg.m, n, r, ell, seed, spec.label, kind=kind.value,
                 bound_reference=kind is not SketchKind.GAUSSIAN)
    try:
        times = []
        for _ in range(max(1, cfg.repetitions)):
            t0 = time.perf_counter()
            if method == "svd":
                U, s, V = kernels.svd(A)
                approx = None
            else:
                approx = decomp.approximate(A, method, r, ell=ell if ell else None, seed=seed,
                                            kind=kind, fallback=cfg.fallback)
            times.append(time.perf_counter() - t0)
        rep.wall_ms = 1e3 * statistics.median(times)
        rep.opt_error_f = tail_norm(sigma, r)
        if approx is None:
            rep.error_f = rep.opt_error_f
            rep.path = "dense-svd"
        else:
            use_dense = cfg.error == "dense" or (cfg.error == "auto" and cfg.m * n <= 4e6)
            rep.error_f = dense_error(A, approx) if use_dense else frobenius_error_factored(A, approx)
            rep.flagged = approx.flagged
            rep.path = approx.path.value if approx.path is not None else "range"
            rep.bound = _bound_for(method, r, ell, sigma, cfg.r_hat_ratio)
            if method in ("gn", "sgn"):
                rep.flops_model = flop_model(cfg.m, n, r, ell, kind)
    except Exception as exc:  # recorded per cell; the sweep goes on
        rep.failure = f"{type(exc).__name__}: {exc}"
        rep.path = "failed"
    return rep


def _cells(cfg):
    spectra = [SpectrumSpec.parse(s) if isinstance(s, str) else s for s in cfg.spectra]
    methods = list(cfg.methods) + (["svd"] if cfg.against_svd else [])
    for spec in spectra:
        for method in methods:
            ranks = cfg.ranks if method != "svd" else [min(cfg.m, cfg.n or cfg.m)]
            policies = cfg.ell_policies if method in ("gn", "sgn") else [None]
            for r in ranks:
                for policy in policies:
                    for seed in (cfg.seeds if method != "svd" else [0]):
                        yield (cfg, spec, method, r, policy, seed)


def run_sweep(config):
    """Run every cell of ``config`` and return one :class:`Report` per cell."""
    cells = list(_cells(config))
    if config.jobs > 1 and len(cells) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            return list(pool.map(_run_cell, cells))
    return [_run_cell(c) for c in cells]


def write_csv(reports, fh):
    w = csv.writer(fh)
    w.writerow(CSV_HEADER)
    for rep in reports:
        w.writerow(rep.csv_row())


def write_jsonl(reports, fh):
    for rep in reports:
        fh.write(json.dumps(asdict(rep)) + "\n")


def read_csv(fh):
    rows = list(csv.DictReader(fh))
    for row in rows:
        for k in ("m", "n", "r", "ell", "seed"):
            row[k] = int(row[k])
        for k in ("error_f", "opt_error_f", "bound", "wall_ms", "flops_model"):
            row[k] = float(row[k])
        row["flagged"] = row["flagged"] == "True"
    return rows
