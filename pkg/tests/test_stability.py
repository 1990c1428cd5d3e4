import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randlr import decomp, evaluate, kernels, stability
from randlr.errors import DimensionError, SingularCoreError
from randlr.sketch import generate
from randlr.stability import UNIT_ROUNDOFF, CorePath, EpsilonPolicy

from conftest import low_rank

PATHS = [CorePath.SVD_TRUNCATE, CorePath.RRQR_TRUNCATE, CorePath.DIAG_PERTURB]
PINV_SLACK = {CorePath.SVD_TRUNCATE: 1.0, CorePath.RRQR_TRUNCATE: 10.0, CorePath.DIAG_PERTURB: 10.0}


def planted(rng, rows, cols, sigma):
    U, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    V, _ = np.linalg.qr(rng.standard_normal((cols, cols)))
    return (U * np.asarray(sigma)) @ V.T


# -- plain core ----------------------------------------------------------------

def test_plain_orthonormal_core(rng):
    M, _ = np.linalg.qr(rng.standard_normal((9, 4)))
    assert np.allclose(stability.build_core_plain(M).dense(), M.T, atol=1e-12)


def test_plain_diagonal_core():
    M = np.array([[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
    expected = np.array([[0.5, 0.0, 0.0], [0.0, 1 / 3, 0.0]])
    assert np.allclose(stability.build_core_plain(M).dense(), expected, atol=1e-14)


def test_plain_left_inverse(rng):
    M = rng.standard_normal((15, 10))
    core = stability.build_core_plain(M)
    assert np.allclose(core.apply(M), np.eye(10), atol=1e-11)
    assert np.allclose(core.apply_left(np.eye(10)) @ M, np.eye(10), atol=1e-11)


def test_plain_exact_zero_diagonal():
    with pytest.raises(SingularCoreError):
        stability.build_core_plain(np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]]))


def test_core_must_be_tall():
    with pytest.raises(DimensionError):
        stability.build_core_plain(np.ones((2, 3)))
    with pytest.raises(DimensionError):
        stability.build_core_truncated(np.ones((2, 3)), 1e-3)


# -- truncated cores -------------------------------------------------------------

def test_svd_truncate_diag():
    core = stability.build_core_truncated(np.diag([1.0, 1e-20]), 1e-15, "svd")
    assert np.allclose(core.dense(), np.diag([1.0, 0.0]), atol=1e-15)
    assert core.rank == 1


@pytest.mark.parametrize("path", PATHS)
def test_truncation_inactive(path, rng):
    M = planted(rng, 12, 8, np.linspace(1.0, 0.1, 8))
    core = stability.build_core_truncated(M, 1e-6, path)
    assert np.linalg.norm(core.dense() - np.linalg.pinv(M)) <= 1e-10 * 10.0


def test_planted_tiny_singular_value(rng):
    M = planted(rng, 5, 3, [1.0, 1e-2, 1e-18])
    svd_norm = np.linalg.norm(stability.build_core_truncated(M, 1e-15, "svd").dense(), 2)
    rrqr_norm = np.linalg.norm(stability.build_core_truncated(M, 1e-15, "rrqr").dense(), 2)
    assert svd_norm <= 100 + 1e-6
    assert rrqr_norm <= 1e3


def test_full_truncation_gives_empty_core(rng):
    M = rng.standard_normal((6, 4))
    for path in ("svd", "rrqr"):
        core = stability.build_core_truncated(M, 10 * np.linalg.norm(M, 2), path)
        assert core.rank == 0
        assert np.array_equal(core.apply(np.ones((6, 2))), np.zeros((4, 2)))


def test_truncated_needs_positive_eps(rng):
    with pytest.raises(ValueError):
        stability.build_core_truncated(rng.standard_normal((4, 3)), 0.0)


def test_rrqr_applicator_is_pinv_of_truncation(rng):
    # the applicator must be a left inverse on the kept range
    M = planted(rng, 20, 12, np.r_[np.logspace(0, -3, 8), [1e-17] * 4])
    core = stability.build_core_truncated(M, 1e-12, "rrqr")
    assert core.rank == 8
    P = M @ core.dense()
    assert np.linalg.norm(P @ P - P) <= 1e-6 * np.linalg.norm(P) ** 2


@settings(max_examples=100, deadline=None)
@given(rows=st.integers(2, 30), cols=st.integers(1, 30), seed=st.integers(0, 2**32),
       decades=st.floats(4, 25), eps_exp=st.floats(2, 14))
def test_eps_pinv_contract(rows, cols, seed, decades, eps_exp):
    rows, cols = max(rows, cols), min(rows, cols)
    rng = np.random.default_rng(seed)
    M = planted(rng, rows, cols, np.logspace(0, -decades, cols))
    eps = 10.0**-eps_exp
    for path in PATHS:
        norm = np.linalg.norm(stability.build_core_truncated(M, eps, path).dense(), 2)
        assert norm <= PINV_SLACK[path] / eps * (1 + 1e-10)


@settings(max_examples=50, deadline=None)
@given(rows=st.integers(2, 25), cols=st.integers(1, 25), seed=st.integers(0, 2**32), low=st.floats(-3, 0))
def test_benign_paths_match_pinv(rows, cols, seed, low):
    rows, cols = max(rows, cols), min(rows, cols)
    M = planted(np.random.default_rng(seed), rows, cols, np.logspace(0, low, cols))
    smin = np.linalg.svd(M, compute_uv=False)[-1]
    eps = smin / 20
    ref = np.linalg.pinv(M)
    for path in PATHS:
        got = stability.build_core_truncated(M, eps, path).dense()
        assert np.linalg.norm(got - ref) <= 1e-10 * np.linalg.norm(ref)


# -- detection -------------------------------------------------------------------

def test_detect_identity():
    assert not stability.detect(np.eye(5)).flagged


def test_detect_tiny_diagonal():
    assert stability.detect(np.diag([1.0, 1e-20])).flagged


def test_detect_exact_zero():
    rep = stability.detect(np.array([[1.0, 2.0], [0.0, 0.0]]))
    assert rep.flagged and rep.condition_estimate == np.inf


def test_detect_rank_deficient_sketch():
    flagged = 0
    for seed in range(100):
        A = low_rank(40, 30, 5, seed=seed)
        _, _, _, _, _, M = decomp._gn_sketches(A, 10, None, seed, "gaussian")
        flagged += stability.detect(kernels.thin_qr(M)[1]).flagged
    assert flagged >= 95


def test_detect_no_false_negatives():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 30))
        R = np.triu(rng.standard_normal((n, n)))
        R[np.diag_indices(n)] += np.sign(np.diag(R)) * 3.0
        # sigma_min <= min |R_ii| and sigma_max >= max |R_ij| plant kappa > 1e18
        j = int(rng.integers(n))
        R[j, j] = 10.0 ** -rng.uniform(19, 40) * np.abs(R).max()
        assert stability.detect(R).flagged


def test_detect_threshold_scales():
    R = np.diag([1.0, 1e-10])
    assert not stability.detect(R).flagged
    assert stability.detect(R, threshold=1e-7).flagged


def test_report_roundtrip():
    rep = stability.detect(np.diag([2.0, 1e-3]))
    assert stability.InstabilityReport.from_dict(rep.to_dict()) == rep


# -- fallback ------------------------------------------------------------------

def test_fallback_keeps_plain(rng):
    core = stability.core_with_fallback(rng.standard_normal((12, 8)))
    assert core.path is CorePath.PLAIN_QR and not core.switched


def test_fallback_switches(rng):
    M = planted(rng, 12, 8, np.r_[np.ones(7), [UNIT_ROUNDOFF * 1e-3]])
    core = stability.core_with_fallback(M)
    assert core.path is CorePath.RRQR_TRUNCATE and core.switched and core.report.flagged


def test_fallback_end_to_end():
    i = np.arange(1, 41)
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        A = planted(rng, 40, 40, 10.0 ** -i)
        # r + ell may not exceed n = 40, hence ell = 10
        gn = decomp.approximate(A, "gn", 30, ell=10, seed=seed, fallback=True)
        hmt = decomp.approximate(A, "hmt", 30, seed=seed)
        e_gn, e_hmt = evaluate.dense_error(A, gn), evaluate.dense_error(A, hmt)
        assert np.isfinite(e_gn) and e_gn <= 10 * e_hmt


# -- epsilon policy --------------------------------------------------------------

def test_policy_resolution():
    rel = EpsilonPolicy()
    assert rel.resolve(3.0) == pytest.approx(10 * UNIT_ROUNDOFF * 3.0)
    assert rel.resolve(0.0) > 0
    assert EpsilonPolicy("absolute", 1e-9).resolve(1e6) == 1e-9
    assert EpsilonPolicy.from_dict(rel.to_dict()) == rel


def test_policy_rejects_bad_values():
    with pytest.raises(ValueError):
        EpsilonPolicy("absolute", -1.0)
    with pytest.raises(ValueError):
        EpsilonPolicy("sometimes", 1.0)


# -- SGN-level invariants ------------------------------------------------------

def _ill_instance(seed, m=120, n=100):
    return evaluate.gallery(evaluate.SpectrumSpec("geometric", 1.0, 1e-15), m, n, seed=seed)


@pytest.mark.parametrize("path", ["rrqr", "svd", "diag"])
def test_bounded_growth(path):
    r, ell = 40, 20
    for seed in range(50):
        A = _ill_instance(seed)  # ||A||_2 = 1
        a = decomp.gn_stabilized(A, r, ell, policy=EpsilonPolicy(path=path), seed=seed)
        assert np.linalg.norm(a.F @ a.core.dense(), 2) <= 20 * (r + ell) / ell


@pytest.mark.parametrize("path", ["rrqr", "svd"])
def test_sgn_near_projection(path):
    for seed in range(10):
        A = _ill_instance(seed)
        a = decomp.gn_stabilized(A, 40, 20, policy=EpsilonPolicy(path=path), seed=seed)
        X, Y = generate(a.x_spec).dense(), generate(a.y_spec).dense()
        AX = A @ X
        lhs = np.linalg.norm(AX @ a.core.apply(Y.T @ AX) - AX)
        assert lhs <= 1e3 * UNIT_ROUNDOFF * np.linalg.norm(A) * np.linalg.norm(X, 2)
