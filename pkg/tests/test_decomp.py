import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randlr import decomp, evaluate, stability
from randlr.errors import CapExceededError, DimensionError, NotSymmetricError
from randlr.sketch import generate
from randlr.stability import CorePath, EpsilonPolicy

from conftest import low_rank

GENERAL = ["hmt", "subspace", "gn", "sgn"]
SYMMETRIC = ["nystrom", "nystrom-hmt"]


def rel_err(A, approx):
    return evaluate.dense_error(A, approx) / np.linalg.norm(A)


def spectrum_matrix(sigma, m, n, seed):
    rng = np.random.default_rng(seed)
    k = len(sigma)
    U, _ = np.linalg.qr(rng.standard_normal((m, k)))
    V, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return (U * sigma) @ V.T


# -- exactness -------------------------------------------------------------------

@pytest.mark.parametrize("method", GENERAL)
@pytest.mark.parametrize("kind", ["gaussian", "dct", "countsketch"])
def test_exact_rank_general(method, kind):
    A = low_rank(60, 40, 6, seed=3)
    approx = decomp.approximate(A, method, 6, seed=1, kind=kind)
    assert rel_err(A, approx) <= 1e-10


@pytest.mark.parametrize("method", SYMMETRIC)
def test_exact_rank_psd(method):
    A = low_rank(50, 50, 7, seed=4, psd=True)
    approx = decomp.approximate(A, method, 7, seed=2)
    assert rel_err(A, approx) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(m=st.integers(8, 80), n=st.integers(8, 80), k=st.integers(1, 6), extra=st.integers(0, 3),
       method=st.sampled_from(GENERAL + SYMMETRIC), seed=st.integers(0, 2**31))
def test_interpolatory_exactness(m, n, k, extra, method, seed):
    r = k + extra
    if method in SYMMETRIC:
        n = m
        A = low_rank(m, m, k, seed=seed, psd=True)
    else:
        A = low_rank(m, n, k, seed=seed)
    ell = min(decomp.default_oversampling(r), min(m, n) - r)
    if method in ("gn", "sgn") and ell < 1:
        return
    approx = decomp.approximate(A, method, r, ell=ell if method in ("gn", "sgn") else None,
                                seed=seed, fallback=True)
    assert rel_err(A, approx) <= 1e-10


def test_rank_checks():
    A = np.ones((10, 8))
    with pytest.raises(DimensionError):
        decomp.hmt(A, 9)
    with pytest.raises(DimensionError):
        decomp.gn_plain(A, 6, ell=3)
    with pytest.raises(DimensionError):
        decomp.gn_plain(A, 0)


def test_default_oversampling():
    assert [decomp.default_oversampling(r) for r in (1, 2, 5, 100)] == [1, 1, 3, 50]
    A = low_rank(40, 30, 3)
    assert decomp.gn_plain(A, 9).ell == 5


# -- HMT and subspace iteration --------------------------------------------------

def test_hmt_bound_half_decay():
    sigma = 0.5 ** np.arange(1, 101)
    A = spectrum_matrix(sigma, 100, 100, seed=0)
    errs = [evaluate.dense_error(A, decomp.hmt(A, 10, seed=s)) for s in range(200)]
    bound = evaluate.bound_hmt(evaluate.BoundInputs(10, 8, evaluate.tail_norm(sigma, 8)))
    assert bound == pytest.approx(np.sqrt(11) * evaluate.tail_norm(sigma, 8))
    assert np.mean(errs) <= bound


def test_power_iteration_helps():
    sigma = 1.0 / np.arange(1, 151)
    A = spectrum_matrix(sigma, 150, 150, seed=1)
    e0 = [evaluate.dense_error(A, decomp.hmt(A, 20, power=0, seed=s)) for s in range(20)]
    e2 = [evaluate.dense_error(A, decomp.subspace_iteration(A, 20, power=2, seed=s)) for s in range(20)]
    assert np.median(e2) < np.median(e0)


def test_hmt_singular_values(rng):
    A = low_rank(30, 20, 4, seed=9)
    approx = decomp.hmt(A, 6, seed=1)
    assert np.allclose(approx.singular_values()[:4], np.linalg.svd(A, compute_uv=False)[:4], rtol=1e-10)
    with pytest.raises(TypeError):
        decomp.gn_plain(A, 6).singular_values()


def test_hmt_pythagoras():
    rng = np.random.default_rng(5)
    for trial in range(10):
        m, n, r, r_hat = 30, 25, 8, 5
        A = rng.standard_normal((m, n)) * np.logspace(0, -3, n)
        _, _, Vt = np.linalg.svd(A, full_matrices=False)
        V = Vt[:r_hat].T
        X = rng.standard_normal((n, r))
        P = X @ np.linalg.pinv(V.T @ X) @ V.T
        S2 = A @ (np.eye(n) - V @ V.T)
        lhs = np.linalg.norm(S2 @ (np.eye(n) - P)) ** 2
        rhs = np.linalg.norm(S2) ** 2 + np.linalg.norm(S2 @ P) ** 2
        assert lhs == pytest.approx(rhs, rel=1e-8)
        # the computed HMT error is dominated by that quantity
        Q, _ = np.linalg.qr(A @ X)
        assert np.linalg.norm(A - Q @ (Q.T @ A)) ** 2 <= lhs * (1 + 1e-10)


# -- classical Nystrom -----------------------------------------------------------

def test_nystrom_identity_projection():
    n, k = 30, 7
    approx = decomp.nystrom_psd(np.eye(n), k, seed=3)
    Ah = decomp.materialize(approx)
    assert np.linalg.norm(Ah, 2) <= 1 + 1e-10
    assert np.linalg.norm(np.eye(n) - Ah) ** 2 == pytest.approx(n - k, abs=1e-8)


def test_nystrom_geometric_psd():
    sigma = 0.8 ** np.arange(80)
    A = evaluate.gallery(evaluate.SpectrumSpec("geometric", 0.8), 80, 80, seed=2, psd=True)
    r = 20
    opt = evaluate.tail_norm(sigma, int(0.8 * r))
    for s in range(20):
        assert evaluate.dense_error(A, decomp.nystrom_psd(A, r, seed=s)) <= 10 * opt


def test_nystrom_hmt_beats_nystrom():
    A = evaluate.gallery(evaluate.SpectrumSpec("geometric", 0.95), 500, 500, seed=1, psd=True)
    e_ny = [evaluate.dense_error(A, decomp.nystrom_psd(A, 50, seed=s)) for s in range(20)]
    e_nh = [evaluate.dense_error(A, decomp.nystrom_hmt(A, 50, seed=s)) for s in range(20)]
    assert np.median(e_nh) <= np.median(e_ny)


def test_nystrom_hmt_zero_matrix():
    approx = decomp.nystrom_hmt(np.zeros((20, 20)), 5, seed=1)
    assert np.array_equal(decomp.materialize(approx), np.zeros((20, 20)))


def test_nystrom_rejects_nonsymmetric(rng):
    with pytest.raises(NotSymmetricError):
        decomp.nystrom_psd(rng.standard_normal((10, 10)), 3)
    with pytest.raises(DimensionError):
        decomp.nystrom_hmt(rng.standard_normal((10, 8)), 3)


def test_nystrom_warns_on_indefinite(rng):
    B = rng.standard_normal((20, 20))
    with pytest.warns(decomp.NotPSDWarning):
        decomp.nystrom_psd(-(B @ B.T), 4, seed=1)


# -- generalized Nystrom ---------------------------------------------------------

def test_gn_bound_and_ordering_half_decay():
    sigma = 0.5 ** np.arange(1, 101)
    A = spectrum_matrix(sigma, 100, 100, seed=0)
    e_gn, e_hmt = [], []
    for s in range(200):
        e_gn.append(evaluate.dense_error(A, decomp.gn_plain(A, 10, ell=5, seed=s)))
        e_hmt.append(evaluate.dense_error(A, decomp.hmt(A, 10, seed=s)))
    b = evaluate.BoundInputs(10, 8, evaluate.tail_norm(sigma, 8), ell=5)
    assert evaluate.bound_gn(b) == pytest.approx(np.sqrt(1 + 15 / 4) * np.sqrt(11) * b.tail_f)
    assert np.mean(e_gn) <= evaluate.bound_gn(b)
    assert np.mean(e_gn) >= np.mean(e_hmt)


def test_gn_reports_without_switching():
    A = low_rank(40, 30, 5, seed=1)
    approx = decomp.gn_plain(A, 10, seed=2)
    assert approx.flagged and approx.path is CorePath.PLAIN_QR


def test_sgn_matches_plain_when_benign():
    A = evaluate.gallery(evaluate.SpectrumSpec("geometric", 0.9), 80, 60, seed=3)
    plain = decomp.materialize(decomp.gn_plain(A, 10, seed=4))
    for path in ("rrqr", "svd", "diag"):
        stab = decomp.materialize(decomp.gn_stabilized(A, 10, policy=EpsilonPolicy(path=path), seed=4))
        assert np.linalg.norm(stab - plain) <= 1e-12 * np.linalg.norm(plain)


def test_sgn_full_truncation():
    A = np.random.default_rng(0).standard_normal((30, 20))
    approx = decomp.gn_stabilized(A, 6, policy=EpsilonPolicy("absolute", 1e12), seed=1)
    assert approx.core.rank == 0
    assert np.array_equal(decomp.materialize(approx), np.zeros((30, 20)))
    assert evaluate.dense_error(A, approx) == pytest.approx(np.linalg.norm(A))


def test_sgn_ill_conditioned_vs_hmt():
    A = evaluate.gallery(evaluate.SpectrumSpec("geometric", 1.0, 1e-15), 200, 200, seed=7)
    u = stability.UNIT_ROUNDOFF
    for s in range(3):
        e_sgn = evaluate.dense_error(A, decomp.gn_stabilized(A, 100, 50, seed=s))
        e_hmt = evaluate.dense_error(A, decomp.hmt(A, 100, seed=s))
        assert np.isfinite(e_sgn)
        assert e_sgn <= 10 * e_hmt + 1e3 * u * np.linalg.norm(A)


def test_approximate_dispatch():
    A = low_rank(30, 30, 3, psd=True)
    for method in decomp.Method:
        approx = decomp.approximate(A, method.value, 5, seed=0)
        assert approx.method is method
    with pytest.raises(ValueError):
        decomp.approximate(A, "svd", 5)


def test_seed_determinism():
    A = evaluate.gallery(evaluate.SpectrumSpec("algebraic", 1.0), 50, 40, seed=1)
    for method in GENERAL:
        a = decomp.materialize(decomp.approximate(A, method, 8, seed=11))
        b = decomp.materialize(decomp.approximate(A, method, 8, seed=11))
        assert np.array_equal(a, b)


# -- apply and materialize -------------------------------------------------------

@pytest.mark.parametrize("method", GENERAL + SYMMETRIC)
def test_apply_consistency(method):
    rng = np.random.default_rng(8)
    A = evaluate.gallery(evaluate.SpectrumSpec("geometric", 0.9), 80, 80, seed=2, psd=method in SYMMETRIC)
    approx = decomp.approximate(A, method, 12, seed=1)
    Ah = decomp.materialize(approx)
    assert np.array_equal(decomp.apply(approx, np.zeros((80, 3))), np.zeros((80, 3)))
    assert np.allclose(decomp.apply(approx, np.eye(80)), Ah, atol=1e-12)
    W = rng.standard_normal((80, 5))
    scale = np.linalg.norm(Ah) * np.linalg.norm(W)
    assert np.linalg.norm(decomp.apply(approx, W) - Ah @ W) <= 1e-12 * scale
    assert np.linalg.norm(decomp.apply(approx, W.T, side="left") - W.T @ Ah) <= 1e-12 * scale
    with pytest.raises(ValueError):
        decomp.apply(approx, W, side="middle")


def test_materialize_rank_one():
    u, v = np.arange(1.0, 7.0), np.arange(1.0, 5.0)
    A = np.outer(u, v)
    approx = decomp.gn_plain(A, 1, ell=1, seed=3)
    assert np.allclose(decomp.materialize(approx), A, rtol=1e-12)
    L, Rt = approx.factors()
    assert np.allclose(L @ Rt, A, rtol=1e-12)


def test_materialize_hmt_definition():
    A = evaluate.gallery(evaluate.SpectrumSpec("geometric", 0.8), 40, 30, seed=1)
    a = decomp.hmt(A, 8, seed=2)
    assert np.array_equal(decomp.materialize(a), (a.Q @ a.U0) @ (a.s0[:, None] * a.V0.T))


def test_materialize_matches_pinv_formula():
    A = np.random.default_rng(4).standard_normal((40, 30))
    a = decomp.gn_plain(A, 8, seed=5)
    X, Y = generate(a.x_spec).dense(), generate(a.y_spec).dense()
    core = Y.T @ A @ X
    assert np.linalg.cond(core) < 1e6
    oracle = A @ X @ np.linalg.pinv(core) @ (Y.T @ A)
    assert np.linalg.norm(decomp.materialize(a) - oracle) <= 1e-10 * np.linalg.norm(A)


def test_materialize_cap():
    a = decomp.hmt(low_rank(30, 20, 2), 3)
    with pytest.raises(CapExceededError):
        decomp.materialize(a, cap=100)


def test_memory_entries():
    a = decomp.gn_plain(low_rank(30, 20, 2), 4, ell=2)
    assert a.memory_entries == 30 * 4 + 6 * 20 + 6 * 4 + 4 * 4


# -- projector identities ------------------------------------------------------

def test_gn_projector_annihilates():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((30, 25))
        X, Y = rng.standard_normal((25, 6)), rng.standard_normal((30, 9))
        AX = A @ X
        M = Y.T @ AX
        if np.linalg.cond(M) >= 1e6:
            continue
        P = AX @ np.linalg.pinv(M) @ Y.T
        assert np.linalg.norm(AX - P @ AX) <= 1e-10 * np.linalg.norm(AX)
        assert np.linalg.norm(P @ P - P) <= 1e-8 * np.linalg.norm(P) ** 2


@settings(max_examples=40, deadline=None)
@given(dim=st.integers(3, 40), frac=st.floats(0, 1), seed=st.integers(0, 2**31))
def test_oblique_norm_identity(dim, frac, seed):
    k = 2 + int(frac * (dim - 3))
    rng = np.random.default_rng(seed)
    X, Y = rng.standard_normal((dim, k)), rng.standard_normal((dim, k))
    if np.linalg.cond(Y.T @ X) > 1e6:
        return
    P = X @ np.linalg.solve(Y.T @ X, Y.T)
    nP = np.linalg.norm(P, 2)
    assert abs(np.linalg.norm(np.eye(dim) - P, 2) - nP) <= 1e-8 * nP
