import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stortd import engine
from stortd.engine import DegenerateSliceError, Hyperparams, Variant
from stortd.oracle import direct_row_solve_spatial, direct_row_solve_temporal
from stortd.regularizers import build_laplacian, graph_from_weights, spatial_penalty, temporal_penalty
from stortd.tensor import DimensionError, kron, unfold


def _state(n1=6, n2=5, ranks=(2, 2, 1), seed=0, laplacian=None, **kw):
    return engine.init(n1, n2, Hyperparams(ranks=ranks, **kw), laplacian, seed=seed)


def _chain_laplacian(n):
    w = np.zeros((n, n))
    for i in range(n - 1):
        w[i, i + 1] = w[i + 1, i] = 1.0
    return build_laplacian(graph_from_weights(w))


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        Hyperparams(ranks=(1, 1))
    with pytest.raises(ValueError):
        Hyperparams(ranks=(1, 1, 1), lam=1.5)
    with pytest.raises(ValueError):
        Hyperparams(ranks=(1, 1, 1), alpha=-1.0)
    with pytest.raises(ValueError):
        Hyperparams(ranks=(1, 1, 1), gamma=-0.1)


def test_variants_zero_their_weights():
    h = Hyperparams(ranks=(1, 1, 1), alpha=3.0, beta=4.0)
    assert (Variant.ORTD.apply(h).alpha, Variant.ORTD.apply(h).beta) == (0.0, 0.0)
    assert (Variant.SORTD.apply(h).alpha, Variant.SORTD.apply(h).beta) == (0.0, 4.0)
    assert (Variant.TORTD.apply(h).alpha, Variant.TORTD.apply(h).beta) == (3.0, 0.0)
    assert Variant.STORTD.apply(h) == h


def test_init_is_seeded_and_orthonormal():
    a, b = _state(seed=7), _state(seed=7)
    for name in ("core", "u_temporal", "u_spatial", "gains_spatial", "gains_temporal"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    np.testing.assert_allclose(a.u_temporal.T @ a.u_temporal, np.eye(2), atol=1e-10)
    np.testing.assert_allclose(a.u_spatial.T @ a.u_spatial, np.eye(2), atol=1e-10)
    sq = _state(n1=4, n2=3, ranks=(4, 3, 1))
    np.testing.assert_allclose(sq.u_temporal @ sq.u_temporal.T, np.eye(4), atol=1e-10)
    assert a.t == 0 and np.array_equal(a.gains_spatial[0], 100.0 * np.eye(2))


def test_init_rejects_oversized_ranks():
    with pytest.raises(DimensionError):
        _state(n1=2, n2=5, ranks=(3, 1, 1))


def test_reconstruct_examples(rng):
    s = _state(n1=3, n2=2, ranks=(3, 2, 1))
    s.core = np.zeros_like(s.core)
    assert not engine.reconstruct(s, [1.0]).any()
    s.core = rng.standard_normal((3, 2, 1))
    s.u_temporal, s.u_spatial = np.eye(3), np.eye(2)
    np.testing.assert_allclose(engine.reconstruct(s, [1.0]), s.core[:, :, 0], atol=1e-15)


def test_reconstruct_matches_unfolding_identity(rng):
    s = _state(n1=7, n2=4, ranks=(3, 2, 2), seed=3)
    u = rng.standard_normal(2)
    ref = s.u_temporal @ unfold(s.core, 1) @ kron(u[None, :], s.u_spatial).T
    np.testing.assert_allclose(engine.reconstruct(s, u), ref, atol=1e-12)


def test_estimate_slice_exact_model():
    s = _state(n1=8, n2=6, ranks=(2, 3, 2), seed=1, gamma=1e6)
    u_star = np.array([0.7, -1.3])
    m = engine.reconstruct(s, u_star)
    u, out, iters, converged = engine.estimate_slice(s, m, np.ones(m.shape))
    np.testing.assert_allclose(u, u_star, atol=1e-8)
    assert not out.any() and converged


def test_estimate_slice_scalar_fixed_point():
    # n1 = n2 = r3 = 1 with basis value 1, m = 5, gamma = 1:
    # s starts at 0, u = 5 - s = 5, then s = soft(5 - 5, 1) = 0, a fixed point
    s = _state(n1=1, n2=1, ranks=(1, 1, 1), gamma=1.0)
    s.core[:] = 1.0
    s.u_temporal[:] = 1.0
    s.u_spatial[:] = 1.0
    u, out, _, converged = engine.estimate_slice(s, np.array([[5.0]]), np.ones((1, 1)))
    assert u[0] == pytest.approx(5.0, abs=1e-8)  # within the default ridge
    assert out[0, 0] == 0.0 and converged


def test_estimate_slice_degenerate():
    s = _state()
    with pytest.raises(DegenerateSliceError):
        engine.estimate_slice(s, np.zeros((6, 5)), np.zeros((6, 5)))


def test_prox_extremes(rng):
    s = _state(n1=8, n2=6, ranks=(2, 2, 2), seed=2)
    m = rng.standard_normal((8, 6))
    p = rng.random((8, 6)) < 0.7
    u, out, _, _ = engine.estimate_slice(s, m, p, gamma=0.0)
    # gamma = 0: s takes the whole masked residual
    np.testing.assert_allclose((engine.reconstruct(s, u) + out)[p], m[p], atol=1e-10)
    u, out, _, _ = engine.estimate_slice(s, m, p, gamma=1e9)
    assert not out.any()


def test_remove_outliers(rng):
    m = rng.standard_normal((4, 3))
    p = rng.random((4, 3)) < 0.5
    s = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(engine.remove_outliers(m, p, np.zeros_like(m)), np.where(p, m, 0.0))
    assert not engine.remove_outliers(m, np.ones_like(p), m).any()
    got = engine.remove_outliers(m, p, s)
    for i in range(4):
        for j in range(3):
            assert got[i, j] == (m[i, j] - s[i, j] if p[i, j] else 0.0)


def _one_shot_instance():
    # t = 1, lam = 1, alpha = beta = 0, full mask, vanishing initial gain
    s = _state(n1=6, n2=5, ranks=(2, 2, 1), seed=11, lam=1.0, init_gain=1e-12)
    rng = np.random.default_rng(5)
    m = rng.standard_normal((6, 5))
    p = np.ones((6, 5))
    u = np.array([1.3])
    return s, m, p, u


def test_one_shot_spatial_matches_normal_equations():
    s, m, p, u = _one_shot_instance()
    u_s, _ = engine.update_spatial_factor(s, m, p, u)
    lap = np.zeros((5, 5))
    for r in range(5):
        ref = direct_row_solve_spatial([m], [p], [u], s.core, s.u_temporal, s.u_spatial, r, 1.0, 0.0, lap)
        assert np.linalg.norm(u_s[r] - ref) <= 1e-6 * np.linalg.norm(ref)
        # same row from a plain least-squares fit
        d = (s.u_temporal @ (s.core @ u)).T
        lsq, *_ = np.linalg.lstsq(d.T, m[:, r], rcond=None)
        np.testing.assert_allclose(u_s[r], lsq, rtol=1e-6)


def test_one_shot_temporal_matches_normal_equations():
    s, m, p, u = _one_shot_instance()
    u_t, _ = engine.update_temporal_factor(s, m, p, u)
    for r in range(6):
        ref = direct_row_solve_temporal([m], [p], [u], s.core, s.u_spatial, s.u_temporal, r, 1.0, 0.0)
        assert np.linalg.norm(u_t[r] - ref) <= 1e-6 * np.linalg.norm(ref)


def test_recursion_matches_summed_normal_equations_over_several_slices():
    # with the factors and core held fixed, the recursive row solve equals the
    # explicit forgetting-weighted history solve plus the initial-gain prior
    n1, n2 = 6, 5
    s = _state(n1=n1, n2=n2, ranks=(2, 2, 2), seed=4, lam=0.9, init_gain=1e-10)
    rng = np.random.default_rng(8)
    slices = [rng.standard_normal((n1, n2)) for _ in range(4)]
    masks = [(rng.random((n1, n2)) < 0.8).astype(float) for _ in range(4)]
    weights = [rng.standard_normal(2) for _ in range(4)]
    start = s.u_spatial.copy()
    for m, p, u in zip(slices, masks, weights):
        s.u_spatial, s.gains_spatial = engine.update_spatial_factor(s, m * p, p, u)
    for r in range(n2):
        ref = direct_row_solve_spatial(
            slices, masks, weights, s.core, s.u_temporal, start, r, 0.9, 0.0, np.zeros((n2, n2))
        )
        np.testing.assert_allclose(s.u_spatial[r], ref, rtol=1e-6, atol=1e-8)


def test_unobserved_row_keeps_factor_rows():
    s = _state(n1=6, n2=5, ranks=(2, 2, 1), seed=3)
    m = np.random.default_rng(0).standard_normal((6, 5))
    p = np.ones((6, 5))
    p[:, 2] = 0
    p[4, :] = 0
    u_s, g_s = engine.update_spatial_factor(s, m * p, p, np.array([1.0]))
    np.testing.assert_array_equal(u_s[2], s.u_spatial[2])
    np.testing.assert_allclose(g_s[2], s.hyper.lam * s.gains_spatial[2])
    u_t, _ = engine.update_temporal_factor(s, m * p, p, np.array([1.0]))
    np.testing.assert_array_equal(u_t[4], s.u_temporal[4])


def test_constant_temporal_rows_with_zero_residual_do_not_move():
    s = _state(n1=6, n2=5, ranks=(1, 2, 1), seed=3, beta=50.0)
    s.u_temporal[:] = 1.0 / np.sqrt(6)
    m = engine.reconstruct(s, [0.8])
    u_t, _ = engine.update_temporal_factor(s, m, np.ones((6, 5)), np.array([0.8]))
    np.testing.assert_allclose(u_t, s.u_temporal, atol=1e-14)


def test_penalties_do_not_increase_on_zero_residual_slice():
    s = _state(n1=6, n2=2, ranks=(2, 1, 1), seed=5, alpha=1e4, beta=1e4,
               laplacian=_chain_laplacian(2))
    u = np.array([1.0])
    m = engine.reconstruct(s, u)
    p = np.ones(m.shape)
    u_s, _ = engine.update_spatial_factor(s, m, p, u)
    assert spatial_penalty(s.laplacian, u_s) <= spatial_penalty(s.laplacian, s.u_spatial)
    u_t, _ = engine.update_temporal_factor(s, m, p, u)
    assert temporal_penalty(u_t) <= temporal_penalty(s.u_temporal)


def test_core_update_examples(rng):
    s = _state(n1=4, n2=3, ranks=(4, 3, 1), seed=2)
    u = np.array([1.0])
    zero = engine.update_core(s.core, s.u_temporal, s.u_spatial, engine.reconstruct(s, u), np.ones((4, 3)), u)
    np.testing.assert_allclose(zero, s.core, atol=1e-14)
    m = rng.standard_normal((4, 3))
    core = engine.update_core(s.core, s.u_temporal, s.u_spatial, m, np.ones((4, 3)), u)
    s.core = core
    np.testing.assert_allclose(engine.reconstruct(s, u), m, atol=1e-8)


def test_core_update_ignores_unobserved_entries(rng):
    s = _state(n1=5, n2=4, ranks=(2, 2, 2), seed=6)
    u = rng.standard_normal(2)
    m = rng.standard_normal((5, 4))
    p = np.ones((5, 4))
    p[1, 2] = 0
    a = engine.update_core(s.core, s.u_temporal, s.u_spatial, m, p, u)
    m2 = m.copy()
    m2[1, 2] = 1e6
    b = engine.update_core(s.core, s.u_temporal, s.u_spatial, m2, p, u)
    np.testing.assert_array_equal(a, b)


def _exact_stream_state():
    rng = np.random.default_rng(21)
    n1, n2 = 20, 15
    a, _ = np.linalg.qr(rng.standard_normal((n1, 3)))
    b, _ = np.linalg.qr(rng.standard_normal((n2, 3)))
    core = rng.standard_normal((3, 3, 2))
    x = a @ (core @ np.array([1.0, 0.5])) @ b.T
    return x / np.sqrt(np.mean(x**2))


def test_identical_slices_converge_monotonically():
    # an initial gain on the scale of one slice's information; the default 1e2
    # damps a unit-RMS stream for far longer than 50 steps
    x = _exact_stream_state()
    s = _state(n1=20, n2=15, ranks=(3, 3, 2), seed=0, init_gain=0.1)
    p = np.ones(x.shape)
    errs = []
    for _ in range(50):
        res = engine.step(s, x, p)
        errs.append(np.linalg.norm(res.recovered - x) / np.linalg.norm(x))
    assert all(e2 <= e1 for e1, e2 in zip(errs[:20], errs[1:20]))
    assert errs[-1] < 1e-3


def test_step_skips_degenerate_slice():
    s = _state(n1=6, n2=5, ranks=(2, 2, 2))
    before = s.copy()
    res = engine.step(s, np.full((6, 5), np.nan), np.zeros((6, 5)))
    assert res.skipped and not res.converged and not res.outliers.any()
    assert s.t == 0
    for name in ("core", "u_temporal", "u_spatial", "gains_spatial", "gains_temporal"):
        assert np.array_equal(getattr(s, name), getattr(before, name))


def test_step_is_atomic_on_error():
    s = _state(n1=6, n2=5, ranks=(2, 2, 1))
    before = s.copy()
    bad = np.ones((6, 5))
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        engine.step(s, bad, np.ones((6, 5)))
    with pytest.raises(DimensionError):
        engine.step(s, np.ones((5, 5)), np.ones((5, 5)))
    assert s.t == 0 and np.array_equal(s.u_spatial, before.u_spatial)


def test_ortd_equals_stortd_with_zero_weights(rng):
    lap = _chain_laplacian(5)
    base = Hyperparams(ranks=(2, 2, 1), alpha=0.0, beta=0.0)
    a = engine.init(6, 5, base, lap, seed=1)
    b = engine.init(6, 5, Variant.ORTD.apply(Hyperparams(ranks=(2, 2, 1), alpha=9.0, beta=9.0)), lap, seed=1)
    for _ in range(5):
        m = rng.standard_normal((6, 5))
        p = rng.random((6, 5)) < 0.6
        ra, rb = engine.step(a, m, p), engine.step(b, m, p)
        assert np.array_equal(ra.recovered, rb.recovered)
        assert np.array_equal(ra.outliers, rb.outliers)


@given(st.integers(0, 2**31 - 1), st.floats(0.5, 1.0), st.floats(0.1, 0.9))
def test_stream_invariants(seed, lam, rate):
    rng = np.random.default_rng(seed)
    s = engine.init(
        7, 5, Hyperparams(ranks=(2, 2, 2), lam=lam, alpha=10.0, beta=10.0), _chain_laplacian(5), seed=seed
    )
    size = s.element_count()
    g0 = s.hyper.init_gain
    for t in range(1, 9):
        m = rng.standard_normal((7, 5))
        p = rng.random((7, 5)) < rate
        res = engine.step(s, np.where(p, m, np.nan), p)
        assert not res.outliers[~p].any()
        assert s.element_count() == size
        floor = lam**t * g0 * (1 - 1e-9)
        assert np.linalg.eigvalsh(s.gains_spatial).min() >= floor
        assert np.linalg.eigvalsh(s.gains_temporal).min() >= floor


def test_same_seed_same_results(rng):
    stream = rng.standard_normal((10, 6, 5))
    masks = rng.random((10, 6, 5)) < 0.7

    def go():
        s = _state(ranks=(2, 2, 2), seed=4, alpha=5.0, beta=5.0, laplacian=_chain_laplacian(5))
        return [engine.step(s, stream[t], masks[t]) for t in range(10)]

    for a, b in zip(go(), go()):
        assert np.array_equal(a.recovered, b.recovered) and np.array_equal(a.weight, b.weight)


def test_row_updates_are_order_independent(rng):
    # every row reads the pre-update snapshot: updating one column at a time gives the same answer
    s = _state(n1=6, n2=5, ranks=(2, 2, 2), seed=9, alpha=20.0, laplacian=_chain_laplacian(5))
    m = rng.standard_normal((6, 5))
    p = (rng.random((6, 5)) < 0.7).astype(float)
    u = rng.standard_normal(2)
    full, _ = engine.update_spatial_factor(s, m * p, p, u)
    for r in rng.permutation(5):
        single = p.copy()
        single[:, np.arange(5) != r] = 0
        part, _ = engine.update_spatial_factor(s, m * single, p, u)
        np.testing.assert_allclose(part[r], full[r], atol=1e-14)
