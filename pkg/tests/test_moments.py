import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superpol.bandit import moment_problem
from superpol.datamodel import CVSpec, EstimatorConfig
from superpol.envs import ContinuousBanditSpec, DiscreteBanditSpec
from superpol.kernels import Delta, Gaussian, gram
from superpol.moments import (
    EstimationError,
    GroupMean,
    KernelExpansion,
    KernelRidge,
    KernelSetup,
    Linear,
    MinimaxSolver,
    MomentProblem,
    cv_minimax,
    cv_projection,
    dump_model,
    fit_minimax,
    fit_projection,
    fit_tabular,
    objective_value,
    psi,
)


def _continuous_problem(n=150, seed=0):
    return moment_problem(ContinuousBanditSpec(0.7).sample(n, seed))


def _population_bridge(eps):
    """Hand-solved 2x2 system for the discrete proxies: P(w | u) q(., a) = E[R | u, a]."""
    prox = np.array([[0.6, 0.4], [0.4, 0.6]])
    pa1 = np.array([eps, 1 - eps])
    out = {}
    for a in (0, 1):
        pa = pa1 if a == 1 else 1 - pa1
        post = (0.5 * pa)[:, None] * prox
        post /= post.sum(axis=0)
        M = (prox.T @ post).T
        r = np.array([sum(post[u, z] * (u - 0.5) * (a - 0.5) for u in (0, 1)) for z in (0, 1)])
        out[a] = np.linalg.solve(M, r)
    return out


def test_zero_targets_give_zero_bridge():
    p = _continuous_problem()
    p0 = p.with_targets(np.zeros(p.n))
    q = fit_minimax(p0)
    assert np.max(np.abs(q(p.w, p.x, p.actions))) <= 1e-8
    zero = KernelExpansion(q.anchors, np.zeros(p.n), q.spec, q.feature_map)
    assert objective_value(q, p0) == pytest.approx(objective_value(zero, p0), abs=1e-12)


def test_minimax_beats_random_probes():
    p = _continuous_problem(120, 3)
    cfg = EstimatorConfig().resolve(p.n)
    q = fit_minimax(p, cfg=cfg)
    kg = KernelSetup.build(p, None, None, cfg.median_cap).kg
    best = objective_value(q, p, kg, cfg)
    rng = np.random.default_rng(0)
    for _ in range(20):
        coef = q.coef + rng.normal(scale=np.abs(q.coef).mean() + 1e-3, size=q.coef.shape)
        probe = KernelExpansion(q.anchors, coef, q.spec, q.feature_map)
        assert best <= objective_value(probe, p, kg, cfg) + 1e-8


def test_representer_consistency():
    p = _continuous_problem()
    q = fit_minimax(p)
    direct = gram(q.anchors, q.anchors, q.spec) @ q.coef
    np.testing.assert_allclose(q(p.w, p.x, p.actions), direct, rtol=0, atol=1e-12)


def test_minimax_is_deterministic():
    p = _continuous_problem()
    assert np.array_equal(fit_minimax(p).coef, fit_minimax(p).coef)


def test_multiple_targets_share_the_design():
    p = _continuous_problem()
    cfg = EstimatorConfig().resolve(p.n)
    solver = MinimaxSolver(p, cfg, KernelSetup.build(p))
    Y = np.column_stack([p.targets, 2 * p.targets + 1])
    both = solver.coefficients(Y)
    np.testing.assert_allclose(both[:, 0], solver.coefficients(p.targets), atol=1e-12)
    np.testing.assert_allclose(both[:, 1], solver.coefficients(2 * p.targets + 1), atol=1e-12)


def test_moment_and_objective_scale_with_targets():
    p = _continuous_problem()
    cfg = EstimatorConfig().resolve(p.n)
    q = fit_minimax(p, cfg=cfg)
    zero = KernelExpansion(q.anchors, np.zeros(p.n), q.spec, q.feature_map)
    g = np.random.default_rng(0).normal(size=p.n)
    scaled = p.with_targets(3 * p.targets)
    assert psi(zero, g, scaled) == pytest.approx(3 * psi(zero, g, p), rel=1e-12)
    kg = Gaussian(1.0)
    assert objective_value(zero, scaled, kg, cfg) == pytest.approx(9 * objective_value(zero, p, kg, cfg), rel=1e-10)


def test_delta_minimax_sweep_is_monotone():
    ds = DiscreteBanditSpec(0.8).sample(2000, 0)
    p = moment_problem(ds)
    exact = fit_tabular(p)(ds.w, ds.s, ds.a[:, None])
    lam = EstimatorConfig().resolve(p.n).lam
    gaps = []
    for pen in (1e-2, 1e-4, 1e-6, 1e-8, 1e-10):
        q = fit_minimax(p, Delta(), Delta(), EstimatorConfig(mu=pen / lam))
        gaps.append(np.max(np.abs(q(ds.w, ds.s, ds.a[:, None]) - exact)))
    assert all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 1e-3


def test_tabular_identity_case():
    rng = np.random.default_rng(1)
    n = 400
    u = rng.integers(0, 3, n)
    s = rng.integers(0, 2, n)
    a = rng.integers(0, 2, n)
    f = lambda u_, a_: np.sin(u_ + 2.0 * a_)
    p = MomentProblem(u, s, u, a, f(u, a))
    q = fit_tabular(p)
    for uu in range(3):
        for aa in range(2):
            got = q(np.array([uu]), np.array([0]), np.array([aa]))
            assert got[0] == pytest.approx(f(uu, aa), abs=1e-12)


def test_tabular_population_matches_hand_solution():
    spec = DiscreteBanditSpec(0.9).finite()
    ds, prob = spec.population()
    p = MomentProblem(ds.w, ds.s, ds.z, ds.a[:, None], ds.r, 2, prob)
    q = fit_tabular(p)
    want = _population_bridge(0.9)
    for s in (0, 1):
        for a in (0, 1):
            for w in (0, 1):
                assert q(np.array([w]), np.array([s]), np.array([a]))[0] == pytest.approx(want[a][w], abs=1e-10)


def test_tabular_sample_close_to_population_bridge():
    ds = DiscreteBanditSpec(0.9).sample(5000, 0)
    q = fit_tabular(moment_problem(ds))
    want = _population_bridge(0.9)
    gap = max(
        abs(q(np.array([w]), np.array([s]), np.array([a]))[0] - want[a][w])
        for s in (0, 1) for a in (0, 1) for w in (0, 1)
    )
    assert gap <= 0.05


def test_tabular_missing_z_level():
    rng = np.random.default_rng(0)
    n = 100
    s = np.zeros(n)
    a = rng.integers(0, 2, n)
    z = np.where(a == 1, 0, rng.integers(0, 2, n))
    w = rng.integers(0, 2, n)
    with pytest.raises(EstimationError, match="stratum"):
        fit_tabular(MomentProblem(w, s, z, a, rng.normal(size=n)))


def test_tabular_rank_deficient():
    n = 200
    z = np.arange(n) % 2
    w = np.zeros(n)
    w[:2] = 1  # w barely varies and independently of z
    p = MomentProblem(np.r_[w[:-2], 1.0, 1.0], np.zeros(n), z, np.zeros(n, int), np.ones(n))
    with pytest.raises(EstimationError, match="rank-deficient"):
        fit_tabular(p)


@given(seed=st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_linear_projection_exact(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(50, 4))
    y = 0.3 + x @ rng.normal(size=4)
    pred = fit_projection(x, y, Linear()).predict(x)
    assert np.max(np.abs(pred - y)) <= 1e-10


def test_linear_projection_min_norm_on_collinear_columns():
    x = np.column_stack([np.r_[np.ones(5), np.zeros(5)], np.r_[np.zeros(5), np.ones(5)]])
    y = np.r_[np.ones(5), 3 * np.ones(5)]
    np.testing.assert_allclose(fit_projection(x, y, Linear()).predict(x), y, atol=1e-12)


def test_kernel_ridge_large_penalty_gives_mean():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(80, 2))
    y = rng.normal(size=80)
    pred = fit_projection(x, y, KernelRidge(None, 1e6)).predict(x)
    assert np.max(np.abs(pred - y.mean())) < 1e-3


def test_delta_ridge_equals_group_means():
    rng = np.random.default_rng(3)
    x = rng.integers(0, 3, (300, 2)).astype(float)
    y = rng.normal(size=300)
    kr = fit_projection(x, y, KernelRidge(Delta(), 1e-10)).predict(x)
    gm = fit_projection(x, y, GroupMean()).predict(x)
    assert np.max(np.abs(kr - gm)) < 1e-6


def test_projection_fixed_point():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(60, 2))
    K = gram(x, x, Gaussian(3.0))
    y = K @ rng.normal(size=60)
    model = fit_projection(x, y, KernelRidge(Gaussian(3.0), 1e-12))
    pred = model.offset + gram(model.features(x), model.anchors, model.spec) @ model.coef
    assert np.max(np.abs(pred - model.predict(x))) < 1e-12
    assert np.max(np.abs(model.predict(x) - y)) < 1e-6 * max(1.0, np.abs(y).max())


def test_projection_rejects_nonfinite():
    with pytest.raises(EstimationError):
        fit_projection(np.zeros((3, 1)), np.array([1.0, np.nan, 0.0]))


def test_group_mean_fallback():
    x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([1.0, 3.0, 10.0])
    model = fit_projection(x, y, GroupMean((1,)))
    np.testing.assert_allclose(model.predict(np.array([[0.0, 5.0], [7.0, 7.0]])), [2.0, 14.0 / 3.0])


def test_cv_is_deterministic_and_ties_small():
    p = _continuous_problem(100, 5)
    cfg = EstimatorConfig(seed=3)
    grid = (1e-4, 1e-2, 1.0)
    a, sa = cv_minimax(p, cfg, grid, 4)
    b, sb = cv_minimax(p, cfg, grid, 4)
    assert a == b and np.array_equal(sa, sb)
    x = np.random.default_rng(0).normal(size=(40, 1))
    choice, scores = cv_projection(x, np.full(40, 2.0), (1e-6, 1e-3, 1.0), 4, seed=0)
    assert choice == 1e-6


def test_cv_rejects_tiny_folds():
    p = _continuous_problem(6, 0)
    with pytest.raises(EstimationError):
        cv_minimax(p, EstimatorConfig(), (1e-3,), 5)
    with pytest.raises(ValueError):
        CVSpec(folds=1)


def test_dump_model_header():
    p = _continuous_problem(30)
    text = dump_model(fit_minimax(p))
    assert text.startswith("superpol-model 1 kernel-expansion")
    assert len(text.splitlines()) == 1 + 2 + 30
