import math

import numpy as np
import pytest

from superpol.envs import (
    BehaviorClonePolicy,
    ContinuousBanditSpec,
    DiscreteBanditSpec,
    FiniteBanditSpec,
    SequentialSpec,
    ToySpec,
    behavior_clone,
    catt_catc,
    constant_policy,
    oracle_value_exact,
    oracle_value_mc,
    random_finite_bandit_spec,
    random_finite_sequential_spec,
    toy_values,
)


@pytest.mark.parametrize(
    "eps, expected",
    [(0.5, (0.0, 0.4, 0.4)), (0.0, (0.6, 0.4, 1.0)), (1.0, (-0.6, 0.4, 1.0)), (0.7, (-0.24, 0.4, 0.4))],
)
def test_toy_values(eps, expected):
    np.testing.assert_allclose(toy_values(eps), expected, rtol=0, atol=1e-12)


def test_toy_values_grid():
    for eps in np.linspace(0, 1, 101):
        closed = (0.6 - 1.2 * eps, 0.4, abs(0.7 - eps) + abs(eps - 0.3))
        np.testing.assert_allclose(toy_values(eps), closed, rtol=0, atol=1e-12)


def test_spec_ranges():
    for cls in (ToySpec, DiscreteBanditSpec, ContinuousBanditSpec):
        with pytest.raises(ValueError):
            cls(1.5)
    with pytest.raises(ValueError):
        SequentialSpec(delta=-0.1)


def test_exact_oracle_examples():
    # eps = 1: disagreeing recovers U. Playing a = U everywhere is only right when S = 1,
    # value 2 (E[S] - 0.2) = 0.6; flipping only at S = 1 attains V(nu*) = 1.0.
    flip = lambda s, z, a: 1 - np.asarray(a)
    assert oracle_value_exact(flip, ToySpec(1.0)) == pytest.approx(0.6, abs=1e-12)
    flip_s1 = lambda s, z, a: np.where(np.asarray(s)[:, 0] == 1, 1 - np.asarray(a), a)
    assert oracle_value_exact(flip_s1, ToySpec(1.0)) == pytest.approx(1.0, abs=1e-12)
    assert oracle_value_exact(constant_policy(0), DiscreteBanditSpec(0.3)) == pytest.approx(0.0, abs=1e-12)
    for eps in (0.0, 0.25, 0.9):
        assert oracle_value_exact(behavior_clone, ToySpec(eps)) == pytest.approx(0.6 - 1.2 * eps, abs=1e-12)


def test_exact_oracle_rejects_sampled_spec():
    with pytest.raises(TypeError):
        oracle_value_exact(behavior_clone, ContinuousBanditSpec(0.5))


def test_sampling_is_seeded():
    a = ContinuousBanditSpec(0.7).sample(300, 11)
    b = ContinuousBanditSpec(0.7).sample(300, 11)
    c = ContinuousBanditSpec(0.7).sample(300, 12)
    assert a.equals(b) and not a.equals(c)
    assert SequentialSpec().sample(50, 3).equals(SequentialSpec().sample(50, 3))


def test_distinct_seeds_are_uncorrelated():
    r1 = ContinuousBanditSpec(0.5).sample(10_000, 1).r
    r2 = ContinuousBanditSpec(0.5).sample(10_000, 2).r
    assert abs(np.corrcoef(r1, r2)[0, 1]) < 0.05


@pytest.mark.slow
def test_discrete_behavior_law_of_large_numbers():
    spec = DiscreteBanditSpec(0.9)
    ds = spec.sample(1_000_000, 5)
    # replay the latent draw with the sampler's own stream
    g_su = np.random.default_rng(np.random.SeedSequence(5).spawn(5)[0])
    fin = spec.finite()
    s = g_su.choice(2, size=ds.n, p=fin.p_s)
    cum = np.cumsum(fin.p_u[s], axis=1)
    u = np.minimum((g_su.random(ds.n)[:, None] >= cum).sum(axis=1), 1)
    np.testing.assert_array_equal(s, ds.s[:, 0])
    assert abs(ds.a[u == 1].mean() - 0.1) <= 0.002
    # P(A=1 | W=1) = 0.6 (1 - eps) + 0.4 eps
    assert abs(ds.a[ds.w[:, 0] == 1].mean() - 0.42) <= 0.003


@pytest.mark.slow
def test_continuous_corr_z_s():
    ds = ContinuousBanditSpec(0.5).sample(1_000_000, 9)
    assert abs(np.corrcoef(ds.z[:, 0], ds.s[:, 0])[0, 1] - 3 / math.sqrt(11)) <= 0.01


def test_sequential_columns_and_reward_range():
    ds = SequentialSpec().sample(5, 0)
    assert ds.horizon == 2 and ds.n == 5
    assert ds.o0.shape == (5, 1)
    assert all(x.shape == (5, 1) for x in ds.o + ds.w)
    for r in ds.r:
        assert np.all((r >= -0.1) & (r <= 1.1))


def test_mc_matches_exact_on_finite_sequential():
    spec = random_finite_sequential_spec(np.random.default_rng(7))
    spec = type(spec)(spec.p_u1, spec.p_o0, spec.p_o, spec.p_w, spec.pi_b, spec.trans, spec.mean_r, 0.1)
    exact = spec.value(BehaviorClonePolicy())
    value, se = oracle_value_mc(BehaviorClonePolicy(), spec, 50_000, 1)
    assert abs(value - exact) <= 3 * se


def test_mc_standard_error_scaling():
    spec = DiscreteBanditSpec(0.7)
    for trial in range(20):
        _, se1 = oracle_value_mc(behavior_clone, spec, 4000, trial)
        _, se2 = oracle_value_mc(behavior_clone, spec, 8000, 1000 + trial)
        assert 0.6 <= se2 / se1 <= 0.82


def test_mc_zero_reward():
    fin = DiscreteBanditSpec(0.5).finite()
    zero = FiniteBanditSpec(fin.p_s, fin.p_u, fin.pi_b, fin.p_z, fin.p_w, np.zeros_like(fin.mean_r))
    assert oracle_value_mc(behavior_clone, zero, 500, 0) == (0.0, 0.0)
    with pytest.raises(ValueError):
        oracle_value_mc(behavior_clone, zero, 99, 0)


def test_mc_continuous_behavior_value():
    # E[U (A - 0.5)] with P(A=1 | U>0) = eps: (eps - 0.5) E|U| = (eps - 0.5) sqrt(2/pi)
    eps = 0.9
    value, se = oracle_value_mc(behavior_clone, ContinuousBanditSpec(eps), 200_000, 3)
    assert abs(value - (eps - 0.5) * math.sqrt(2 / math.pi)) <= 4 * se


def test_catt_catc_toy_eps0():
    rep = catt_catc(ToySpec(0.0))
    by_s = {r.s: r for r in rep.rows}
    assert by_s[0].catt == pytest.approx(-1.12) and by_s[0].catc == pytest.approx(0.48)
    assert by_s[1].catt == pytest.approx(4.48) and by_s[1].catc == pytest.approx(-1.92)
    assert rep.improves_over_standard


def test_catt_catc_toy_no_confounding():
    rep = catt_catc(ToySpec(0.5))
    assert all(r.catt * r.catc > 0 for r in rep.rows)
    assert not rep.improves_over_standard


def test_catt_catc_reward_free_of_action():
    fin = DiscreteBanditSpec(0.8).finite()
    flat = FiniteBanditSpec(fin.p_s, fin.p_u, fin.pi_b, fin.p_z, fin.p_w, np.repeat(fin.mean_r[:, :, :1], 2, axis=2))
    rep = catt_catc(flat)
    assert all(r.catt == 0 and r.catc == 0 for r in rep.rows)
    assert not (rep.improves_over_standard or rep.improves_over_behavior or rep.improves_over_both)


def test_catt_undefined_without_overlap():
    toy = ToySpec(0.0).finite()
    pi = np.zeros_like(toy.pi_b)
    pi[..., 1] = 1.0
    rep = catt_catc(FiniteBanditSpec(toy.p_s, toy.p_u, pi, toy.p_z, toy.p_w, toy.mean_r))
    assert all(r.catc is None and r.catt is not None for r in rep.rows)
    assert not rep.improves_over_standard
    with pytest.raises(ValueError):
        catt_catc(random_finite_bandit_spec(np.random.default_rng(0), n_actions=3))


def _values(spec):
    v_sup = spec.value(spec.optimal_policy(("s", "a")))
    return v_sup, spec.value(spec.optimal_policy(("s",))), spec.behavior_value()


def test_super_policy_dominates():
    rng = np.random.default_rng(11)
    for _ in range(200):
        spec = random_finite_bandit_spec(rng, n_z=2)
        v_sup = spec.value(spec.optimal_policy(("s", "z", "a")))
        assert v_sup >= max(spec.value(spec.optimal_policy(("s",))), spec.behavior_value()) - 1e-12


def test_strict_improvement_conditions():
    rng = np.random.default_rng(12)
    for _ in range(200):
        spec = random_finite_bandit_spec(rng, n_actions=2)
        v_sup, v_std, v_b = _values(spec)
        rep = catt_catc(spec)
        assert rep.improves_over_standard == (v_sup > v_std + 1e-12)
        assert rep.improves_over_behavior == (v_sup > v_b + 1e-12)
        strict_both = v_sup > max(v_std, v_b) + 1e-12
        if rep.improves_over_both:
            assert strict_both
        if spec.shape[0] == 1:
            assert rep.improves_over_both == strict_both


def test_joint_condition_is_not_necessary_with_two_states():
    # stratum 0: follow-the-recommendation beats the standard optimum; stratum 1: the recommendation is always wrong
    p_u = np.array([[0.5, 0.5], [0.5, 0.5]])
    pi_b = np.array([[[0.0, 1.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]])
    mean_r = np.array([[[0.0, 1.0], [1.0, 0.0]], [[1.0, 0.0], [1.0, 0.0]]])
    spec = FiniteBanditSpec(np.array([0.5, 0.5]), p_u, pi_b, np.ones((2, 2, 1)), np.ones((2, 2, 1)), mean_r)
    v_sup, v_std, v_b = _values(spec)
    assert v_sup > max(v_std, v_b)
    assert not catt_catc(spec).improves_over_both
