import numpy as np
import pytest

from superpol.bandit import Backends, estimate_value, fit_bridge, learn, moment_problem
from superpol.datamodel import BanditDataset, BanditPolicy, PolicyKind
from superpol.envs import DiscreteBanditSpec, FiniteBanditSpec, ToySpec, behavior_clone
from superpol.evaluation import regret
from superpol.moments import LinearModel, fit_tabular

TAB = Backends.tabular()


def _proxy_toy(eps, strength=0.8):
    toy = ToySpec(eps).finite()
    prox = np.broadcast_to(np.array([[strength, 1 - strength], [1 - strength, strength]]), (2, 2, 2)).copy()
    return FiniteBanditSpec(toy.p_s, toy.p_u, toy.pi_b, prox, prox.copy(), toy.mean_r)


def _population_fits(spec):
    ds, p = spec.population()
    bridge, _ = fit_bridge(ds, backends=TAB, weights=p)
    return ds, p, bridge, {k: learn(ds, k, backends=TAB, weights=p, bridge=bridge) for k in ("sonly", "sz", "super")}


@pytest.mark.parametrize("eps", [0.1, 0.3, 0.7, 0.9])
def test_population_super_policy_is_optimal(eps):
    spec = _proxy_toy(eps)
    ds, p, bridge, fits = _population_fits(spec)
    best = spec.value(spec.optimal_policy(("s", "z", "a")))
    assert spec.value(fits["super"].policy.act) == pytest.approx(best, abs=1e-12)
    assert regret(fits["super"].policy, spec, reference_kind="super") == pytest.approx(0.0, abs=1e-12)
    # the identified value formula is exact at the population level
    for fit in fits.values():
        assert estimate_value(fit.policy, bridge, ds, p) == pytest.approx(spec.value(fit.policy.act), abs=1e-10)


@pytest.mark.parametrize("eps", [0.1, 0.5, 0.9])
def test_population_class_nesting(eps):
    spec = _proxy_toy(eps)
    _, _, _, fits = _population_fits(spec)
    v = {k: spec.value(f.policy.act) for k, f in fits.items()}
    assert v["super"] >= v["sz"] - 1e-12
    assert v["sz"] >= v["sonly"] - 1e-12
    assert v["super"] >= spec.behavior_value() - 1e-12


def test_discrete_unconfounded_regrets():
    ds = DiscreteBanditSpec(0.5).sample(5000, 0)
    bridge, _ = fit_bridge(ds, backends=TAB)
    r = {k: regret(learn(ds, k, backends=TAB, bridge=bridge).policy, DiscreteBanditSpec(0.5)) for k in ("sonly", "sz", "super")}
    assert abs(r["super"] - r["sz"]) <= 0.02
    assert abs(r["sonly"] - 0.25) <= 0.05


def test_uninformative_proxy_gives_stratum_means():
    ds = ToySpec(0.5).finite().sample(4000, 1)
    q = fit_tabular(moment_problem(ds))
    for s in (0, 1):
        for a in (0, 1):
            rows = (ds.s[:, 0] == s) & (ds.a == a)
            assert q(np.zeros(1), np.array([s]), np.array([a]))[0] == pytest.approx(ds.r[rows].mean(), abs=1e-10)
    # without confounding the learned super action is the enumeration argmax of E[R(a) | S, A']
    fit = learn(ds, "super", backends=TAB)
    ref = ToySpec(0.5).finite().optimal_policy(("s", "a"))
    s, a = np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1])
    np.testing.assert_array_equal(fit.act(s[:, None], np.zeros((4, 1)), a), ref(s[:, None], np.zeros((4, 1)), a))


def test_toy_eps0_super_actions():
    ref = ToySpec(0.0).finite().optimal_policy(("s", "a"))
    s = np.ones((2, 1))
    np.testing.assert_array_equal(ref(s, np.zeros((2, 1)), np.array([1, 0])), [1, 0])


def test_sonly_ignores_z_and_recommendation():
    ds = DiscreteBanditSpec(0.8).sample(2000, 2)
    fit = learn(ds, "sonly", backends=TAB)
    s = np.array([[0.0], [1.0]] * 2)
    base = fit.act(s, np.zeros((4, 1)), np.zeros(4, int))
    np.testing.assert_array_equal(fit.act(s, np.ones((4, 1)), np.ones(4, int)), base)


def test_dominating_projection_always_picks_it():
    models = (LinearModel(0.3, np.array([1.0])), LinearModel(1.3, np.array([1.0])))
    pol = BanditPolicy(PolicyKind.SONLY, models, 2, 1, 1)
    s = np.random.default_rng(0).normal(size=(50, 1))
    assert np.all(pol.act(s, s, np.zeros(50, int)) == 1)


def test_act_dimension_mismatch():
    fit = learn(DiscreteBanditSpec(0.8).sample(500, 2), "super", backends=TAB)
    with pytest.raises(ValueError):
        fit.act(np.zeros((3, 2)), np.zeros((3, 1)), np.zeros(3, int))


def test_constant_bridge_value():
    ds = DiscreteBanditSpec(0.7).sample(300, 0)
    const = lambda w, s, a: np.full(len(a), 0.37)
    for policy in (behavior_clone, learn(ds, "super", backends=TAB).policy):
        assert estimate_value(policy, const, ds) == pytest.approx(0.37)


def test_behavior_value_is_mean_bridge():
    ds = DiscreteBanditSpec(0.7).sample(1000, 4)
    q, _ = fit_bridge(ds, backends=TAB)
    assert estimate_value(behavior_clone, q, ds) == pytest.approx(np.mean(q(ds.w, ds.s, ds.a[:, None])), abs=1e-14)


def test_reward_shift_keeps_actions():
    ds = DiscreteBanditSpec(0.8).sample(3000, 5)
    shifted = BanditDataset(ds.s, ds.z, ds.w, ds.a, ds.r + 2.5, 2)
    a, b = learn(ds, "super", backends=TAB), learn(shifted, "super", backends=TAB)
    x = np.column_stack([ds.s, ds.z, ds.a])
    for m0, m1 in zip(a.projections, b.projections):
        np.testing.assert_allclose(m1.predict(x), m0.predict(x) + 2.5, atol=1e-10)
    np.testing.assert_array_equal(a.act(ds.s, ds.z, ds.a), b.act(ds.s, ds.z, ds.a))


def test_action_relabeling():
    ds = DiscreteBanditSpec(0.8).sample(3000, 6)
    flipped = BanditDataset(ds.s, ds.z, ds.w, 1 - ds.a, ds.r, 2)
    a, b = learn(ds, "super", backends=TAB), learn(flipped, "super", backends=TAB)
    np.testing.assert_array_equal(b.act(ds.s, ds.z, 1 - ds.a), 1 - a.act(ds.s, ds.z, ds.a))


def test_unseen_stratum_falls_back_to_coarser_groups():
    ds = DiscreteBanditSpec(0.8).sample(2000, 7)
    bridge, _ = fit_bridge(ds, backends=TAB)
    sup, sonly = (learn(ds, k, backends=TAB, bridge=bridge) for k in ("super", "sonly"))
    s = np.array([[0.0], [1.0]])
    z = np.full((2, 1), 5.0)
    np.testing.assert_array_equal(sup.act(s, z, np.array([0, 1])), sonly.act(s, z, np.array([0, 1])))


def test_learn_rejects_sequential_kind_and_bad_data():
    ds = DiscreteBanditSpec(0.8).sample(100, 0)
    with pytest.raises(ValueError):
        learn(ds, "common")
    r = ds.r.copy()
    r[0] = np.inf
    with pytest.raises(ValueError, match="invalid dataset"):
        learn(BanditDataset(ds.s, ds.z, ds.w, ds.a, r, 2), "super")


def test_kernel_pipeline_runs():
    from superpol.envs import ContinuousBanditSpec

    ds = ContinuousBanditSpec(0.9).sample(200, 0)
    fit = learn(ds, "super")
    assert fit.act(ds.s, ds.z, ds.a).shape == (200,)
    assert len(fit.projections) == 2


@pytest.mark.slow
def test_super_estimated_value_beats_sonly_across_replications():
    wins = 0
    for rep in range(50):
        ds = DiscreteBanditSpec(0.9).sample(5000, 500 + rep)
        bridge, _ = fit_bridge(ds, backends=TAB)
        sup, sonly = (learn(ds, k, backends=TAB, bridge=bridge).policy for k in ("super", "sonly"))
        wins += estimate_value(sup, bridge, ds) >= estimate_value(sonly, bridge, ds)
    assert wins >= 45
