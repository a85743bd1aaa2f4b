import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superpol.bandit import Backends, fit_bridge, learn
from superpol.datamodel import random_split
from superpol.envs import BehaviorClonePolicy, DiscreteBanditSpec, ToySpec, behavior_clone, random_finite_sequential_spec
from superpol.evaluation import (
    ExperimentConfig,
    ExperimentReport,
    ReplicationError,
    ReportRow,
    aggregate,
    config_hash,
    parse_csv,
    regret,
    render,
    run_replications,
    split_evaluate,
)

TAB = Backends.tabular()


def _two_pass(values):
    n = len(values)
    mean = sum(values) / n
    if n == 1:
        return mean, 0.0
    return mean, math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1))


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60))
@settings(max_examples=100, deadline=None)
def test_aggregate_matches_two_pass(values):
    mean, sd = aggregate(values)
    m2, s2 = _two_pass(values)
    assert mean == pytest.approx(m2, abs=1e-12 * max(1.0, max(map(abs, values))))
    assert sd == pytest.approx(s2, abs=1e-10 * max(1.0, max(map(abs, values))))
    assert sd >= 0


def test_regret_examples():
    toy = ToySpec(0.0).finite()
    assert regret(toy.optimal_policy(), toy, reference_kind="super") == 0.0
    assert regret(behavior_clone, ToySpec(0.0), reference_kind="super") == pytest.approx(0.4, abs=1e-12)
    with pytest.raises(ValueError):
        regret(behavior_clone, ToySpec(0.0), oracle="bogus")


def test_regret_mc_close_to_exact():
    spec = DiscreteBanditSpec(0.7)
    exact = regret(behavior_clone, spec)
    mc = regret(behavior_clone, spec, oracle="mc", episodes=200_000, seed=1)
    assert abs(exact - mc) < 0.01


def test_regret_finite_sequential_nonnegative():
    spec = random_finite_sequential_spec(np.random.default_rng(0))
    assert regret(BehaviorClonePolicy(), spec) >= -1e-12


def test_sonly_regret_discrete_unconfounded():
    ds = DiscreteBanditSpec(0.5).sample(5000, 3)
    fit = learn(ds, "sonly", backends=TAB)
    assert abs(regret(fit.policy, DiscreteBanditSpec(0.5)) - 0.25) <= 0.05


def _small_cfg(reps=4, **kw):
    return ExperimentConfig(DiscreteBanditSpec(0.9), 800, reps, seed_base=10, backends=TAB, setting="eps=0.9", **kw)


def test_replications_are_deterministic_and_complete():
    a, b = run_replications(_small_cfg()), run_replications(_small_cfg())
    assert render(a, "csv") == render(b, "csv")
    assert {r.kind for r in a.rows} == {"sonly", "sz", "super"}
    assert a.provenance["seeds"] == [10, 11, 12, 13]
    for r in a.rows:
        values = a.samples[(r.kind, r.setting)]
        assert (r.mean, r.sd) == pytest.approx(_two_pass(values), abs=1e-12)


def test_replication_order_does_not_matter():
    rep = run_replications(_small_cfg())
    assert run_replications(_small_cfg(1)).row("super", "eps=0.9").sd == 0.0
    shuffled = [run_replications(ExperimentConfig(DiscreteBanditSpec(0.9), 800, 1, seed_base=10 + i, backends=TAB)) for i in (3, 1, 0, 2)]
    for kind in ("sonly", "sz", "super"):
        values = sorted(s.samples[(kind, "")][0] for s in shuffled)
        assert sorted(rep.samples[(kind, "eps=0.9")]) == values
        assert aggregate(values)[0] == pytest.approx(rep.row(kind, "eps=0.9").mean, abs=1e-12)


class _BrokenAtSix(DiscreteBanditSpec):
    def sample(self, n, seed):
        ds = super().sample(n, seed)
        if seed == 6:
            # a single z level leaves the tabular system without its instruments
            return type(ds)(ds.s, np.zeros_like(ds.z), ds.w, ds.a, ds.r, 2)
        return ds


def test_failed_replication_names_seed():
    bad = ExperimentConfig(_BrokenAtSix(0.7), 200, 3, seed_base=5, backends=TAB)
    with pytest.raises(ReplicationError, match="seed 6") as info:
        run_replications(bad)
    assert info.value.seed == 6


def test_config_validation_and_hash():
    with pytest.raises(ValueError):
        ExperimentConfig(DiscreteBanditSpec(0.5), 9)
    with pytest.raises(ValueError):
        ExperimentConfig(DiscreteBanditSpec(0.5), 100, 0)
    assert config_hash(_small_cfg()) == config_hash(_small_cfg())
    assert config_hash(_small_cfg()) != config_hash(_small_cfg(5))


def test_render_empty_report():
    assert render(ExperimentReport(), "csv") == "kind,setting,mean,sd,n_reps\n"
    assert render(ExperimentReport()) == "| setting |\n|---|\n"


def _table2_shaped():
    rows = []
    for i, eps in enumerate((0.5, 0.7, 0.9)):
        for j, kind in enumerate(("sonly", "sz", "super")):
            rows.append(ReportRow(kind, f"eps={eps}", 0.25 - 0.03 * i * j, 0.01 * (j + 1), 50))
    return ExperimentReport(tuple(rows))


def test_render_table_layout():
    lines = render(_table2_shaped()).splitlines()
    assert lines[0] == "| setting | sonly | sz | super |"
    assert len(lines) == 2 + 3
    assert all(line.count("|") == 5 for line in lines)
    assert lines[4].endswith("0.130 (0.030)* |")


def test_csv_round_trip():
    rep = _table2_shaped()
    back = parse_csv(render(rep, "csv"))
    assert back.rows == rep.rows
    with pytest.raises(ValueError):
        parse_csv("a,b\n")


def test_split_evaluate_behavior_and_determinism():
    ds = DiscreteBanditSpec(0.9).sample(2000, 0)
    a = split_evaluate(ds, splits=5, seed=3, backends=TAB)
    b = split_evaluate(ds, splits=5, seed=3, backends=TAB)
    assert render(a, "csv") == render(b, "csv")
    assert a.metric == "value"
    q_all, _ = fit_bridge(ds, backends=TAB)
    expected = []
    for child in np.random.SeedSequence(3).spawn(5):
        _, held = random_split(ds, 0.6, child)
        expected.append(np.mean(q_all(held.w, held.s, held.a[:, None])))
    np.testing.assert_allclose(a.samples[("behavior", "")], expected, rtol=0, atol=1e-14)
    assert a.row("behavior", "").se == pytest.approx(a.row("behavior", "").sd / math.sqrt(5))


def test_split_evaluate_super_beats_sonly():
    ds = DiscreteBanditSpec(0.9).sample(5000, 1)
    rep = split_evaluate(ds, splits=20, seed=0, backends=TAB)
    assert rep.row("super", "").mean >= rep.row("sonly", "").mean


def test_merged_reports_keep_samples():
    a = run_replications(_small_cfg(2))
    b = run_replications(ExperimentConfig(DiscreteBanditSpec(0.7), 800, 2, backends=TAB, setting="eps=0.7"))
    m = a.merged(b)
    assert len(m.rows) == 6 and len(m.samples) == 6


@pytest.mark.parametrize("eps", [0.7, 0.9])
def test_regret_ordering_in_confounded_settings(eps):
    rep = run_replications(ExperimentConfig(DiscreteBanditSpec(eps), 5000, 20, seed_base=400, backends=TAB))
    rows = {k: rep.row(k, "") for k in ("sonly", "sz", "super")}

    def pooled(a, b):
        return math.sqrt((a.sd**2 + b.sd**2) / 2 / a.n_reps)

    for small, big in (("super", "sz"), ("sz", "sonly")):
        assert rows[small].mean <= rows[big].mean + pooled(rows[small], rows[big])
