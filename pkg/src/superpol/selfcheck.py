"""Fast invariant checks behind ``superpol selfcheck``."""
from __future__ import annotations

import numpy as np

from .bandit import Backends, estimate_value, learn, moment_problem
from .datamodel import BanditDataset, EstimatorConfig
from .envs import (
    DiscreteBanditSpec,
    SequentialSpec,
    random_finite_bandit_spec,
    random_finite_sequential_spec,
    toy_values,
)
from .kernels import Delta
from .moments import GroupMean, KernelRidge, Linear, fit_minimax, fit_projection, fit_tabular
from .sequential import estimate_value_seq, learn_seq


def _toy():
    worst = 0.0
    for eps in np.linspace(0, 1, 101):
        v = toy_values(eps)
        closed = (0.6 - 1.2 * eps, 0.4, abs(0.7 - eps) + abs(eps - 0.3))
        worst = max(worst, float(np.max(np.abs(np.subtract(v, closed)))))
    return worst <= 1e-12, f"max gap {worst:.1e}"


def _dominance(seed):
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(50):
        spec = random_finite_bandit_spec(rng, n_z=2)
        v_super = spec.value(spec.optimal_policy(("s", "z", "a")))
        v_std = spec.value(spec.optimal_policy(("s",)))
        worst = min(worst, v_super - max(v_std, spec.behavior_value()))
    return worst >= -1e-12, f"min slack {worst:.1e}"


def _delta_vs_tabular(seed):
    ds = DiscreteBanditSpec(0.8).sample(2000, seed)
    problem = moment_problem(ds)
    at = (ds.w, ds.s, ds.a[:, None])
    exact = fit_tabular(problem)(*at)
    lam = EstimatorConfig().resolve(ds.n).lam
    gaps = [
        float(np.max(np.abs(fit_minimax(problem, Delta(), Delta(), EstimatorConfig(mu=pen / lam))(*at) - exact)))
        for pen in (1e-2, 1e-4, 1e-6, 1e-8, 1e-10)
    ]
    monotone = all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:]))
    return monotone and gaps[-1] <= 1e-3, "gaps " + " ".join(f"{g:.1e}" for g in gaps)


def _projections(seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 3, (300, 2)).astype(float)
    y = rng.normal(size=300)
    kr = fit_projection(x, y, KernelRidge(Delta(), 1e-10)).predict(x)
    gm = fit_projection(x, y, GroupMean()).predict(x)
    xl = rng.normal(size=(200, 3))
    yl = 0.5 + xl @ np.array([1.0, -2.0, 3.0])
    resid = float(np.max(np.abs(fit_projection(xl, yl, Linear()).predict(xl) - yl)))
    gap = float(np.max(np.abs(kr - gm)))
    return gap < 1e-6 and resid <= 1e-10, f"ridge/group-mean gap {gap:.1e}, OLS residual {resid:.1e}"


def _horizon_one(seed):
    seq = SequentialSpec(horizon=1).sample(300, seed)
    bd = BanditDataset(seq.o[0], seq.o0, seq.w[0], seq.a[0], seq.r[0], 2)
    cfg = EstimatorConfig(seed=seed)
    f_seq = learn_seq(seq, "common", cfg)
    f_ban = learn(bd, "sonly", cfg)
    alpha_same = np.array_equal(f_seq.stages[0].bridges[()].coef, f_ban.bridge.coef)
    acts_same = np.array_equal(f_seq.policy.act(1, seq.o[0], np.zeros((300, 0)), seq.a[0][:, None]), f_ban.policy.act(bd.s, bd.z, bd.a))
    v_same = estimate_value_seq(f_seq.policy, f_seq.stages[0], seq) == estimate_value(f_ban.policy, f_ban.bridge, bd)
    return alpha_same and acts_same and v_same, ""


def _population(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        spec = random_finite_sequential_spec(rng)
        ds, p = spec.population()
        fit = learn_seq(ds, "superseq", backends=Backends.tabular(), weights=p)
        worst = max(worst, abs(estimate_value_seq(fit.policy, fit.stages[0], ds, p) - spec.value(fit.policy)))
    return worst <= 1e-10, f"max gap {worst:.1e}"


def _determinism(seed):
    a = DiscreteBanditSpec(0.9).sample(500, seed)
    b = DiscreteBanditSpec(0.9).sample(500, seed)
    return a.equals(b), ""


CHECKS = (
    ("toy closed forms", lambda seed: _toy()),
    ("super-policy dominance", _dominance),
    ("delta-kernel min-max matches tabular", _delta_vs_tabular),
    ("projection backends", _projections),
    ("horizon-one reduction", _horizon_one),
    ("population value identification", _population),
    ("seeded sampling", _determinism),
)


def run_checks(seed: int = 0):
    for name, check in CHECKS:
        try:
            ok, detail = check(seed)
        except Exception as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        yield name, bool(ok), detail
