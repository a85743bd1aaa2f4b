"""Backward fitted-Q super-policy learning for confounded POMDPs with memoryless confounding."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .bandit import Backends
from .datamodel import (
    SEQUENTIAL_KINDS,
    EstimatorConfig,
    PolicyKind,
    SequentialDataset,
    SequentialPolicy,
    StageRule,
    one_hot,
    validate,
)
from .moments import (
    GroupMean,
    KernelExpansion,
    KernelSetup,
    MinimaxSolver,
    MomentProblem,
    cross_validate,
    fit_projection,
    fit_tabular,
)

log = logging.getLogger(__name__)

MAX_TUPLES = 64


def _groups(keys: np.ndarray):
    """(key tuple, row mask) pairs for the distinct rows of an integer key matrix."""
    n = keys.shape[0]
    if keys.shape[1] == 0:
        return [((), np.ones(n, dtype=bool))]
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    return [(tuple(int(v) for v in u), inv == k) for k, u in enumerate(uniq)]


@dataclass(frozen=True, eq=False)
class QBridgeStage:
    """Bridges at step t keyed by the behavior tuple a_{1:t}; the empty key marks an unindexed stage.

    Each bridge takes (w_t, o_{1:t}, [a_{1:t-1}, a_t]) and was fitted on targets divided by
    ``unscale``, which ``evaluate`` multiplies back.
    """

    t: int
    bridges: dict
    unscale: float
    n_actions: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def indexed(self) -> bool:
        return () not in self.bridges

    def evaluate(self, keys, w, obs, past, a) -> np.ndarray:
        """q_t at each row; ``keys`` (rows of a_{1:t}) is ignored for an unindexed stage."""
        n = len(w)
        a = np.broadcast_to(np.asarray(a, dtype=np.int64), (n,))
        acts = np.column_stack([np.reshape(past, (n, -1)).astype(np.int64), a])
        if not self.indexed:
            return self.unscale * self.bridges[()](w, obs, acts)
        out = np.empty(n)
        for key, rows in _groups(np.reshape(keys, (n, -1)).astype(np.int64)):
            out[rows] = self.unscale * self.bridges[key](w[rows], obs[rows], acts[rows])
        return out


@dataclass(frozen=True, eq=False)
class SequentialFit:
    kind: PolicyKind
    policy: SequentialPolicy
    stages: tuple
    cfg: EstimatorConfig | None
    diagnostics: dict = field(default_factory=dict)

    def act(self, t, obs, own, behavior) -> np.ndarray:
        return self.policy.act(t, obs, own, behavior)


def _tuples(K: int, length: int) -> list:
    return list(itertools.product(range(K), repeat=length))


def _fit_bridges(problem: MomentProblem, cfg, backends: Backends, resolved):
    """One bridge per target column, all on one design. Returns (bridges, resolved cfg)."""
    multi = problem.targets.ndim == 2
    if backends.bridge == "tabular":
        out = fit_tabular(problem)
        return (out if multi else [out]), None
    if resolved is None:
        resolved = (cfg or EstimatorConfig()).resolve(problem.n)
        if resolved.cv is not None:
            resolved = cross_validate(problem, resolved, backends.kq, backends.kg)
    kernels = KernelSetup.build(problem, backends.kq, backends.kg, resolved.median_cap)
    solver = MinimaxSolver(problem, resolved, kernels)
    if not multi:
        return [solver.solve()], resolved
    alpha = solver.coefficients(problem.targets)
    diag = {"rcond": solver._lu[resolved.q_penalty][1], "q_penalty": resolved.q_penalty}
    return [KernelExpansion(solver.Fq, alpha[:, j], kernels.kq, kernels.q_map, dict(diag)) for j in range(alpha.shape[1])], resolved


def _projection_backend(backend, resolved, width: int):
    if isinstance(backend, GroupMean) and not backend.fallback_widths:
        return GroupMean((width,))
    if hasattr(backend, "ridge") and backend.ridge is None and resolved is not None and resolved.mu_proj is not None:
        return type(backend)(backend.kernel, resolved.mu_proj)
    return backend


def _fit_rule(stage: QBridgeStage, dataset: SequentialDataset, kind: PolicyKind, backend, weights) -> StageRule:
    t, T, K = stage.t, dataset.horizon, dataset.n_actions
    n = dataset.n
    obs, w = dataset.obs(t), dataset.w[t - 1]
    past, acts = dataset.actions(t - 1), dataset.actions(t)
    models = {}
    if kind is PolicyKind.COMMON:
        # own history coincides with the observed one in the data
        x = np.hstack([obs, one_hot(past, K)])
        fitted = tuple(fit_projection(x, stage.evaluate(None, w, obs, past, a), backend, weights) for a in range(K))
        models = {key: fitted for key in _tuples(K, t - 1)}
    elif t == T:
        x = np.hstack([obs, one_hot(acts, K)])
        for own in _tuples(K, t - 1):
            own_rows = np.broadcast_to(np.asarray(own, dtype=np.int64), (n, t - 1))
            models[own] = tuple(fit_projection(x, stage.evaluate(None, w, obs, own_rows, a), backend, weights) for a in range(K))
    else:
        x = np.hstack([obs, one_hot(past, K), one_hot(acts[:, [t - 1]], K)])
        for prefix in _tuples(K, t - 1):
            keys = np.column_stack([np.broadcast_to(np.asarray(prefix, dtype=np.int64), (n, t - 1)), acts[:, t - 1]])
            models[prefix] = tuple(fit_projection(x, stage.evaluate(keys, w, obs, past, a), backend, weights) for a in range(K))
    return StageRule(t, T, kind, models, K)


def _pseudo_outcome(stage: QBridgeStage, rule: StageRule, dataset: SequentialDataset, prefix: tuple) -> np.ndarray:
    """V_{t+1} at each row: q_{t+1} at the rule's action, own history = observed A_{1:t},
    behavior history = (prefix, A_{t+1}) (prefix ignored when empty)."""
    t1 = stage.t
    n = dataset.n
    obs, own = dataset.obs(t1), dataset.actions(t1 - 1)
    if prefix:
        behavior = np.column_stack([np.broadcast_to(np.asarray(prefix, dtype=np.int64), (n, t1 - 1)), dataset.a[t1 - 1]])
    else:
        behavior = dataset.actions(t1)
    a_next = np.argmax(rule.scores(obs, own, behavior), axis=1)
    return stage.evaluate(behavior, dataset.w[t1 - 1], obs, own, a_next)


def learn_seq(dataset: SequentialDataset, kind, cfg: EstimatorConfig | None = None, backends: Backends = Backends(), weights=None) -> SequentialFit:
    """Backward loop t = T..1: fit q_t, project per candidate action, argmax.

    SuperSeq fits one bridge per behavior tuple a_{1:t} for t < T (sharing the design and
    penalties); Common fits a single bridge per step and ignores behavior actions.
    """
    kind = PolicyKind(kind)
    if kind not in SEQUENTIAL_KINDS:
        raise ValueError(f"{kind.value} is not a sequential policy class")
    report = validate(dataset)
    if not report.ok:
        raise ValueError("invalid dataset: " + "; ".join(report.failures))
    T, K = dataset.horizon, dataset.n_actions
    if T < 1:
        raise ValueError("horizon must be >= 1")
    if kind is PolicyKind.SUPERSEQ and K ** (T - 1) > MAX_TUPLES:
        raise ValueError(f"SuperSeq needs {K}^{T - 1} = {K ** (T - 1)} bridge fits per step; at most {MAX_TUPLES} supported")
    stages, rules = [None] * T, [None] * T
    resolved = None
    checks = []
    for t in range(T, 0, -1):
        unscale = float(T - t + 1)
        if t == T:
            keys = [()]
            targets = dataset.r[t - 1] / unscale
        else:
            keys = _tuples(K, t) if kind is PolicyKind.SUPERSEQ else [()]
            v_next = np.column_stack([_pseudo_outcome(stages[t], rules[t], dataset, key) for key in keys])
            bound = (T - t) * dataset.r_max
            worst = float(np.max(np.abs(v_next)))
            checks.append({"t": t, "max_abs_pseudo_outcome": worst, "bound": bound, "ok": worst <= bound})
            if worst > bound:
                log.warning("step %d: pseudo-outcome magnitude %.4g exceeds %.4g", t, worst, bound)
            targets = (dataset.r[t - 1][:, None] + v_next) / unscale
            if targets.shape[1] == 1:
                targets = targets[:, 0]
        problem = MomentProblem(dataset.w[t - 1], dataset.obs(t), dataset.o0, dataset.actions(t), targets, K, weights)
        bridges, resolved = _fit_bridges(problem, cfg, backends, resolved)
        stages[t - 1] = QBridgeStage(t, dict(zip(keys, bridges)), unscale, K, dict(getattr(bridges[0], "diagnostics", {})))
        backend = _projection_backend(backends.projection, resolved, dataset.obs(t).shape[1])
        rules[t - 1] = _fit_rule(stages[t - 1], dataset, kind, backend, weights)
    obs_dims = tuple(o.shape[1] for o in dataset.o)
    policy = SequentialPolicy(kind, tuple(rules), K, obs_dims)
    return SequentialFit(kind, policy, tuple(stages), resolved, {"pseudo_outcomes": checks})


def act_seq(policy, t: int, obs, own_actions, behavior_actions) -> np.ndarray:
    return policy.act(t, obs, own_actions, behavior_actions)


def estimate_value_seq(policy, stage1: QBridgeStage, eval_data: SequentialDataset, weights=None) -> float:
    """Mean over episodes of q_1(W_1, O_1, nu_1(O_1, A_1)), q_1 indexed by A_1 when the stage is."""
    obs = eval_data.obs(1)
    behavior = eval_data.actions(1)
    own = np.zeros((eval_data.n, 0), dtype=np.int64)
    a1 = np.asarray(policy.act(1, obs, own, behavior), dtype=np.int64)
    values = stage1.evaluate(behavior, eval_data.w[0], obs, own, a1)
    if weights is None:
        return float(np.mean(values))
    return float(np.sum(weights * values) / np.sum(weights))
