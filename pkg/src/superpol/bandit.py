"""Super-policy learning and value estimation for confounded contextual bandits."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import BANDIT_KINDS, BanditDataset, BanditPolicy, EstimatorConfig, PolicyKind, conditioning, validate
from .moments import (
    GroupMean,
    KernelSetup,
    Linear,
    MinimaxSolver,
    MomentProblem,
    cross_validate,
    fit_projection,
    fit_tabular,
)


@dataclass(frozen=True)
class Backends:
    """How to fit the bridge ("kernel" min-max or "tabular") and the per-action projections."""

    bridge: str = "kernel"
    projection: object = Linear()
    kq: object = None
    kg: object = None

    def __post_init__(self):
        if self.bridge not in ("kernel", "tabular"):
            raise ValueError(f"unknown bridge backend {self.bridge!r}")

    @classmethod
    def tabular(cls) -> "Backends":
        return cls("tabular", GroupMean())


@dataclass(frozen=True, eq=False)
class BanditFit:
    kind: PolicyKind
    bridge: object
    projections: tuple
    policy: BanditPolicy
    cfg: EstimatorConfig | None
    diagnostics: dict = field(default_factory=dict)

    def act(self, s, z, a_rec) -> np.ndarray:
        return self.policy.act(s, z, a_rec)


def moment_problem(dataset: BanditDataset) -> MomentProblem:
    """q takes (W, S, A); instruments are (S, Z, A); target R."""
    return MomentProblem(dataset.w, dataset.s, dataset.z, dataset.a[:, None], dataset.r, dataset.n_actions)


def fit_bridge(dataset: BanditDataset, cfg: EstimatorConfig | None = None, backends: Backends = Backends(), weights=None):
    """Bridge estimate and the (possibly cross-validated) resolved config."""
    problem = moment_problem(dataset)
    if weights is not None:
        problem = MomentProblem(problem.w, problem.x, problem.z, problem.actions, problem.targets, problem.n_actions, weights)
    if backends.bridge == "tabular":
        return fit_tabular(problem), None
    cfg = (cfg or EstimatorConfig()).resolve(problem.n)
    if cfg.cv is not None:
        cfg = cross_validate(problem, cfg, backends.kq, backends.kg)
    kernels = KernelSetup.build(problem, backends.kq, backends.kg, cfg.median_cap)
    return MinimaxSolver(problem, cfg, kernels).solve(), cfg


def _fallback_widths(kind: PolicyKind, d_s: int, d_z: int) -> tuple:
    if kind is PolicyKind.SUPER:
        return (d_s + d_z, d_s)
    if kind is PolicyKind.SZ:
        return (d_s,)
    return ()


def project(bridge, dataset: BanditDataset, kind: PolicyKind, backend, mu_proj=None, weights=None) -> BanditPolicy:
    """Regress q(W, S, a) on the class's conditioning set for every action a; argmax policy."""
    kind = PolicyKind(kind)
    n, K = dataset.n, dataset.n_actions
    d_s, d_z = dataset.s.shape[1], dataset.z.shape[1]
    x = conditioning(kind, dataset.s, dataset.z, dataset.a, K)
    if isinstance(backend, GroupMean) and not backend.fallback_widths:
        backend = GroupMean(_fallback_widths(kind, d_s, d_z))
    if hasattr(backend, "ridge") and backend.ridge is None and mu_proj is not None:
        backend = type(backend)(backend.kernel, mu_proj)
    models = []
    for a in range(K):
        target = bridge(dataset.w, dataset.s, np.full((n, 1), a))
        models.append(fit_projection(x, target, backend, weights=weights))
    return BanditPolicy(kind, tuple(models), K, d_s, d_z)


def learn(dataset: BanditDataset, kind, cfg: EstimatorConfig | None = None, backends: Backends = Backends(), weights=None, bridge=None) -> BanditFit:
    """Fit the bridge, project it per action on the policy class's inputs, and take the argmax.

    ``bridge`` skips the bridge fit and reuses a given one.
    """
    kind = PolicyKind(kind)
    if kind not in BANDIT_KINDS:
        raise ValueError(f"{kind.value} is not a bandit policy class")
    report = validate(dataset)
    if not report.ok:
        raise ValueError("invalid dataset: " + "; ".join(report.failures))
    resolved = cfg
    if bridge is None:
        bridge, resolved = fit_bridge(dataset, cfg, backends, weights)
    mu_proj = resolved.mu_proj if resolved is not None else None
    policy = project(bridge, dataset, kind, backends.projection, mu_proj, weights)
    diagnostics = dict(getattr(bridge, "diagnostics", {}))
    return BanditFit(kind, bridge, policy.models, policy, resolved, diagnostics)


def act(fit: BanditFit, s, z, a_rec) -> np.ndarray:
    return fit.policy.act(s, z, a_rec)


def _policy_actions(policy, s, z, a_rec) -> np.ndarray:
    chooser = policy.act if hasattr(policy, "act") else policy
    return np.asarray(chooser(s, z, a_rec), dtype=np.int64)


def estimate_value(policy, bridge, eval_data: BanditDataset, weights=None) -> float:
    """Mean of q(W_i, S_i, a_i) over evaluation rows, a_i the policy's action at (S_i, Z_i, A_i).

    Restricted classes (sonly, sz) go through the same functional; their policies simply
    ignore Z and A.
    """
    a_nu = _policy_actions(policy, eval_data.s, eval_data.z, eval_data.a)
    values = bridge(eval_data.w, eval_data.s, a_nu[:, None])
    if weights is None:
        return float(np.mean(values))
    return float(np.sum(weights * values) / np.sum(weights))
