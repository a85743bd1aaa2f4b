"""Bridge-function estimation from conditional moment restrictions, and projection regressors.

A moment problem asks for q with E[q(W, X, A) - Y | X, Z, A] = 0. The min-max estimator
searches q and the test functions g over Gaussian (or exact-match) RKHSs; both optima lie in
the span of kernel sections at the data rows, so the fit reduces to one n x n linear solve.
The tabular estimator solves the same equation exactly stratum by stratum.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .datamodel import EstimatorConfig, one_hot
from .kernels import Delta, Gaussian, Standardizer, gram, median_heuristic, standardize

log = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    """A fit could not be computed (singular system, missing stratum, non-finite values)."""


@dataclass(frozen=True, eq=False)
class MomentProblem:
    """Rows of (w, x, z, actions, targets).

    q takes (w, x, actions); the instruments are (x, z, actions). ``targets`` may be a
    matrix, one column per right-hand side sharing the same design. ``weights`` (optional,
    nonnegative) turn rows into atoms of a distribution; only the tabular solver and the
    linear / group-mean projections honor them.
    """

    w: np.ndarray
    x: np.ndarray
    z: np.ndarray
    actions: np.ndarray
    targets: np.ndarray
    n_actions: int = 2
    weights: np.ndarray | None = None

    def __post_init__(self):
        def mat(v, dtype=float):
            v = np.asarray(v, dtype=dtype)
            return v.reshape(-1, 1) if v.ndim == 1 else v

        object.__setattr__(self, "w", mat(self.w))
        object.__setattr__(self, "x", mat(self.x))
        object.__setattr__(self, "z", mat(self.z))
        object.__setattr__(self, "actions", mat(self.actions, np.int64))
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=float))
        n = self.n
        for name in ("w", "x", "z", "actions"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, expected {n}")
        for name in ("w", "x", "z", "targets"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise EstimationError(f"non-finite entries in {name}")
        if self.weights is not None:
            wt = np.asarray(self.weights, dtype=float)
            if wt.shape != (n,) or np.any(wt < 0) or not np.all(np.isfinite(wt)):
                raise ValueError("weights must be a nonnegative finite vector with one entry per row")
            object.__setattr__(self, "weights", wt)

    @property
    def n(self) -> int:
        return self.targets.shape[0]

    @property
    def q_inputs(self) -> np.ndarray:
        return np.hstack([self.w, self.x, one_hot(self.actions, self.n_actions)])

    @property
    def g_inputs(self) -> np.ndarray:
        return np.hstack([self.x, self.z, one_hot(self.actions, self.n_actions)])

    def with_targets(self, targets) -> "MomentProblem":
        return MomentProblem(self.w, self.x, self.z, self.actions, targets, self.n_actions, self.weights)

    def take(self, idx) -> "MomentProblem":
        wt = None if self.weights is None else self.weights[idx]
        return MomentProblem(self.w[idx], self.x[idx], self.z[idx], self.actions[idx], self.targets[idx], self.n_actions, wt)


# ---------------------------------------------------------------------------
# Kernel feature maps


@dataclass(frozen=True)
class FeatureMap:
    """Standardized continuous columns followed by one-hot action columns."""

    standardizer: Standardizer | None
    n_actions: int

    def __call__(self, cont, actions) -> np.ndarray:
        cont = np.asarray(cont, dtype=float)
        if self.standardizer is not None and cont.shape[1]:
            cont = self.standardizer.transform(cont)
        return np.hstack([cont, one_hot(actions, self.n_actions)])


def _feature_map(cont, n_actions, spec) -> FeatureMap:
    if isinstance(spec, Delta) or cont.shape[1] == 0 or cont.shape[0] < 2:
        return FeatureMap(None, n_actions)
    _, st = standardize(cont)
    return FeatureMap(st, n_actions)


def _resolve_spec(spec, features, cap):
    if spec is None or spec == "auto":
        return Gaussian(median_heuristic(features, cap))
    return spec


@dataclass(frozen=True)
class KernelSetup:
    """Feature maps and kernels for the q side and the instrument side of a problem."""

    q_map: FeatureMap
    g_map: FeatureMap
    kq: object
    kg: object

    @classmethod
    def build(cls, problem: MomentProblem, kq=None, kg=None, cap: int = 1000) -> "KernelSetup":
        q_cont = np.hstack([problem.w, problem.x])
        g_cont = np.hstack([problem.x, problem.z])
        q_map = _feature_map(q_cont, problem.n_actions, kq)
        g_map = _feature_map(g_cont, problem.n_actions, kg)
        kq = _resolve_spec(kq, q_map(q_cont, problem.actions), cap)
        kg = _resolve_spec(kg, g_map(g_cont, problem.actions), cap)
        return cls(q_map, g_map, kq, kg)

    def q_features(self, w, x, actions) -> np.ndarray:
        return self.q_map(np.hstack([np.reshape(w, (len(w), -1)), np.reshape(x, (len(w), -1))]), actions)

    def g_features(self, x, z, actions) -> np.ndarray:
        return self.g_map(np.hstack([np.reshape(x, (len(z), -1)), np.reshape(z, (len(z), -1))]), actions)


# ---------------------------------------------------------------------------
# Bridge functions


@dataclass(frozen=True, eq=False)
class KernelExpansion:
    """q(v) = sum_i coef_i k(v, anchor_i) over standardized, one-hot-encoded inputs."""

    anchors: np.ndarray
    coef: np.ndarray
    spec: object
    feature_map: FeatureMap
    diagnostics: dict = field(default_factory=dict)

    def features(self, w, x, actions) -> np.ndarray:
        n = len(actions)
        cont = np.hstack([np.reshape(w, (n, -1)), np.reshape(x, (n, -1))])
        return self.feature_map(cont, actions)

    def at_features(self, feats) -> np.ndarray:
        return gram(feats, self.anchors, self.spec) @ self.coef

    def __call__(self, w, x, actions) -> np.ndarray:
        return self.at_features(self.features(w, x, actions))

    def norm_sq(self) -> float:
        return float(self.coef @ gram(self.anchors, self.anchors, self.spec) @ self.coef)


def _key(*parts) -> tuple:
    return tuple(float(v) for p in parts for v in p)


@dataclass(frozen=True, eq=False)
class TabularBridge:
    """Lookup q[(w, x, actions)] over the observed discrete support."""

    table: dict
    diagnostics: dict = field(default_factory=dict)

    def __call__(self, w, x, actions) -> np.ndarray:
        n = len(actions)
        w, x = np.reshape(w, (n, -1)), np.reshape(x, (n, -1))
        actions = np.reshape(actions, (n, -1))
        out = np.empty(n)
        for i in range(n):
            key = _key(w[i], x[i], actions[i])
            try:
                out[i] = self.table[key]
            except KeyError:
                raise EstimationError(f"bridge not defined at (w, x, a) = {key}: stratum with no observations") from None
        return out

    def norm_sq(self) -> float:
        return float(sum(v * v for v in self.table.values()))


# ---------------------------------------------------------------------------
# Min-max solver


def _rcond(lu_piv, anorm) -> float:
    lu, _ = lu_piv
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    return float(rcond) if info == 0 else 0.0


@dataclass(eq=False)
class MinimaxSolver:
    """Reusable factorization of the min-max normal equations for one design.

    With Kq, Kg the Gram matrices at the data rows and c = U / (delta^2 n), the inner sup over
    g has the closed form (4 lam n^2)^-1 rho' M rho, M = Kg (I + c Kg)^-1, rho = q - y. The outer
    minimum over q = Kq alpha solves (M Kq + 4 lam^2 mu n^2 I) alpha = M y.
    """

    problem: MomentProblem
    cfg: EstimatorConfig
    kernels: KernelSetup
    Fq: np.ndarray = field(init=False)
    Kq: np.ndarray = field(init=False)
    M: np.ndarray = field(init=False)
    MKq: np.ndarray = field(init=False)

    def __post_init__(self):
        p, cfg = self.problem, self.cfg
        n = p.n
        if n < 2:
            raise EstimationError("min-max fit needs at least 2 rows")
        self.Fq = self.kernels.q_features(p.w, p.x, p.actions)
        Fg = self.kernels.g_features(p.x, p.z, p.actions)
        self.Kq = gram(self.Fq, self.Fq, self.kernels.kq)
        Kg = gram(Fg, Fg, self.kernels.kg)
        c = cfg.U / (cfg.delta ** 2 * n)
        M = scipy.linalg.solve(np.eye(n) + c * Kg, Kg, assume_a="sym")
        self.M = 0.5 * (M + M.T)
        self.MKq = self.M @ self.Kq
        self._lu = {}

    def gamma(self, q_penalty: float) -> float:
        n = self.problem.n
        return 4.0 * self.cfg.lam * q_penalty * n ** 2

    def coefficients(self, targets, q_penalty: float | None = None) -> np.ndarray:
        q_penalty = self.cfg.q_penalty if q_penalty is None else q_penalty
        if q_penalty not in self._lu:
            A = self.MKq + self.gamma(q_penalty) * np.eye(self.problem.n)
            lu_piv = scipy.linalg.lu_factor(A, check_finite=False)
            rcond = _rcond(lu_piv, np.abs(A).sum(axis=0).max())
            if not rcond > np.finfo(float).eps:
                raise EstimationError(f"singular min-max system after regularization (rcond estimate {rcond:.3e})")
            self._lu[q_penalty] = (lu_piv, rcond)
        lu_piv, _ = self._lu[q_penalty]
        alpha = scipy.linalg.lu_solve(lu_piv, self.M @ np.asarray(targets, dtype=float), check_finite=False)
        if not np.all(np.isfinite(alpha)):
            raise EstimationError("non-finite min-max solution")
        return alpha

    def solve(self, targets=None, q_penalty: float | None = None) -> KernelExpansion:
        targets = self.problem.targets if targets is None else targets
        alpha = self.coefficients(targets, q_penalty)
        qp = self.cfg.q_penalty if q_penalty is None else q_penalty
        diag = {"rcond": self._lu[qp][1], "q_penalty": qp}
        return KernelExpansion(self.Fq, alpha, self.kernels.kq, self.kernels.q_map, diag)


def fit_minimax(problem: MomentProblem, kq=None, kg=None, cfg: EstimatorConfig | None = None) -> KernelExpansion:
    """Regularized min-max bridge estimate; kq/kg default to median-heuristic Gaussians."""
    cfg = (cfg or EstimatorConfig()).resolve(problem.n)
    if problem.targets.ndim != 1:
        raise ValueError("fit_minimax takes a single target column; use MinimaxSolver for several")
    kernels = KernelSetup.build(problem, kq, kg, cfg.median_cap)
    return MinimaxSolver(problem, cfg, kernels).solve()


def _inner_sup(residual, Kg, cfg, n) -> float:
    c = cfg.U / (cfg.delta ** 2 * n)
    M = scipy.linalg.solve(np.eye(n) + c * Kg, Kg, assume_a="sym")
    M = 0.5 * (M + M.T)
    return float(residual @ M @ residual) / (4.0 * cfg.lam * n ** 2)


def objective_value(q, problem: MomentProblem, kg=None, cfg: EstimatorConfig | None = None, include_penalty: bool = True) -> float:
    """sup_g [Psi(q, g) - lam (||g||^2 + U/delta^2 ||g||_n^2)] (+ lam mu ||q||^2), sup in closed form."""
    cfg = (cfg or EstimatorConfig()).resolve(problem.n)
    kernels = KernelSetup.build(problem, None, kg, cfg.median_cap)
    Fg = kernels.g_features(problem.x, problem.z, problem.actions)
    Kg = gram(Fg, Fg, kernels.kg)
    residual = q(problem.w, problem.x, problem.actions) - problem.targets
    value = _inner_sup(residual, Kg, cfg, problem.n)
    if include_penalty:
        value += cfg.q_penalty * q.norm_sq()
    return value


def psi(q, g_values, problem: MomentProblem) -> float:
    """Empirical moment n^-1 sum_i (q_i - y_i) g_i for test-function values g_i at the rows."""
    residual = q(problem.w, problem.x, problem.actions) - problem.targets
    return float(np.mean(residual * np.asarray(g_values, dtype=float)))


# ---------------------------------------------------------------------------
# Tabular solver


def _levels(rows: np.ndarray):
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    return uniq, inv.reshape(-1)


def fit_tabular(problem: MomentProblem, targets=None) -> TabularBridge | list:
    """Stratum-wise exact solve of sum_w P(w | z, stratum) q(w, stratum) = E[Y | z, stratum].

    Strata are the observed (x, actions) rows. Each stratum must show every z level of the
    problem, and the number of w levels must equal the number of z levels. With a target
    matrix, returns one bridge per column.
    """
    targets = problem.targets if targets is None else np.asarray(targets, dtype=float)
    multi = targets.ndim == 2
    Y = targets if multi else targets[:, None]
    wt = problem.weights if problem.weights is not None else np.ones(problem.n)
    w_levels, w_idx = _levels(problem.w)
    z_levels, z_idx = _levels(problem.z)
    if len(w_levels) != len(z_levels):
        raise EstimationError(
            f"tabular bridge needs as many w levels as z levels (got {len(w_levels)} vs {len(z_levels)})"
        )
    strata, s_idx = _levels(np.hstack([problem.x, problem.actions.astype(float)]))
    dx = problem.x.shape[1]
    tables = [dict() for _ in range(Y.shape[1])]
    diagnostics = {"strata": len(strata), "min_singular_value": np.inf}
    L = len(z_levels)
    for k, stratum in enumerate(strata):
        rows = s_idx == k
        Mz = np.zeros((L, L))
        rz = np.zeros((L, Y.shape[1]))
        np.add.at(Mz, (z_idx[rows], w_idx[rows]), wt[rows])
        np.add.at(rz, z_idx[rows], wt[rows][:, None] * Y[rows])
        mass = Mz.sum(axis=1)
        label = {"x": tuple(stratum[:dx]), "actions": tuple(int(v) for v in stratum[dx:])}
        if np.any(mass <= 0):
            missing = [tuple(z_levels[j]) for j in np.flatnonzero(mass <= 0)]
            raise EstimationError(f"stratum {label}: no observations for z levels {missing}")
        Mz /= mass[:, None]
        rz /= mass[:, None]
        sv = np.linalg.svd(Mz, compute_uv=False)
        if sv[-1] <= 1e-12 * max(sv[0], 1.0):
            raise EstimationError(f"stratum {label}: rank-deficient P(w | z) matrix, singular values {sv.tolist()}")
        diagnostics["min_singular_value"] = min(diagnostics["min_singular_value"], float(sv[-1]))
        q = scipy.linalg.solve(Mz, rz)
        for j, wl in enumerate(w_levels):
            key = _key(wl, stratum)
            for c in range(Y.shape[1]):
                tables[c][key] = float(q[j, c])
    bridges = [TabularBridge(t, dict(diagnostics)) for t in tables]
    return bridges if multi else bridges[0]


# ---------------------------------------------------------------------------
# Projection regressors


@dataclass(frozen=True)
class Linear:
    pass


@dataclass(frozen=True)
class KernelRidge:
    kernel: object = None
    ridge: float | None = None


@dataclass(frozen=True)
class GroupMean:
    """Within-level means of the targets; unseen levels fall back to coarser column prefixes."""

    fallback_widths: tuple = ()


@dataclass(frozen=True, eq=False)
class LinearModel:
    intercept: float
    weights: np.ndarray

    def predict(self, x) -> np.ndarray:
        return self.intercept + np.asarray(x, dtype=float) @ self.weights


@dataclass(frozen=True, eq=False)
class KernelRidgeModel:
    """offset + sum_i coef_i k(x, anchor_i); offset is the training target mean."""

    anchors: np.ndarray
    coef: np.ndarray
    spec: object
    ridge: float
    standardizer: Standardizer | None
    offset: float = 0.0

    def features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x if self.standardizer is None else self.standardizer.transform(x)

    def predict(self, x) -> np.ndarray:
        return self.offset + gram(self.features(x), self.anchors, self.spec) @ self.coef


@dataclass(frozen=True, eq=False)
class GroupMeanModel:
    widths: tuple
    tables: tuple
    overall: float

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[0])
        for i, row in enumerate(x):
            for width, table in zip(self.widths, self.tables):
                val = table.get(_key(row[:width]))
                if val is not None:
                    out[i] = val
                    break
            else:
                out[i] = self.overall
        return out


ProjectionModel = LinearModel | KernelRidgeModel | GroupMeanModel


def _group_means(x, y, wt):
    levels, idx = _levels(x) if x.shape[1] else (np.zeros((1, 0)), np.zeros(len(y), dtype=int))
    num = np.bincount(idx, weights=wt * y, minlength=len(levels))
    den = np.bincount(idx, weights=wt, minlength=len(levels))
    return {_key(lv): num[k] / den[k] for k, lv in enumerate(levels) if den[k] > 0}


def fit_projection(inputs, targets, backend=Linear(), weights=None, cap: int = 1000):
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(targets, dtype=float)
    if not np.all(np.isfinite(y)):
        raise EstimationError("non-finite projection targets")
    n = y.shape[0]
    wt = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if isinstance(backend, Linear):
        if n < x.shape[1] + 1:
            raise EstimationError(f"linear projection needs at least {x.shape[1] + 1} rows, got {n}")
        design = np.hstack([np.ones((n, 1)), x])
        sw = np.sqrt(wt)
        beta, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
        if not np.all(np.isfinite(beta)):
            raise EstimationError("non-finite linear projection weights")
        return LinearModel(float(beta[0]), beta[1:])
    if isinstance(backend, GroupMean):
        widths = (x.shape[1],) + tuple(w for w in backend.fallback_widths if w < x.shape[1])
        tables = tuple(_group_means(x[:, :w], y, wt) for w in widths)
        return GroupMeanModel(widths, tables, float(np.sum(wt * y) / np.sum(wt)))
    if isinstance(backend, KernelRidge):
        if weights is not None:
            raise ValueError("kernel ridge projection does not take row weights")
        ridge = backend.ridge if backend.ridge is not None else n ** -0.5
        if not ridge > 0:
            raise ValueError("kernel ridge penalty must be positive")
        st = None
        feats = x
        if not isinstance(backend.kernel, Delta) and n >= 2 and x.shape[1]:
            feats, st = standardize(x)
        spec = _resolve_spec(backend.kernel, feats, cap)
        K = gram(feats, feats, spec)
        offset = float(np.mean(y))
        coef = scipy.linalg.solve(K + n * ridge * np.eye(n), y - offset, assume_a="sym")
        return KernelRidgeModel(feats, coef, spec, ridge, st, offset)
    raise TypeError(f"unknown projection backend {backend!r}")


# ---------------------------------------------------------------------------
# Cross-validation


def fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    ids = np.arange(n) % folds
    return np.random.default_rng(seed).permutation(ids)


def _select(grid, scores):
    grid = np.asarray(grid, dtype=float)
    scores = np.asarray(scores, dtype=float)
    best = np.min(scores)
    tied = np.flatnonzero(scores <= best + 1e-12 * max(1.0, abs(best)))
    return float(np.min(grid[tied]))


def cv_minimax(problem: MomentProblem, cfg: EstimatorConfig, grid, folds: int, kq=None, kg=None):
    """Choose lam*mu by k-fold held-out projected residual norm. Returns (choice, scores)."""
    cfg = cfg.resolve(problem.n)
    ids = fold_ids(problem.n, folds, cfg.seed)
    kernels = KernelSetup.build(problem, kq, kg, cfg.median_cap)
    scores = np.zeros(len(grid))
    for f in range(folds):
        test = ids == f
        if test.sum() < 2 or (~test).sum() < 2:
            raise EstimationError(f"fold {f} has fewer than 2 rows")
        train_p, test_p = problem.take(np.flatnonzero(~test)), problem.take(np.flatnonzero(test))
        solver = MinimaxSolver(train_p, cfg.resolve(train_p.n), kernels)
        Fq_te = kernels.q_features(test_p.w, test_p.x, test_p.actions)
        Fg_te = kernels.g_features(test_p.x, test_p.z, test_p.actions)
        Kqx = gram(Fq_te, solver.Fq, kernels.kq)
        Kg_te = gram(Fg_te, Fg_te, kernels.kg)
        m = test_p.n
        ridge = cfg.resolve(m).mu_proj
        P = scipy.linalg.solve(Kg_te + m * ridge * np.eye(m), Kg_te, assume_a="sym").T
        for j, pen in enumerate(grid):
            alpha = solver.coefficients(train_p.targets, pen)
            residual = Kqx @ alpha - test_p.targets
            scores[j] += np.mean((P @ residual) ** 2) * m / problem.n
    return _select(grid, scores), scores


def cv_projection(inputs, targets, grid, folds: int, seed: int, kernel=None):
    """Choose the kernel-ridge penalty by k-fold held-out squared error. Returns (choice, scores)."""
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    n = len(y)
    ids = fold_ids(n, folds, seed)
    scores = np.zeros(len(grid))
    for f in range(folds):
        test = ids == f
        if test.sum() < 2 or (~test).sum() < 2:
            raise EstimationError(f"fold {f} has fewer than 2 rows")
        for j, ridge in enumerate(grid):
            model = fit_projection(x[~test], y[~test], KernelRidge(kernel, ridge))
            scores[j] += np.sum((model.predict(x[test]) - y[test]) ** 2) / n
    return _select(grid, scores), scores


def cross_validate(problem: MomentProblem, cfg: EstimatorConfig, kq=None, kg=None, proj_inputs=None, proj_targets=None, proj_kernel=None):
    """Select penalties with cfg.cv; returns cfg with lam*mu (and mu_proj when projection data given) set."""
    if cfg.cv is None:
        raise ValueError("cross_validate needs cfg.cv")
    cv = cfg.cv
    chosen, _ = cv_minimax(problem, cfg, cv.penalty_grid, cv.folds, kq, kg)
    out = cfg.resolve(problem.n).with_q_penalty(chosen)
    if proj_inputs is not None:
        mu_proj, _ = cv_projection(proj_inputs, proj_targets, cv.proj_grid, cv.folds, cfg.seed, proj_kernel)
        out = EstimatorConfig(out.lam, out.mu, out.U, out.delta, mu_proj, out.cv, out.seed, out.median_cap)
    return out


# ---------------------------------------------------------------------------
# Text dumps


def _row(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def dump_model(model) -> str:
    """Versioned plain-text dump: one header line, then one row per anchor / level."""
    if isinstance(model, KernelExpansion):
        st = model.feature_map.standardizer
        lines = [f"superpol-model 1 kernel-expansion spec={model.spec.describe()} n_actions={model.feature_map.n_actions} anchors={model.anchors.shape[0]} dim={model.anchors.shape[1]}"]
        if st is not None:
            lines.append("# mean " + _row(st.mean))
            lines.append("# scale " + _row(st.scale))
        lines += [f"{_row(a)} {float(c)!r}" for a, c in zip(model.anchors, model.coef)]
        return "\n".join(lines) + "\n"
    if isinstance(model, TabularBridge):
        lines = [f"superpol-model 1 tabular levels={len(model.table)}"]
        lines += [f"{_row(k)} {float(v)!r}" for k, v in sorted(model.table.items())]
        return "\n".join(lines) + "\n"
    if isinstance(model, LinearModel):
        return f"superpol-model 1 linear dim={model.weights.size}\n{float(model.intercept)!r} {_row(model.weights)}\n"
    if isinstance(model, KernelRidgeModel):
        lines = [f"superpol-model 1 kernel-ridge spec={model.spec.describe()} ridge={float(model.ridge)!r} offset={float(model.offset)!r} anchors={model.anchors.shape[0]}"]
        lines += [f"{_row(a)} {float(c)!r}" for a, c in zip(model.anchors, model.coef)]
        return "\n".join(lines) + "\n"
    if isinstance(model, GroupMeanModel):
        lines = [f"superpol-model 1 group-mean widths={','.join(map(str, model.widths))} overall={float(model.overall)!r}"]
        for width, table in zip(model.widths, model.tables):
            lines += [f"{width} {_row(k)} {float(v)!r}" for k, v in sorted(table.items())]
        return "\n".join(lines) + "\n"
    raise TypeError(f"cannot dump {type(model).__name__}")
