"""Regret, replication driver, random-split evaluation and table rendering."""
from __future__ import annotations

import csv
import dataclasses
import functools
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bandit import Backends, estimate_value, fit_bridge, learn
from .datamodel import BANDIT_KINDS, EstimatorConfig, PolicyKind, random_split
from .envs import (
    ContinuousBanditSpec,
    DiscreteBanditSpec,
    FiniteBanditSpec,
    FiniteSequentialSpec,
    SequentialSpec,
    ToySpec,
    _finite,
    _finite_rollout,
    behavior_clone,
)
from .sequential import learn_seq

BEHAVIOR = "behavior"


class ReplicationError(RuntimeError):
    def __init__(self, seed, cause):
        super().__init__(f"replication with seed {seed} failed: {type(cause).__name__}: {cause}")
        self.seed = seed
        self.cause = cause


# ---------------------------------------------------------------------------
# Regret


@functools.lru_cache(maxsize=16)
def reference(spec):
    """U-aware reference policy of a sampled environment (cached per spec)."""
    if isinstance(spec, ContinuousBanditSpec):
        return spec.reference_policy()
    if isinstance(spec, SequentialSpec):
        return spec.reference_chooser()
    raise TypeError(f"no fitted reference for {type(spec).__name__}")


def _chooser(policy):
    return policy.act if hasattr(policy, "act") else policy


def _is_finite_bandit(spec) -> bool:
    return isinstance(spec, (FiniteBanditSpec, ToySpec, DiscreteBanditSpec))


def regret(policy, spec, oracle: str = "exact", episodes: int = 100_000, seed: int = 777, reference_kind: str = "u_aware") -> float:
    """V(reference) - V(policy).

    The reference is the optimum over policies that see the latent state ("u_aware") or, for
    finite bandits, the enumerated super-policy over (S, Z, A) ("super"). Finite specs use exact
    enumeration under ``oracle="exact"``; sampled specs always use rollouts with shared noise.
    """
    if reference_kind not in ("u_aware", "super"):
        raise ValueError(f"unknown reference {reference_kind!r}")
    if oracle not in ("exact", "mc"):
        raise ValueError(f"unknown oracle mode {oracle!r}")
    act = _chooser(policy)
    if _is_finite_bandit(spec):
        fin = _finite(spec)
        v_ref = fin.u_aware_value() if reference_kind == "u_aware" else fin.value(fin.optimal_policy())
        if oracle == "exact":
            return v_ref - fin.value(act)
        return v_ref - float(np.mean(_finite_rollout(fin, act, episodes, np.random.default_rng(seed))))
    if reference_kind != "u_aware":
        raise ValueError("the super-policy reference needs a finite bandit")
    if isinstance(spec, FiniteSequentialSpec):
        v_ref = spec.u_aware_value()
        if oracle == "exact":
            return v_ref - spec.value(policy)
        return v_ref - float(np.mean(spec.rollout(policy, episodes, seed)))
    if isinstance(spec, ContinuousBanditSpec):
        ref = reference(spec)
        _, (s, u, a, z, w, _noise) = spec.rollout(act, episodes, seed)
        chosen = np.asarray(act(s[:, None], z[:, None], a), dtype=np.int64)
        # noise is shared, so only mean rewards differ
        return float(np.mean(spec.mean_reward(u, ref(u, s)) - spec.mean_reward(u, chosen)))
    if isinstance(spec, SequentialSpec):
        ref = reference(spec)
        ours = spec.rollout(policy, episodes, seed)
        best = spec.rollout(None, episodes, seed, chooser=ref)
        return float(np.mean(best - ours))
    raise TypeError(f"cannot compute regret for {type(spec).__name__}")


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class ReportRow:
    kind: str
    setting: str
    mean: float
    sd: float
    n_reps: int

    @property
    def se(self) -> float:
        return self.sd / math.sqrt(self.n_reps) if self.n_reps else math.nan


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    """Aggregated rows plus per-replication samples keyed by (kind, setting)."""

    rows: tuple = ()
    metric: str = "regret"
    samples: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def row(self, kind, setting) -> ReportRow:
        kind = getattr(kind, "value", kind)
        for r in self.rows:
            if r.kind == kind and r.setting == setting:
                return r
        raise KeyError((kind, setting))

    def merged(self, other: "ExperimentReport") -> "ExperimentReport":
        prov = dict(self.provenance)
        prov.setdefault("parts", []).append(other.provenance)
        return ExperimentReport(self.rows + other.rows, self.metric, {**self.samples, **other.samples}, prov)


def aggregate(values) -> tuple[float, float]:
    """(mean, sample sd); sd is 0 for a single value."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("nothing to aggregate")
    sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return float(np.mean(v)), sd


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {"type": type(obj).__name__, **{f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "value") and isinstance(obj, PolicyKind):
        return obj.value
    return obj


def config_hash(obj) -> str:
    text = json.dumps(_jsonable(obj), sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Replications


@dataclass(frozen=True)
class ExperimentConfig:
    spec: object
    n: int
    replications: int = 50
    seed_base: int = 0
    kinds: tuple = BANDIT_KINDS
    estimator: EstimatorConfig = EstimatorConfig()
    backends: Backends = Backends()
    oracle: str = "exact"
    episodes: int = 100_000
    oracle_seed: int = 777
    setting: str = ""

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.n < 10:
            raise ValueError("n must be >= 10")
        object.__setattr__(self, "kinds", tuple(PolicyKind(k) for k in self.kinds))
        if self.oracle not in ("exact", "mc"):
            raise ValueError(f"unknown oracle mode {self.oracle!r}")


def _replicate(cfg: ExperimentConfig, i: int) -> dict:
    seed = cfg.seed_base + i
    try:
        data = cfg.spec.sample(cfg.n, seed)
        est = replace(cfg.estimator, seed=seed)
        out = {}
        bandit_kinds = [k for k in cfg.kinds if not k.sequential]
        if bandit_kinds:
            bridge, resolved = fit_bridge(data, est, cfg.backends)
            for kind in bandit_kinds:
                fit = learn(data, kind, resolved or est, cfg.backends, bridge=bridge)
                out[kind.value] = regret(fit.policy, cfg.spec, cfg.oracle, cfg.episodes, cfg.oracle_seed)
        for kind in (k for k in cfg.kinds if k.sequential):
            fit = learn_seq(data, kind, est, cfg.backends)
            out[kind.value] = regret(fit.policy, cfg.spec, cfg.oracle, cfg.episodes, cfg.oracle_seed)
        return out
    except Exception as exc:  # abort the whole report, naming the seed
        raise ReplicationError(seed, exc) from exc


def run_replications(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    """Regret of every requested kind over replications seeded base, base+1, ..."""
    indices = range(cfg.replications)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_replicate, [cfg] * cfg.replications, indices))
    else:
        results = [_replicate(cfg, i) for i in indices]
    rows, samples = [], {}
    for kind in cfg.kinds:
        values = tuple(r[kind.value] for r in results)
        mean, sd = aggregate(values)
        rows.append(ReportRow(kind.value, cfg.setting, mean, sd, len(values)))
        samples[(kind.value, cfg.setting)] = values
    prov = {
        "config": _jsonable(cfg),
        "config_hash": config_hash(cfg),
        "seeds": [cfg.seed_base + i for i in indices],
    }
    return ExperimentReport(tuple(rows), "regret", samples, prov)


# ---------------------------------------------------------------------------
# Random-split evaluation


def split_evaluate(dataset, train_fraction: float = 0.6, kinds=BANDIT_KINDS + (BEHAVIOR,), splits: int = 20, seed: int = 0,
                   cfg: EstimatorConfig | None = None, backends: Backends = Backends(), setting: str = "") -> ExperimentReport:
    """Learn on a random training part, score on the rest with a bridge refitted on all rows.

    ``"behavior"`` scores the recorded action itself. Rows report the mean evaluated value
    across splits and its sd (``ReportRow.se`` gives the standard error).
    """
    cfg = cfg or EstimatorConfig(seed=seed)
    q_all, _ = fit_bridge(dataset, cfg, backends)
    names = [k if k == BEHAVIOR else PolicyKind(k).value for k in kinds]
    values = {name: [] for name in names}
    for child in np.random.SeedSequence(seed).spawn(splits):
        train, held = random_split(dataset, train_fraction, child)
        bridge = None
        for name in names:
            if name == BEHAVIOR:
                policy = behavior_clone
            else:
                fit = learn(train, name, cfg, backends, bridge=bridge)
                bridge = fit.bridge
                policy = fit.policy
            values[name].append(estimate_value(policy, q_all, held))
    rows, samples = [], {}
    for name in names:
        mean, sd = aggregate(values[name])
        rows.append(ReportRow(name, setting, mean, sd, splits))
        samples[(name, setting)] = tuple(values[name])
    prov = {"train_fraction": train_fraction, "splits": splits, "seed": seed, "estimator": _jsonable(cfg), "backends": _jsonable(backends)}
    prov["config_hash"] = config_hash(prov)
    return ExperimentReport(tuple(rows), "value", samples, prov)


# ---------------------------------------------------------------------------
# Rendering

COLUMNS = ("kind", "setting", "mean", "sd", "n_reps")


def _render_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in report.rows:
        writer.writerow([r.kind, r.setting, repr(float(r.mean)), repr(float(r.sd)), r.n_reps])
    return buf.getvalue()


def _ordered(values):
    seen = []
    for v in values:
        if v not in seen:
            seen.append(v)
    return seen


def _render_markdown(report: ExperimentReport, digits: int) -> str:
    kinds = _ordered(r.kind for r in report.rows)
    settings = _ordered(r.setting for r in report.rows)
    lines = ["| setting | " + " | ".join(kinds) + " |" if kinds else "| setting |"]
    lines.append("|---|" + "---|" * len(kinds))
    cells = {(r.kind, r.setting): r for r in report.rows}
    pick = min if report.metric == "regret" else max
    for setting in settings:
        present = [cells[(k, setting)].mean for k in kinds if (k, setting) in cells]
        best = round(pick(present), digits) if present else None
        out = []
        for k in kinds:
            r = cells.get((k, setting))
            if r is None:
                out.append("")
                continue
            text = f"{round(r.mean, digits) + 0.0:.{digits}f}"
            if r.n_reps > 1:
                text += f" ({r.sd:.{digits}f})"
            if len(present) > 1 and round(r.mean, digits) == best:
                text += "*"
            out.append(text)
        lines.append(f"| {setting} | " + " | ".join(out) + " |")
    return "\n".join(lines) + "\n"


def render(report: ExperimentReport, fmt: str = "markdown", digits: int = 3) -> str:
    """CSV in long format, or a markdown grid of settings by kinds with the best entry starred."""
    if fmt == "csv":
        return _render_csv(report)
    if fmt == "markdown":
        return _render_markdown(report, digits)
    raise ValueError(f"unknown format {fmt!r}")


def parse_csv(text: str, metric: str = "regret") -> ExperimentReport:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != COLUMNS:
        raise ValueError(f"expected header {','.join(COLUMNS)}")
    rows = tuple(ReportRow(k, s, float(m), float(sd), int(n)) for k, s, m, sd, n in reader)
    return ExperimentReport(rows, metric)


def provenance_json(report: ExperimentReport) -> str:
    return json.dumps(_jsonable(report.provenance), sort_keys=True, indent=2, default=repr) + "\n"
