"""Shared containers: datasets, policies, estimator configuration, file I/O."""
from __future__ import annotations

import configparser
import csv
import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class PolicyKind(str, enum.Enum):
    SONLY = "sonly"
    SZ = "sz"
    SUPER = "super"
    COMMON = "common"
    SUPERSEQ = "superseq"

    @property
    def sequential(self) -> bool:
        return self in (PolicyKind.COMMON, PolicyKind.SUPERSEQ)


BANDIT_KINDS = (PolicyKind.SONLY, PolicyKind.SZ, PolicyKind.SUPER)
SEQUENTIAL_KINDS = (PolicyKind.COMMON, PolicyKind.SUPERSEQ)


def _frozen(x, dtype=float, ndim=2) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if ndim == 2 and arr.ndim == 2 and arr.shape[0] == 0 and arr.shape[1] == 0:
        arr = arr.reshape(0, 0)
    arr.setflags(write=False)
    return arr


def one_hot(actions, n_actions: int) -> np.ndarray:
    """Indicator columns for integer actions; a matrix of actions gives one block per column."""
    a = np.asarray(actions, dtype=np.int64)
    if a.ndim == 1:
        a = a[:, None]
    blocks = [(a[:, [j]] == np.arange(n_actions)[None, :]).astype(float) for j in range(a.shape[1])]
    if not blocks:
        return np.zeros((a.shape[0], 0))
    return np.hstack(blocks)


@dataclass(frozen=True, eq=False)
class BanditDataset:
    s: np.ndarray
    z: np.ndarray
    w: np.ndarray
    a: np.ndarray
    r: np.ndarray
    n_actions: int = 2

    def __post_init__(self):
        object.__setattr__(self, "s", _frozen(self.s))
        object.__setattr__(self, "z", _frozen(self.z))
        object.__setattr__(self, "w", _frozen(self.w))
        object.__setattr__(self, "a", _frozen(self.a, dtype=np.int64, ndim=1))
        object.__setattr__(self, "r", _frozen(self.r, ndim=1))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def take(self, idx) -> "BanditDataset":
        idx = np.asarray(idx)
        return BanditDataset(self.s[idx], self.z[idx], self.w[idx], self.a[idx], self.r[idx], self.n_actions)

    def equals(self, other: "BanditDataset") -> bool:
        return (
            self.n_actions == other.n_actions
            and all(np.array_equal(getattr(self, f), getattr(other, f)) for f in "szwar")
        )


@dataclass(frozen=True, eq=False)
class SequentialDataset:
    """Episodes of length T: pre-collected o0 plus per-step (o_t, a_t, r_t, w_t), t = 1..T.

    Per-step blocks are stored as tuples indexed from 0, so ``o[0]`` is O_1.
    """

    o0: np.ndarray
    o: tuple
    a: tuple
    r: tuple
    w: tuple
    n_actions: int = 2
    r_max: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "o0", _frozen(self.o0))
        object.__setattr__(self, "o", tuple(_frozen(x) for x in self.o))
        object.__setattr__(self, "a", tuple(_frozen(x, dtype=np.int64, ndim=1) for x in self.a))
        object.__setattr__(self, "r", tuple(_frozen(x, ndim=1) for x in self.r))
        object.__setattr__(self, "w", tuple(_frozen(x) for x in self.w))

    @property
    def horizon(self) -> int:
        return len(self.o)

    @property
    def n(self) -> int:
        return self.o0.shape[0]

    def obs(self, t: int) -> np.ndarray:
        """O_{1:t} stacked column-wise (t is 1-based)."""
        return np.hstack(self.o[:t])

    def actions(self, t: int) -> np.ndarray:
        """A_{1:t} as an (n, t) integer matrix."""
        if t == 0:
            return np.zeros((self.n, 0), dtype=np.int64)
        return np.column_stack(self.a[:t])

    def take(self, idx) -> "SequentialDataset":
        idx = np.asarray(idx)
        return SequentialDataset(
            self.o0[idx],
            tuple(x[idx] for x in self.o),
            tuple(x[idx] for x in self.a),
            tuple(x[idx] for x in self.r),
            tuple(x[idx] for x in self.w),
            self.n_actions,
            self.r_max,
        )

    def equals(self, other: "SequentialDataset") -> bool:
        if self.horizon != other.horizon or self.n_actions != other.n_actions:
            return False
        if not np.array_equal(self.o0, other.o0):
            return False
        return all(
            np.array_equal(x, y)
            for name in ("o", "a", "r", "w")
            for x, y in zip(getattr(self, name), getattr(other, name))
        )


@dataclass(frozen=True)
class ValidationReport:
    failures: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.failures

    def __bool__(self) -> bool:
        return self.ok


def _check_actions(a, n_actions, label, failures):
    if n_actions < 2:
        failures.append(f"n_actions must be >= 2 (got {n_actions})")
    if a.size and (a.min() < 0 or a.max() >= n_actions):
        failures.append(f"{label}: action out of range 0..{n_actions - 1}")


def _check_finite(arrays, failures):
    for label, arr in arrays:
        if arr.size and not np.all(np.isfinite(arr)):
            failures.append(f"{label}: non-finite value")


def validate(dataset) -> ValidationReport:
    failures: list[str] = []
    if isinstance(dataset, BanditDataset):
        n = dataset.n
        if n < 1:
            failures.append("dataset is empty")
        for name in "szwr":
            if getattr(dataset, name).shape[0] != n:
                failures.append(f"{name}: expected {n} rows")
        _check_actions(dataset.a, dataset.n_actions, "a", failures)
        _check_finite([(name, getattr(dataset, name)) for name in "szwr"], failures)
    elif isinstance(dataset, SequentialDataset):
        n, T = dataset.n, dataset.horizon
        if n < 1:
            failures.append("dataset is empty")
        if T < 1:
            failures.append("horizon must be >= 1")
        for name in ("o", "a", "r", "w"):
            blocks = getattr(dataset, name)
            if len(blocks) != T:
                failures.append(f"{name}: expected {T} per-step blocks, got {len(blocks)}")
            for t, blk in enumerate(blocks, start=1):
                if blk.shape[0] != n:
                    failures.append(f"{name}{t}: expected {n} rows")
        for t, a in enumerate(dataset.a, start=1):
            _check_actions(a, dataset.n_actions, f"a{t}", failures)
        _check_finite(
            [("o0", dataset.o0)]
            + [(f"{name}{t}", blk) for name in ("o", "r", "w") for t, blk in enumerate(getattr(dataset, name), 1)],
            failures,
        )
        for t, r in enumerate(dataset.r, start=1):
            if r.size and np.all(np.isfinite(r)) and np.max(np.abs(r)) > dataset.r_max:
                failures.append(f"r{t}: reward exceeds r_max={dataset.r_max}")
    else:
        failures.append(f"unsupported dataset type {type(dataset).__name__}")
    return ValidationReport(tuple(failures))


def random_split(dataset, train_fraction: float, seed: int | None = None):
    """Disjoint random (train, eval) partition of the rows."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = dataset.n
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    n_train = int(math.floor(train_fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    train_idx, eval_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return dataset.take(train_idx), dataset.take(eval_idx)


# ---------------------------------------------------------------------------
# Estimator configuration


@dataclass(frozen=True)
class CVSpec:
    folds: int = 5
    penalty_grid: tuple = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)
    proj_grid: tuple = (1e-6, 1e-4, 1e-2, 1.0)

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("cv folds must be >= 2")
        if not self.penalty_grid or not self.proj_grid:
            raise ValueError("cv grids must be nonempty")
        if min(self.penalty_grid) <= 0 or min(self.proj_grid) <= 0:
            raise ValueError("cv grid penalties must be positive")


@dataclass(frozen=True)
class EstimatorConfig:
    """Penalties for the min-max bridge fit and the ridge projection.

    Unset penalties resolve from the sample size n:
    lam = n^-1/2, mu = 1, U = 1, delta = n^-1/4, mu_proj = n^-1/2.
    The ratio U / delta^2 (weight of the empirical-norm penalty) is therefore n^1/2 by
    default; it is a tuning choice, not a derived constant.
    """

    lam: float | None = None
    mu: float | None = None
    U: float | None = None
    delta: float | None = None
    mu_proj: float | None = None
    cv: CVSpec | None = None
    seed: int = 0
    median_cap: int = 1000

    def __post_init__(self):
        for name in ("lam", "mu", "U", "delta", "mu_proj"):
            v = getattr(self, name)
            if v is not None and not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a positive finite number, got {v}")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    def resolve(self, n: int) -> "EstimatorConfig":
        return replace(
            self,
            lam=self.lam if self.lam is not None else n ** -0.5,
            mu=self.mu if self.mu is not None else 1.0,
            U=self.U if self.U is not None else 1.0,
            delta=self.delta if self.delta is not None else n ** -0.25,
            mu_proj=self.mu_proj if self.mu_proj is not None else n ** -0.5,
        )

    @property
    def q_penalty(self) -> float:
        """The product lam * mu multiplying the bridge norm."""
        return self.lam * self.mu

    def with_q_penalty(self, value: float) -> "EstimatorConfig":
        return replace(self, mu=value / self.lam)


# ---------------------------------------------------------------------------
# Policies


def _argmax_rows(scores: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximizer: smallest action index wins ties
    return np.argmax(scores, axis=1).astype(np.int64)


@dataclass(frozen=True)
class BanditPolicy:
    """Deterministic policy scoring each action with a fitted projection.

    ``models[a].predict`` receives the conditioning matrix of the policy class:
    s for SOnly, (s, z) for SZ and (s, z, one-hot a') for Super.
    """

    kind: PolicyKind
    models: tuple
    n_actions: int
    d_s: int
    d_z: int

    def features(self, s, z, a_rec) -> np.ndarray:
        return conditioning(self.kind, s, z, a_rec, self.n_actions)

    def scores(self, s, z, a_rec) -> np.ndarray:
        s, z, a_rec = _as_rows(s, self.d_s), _as_rows(z, self.d_z), np.atleast_1d(np.asarray(a_rec, dtype=np.int64))
        if not (s.shape[0] == z.shape[0] == a_rec.shape[0]):
            raise ValueError("s, z and a_rec must have matching row counts")
        if a_rec.size and (a_rec.min() < 0 or a_rec.max() >= self.n_actions):
            raise ValueError("recommended action out of range")
        x = self.features(s, z, a_rec)
        return np.column_stack([m.predict(x) for m in self.models])

    def act(self, s, z, a_rec) -> np.ndarray:
        return _argmax_rows(self.scores(s, z, a_rec))


def _as_rows(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        x = x.reshape(-1, d) if d else x.reshape(-1, 0)
    if x.shape[1] != d:
        raise ValueError(f"expected {d} columns, got {x.shape[1]}")
    return x


def conditioning(kind: PolicyKind, s, z, a_rec, n_actions: int) -> np.ndarray:
    kind = PolicyKind(kind)
    if kind is PolicyKind.SONLY:
        return np.asarray(s, dtype=float)
    if kind is PolicyKind.SZ:
        return np.hstack([s, z])
    if kind is PolicyKind.SUPER:
        return np.hstack([s, z, one_hot(a_rec, n_actions)])
    raise ValueError(f"{kind} is not a bandit policy class")


@dataclass(frozen=True)
class StageRule:
    """Decision rule at step t of a sequential policy.

    ``models`` maps a past-action key to one fitted projection per candidate action.
    SuperSeq at t = T keys on own past actions and conditions on all behavior actions;
    SuperSeq at t < T keys on past behavior actions and conditions on own past actions
    plus the current behavior action. Common keys and conditions on own past actions only.
    """

    t: int
    horizon: int
    kind: PolicyKind
    models: dict
    n_actions: int

    def _key_and_features(self, obs, own, behavior):
        t, K = self.t, self.n_actions
        if self.kind is PolicyKind.COMMON:
            return own[:, : t - 1], np.hstack([obs, one_hot(own[:, : t - 1], K)])
        if t == self.horizon:
            return own[:, : t - 1], np.hstack([obs, one_hot(behavior[:, :t], K)])
        return behavior[:, : t - 1], np.hstack([obs, one_hot(own[:, : t - 1], K), one_hot(behavior[:, [t - 1]], K)])

    def scores(self, obs, own, behavior) -> np.ndarray:
        keys, x = self._key_and_features(obs, own, behavior)
        out = np.empty((x.shape[0], self.n_actions))
        key_tuples = [tuple(int(v) for v in row) for row in keys]
        for key in sorted(set(key_tuples)):
            rows = np.array([k == key for k in key_tuples])
            out[rows] = np.column_stack([m.predict(x[rows]) for m in self.models[key]])
        return out


@dataclass(frozen=True)
class SequentialPolicy:
    kind: PolicyKind
    stages: tuple
    n_actions: int
    obs_dims: tuple

    @property
    def horizon(self) -> int:
        return len(self.stages)

    def act(self, t: int, obs, own_actions, behavior_actions) -> np.ndarray:
        """Action at step t (1-based) given O_{1:t}, own A^nu_{1:t-1} and behavior A_{1:t}."""
        if not 1 <= t <= self.horizon:
            raise ValueError(f"step {t} outside 1..{self.horizon}")
        obs = np.asarray(obs, dtype=float)
        if obs.ndim == 1:
            obs = obs[None, :]
        if obs.shape[1] != sum(self.obs_dims[:t]):
            raise ValueError(f"expected {sum(self.obs_dims[:t])} observation columns at step {t}")
        n = obs.shape[0]
        own = np.asarray(own_actions, dtype=np.int64).reshape(n, -1) if t > 1 else np.zeros((n, 0), np.int64)
        behavior = np.asarray(behavior_actions, dtype=np.int64).reshape(n, -1)
        if own.shape[1] != t - 1 or behavior.shape[1] != t:
            raise ValueError(f"step {t} needs {t - 1} own and {t} behavior actions")
        for acts in (own, behavior):
            if acts.size and (acts.min() < 0 or acts.max() >= self.n_actions):
                raise ValueError("action out of range")
        return _argmax_rows(self.stages[t - 1].scores(obs, own, behavior))


# ---------------------------------------------------------------------------
# Delimited text formats


def _fmt(x) -> str:
    return repr(float(x))


def _columns(prefix: str, d: int) -> list[str]:
    return [f"{prefix}_{j}" for j in range(d)]


def write_bandit_csv(dataset: BanditDataset, path) -> None:
    header = _columns("s", dataset.s.shape[1]) + _columns("z", dataset.z.shape[1]) + _columns("w", dataset.w.shape[1]) + ["a", "r"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(dataset.n):
            row = [_fmt(v) for v in dataset.s[i]] + [_fmt(v) for v in dataset.z[i]] + [_fmt(v) for v in dataset.w[i]]
            writer.writerow(row + [str(int(dataset.a[i])), _fmt(dataset.r[i])])


def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    return header, rows


def _block(header, rows, prefix):
    idx = [j for j, name in enumerate(header) if name.rsplit("_", 1)[0] == prefix and name.rsplit("_", 1)[-1].isdigit()]
    idx.sort(key=lambda j: int(header[j].rsplit("_", 1)[1]))
    return np.array([[float(row[j]) for j in idx] for row in rows]).reshape(len(rows), len(idx))


def _col(header, rows, name, dtype=float):
    j = header.index(name)
    return np.array([dtype(row[j]) for row in rows])


def read_bandit_csv(path, n_actions: int | None = None) -> BanditDataset:
    header, rows = _read_table(path)
    a = _col(header, rows, "a", int)
    K = n_actions if n_actions is not None else max(2, int(a.max()) + 1 if a.size else 2)
    return BanditDataset(_block(header, rows, "s"), _block(header, rows, "z"), _block(header, rows, "w"), a, _col(header, rows, "r"), K)


def write_sequential_csv(dataset: SequentialDataset, path) -> None:
    header = _columns("o0", dataset.o0.shape[1])
    for t in range(1, dataset.horizon + 1):
        header += _columns(f"o{t}", dataset.o[t - 1].shape[1]) + [f"a{t}", f"r{t}"] + _columns(f"w{t}", dataset.w[t - 1].shape[1])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(dataset.n):
            row = [_fmt(v) for v in dataset.o0[i]]
            for t in range(dataset.horizon):
                row += [_fmt(v) for v in dataset.o[t][i]]
                row += [str(int(dataset.a[t][i])), _fmt(dataset.r[t][i])]
                row += [_fmt(v) for v in dataset.w[t][i]]
            writer.writerow(row)


def read_sequential_csv(path, n_actions: int | None = None, r_max: float = math.inf) -> SequentialDataset:
    header, rows = _read_table(path)
    T = 0
    while f"a{T + 1}" in header:
        T += 1
    a = tuple(_col(header, rows, f"a{t}", int) for t in range(1, T + 1))
    K = n_actions if n_actions is not None else max(2, max((int(x.max()) + 1 for x in a if x.size), default=2))
    return SequentialDataset(
        _block(header, rows, "o0"),
        tuple(_block(header, rows, f"o{t}") for t in range(1, T + 1)),
        a,
        tuple(_col(header, rows, f"r{t}") for t in range(1, T + 1)),
        tuple(_block(header, rows, f"w{t}") for t in range(1, T + 1)),
        K,
        r_max,
    )


# ---------------------------------------------------------------------------
# Config files

CONFIG_DEFAULTS = {
    "estimator": {
        "lam": "auto",
        "mu": "auto",
        "U": "auto",
        "delta": "auto",
        "mu_proj": "auto",
        "cv_folds": "0",
        "penalty_grid": "1e-6 1e-5 1e-4 1e-3 1e-2 1e-1 1",
        "proj_grid": "1e-6 1e-4 1e-2 1",
        "seed": "0",
    },
}


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def estimator_from_section(section) -> EstimatorConfig:
    """Build an EstimatorConfig from a mapping of strings; 'auto' keeps the n-dependent default."""
    merged = dict(CONFIG_DEFAULTS["estimator"])
    merged.update({k: v for k, v in section.items() if k in merged})

    def opt(name):
        v = merged[name].strip()
        return None if v.lower() == "auto" else float(v)

    folds = int(merged["cv_folds"])
    cv = CVSpec(folds, _floats(merged["penalty_grid"]), _floats(merged["proj_grid"])) if folds else None
    return EstimatorConfig(
        lam=opt("lam"), mu=opt("mu"), U=opt("U"), delta=opt("delta"), mu_proj=opt("mu_proj"),
        cv=cv, seed=int(merged["seed"]),
    )


def parse_config(text: str) -> tuple[EstimatorConfig, dict]:
    """Parse INI-style text: [estimator] keys plus free-form [experiment] keys."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_string(text)
    est = estimator_from_section(parser["estimator"] if parser.has_section("estimator") else {})
    experiment = dict(parser["experiment"]) if parser.has_section("experiment") else {}
    return est, experiment


def load_config(path) -> tuple[EstimatorConfig, dict]:
    return parse_config(Path(path).read_text(encoding="utf-8"))
