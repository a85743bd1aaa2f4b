"""Data-generating processes, exact and Monte-Carlo value oracles, CATT/CATC diagnostics.

Finite environments are held as probability tables and evaluated by enumerating atoms.
Continuous environments are sampled; their oracle values come from rollouts with
pre-drawn exogenous noise, so two policies evaluated with one seed share every draw.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .datamodel import BanditDataset, SequentialDataset

# ---------------------------------------------------------------------------
# Finite contextual bandits


def _normalize(p, axis=-1):
    p = np.asarray(p, dtype=float)
    return p / p.sum(axis=axis, keepdims=True)


@dataclass(frozen=True, eq=False)
class FiniteBanditSpec:
    """Finite confounded bandit: S, U, behavior A, proxies Z, W, mean reward m(s, u, a).

    Shapes: p_s (nS,), p_u (nS, nU) = P(U | S), pi_b (nS, nU, K), p_z (nS, nU, nZ),
    p_w (nS, nU, nW), mean_r (nS, nU, K). Z and W are conditionally independent given
    (S, U). Level codes 0, 1, ... double as the observed values.
    """

    p_s: np.ndarray
    p_u: np.ndarray
    pi_b: np.ndarray
    p_z: np.ndarray
    p_w: np.ndarray
    mean_r: np.ndarray
    noise_sd: float = 0.0
    name: str = "finite"

    @property
    def n_actions(self) -> int:
        return self.mean_r.shape[2]

    @property
    def shape(self):
        nS, nU = self.p_u.shape
        return nS, nU, self.n_actions, self.p_z.shape[2], self.p_w.shape[2]

    def atoms(self):
        """All (s, u, a, z, w) atoms of the behavior distribution with their probabilities."""
        nS, nU, K, nZ, nW = self.shape
        grid = np.array(list(itertools.product(range(nS), range(nU), range(K), range(nZ), range(nW))))
        s, u, a, z, w = grid.T
        prob = self.p_s[s] * self.p_u[s, u] * self.pi_b[s, u, a] * self.p_z[s, u, z] * self.p_w[s, u, w]
        keep = prob > 0
        return s[keep], u[keep], a[keep], z[keep], w[keep], prob[keep]

    def population(self):
        """(BanditDataset of atoms with mean rewards, atom probabilities)."""
        s, u, a, z, w, prob = self.atoms()
        ds = BanditDataset(s.astype(float), z.astype(float), w.astype(float), a, self.mean_r[s, u, a], self.n_actions)
        return ds, prob

    def value(self, policy) -> float:
        """Exact value of a deterministic policy mapping (s, z, a') arrays to actions."""
        s, u, a, z, w, prob = self.atoms()
        act = np.asarray(policy(s[:, None].astype(float), z[:, None].astype(float), a), dtype=np.int64)
        return float(np.sum(prob * self.mean_r[s, u, act]))

    def behavior_value(self) -> float:
        return self.value(behavior_clone)

    def u_aware_value(self) -> float:
        """Value of the optimal policy that sees (S, U)."""
        ps_u = self.p_s[:, None] * self.p_u
        return float(np.sum(ps_u * self.mean_r.max(axis=2)))

    def optimal_policy(self, inputs=("s", "z", "a")) -> "TablePolicy":
        """Enumeration argmax of E[R(a) | inputs] over the cells of the given inputs."""
        s, u, a, z, w, prob = self.atoms()
        cols = {"s": s, "z": z, "a": a}
        keys = np.column_stack([cols[name] for name in inputs]) if inputs else np.zeros((len(s), 0), dtype=int)
        K = self.n_actions
        table = {}
        for key in {tuple(row) for row in keys}:
            rows = np.all(keys == np.array(key, dtype=int), axis=1) if inputs else np.ones(len(s), bool)
            gains = np.array([np.sum(prob[rows] * self.mean_r[s[rows], u[rows], b]) for b in range(K)])
            table[tuple(int(v) for v in key)] = int(np.argmax(gains))
        return TablePolicy(tuple(inputs), table)

    def sample(self, n: int, seed) -> BanditDataset:
        if n < 1:
            raise ValueError("n must be >= 1")
        g_su, g_a, g_z, g_w, g_r = (np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(5))
        nS, nU, K, nZ, nW = self.shape
        s = g_su.choice(nS, size=n, p=self.p_s)
        u = _draw_rows(g_su, self.p_u[s])
        a = _draw_rows(g_a, self.pi_b[s, u])
        z = _draw_rows(g_z, self.p_z[s, u])
        w = _draw_rows(g_w, self.p_w[s, u])
        r = self.mean_r[s, u, a] + (g_r.normal(0.0, self.noise_sd, n) if self.noise_sd > 0 else 0.0)
        return BanditDataset(s.astype(float), z.astype(float), w.astype(float), a, r, K)


def _draw_rows(rng, probs) -> np.ndarray:
    """One categorical draw per row of a probability matrix."""
    cum = np.cumsum(probs, axis=1)
    draws = rng.random(probs.shape[0])
    return np.minimum((draws[:, None] >= cum).sum(axis=1), probs.shape[1] - 1)


@dataclass(frozen=True)
class TablePolicy:
    inputs: tuple
    table: dict

    def __call__(self, s, z, a_rec) -> np.ndarray:
        s = np.asarray(s).reshape(len(a_rec), -1)[:, 0].astype(int)
        z = np.asarray(z).reshape(len(a_rec), -1)
        z = z[:, 0].astype(int) if z.shape[1] else np.zeros(len(a_rec), int)
        cols = {"s": s, "z": z, "a": np.asarray(a_rec, dtype=int)}
        keys = zip(*(cols[name] for name in self.inputs)) if self.inputs else (() for _ in range(len(s)))
        return np.array([self.table[tuple(int(v) for v in k)] for k in keys], dtype=np.int64)

    act = __call__


def behavior_clone(s, z, a_rec) -> np.ndarray:
    return np.asarray(a_rec, dtype=np.int64)


def constant_policy(action: int):
    def policy(s, z, a_rec):
        return np.full(len(np.atleast_1d(a_rec)), action, dtype=np.int64)

    return policy


@dataclass(frozen=True)
class ToySpec:
    """Binary S, U ~ Bern(0.5); P(A = U) = 1 - epsilon; R = 8 (A - 0.5)(S - 0.2)(U - 0.3)."""

    epsilon: float

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")

    def finite(self) -> FiniteBanditSpec:
        e = self.epsilon
        pi_u = np.array([[1 - e, e], [e, 1 - e]])  # rows u, cols a
        mean_r = np.array([[[8 * (a - 0.5) * (s - 0.2) * (u - 0.3) for a in (0, 1)] for u in (0, 1)] for s in (0, 1)])
        return FiniteBanditSpec(
            p_s=np.array([0.5, 0.5]),
            p_u=np.full((2, 2), 0.5),
            pi_b=np.broadcast_to(pi_u, (2, 2, 2)).copy(),
            p_z=np.ones((2, 2, 1)),
            p_w=np.ones((2, 2, 1)),
            mean_r=mean_r,
            name=f"toy(eps={e})",
        )


@dataclass(frozen=True)
class DiscreteBanditSpec:
    """Binary S, U; P(A=1 | U=0) = eps, P(A=1 | U=1) = 1 - eps; binary proxies at 0.4 / 0.6.

    R = (U - 0.5)(A - 0.5) + N(0, sd), sd = 0.5 read as a standard deviation.
    """

    epsilon: float
    noise_sd: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")

    def finite(self) -> FiniteBanditSpec:
        e = self.epsilon
        pi_u = np.array([[1 - e, e], [e, 1 - e]])
        proxy = np.array([[0.6, 0.4], [0.4, 0.6]])  # P(level | u)
        mean_r = np.array([[[(u - 0.5) * (a - 0.5) for a in (0, 1)] for u in (0, 1)] for _ in (0, 1)])
        return FiniteBanditSpec(
            p_s=np.array([0.5, 0.5]),
            p_u=np.full((2, 2), 0.5),
            pi_b=np.broadcast_to(pi_u, (2, 2, 2)).copy(),
            p_z=np.broadcast_to(proxy, (2, 2, 2)).copy(),
            p_w=np.broadcast_to(proxy, (2, 2, 2)).copy(),
            mean_r=mean_r,
            noise_sd=self.noise_sd,
            name=f"discrete(eps={e})",
        )

    def sample(self, n: int, seed) -> BanditDataset:
        return self.finite().sample(n, seed)


@dataclass(frozen=True)
class ContinuousBanditSpec:
    """S, U ~ N(0, 1); P(A=1 | U>0) = eps, P(A=1 | U<=0) = 1 - eps;
    W ~ N(S + 3U, 1), Z ~ N(3S + U, 1); R = U (A - 0.5) + N(0, 0.5)."""

    epsilon: float
    noise_sd: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")

    n_actions = 2

    def _draw(self, n, seed):
        g_su, g_a, g_z, g_w, g_r = (np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(5))
        s = g_su.standard_normal(n)
        u = g_su.standard_normal(n)
        p1 = np.where(u > 0, self.epsilon, 1 - self.epsilon)
        a = (g_a.random(n) < p1).astype(np.int64)
        z = 3 * s + u + g_z.standard_normal(n)
        w = s + 3 * u + g_w.standard_normal(n)
        noise = g_r.normal(0.0, self.noise_sd, n)
        return s, u, a, z, w, noise

    @staticmethod
    def mean_reward(u, a):
        return u * (np.asarray(a) - 0.5)

    def sample(self, n: int, seed) -> BanditDataset:
        if n < 1:
            raise ValueError("n must be >= 1")
        s, u, a, z, w, noise = self._draw(n, seed)
        return BanditDataset(s, z, w, a, self.mean_reward(u, a) + noise, 2)

    def rollout(self, policy, m: int, seed):
        """Per-draw (reward under policy, u, s, behavior a) on fresh draws."""
        s, u, a, z, w, noise = self._draw(m, seed)
        act = np.asarray(policy(s[:, None], z[:, None], a), dtype=np.int64)
        return self.mean_reward(u, act) + noise, (s, u, a, z, w, noise)

    def reference_policy(self, m: int = 100_000, seed: int = 12345):
        """U-aware reference: regress R on (1, U, S, A, U*A, S*A) over uniform-random actions, then argmax."""
        s, u, _, _, _, noise = self._draw(m, seed)
        a = np.random.default_rng(seed + 1).integers(0, 2, m)
        r = self.mean_reward(u, a) + noise
        X = np.column_stack([np.ones(m), u, s, a, u * a, s * a])
        beta, *_ = np.linalg.lstsq(X, r, rcond=None)

        def policy(u_, s_):
            gain = beta[3] + beta[4] * u_ + beta[5] * s_
            return (gain > 0).astype(np.int64)

        return policy


# ---------------------------------------------------------------------------
# Oracles for bandits


def toy_values(epsilon: float):
    """(V behavior, V standard optimum over S, V super over (S, A')) by enumeration."""
    spec = ToySpec(epsilon).finite()
    v_b = spec.behavior_value()
    v_std = spec.value(spec.optimal_policy(("s",)))
    v_sup = spec.value(spec.optimal_policy(("s", "z", "a")))
    closed = (0.6 - 1.2 * epsilon, 0.4, abs(0.7 - epsilon) + abs(epsilon - 0.3))
    if not np.allclose((v_b, v_std, v_sup), closed, rtol=0, atol=1e-12):
        raise AssertionError(f"enumeration {(v_b, v_std, v_sup)} disagrees with closed forms {closed}")
    return v_b, v_std, v_sup


def _finite(spec) -> FiniteBanditSpec:
    if isinstance(spec, FiniteBanditSpec):
        return spec
    if isinstance(spec, (ToySpec, DiscreteBanditSpec)):
        return spec.finite()
    raise TypeError(f"{type(spec).__name__} is not a finite specification")


def oracle_value_exact(policy, spec) -> float:
    if isinstance(spec, FiniteSequentialSpec):
        return spec.value(policy)
    return _finite(spec).value(policy)


def oracle_value_mc(policy, spec, episodes: int, seed):
    """Monte-Carlo value and standard error from fresh rollouts."""
    if episodes < 100:
        raise ValueError("need at least 100 episodes")
    if isinstance(spec, (SequentialSpec, FiniteSequentialSpec)):
        returns = spec.rollout(policy, episodes, seed)
    elif isinstance(spec, ContinuousBanditSpec):
        returns, _ = spec.rollout(policy, episodes, seed)
    else:
        returns = _finite_rollout(_finite(spec), policy, episodes, np.random.default_rng(seed))
    returns = np.asarray(returns, dtype=float)
    return float(returns.mean()), float(returns.std(ddof=1) / np.sqrt(len(returns)))


def _finite_rollout(spec: FiniteBanditSpec, policy, m, rng):
    nS, nU, K, nZ, nW = spec.shape
    s = rng.choice(nS, size=m, p=spec.p_s)
    u = _draw_rows(rng, spec.p_u[s])
    a = _draw_rows(rng, spec.pi_b[s, u])
    z = _draw_rows(rng, spec.p_z[s, u])
    act = np.asarray(policy(s[:, None].astype(float), z[:, None].astype(float), a), dtype=np.int64)
    noise = rng.normal(0.0, spec.noise_sd, m) if spec.noise_sd > 0 else 0.0
    return spec.mean_r[s, u, act] + noise


@dataclass(frozen=True)
class CattRow:
    s: int
    prob_s: float
    pi_b1: float
    catt: float | None
    catc: float | None


@dataclass(frozen=True)
class CattReport:
    rows: tuple
    improves_over_standard: bool
    improves_over_behavior: bool
    improves_over_both: bool


def catt_catc(spec) -> CattReport:
    """CATT(s), CATC(s) by enumeration and the three strict-improvement conditions (binary actions)."""
    fin = _finite(spec)
    nS, nU, K, _, _ = fin.shape
    if K != 2:
        raise ValueError("CATT / CATC need binary actions")
    rows = []
    cond_i = cond_ii = cond_iii = False
    for s in range(nS):
        if fin.p_s[s] <= 0:
            continue
        effect = fin.mean_r[s, :, 1] - fin.mean_r[s, :, 0]
        joint = fin.p_u[s][:, None] * fin.pi_b[s]  # (u, a)
        pa = joint.sum(axis=0)
        catt = float(joint[:, 1] @ effect / pa[1]) if pa[1] > 0 else None
        catc = float(joint[:, 0] @ effect / pa[0]) if pa[0] > 0 else None
        rows.append(CattRow(s, float(fin.p_s[s]), float(pa[1]), catt, catc))
        interior = pa[0] > 0 and pa[1] > 0
        if interior and catt * catc < 0:
            cond_i = True
        if (catt is not None and catt < 0) or (catc is not None and catc > 0):
            cond_ii = True
        if interior and catt < 0 and catc > 0:
            cond_iii = True
    return CattReport(tuple(rows), cond_i, cond_ii, cond_iii)


def random_finite_bandit_spec(rng, n_states=None, n_latent=None, n_actions=None, n_z=1, n_w=1, deterministic_prob=0.2) -> FiniteBanditSpec:
    """Random finite environment; some behavior rows are made deterministic to exercise overlap edges."""
    nS = n_states or int(rng.integers(1, 4))
    nU = n_latent or int(rng.integers(2, 4))
    K = n_actions or int(rng.integers(2, 4))
    pi_b = _normalize(rng.dirichlet(np.ones(K), size=(nS, nU)))
    if deterministic_prob > 0:
        for s in range(nS):
            if rng.random() < deterministic_prob:
                pi_b[s] = np.eye(K)[rng.integers(0, K, nU)]
    return FiniteBanditSpec(
        p_s=rng.dirichlet(np.ones(nS)),
        p_u=rng.dirichlet(np.ones(nU), size=nS),
        pi_b=pi_b,
        p_z=rng.dirichlet(np.ones(n_z), size=(nS, nU)),
        p_w=rng.dirichlet(np.ones(n_w), size=(nS, nU)),
        mean_r=rng.normal(size=(nS, nU, K)),
        name="random",
    )


# ---------------------------------------------------------------------------
# Sequential environments


@dataclass(frozen=True)
class SequentialSpec:
    """Memoryless confounded POMDP with latent U_t and T steps.

    U_1 ~ Uniform{-1, 1}; O_0 = U_1 + N(0, 0.3); O_t = 0.5 U_t + N(0, 0.3); W_t = U_t + N(0, 0.3);
    behavior A_t = 1{U_t > 0}, flipped with probability delta;
    U_{t+1} = clip(0.5 U_t + (A_t - 0.5), -1, 1) + N(0, 0.2);
    R_t = expit(U_t (A_t - 0.5)) + Uniform(-0.1, 0.1).
    """

    delta: float = 0.2
    horizon: int = 2
    obs_sd: float = 0.3
    transition_sd: float = 0.2
    reward_noise: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    n_actions = 2

    @property
    def r_max(self) -> float:
        return 1.0 + self.reward_noise

    def _noise(self, n, seed):
        T = self.horizon
        g = [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(7)]
        return {
            "u1": np.where(g[0].random(n) < 0.5, -1.0, 1.0),
            "o0": g[1].normal(0, self.obs_sd, n),
            "o": g[2].normal(0, self.obs_sd, (T, n)),
            "w": g[3].normal(0, self.obs_sd, (T, n)),
            "flip": g[4].random((T, n)) < self.delta,
            "u": g[5].normal(0, self.transition_sd, (T, n)),
            "r": g[6].uniform(-self.reward_noise, self.reward_noise, (T, n)),
        }

    @staticmethod
    def mean_reward(u, a):
        return expit(u * (np.asarray(a) - 0.5))

    def _behavior(self, u, flip):
        return np.where(flip, (u <= 0), (u > 0)).astype(np.int64)

    def _transition(self, u, a, eps):
        return np.clip(0.5 * u + (a - 0.5), -1.0, 1.0) + eps

    def sample(self, n: int, seed) -> SequentialDataset:
        if n < 1:
            raise ValueError("n must be >= 1")
        nz = self._noise(n, seed)
        u = nz["u1"]
        o0 = u + nz["o0"]
        o, a, r, w = [], [], [], []
        for t in range(self.horizon):
            if t > 0:
                u = self._transition(u, a[-1], nz["u"][t])
            o.append(0.5 * u + nz["o"][t])
            w.append(u + nz["w"][t])
            a.append(self._behavior(u, nz["flip"][t]))
            r.append(self.mean_reward(u, a[-1]) + nz["r"][t])
        return SequentialDataset(o0, tuple(o), tuple(a), tuple(r), tuple(w), 2, self.r_max)

    def rollout(self, policy, m: int, seed, chooser=None) -> np.ndarray:
        """Episode returns when the behavior agent recommends and ``policy`` decides.

        ``policy.act(t, obs, own, behavior)`` is called per step. ``chooser(t, u, obs, own,
        behavior)``, when given, replaces it and may look at the latent state.
        """
        nz = self._noise(m, seed)
        u = nz["u1"]
        obs, own, beh = [], [], []
        total = np.zeros(m)
        for t in range(self.horizon):
            if t > 0:
                u = self._transition(u, own[-1], nz["u"][t])
            obs.append(0.5 * u + nz["o"][t])
            beh.append(self._behavior(u, nz["flip"][t]))
            O = np.column_stack(obs)
            own_m = np.column_stack(own) if own else np.zeros((m, 0), np.int64)
            beh_m = np.column_stack(beh)
            if chooser is not None:
                act = chooser(t + 1, u, O, own_m, beh_m)
            else:
                act = policy.act(t + 1, O, own_m, beh_m)
            act = np.asarray(act, dtype=np.int64)
            own.append(act)
            total += self.mean_reward(u, act) + nz["r"][t]
        return total

    def reference_chooser(self, m: int = 100_000, seed: int = 54321):
        """U-aware reference fitted on fresh rollouts with uniform-random actions.

        Last step: linear regression of R_T on (1, U, A, U*A), argmax. Earlier steps: the
        return-to-go of uniform-random then reference actions, regressed on (1, U, A, U*A, |U|, |U|*A).
        """
        T = self.horizon
        rng = np.random.default_rng(seed)
        coefs = [None] * T

        def feats(u, a, t):
            a = np.asarray(a, dtype=float)
            base = [np.ones_like(u), u, a, u * a]
            if t < T:
                base += [np.abs(u), np.abs(u) * a]
            return np.column_stack(base)

        def gain(t, u):
            c = coefs[t - 1]
            return feats(u, np.ones_like(u), t) @ c - feats(u, np.zeros_like(u), t) @ c

        def chooser(t, u, *_):
            return (gain(t, u) > 0).astype(np.int64)

        for t in range(T, 0, -1):
            explore = rng.integers(0, 2, (T, m))
            nz = self._noise(m, int(rng.integers(0, 2**31)))
            u, prev, ret = nz["u1"], None, np.zeros(m)
            for k in range(1, T + 1):
                if k > 1:
                    u = self._transition(u, prev, nz["u"][k - 1])
                prev = explore[k - 1] if k <= t else chooser(k, u)
                if k == t:
                    u_t, a_t = u, prev
                if k >= t:
                    ret += self.mean_reward(u, prev) + nz["r"][k - 1]
            coefs[t - 1], *_ = np.linalg.lstsq(feats(u_t, a_t, t), ret, rcond=None)
        return chooser


@dataclass(frozen=True, eq=False)
class FiniteSequentialSpec:
    """Finite memoryless POMDP for enumeration oracles.

    Shapes: p_u1 (nU,), p_o0 (nU, nO0), p_o (nU, nO), p_w (nU, nW), pi_b (nU, K),
    trans (nU, K, nU) = P(U_{t+1} | U_t, A^taken_t), mean_r (T, nU, K). Observation,
    proxy and behavior laws depend only on the current latent state.
    """

    p_u1: np.ndarray
    p_o0: np.ndarray
    p_o: np.ndarray
    p_w: np.ndarray
    pi_b: np.ndarray
    trans: np.ndarray
    mean_r: np.ndarray
    reward_noise: float = 0.0

    @property
    def horizon(self) -> int:
        return self.mean_r.shape[0]

    @property
    def n_actions(self) -> int:
        return self.pi_b.shape[1]

    @property
    def r_max(self) -> float:
        return float(np.abs(self.mean_r).max() + self.reward_noise)

    def population(self):
        """Behavior-distribution atoms as (SequentialDataset with mean rewards, probabilities)."""
        T, K = self.horizon, self.n_actions
        nU, nO0 = self.p_o0.shape
        nO, nW = self.p_o.shape[1], self.p_w.shape[1]
        rows = []

        def extend(prob, u, hist):
            t = len(hist["a"])
            if t == T:
                rows.append((prob, hist))
                return
            for o, w, a in itertools.product(range(nO), range(nW), range(K)):
                p = prob * self.p_o[u, o] * self.p_w[u, w] * self.pi_b[u, a]
                if p <= 0:
                    continue
                h = {k: v + [x] for (k, v), x in zip(hist.items(), (o, w, a, self.mean_r[t, u, a], u))}
                if t + 1 < T:
                    for u2 in range(nU):
                        if self.trans[u, a, u2] > 0:
                            extend(p * self.trans[u, a, u2], u2, h)
                else:
                    extend(p, u, h)

        for u1, o0 in itertools.product(range(nU), range(nO0)):
            p = self.p_u1[u1] * self.p_o0[u1, o0]
            if p > 0:
                before = len(rows)
                extend(p, u1, {"o": [], "w": [], "a": [], "r": [], "u": []})
                for j in range(before, len(rows)):
                    rows[j] = (rows[j][0], dict(rows[j][1], o0=o0))
        prob = np.array([p for p, _ in rows])
        col = lambda key, t: np.array([h[key][t] for _, h in rows])
        ds = SequentialDataset(
            np.array([h["o0"] for _, h in rows], dtype=float),
            tuple(col("o", t).astype(float) for t in range(T)),
            tuple(col("a", t) for t in range(T)),
            tuple(col("r", t).astype(float) for t in range(T)),
            tuple(col("w", t).astype(float) for t in range(T)),
            K,
            self.r_max,
        )
        return ds, prob

    def value(self, policy) -> float:
        """Exact value: behavior recommends, policy decides, transitions follow the policy."""
        T, K = self.horizon, self.n_actions
        nU, nO = self.p_o.shape

        def recurse(t, u, prob, obs, own, beh):
            total = 0.0
            for o, b in itertools.product(range(nO), range(K)):
                p = prob * self.p_o[u, o] * self.pi_b[u, b]
                if p <= 0:
                    continue
                obs2, beh2 = obs + [o], beh + [b]
                act = int(policy.act(t + 1, np.array([obs2], float), np.array([own], np.int64).reshape(1, -1), np.array([beh2]))[0])
                total += p * self.mean_r[t, u, act]
                if t + 1 < T:
                    for u2 in range(nU):
                        if self.trans[u, act, u2] > 0:
                            total += recurse(t + 1, u2, p * self.trans[u, act, u2], obs2, own + [act], beh2)
            return total

        return float(sum(recurse(0, u1, self.p_u1[u1], [], [], []) for u1 in range(nU) if self.p_u1[u1] > 0))

    def u_aware_value(self) -> float:
        """Optimal value when the latent state is observed (backward dynamic programming)."""
        v = np.zeros(len(self.p_u1))
        for t in range(self.horizon - 1, -1, -1):
            v = (self.mean_r[t] + self.trans @ v).max(axis=1) if t + 1 < self.horizon else self.mean_r[t].max(axis=1)
        return float(self.p_u1 @ v)

    def sample(self, n: int, seed) -> SequentialDataset:
        g = [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(6)]
        T = self.horizon
        u = g[0].choice(len(self.p_u1), size=n, p=self.p_u1)
        o0 = _draw_rows(g[1], self.p_o0[u])
        o, a, r, w = [], [], [], []
        for t in range(T):
            if t > 0:
                u = _draw_rows(g[0], self.trans[u, a[-1]])
            o.append(_draw_rows(g[2], self.p_o[u]).astype(float))
            w.append(_draw_rows(g[3], self.p_w[u]).astype(float))
            a.append(_draw_rows(g[4], self.pi_b[u]))
            r.append(self.mean_r[t, u, a[-1]] + g[5].uniform(-self.reward_noise, self.reward_noise, n))
        return SequentialDataset(o0.astype(float), tuple(o), tuple(a), tuple(r), tuple(w), self.n_actions, self.r_max)

    def rollout(self, policy, m: int, seed) -> np.ndarray:
        g = [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(4)]
        u = g[0].choice(len(self.p_u1), size=m, p=self.p_u1)
        obs, own, beh = [], [], []
        total = np.zeros(m)
        for t in range(self.horizon):
            if t > 0:
                u = _draw_rows(g[0], self.trans[u, own[-1]])
            obs.append(_draw_rows(g[1], self.p_o[u]).astype(float))
            beh.append(_draw_rows(g[2], self.pi_b[u]))
            own_m = np.column_stack(own) if own else np.zeros((m, 0), np.int64)
            act = np.asarray(policy.act(t + 1, np.column_stack(obs), own_m, np.column_stack(beh)), dtype=np.int64)
            own.append(act)
            total += self.mean_r[t, u, act] + g[3].uniform(-self.reward_noise, self.reward_noise, m)
        return total


def random_finite_sequential_spec(rng, horizon: int = 2, n_latent: int = 2, n_obs: int = 2, n_actions: int = 2) -> FiniteSequentialSpec:
    nU = n_latent
    return FiniteSequentialSpec(
        p_u1=rng.dirichlet(np.ones(nU)),
        p_o0=rng.dirichlet(np.ones(nU), size=nU),
        p_o=rng.dirichlet(np.ones(n_obs), size=nU),
        p_w=rng.dirichlet(np.ones(nU), size=nU),
        pi_b=rng.dirichlet(np.ones(n_actions), size=nU),
        trans=rng.dirichlet(np.ones(nU), size=(nU, n_actions)),
        mean_r=rng.normal(size=(horizon, nU, n_actions)),
    )


@dataclass(frozen=True)
class BehaviorClonePolicy:
    """Sequential policy that follows the current behavior recommendation."""

    def act(self, t, obs, own, behavior):
        return np.asarray(behavior)[:, t - 1].astype(np.int64)
