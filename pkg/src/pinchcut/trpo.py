"""Trust-region policy optimisation for small discrete-action problems.

Everything runs in float64 numpy.  The policy is a tanh MLP with a softmax
head; gradients, Jacobian-vector products and Fisher-vector products are
written out by hand.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .env import rollout

log = logging.getLogger(__name__)

HIDDEN = (32, 32)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 20
    batch_size: int = 500
    max_kl: float = 0.01
    discount: float = 1.0
    cg_iterations: int = 10
    cg_damping: float = 0.1
    backtrack_steps: int = 10
    backtrack_ratio: float = 0.5
    seed: int = 0
    hidden: tuple[int, ...] = HIDDEN


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Policy:
    """Categorical policy ``obs -> softmax(MLP(obs))`` over ``n_actions``."""

    def __init__(self, obs_dim: int, n_actions: int = 4, hidden: Sequence[int] = HIDDEN,
                 params: np.ndarray | None = None, rng: np.random.Generator | None = None):
        self.obs_dim = int(obs_dim)
        self.n_actions = int(n_actions)
        self.hidden = tuple(int(h) for h in hidden)
        self.sizes = (self.obs_dim,) + self.hidden + (self.n_actions,)
        self.shapes = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.shapes += [(fan_in, fan_out), (fan_out,)]
        self.n_params = sum(int(np.prod(s)) for s in self.shapes)
        if params is None:
            params = self._init_params(rng if rng is not None else np.random.default_rng(0))
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params.copy()

    def _init_params(self, rng: np.random.Generator) -> np.ndarray:
        chunks = []
        n_layers = len(self.sizes) - 1
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            # small output layer: start near the uniform policy
            scale = 0.01 if k == n_layers - 1 else 1.0
            chunks.append(rng.normal(0.0, scale / np.sqrt(fan_in), size=fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
        return np.concatenate(chunks)

    def with_params(self, params: np.ndarray) -> Policy:
        return Policy(self.obs_dim, self.n_actions, self.hidden, params)

    def copy(self) -> Policy:
        return self.with_params(self.params)

    def layers(self, params: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        flat = self.params if params is None else params
        out, pos = [], 0
        for k in range(0, len(self.shapes), 2):
            (fi, fo), _ = self.shapes[k], self.shapes[k + 1]
            W = flat[pos:pos + fi * fo].reshape(fi, fo)
            pos += fi * fo
            b = flat[pos:pos + fo]
            pos += fo
            out.append((W, b))
        return out

    def _forward(self, obs: np.ndarray):
        x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        acts = [x]
        layers = self.layers()
        for W, b in layers[:-1]:
            x = np.tanh(x @ W + b)
            acts.append(x)
        W, b = layers[-1]
        return x @ W + b, acts

    def logits(self, obs: np.ndarray) -> np.ndarray:
        return self._forward(obs)[0]

    def probs(self, obs: np.ndarray) -> np.ndarray:
        return _softmax(self.logits(obs))

    def log_probs(self, obs: np.ndarray) -> np.ndarray:
        return _log_softmax(self.logits(obs))

    def act(self, obs: np.ndarray, rng: np.random.Generator) -> int:
        p = self.probs(obs)[0]
        a = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
        return min(a, self.n_actions - 1)

    def backprop(self, acts: list[np.ndarray], dlogits: np.ndarray) -> np.ndarray:
        """Vector-Jacobian product: d(sum dlogits * logits)/d params."""
        layers = self.layers()
        grads = []
        delta = dlogits
        for k in range(len(layers) - 1, -1, -1):
            W, _ = layers[k]
            x = acts[k]
            grads.append((delta.sum(axis=0), x.T @ delta))
            if k > 0:
                delta = (delta @ W.T) * (1.0 - x * x)
        flat = []
        for gb, gW in reversed(grads):
            flat += [gW.ravel(), gb]
        return np.concatenate(flat)

    def jvp(self, obs: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jacobian-vector product: directional derivative of the logits."""
        x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        dx = np.zeros_like(x)
        layers = self.layers()
        dlayers = self.layers(v)
        for k, ((W, b), (dW, db)) in enumerate(zip(layers, dlayers)):
            z = x @ W + b
            dz = dx @ W + x @ dW + db
            if k == len(layers) - 1:
                return dz
            x = np.tanh(z)
            dx = (1.0 - x * x) * dz
        raise AssertionError("unreachable")


def count_params(obs_dim: int, n_actions: int = 4, hidden: Sequence[int] = HIDDEN) -> int:
    sizes = (obs_dim,) + tuple(hidden) + (n_actions,)
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass
class RolloutBatch:
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    returns: np.ndarray
    advantages: np.ndarray
    old_log_probs: np.ndarray
    timesteps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    episode_returns: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)


class TimeBaseline:
    """Running mean of the return observed at each timestep."""

    def __init__(self):
        self.sums = np.zeros(0)
        self.counts = np.zeros(0)

    def _grow(self, n):
        if n > len(self.sums):
            self.sums = np.pad(self.sums, (0, n - len(self.sums)))
            self.counts = np.pad(self.counts, (0, n - len(self.counts)))

    def update(self, timesteps: np.ndarray, returns: np.ndarray):
        self._grow(int(timesteps.max()) + 1)
        np.add.at(self.sums, timesteps, returns)
        np.add.at(self.counts, timesteps, 1.0)

    def __call__(self, timesteps: np.ndarray) -> np.ndarray:
        self._grow(int(timesteps.max()) + 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(self.counts > 0, self.sums / np.maximum(self.counts, 1), 0.0)
        return mean[timesteps]


def discounted_returns(rewards: Sequence[float], discount: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + discount * acc
        out[t] = acc
    return out


def normalize(adv: np.ndarray) -> np.ndarray:
    adv = adv - adv.mean()
    std = adv.std()
    if std < 1e-12:
        return np.zeros_like(adv)
    return adv / std


def batch_from_episodes(policy: Policy, episodes: list[list[tuple]], discount: float,
                        baseline: TimeBaseline | None = None) -> RolloutBatch:
    obs, acts, rews, rets, ts, ep_returns = [], [], [], [], [], []
    for traj in episodes:
        r = [step[2] for step in traj]
        obs += [step[0] for step in traj]
        acts += [step[1] for step in traj]
        rews += r
        rets.append(discounted_returns(r, discount))
        ts.append(np.arange(len(traj)))
        ep_returns.append(float(sum(r)))
    observations = np.asarray(obs, dtype=np.float64)
    actions = np.asarray(acts, dtype=np.int64)
    returns = np.concatenate(rets)
    timesteps = np.concatenate(ts)
    if baseline is None:
        baseline = TimeBaseline()
    baseline.update(timesteps, returns)
    advantages = normalize(returns - baseline(timesteps))
    old = policy.log_probs(observations)[np.arange(len(actions)), actions]
    return RolloutBatch(observations, actions, np.asarray(rews, dtype=np.float64), returns,
                        advantages, old, timesteps, ep_returns)


def collect_batch(env_factory: Callable[[int], object], policy: Policy, config: TrainConfig,
                  rng: np.random.Generator, baseline: TimeBaseline | None = None) -> RolloutBatch:
    """Whole episodes until at least ``config.batch_size`` steps are gathered.

    ``env_factory(seed)`` builds an environment for one episode.
    """
    episodes, total = [], 0
    while total < config.batch_size:
        seed = int(rng.integers(2**32))
        env = env_factory(seed)
        traj, _ = rollout(env, policy, np.random.default_rng(seed))
        if not traj:
            raise TrainingError("environment produced an empty episode")
        episodes.append(traj)
        total += len(traj)
    return batch_from_episodes(policy, episodes, config.discount, baseline)


def surrogate_and_kl(policy: Policy, old_policy: Policy, batch: RolloutBatch) -> tuple[float, float]:
    idx = np.arange(len(batch))
    new_lp = policy.log_probs(batch.observations)
    old_lp = old_policy.log_probs(batch.observations)
    ratio = np.exp(new_lp[idx, batch.actions] - old_lp[idx, batch.actions])
    surrogate = float(np.mean(ratio * batch.advantages))
    kl = float(np.mean((np.exp(old_lp) * (old_lp - new_lp)).sum(axis=1)))
    return surrogate, kl


def policy_gradient(policy: Policy, batch: RolloutBatch) -> np.ndarray:
    """Gradient of the importance-weighted surrogate with respect to the parameters."""
    logits, acts = policy._forward(batch.observations)
    p = _softmax(logits)
    idx = np.arange(len(batch))
    lp = _log_softmax(logits)[idx, batch.actions]
    ratio = np.exp(lp - batch.old_log_probs)
    onehot = np.zeros_like(p)
    onehot[idx, batch.actions] = 1.0
    dlogits = (ratio * batch.advantages / len(batch))[:, None] * (onehot - p)
    return policy.backprop(acts, dlogits)


def fisher_vector_product(policy: Policy, observations: np.ndarray, v: np.ndarray,
                          damping: float = 0.0) -> np.ndarray:
    """Hessian of the mean KL at ``policy`` applied to ``v`` (plus damping)."""
    logits, acts = policy._forward(observations)
    p = _softmax(logits)
    jv = policy.jvp(observations, v)
    u = p * jv - p * (p * jv).sum(axis=1, keepdims=True)
    return policy.backprop(acts, u / len(observations)) + damping * v


def conjugate_gradient(Avp: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
                       iterations: int = 10, tol: float = 1e-10) -> np.ndarray:
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rr = r @ r
    for _ in range(iterations):
        if rr < tol:
            break
        Ap = Avp(p)
        alpha = rr / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


class GreedyPolicy:
    """Runs a policy's most likely action. Used for scoring, never for training."""

    def __init__(self, policy: Policy):
        self.policy = policy
        self.obs_dim = policy.obs_dim
        self.n_actions = policy.n_actions

    def act(self, obs: np.ndarray, rng: np.random.Generator | None = None) -> int:
        return int(np.argmax(self.policy.logits(obs)[0]))


def executed(controllers, greedy: bool = True):
    """Map policies (or a segment -> policy dict) to how they act at evaluation."""
    def one(c):
        return GreedyPolicy(c) if greedy and isinstance(c, Policy) else c
    if isinstance(controllers, dict):
        return {k: one(v) for k, v in controllers.items()}
    return one(controllers)


@dataclass
class UpdateInfo:
    accepted: bool
    kl: float
    surrogate_before: float
    surrogate_after: float
    step_fraction: float


def trpo_update(policy: Policy, batch: RolloutBatch, config: TrainConfig
                ) -> tuple[Policy, UpdateInfo]:
    surr_old, _ = surrogate_and_kl(policy, policy, batch)
    g = policy_gradient(policy, batch)
    if not (np.isfinite(surr_old) and np.all(np.isfinite(g))):
        raise TrainingError(f"non-finite surrogate ({surr_old}) or gradient")
    if not np.any(g):
        return policy.copy(), UpdateInfo(False, 0.0, surr_old, surr_old, 0.0)

    def fvp(v):
        return fisher_vector_product(policy, batch.observations, v, config.cg_damping)

    direction = conjugate_gradient(fvp, g, config.cg_iterations)
    shs = 0.5 * direction @ fvp(direction)
    if not np.isfinite(shs) or shs <= 0:
        raise TrainingError(f"degenerate curvature along the search direction ({shs})")
    full_step = np.sqrt(config.max_kl / shs) * direction

    frac = 1.0
    for _ in range(config.backtrack_steps):
        candidate = policy.with_params(policy.params + frac * full_step)
        surr, kl = surrogate_and_kl(candidate, policy, batch)
        if np.isfinite(surr) and kl <= config.max_kl and surr > surr_old:
            return candidate, UpdateInfo(True, kl, surr_old, surr, frac)
        frac *= config.backtrack_ratio
    return policy.copy(), UpdateInfo(False, 0.0, surr_old, surr_old, 0.0)


@dataclass
class TrainResult:
    policy: Policy
    mean_returns: list[float]
    updates: list[UpdateInfo]


def train(env_factory: Callable[[int], object], config: TrainConfig,
          policy: Policy | None = None) -> TrainResult:
    rng = np.random.default_rng(config.seed)
    if policy is None:
        probe = env_factory(0)
        policy = Policy(probe.obs_dim, probe.n_actions, config.hidden,
                        rng=np.random.default_rng([config.seed, 1]))
    baseline = TimeBaseline()
    mean_returns, updates = [], []
    for it in range(config.iterations):
        batch = collect_batch(env_factory, policy, config, rng, baseline)
        policy, info = trpo_update(policy, batch, config)
        mean_returns.append(float(np.mean(batch.episode_returns)))
        updates.append(info)
        log.debug("iter %d: mean return %.3f, kl %.5f, accepted %s",
                  it, mean_returns[-1], info.kl, info.accepted)
    return TrainResult(policy, mean_returns, updates)


# --- serialization -------------------------------------------------------

MAGIC = b"PCPOLICY"
FORMAT_VERSION = 1


def policy_to_bytes(policy: Policy) -> bytes:
    sizes = policy.sizes
    header = MAGIC + struct.pack("<II", FORMAT_VERSION, len(sizes))
    header += struct.pack(f"<{len(sizes)}I", *sizes)
    header += struct.pack("<Q", policy.n_params)
    return header + policy.params.astype("<f8").tobytes()


def policy_from_bytes(data: bytes) -> Policy:
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError("not a policy file (bad magic)")
    pos = len(MAGIC)
    version, n_sizes = struct.unpack_from("<II", data, pos)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported policy format version {version}")
    pos += 8
    sizes = struct.unpack_from(f"<{n_sizes}I", data, pos)
    pos += 4 * n_sizes
    (n_params,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    params = np.frombuffer(data, dtype="<f8", count=n_params, offset=pos).astype(np.float64)
    if len(data) != pos + 8 * n_params:
        raise ValueError("policy file has trailing or missing bytes")
    return Policy(sizes[0], sizes[-1], sizes[1:-1], params)


def save_policy(policy: Policy, path) -> Path:
    path = Path(path)
    path.write_bytes(policy_to_bytes(policy))
    return path


def load_policy(path) -> Policy:
    return policy_from_bytes(Path(path).read_bytes())
