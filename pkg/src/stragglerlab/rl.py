"""Deep Q-learning scheduler: a small fully connected Q-network trained from
cluster experience with a target network, uniform experience replay, and UCB
exploration over a discretized state grid.

The state of a scheduling decision is two numbers in [0, 1]: the average
load on the nodes the job's base tasks would land on, and the job's demand
on a clamped log scale. The action is how many coded extras to add (0..3).
The reward is the negative of the job's eventual slowdown.
"""

import json
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InstabilityError, NonFiniteGradientError
from .policies import RedundancyDecision
from .stochastic import RngStream, derive_seed
from .workload import generate_workload, job_demand, lambda_for_offered_load

NUM_ACTIONS = 4
STATE_DIM = 2
GRID_BINS = 10

# Demand normalization: 10 is the smallest possible demand under the default
# workload (k=1, b=b_min=10) and two decades above it maps to 1.
_DEMAND_FLOOR = 10.0
_DEMAND_SPAN = 100.0


@dataclass
class QNetwork:
    """Three weight layers, 2 -> hidden -> hidden -> 4, rectifier hiddens."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @classmethod
    def initialize(cls, rng, hidden=64):
        def he(fan_in, shape):
            return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)

        return cls(
            w1=he(STATE_DIM, (STATE_DIM, hidden)),
            b1=np.zeros(hidden),
            w2=he(hidden, (hidden, hidden)),
            b2=np.zeros(hidden),
            w3=he(hidden, (hidden, NUM_ACTIONS)),
            b3=np.zeros(NUM_ACTIONS),
        )

    def clone(self):
        return QNetwork(*(arr.copy() for arr in self._arrays()))

    def _arrays(self):
        return (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)


@dataclass
class TargetNetwork:
    """Frozen copy of the Q-network that supplies bootstrap targets."""

    net: QNetwork
    sync_period: int = 10

    def sync(self, source):
        self.net = source.clone()


@dataclass(frozen=True, slots=True)
class Experience:
    """One transition: state, action, reward, next scheduled job's state."""

    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray


class ReplayBuffer:
    """Bounded FIFO of experience, sampled uniformly without replacement."""

    def __init__(self, capacity=10_000):
        if capacity < 1:
            raise DomainError("replay capacity must be at least 1")
        self.capacity = capacity
        self._items = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def push(self, exp):
        self._items.append(exp)

    def sample(self, batch_size, rng):
        n = len(self._items)
        if n == 0:
            raise DomainError("cannot sample from an empty replay buffer")
        take = min(batch_size, n)
        idx = rng.choice(n, size=take, replace=False)
        return [self._items[i] for i in idx]


class VisitCounts:
    """State-action visit counts over a discretized state grid, for UCB."""

    def __init__(self, bins=GRID_BINS, num_actions=NUM_ACTIONS):
        self.bins = bins
        self.counts = np.zeros((bins, bins, num_actions))

    def bin_of(self, s):
        i = min(int(s[0] * self.bins), self.bins - 1)
        j = min(int(s[1] * self.bins), self.bins - 1)
        return i, j

    def get(self, s):
        i, j = self.bin_of(s)
        return self.counts[i, j]

    def increment(self, s, a):
        i, j = self.bin_of(s)
        self.counts[i, j, a] += 1


@dataclass(frozen=True)
class TrainerConfig:
    """Q-learning hyperparameters; every knob the trainer reads."""

    gamma: float = 0.9
    learn_rate: float = 1e-3
    episode_jobs: int = 128
    batch_size: int = 64
    train_repeats: int = 4
    target_sync_period: int = 10
    total_episodes: int = 200
    seed: int = 0
    huber_delta: float = 1.0
    replay_capacity: int = 10_000
    reward_clip: float = 100.0
    hidden_size: int = 64
    queue_limit: int = 100_000

    def __post_init__(self):
        if not (0 <= self.gamma < 1):
            raise DomainError("gamma must lie in [0, 1)")
        for name in ("learn_rate", "huber_delta", "reward_clip"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        for name in (
            "episode_jobs", "batch_size", "train_repeats", "target_sync_period",
            "total_episodes", "replay_capacity", "hidden_size", "queue_limit",
        ):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be at least 1")


@dataclass(frozen=True)
class EpisodeStats:
    episode: int
    mean_loss: float
    mean_reward: float


def encode_state(cluster_view, job):
    """Two-component state: previewed placement load and log-scaled demand."""
    occ = cluster_view.occupied
    cap = cluster_view.capacity
    nodes = cluster_view.preview_placement(job.k, job.r_cap)
    if nodes:
        load = sum(occ[i] for i in nodes) / (len(nodes) * cap)
    else:
        load = sum(occ) / (len(occ) * cap)
    x = math.log(job_demand(job) / _DEMAND_FLOOR) / math.log(_DEMAND_SPAN)
    return np.array([load, min(max(x, 0.0), 1.0)])


def qnet_forward(net, s):
    """Q-values for one state (shape (2,)) or a batch (shape (B, 2))."""
    h1 = np.maximum(s @ net.w1 + net.b1, 0.0)
    h2 = np.maximum(h1 @ net.w2 + net.b2, 0.0)
    return h2 @ net.w3 + net.b3


def _huber(e, delta):
    ae = np.abs(e)
    return np.where(ae <= delta, 0.5 * e * e, delta * (ae - 0.5 * delta))


def batch_targets(target, batch, cfg):
    """Bootstrap targets r + gamma * max_a T(s_next, a) for a batch."""
    target_net = target.net if isinstance(target, TargetNetwork) else target
    R = np.array([e.r for e in batch], dtype=float)
    S1 = np.stack([e.s_next for e in batch])
    return R + cfg.gamma * qnet_forward(target_net, S1).max(axis=1)


def qnet_gradients(net, batch, targets, cfg):
    """Mean Huber loss against fixed targets and its parameter gradients.

    Gradients flow only through the taken-action outputs.
    """
    S = np.stack([e.s for e in batch])
    A = np.array([e.a for e in batch])
    z1 = S @ net.w1 + net.b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ net.w2 + net.b2
    h2 = np.maximum(z2, 0.0)
    out = h2 @ net.w3 + net.b3
    rows = np.arange(len(batch))
    e = out[rows, A] - np.asarray(targets, dtype=float)
    loss = float(np.mean(_huber(e, cfg.huber_delta)))

    g = np.clip(e, -cfg.huber_delta, cfg.huber_delta) / len(batch)
    d_out = np.zeros_like(out)
    d_out[rows, A] = g
    d_w3 = h2.T @ d_out
    d_b3 = d_out.sum(axis=0)
    d_h2 = d_out @ net.w3.T
    d_z2 = d_h2 * (z2 > 0.0)
    d_w2 = h1.T @ d_z2
    d_b2 = d_z2.sum(axis=0)
    d_h1 = d_z2 @ net.w2.T
    d_z1 = d_h1 * (z1 > 0.0)
    d_w1 = S.T @ d_z1
    d_b1 = d_z1.sum(axis=0)
    return loss, (d_w1, d_b1, d_w2, d_b2, d_w3, d_b3)


def qnet_train_batch(net, target, batch, cfg):
    """One SGD step on the mean Huber loss against frozen bootstrap targets.

    Returns the pre-step loss.
    """
    if not batch:
        raise DomainError("cannot train on an empty batch")
    targets = batch_targets(target, batch, cfg)
    loss, grads = qnet_gradients(net, batch, targets, cfg)
    if not all(np.all(np.isfinite(gr)) for gr in grads):
        raise NonFiniteGradientError("gradient contains NaN or Inf")
    lr = cfg.learn_rate
    for param, grad in zip(net._arrays(), grads):
        param -= lr * grad
    return loss


def ucb_action(qvals, counts):
    """Argmax of Q plus the UCB bonus; unvisited actions go first, ties to
    the lowest action index."""
    counts = np.asarray(counts, dtype=float)
    unvisited = np.flatnonzero(counts == 0)
    if unvisited.size:
        return int(unvisited[0])
    bonus = np.sqrt(2.0 * np.log(counts.sum()) / counts)
    return int(np.argmax(np.asarray(qvals) + bonus))


class UcbSchedulerTrainer:
    """Live policy that schedules with UCB while training the Q-network.

    Plugged straight into the simulator: decide() picks the action, the
    dispatch notification fixes the job's place in the scheduling order, and
    completion notifications deliver rewards. Whenever every job of the
    oldest open episode has finished (and the next state exists), its
    transitions enter the replay buffer and the network takes
    train_repeats batch steps.
    """

    def __init__(self, net, target, cfg, rng):
        self.net = net
        self.target = target
        self.cfg = cfg
        self.rng = rng
        self.buffer = ReplayBuffer(cfg.replay_capacity)
        self.counts = VisitCounts()
        self.curves = []
        self.episodes_done = 0
        self._tentative = {}
        self._index_of = {}
        self._states = []
        self._actions = []
        self._rewards = []

    def decide(self, job, cluster_view):
        s = encode_state(cluster_view, job)
        if self.episodes_done < self.cfg.total_episodes:
            a = ucb_action(qnet_forward(self.net, s), self.counts.get(s))
        else:
            a = int(np.argmax(qnet_forward(self.net, s)))
        self._tentative[job.job_id] = (s, a)
        return RedundancyDecision(n=job.k + a)

    def notify_dispatched(self, job, now):
        s, a = self._tentative.pop(job.job_id)
        self._index_of[job.job_id] = len(self._states)
        self._states.append(s)
        self._actions.append(a)
        self._rewards.append(None)
        self.counts.increment(s, a)
        self._close_ready_episodes()

    def notify_finished(self, record):
        idx = self._index_of.get(record.job_id)
        if idx is None:
            return
        self._rewards[idx] = -min(record.slowdown, self.cfg.reward_clip)
        self._close_ready_episodes()

    def _close_ready_episodes(self):
        m = self.cfg.episode_jobs
        while self.episodes_done < self.cfg.total_episodes:
            start = self.episodes_done * m
            end = start + m
            if len(self._states) <= end:
                return
            window = self._rewards[start:end]
            if any(r is None for r in window):
                return
            for i in range(start, end):
                self.buffer.push(
                    Experience(
                        self._states[i],
                        self._actions[i],
                        self._rewards[i],
                        self._states[i + 1],
                    )
                )
            losses = [
                qnet_train_batch(
                    self.net,
                    self.target,
                    self.buffer.sample(self.cfg.batch_size, self.rng),
                    self.cfg,
                )
                for _ in range(self.cfg.train_repeats)
            ]
            self.episodes_done += 1
            if self.episodes_done % self.target.sync_period == 0:
                self.target.sync(self.net)
            self.curves.append(
                EpisodeStats(
                    episode=self.episodes_done,
                    mean_loss=float(np.mean(losses)),
                    mean_reward=float(np.mean(window)),
                )
            )


def run_training(params, rho0, cfg):
    """Train a scheduler on the cluster at offered load rho0.

    Returns (QNetwork, list of EpisodeStats). An unstable training
    simulation raises InstabilityError with the partial curves attached.
    """
    from .simulator import SimConfig, run_simulation

    arrival_rate = lambda_for_offered_load(rho0, params)
    loaded = params.with_arrival_rate(arrival_rate)
    net = QNetwork.initialize(RngStream(derive_seed(cfg.seed, 0)), cfg.hidden_size)
    target = TargetNetwork(net=net.clone(), sync_period=cfg.target_sync_period)
    trainer = UcbSchedulerTrainer(
        net, target, cfg, RngStream(derive_seed(cfg.seed, 1))
    )
    num_jobs = cfg.total_episodes * cfg.episode_jobs + cfg.episode_jobs
    workload = generate_workload(
        loaded, num_jobs, RngStream(derive_seed(cfg.seed, 2))
    )
    sim_cfg = SimConfig(
        num_jobs=num_jobs,
        seed=derive_seed(cfg.seed, 3),
        queue_limit=cfg.queue_limit,
    )
    metrics = run_simulation(workload, trainer, params, sim_cfg)
    if metrics.unstable:
        raise InstabilityError(
            "training simulation destabilized", partial=trainer.curves
        )
    return net, trainer.curves


# ------------------------------------------------------------------
# Checkpoints and curve export


def save_checkpoint(net, path):
    """Write network weights as JSON with a shape header."""
    payload = {
        "format": "qnetwork-v1",
        "layers": [
            {"name": name, "shape": list(arr.shape), "values": arr.ravel().tolist()}
            for name, arr in zip(("w1", "b1", "w2", "b2", "w3", "b3"), net._arrays())
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    """Read a network written by save_checkpoint."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "qnetwork-v1":
        raise DomainError(f"{path} is not a recognized network checkpoint")
    arrays = {
        layer["name"]: np.array(layer["values"]).reshape(layer["shape"])
        for layer in payload["layers"]
    }
    return QNetwork(**arrays)


def export_curves(curves, path):
    """Write per-episode training statistics as CSV."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "mean_loss", "mean_reward"])
        for row in curves:
            writer.writerow([row.episode, repr(row.mean_loss), repr(row.mean_reward)])
