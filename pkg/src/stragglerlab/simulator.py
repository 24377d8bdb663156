"""Deterministic discrete-event simulation of the Master-Worker cluster.

One FIFO queue with head-of-line blocking feeds N nodes of capacity C.
A job dispatches only when all n of its tasks (per the policy decision) fit
at once; tasks go to the least-loaded nodes. A job finishes at its k-th task
completion, at which point outstanding siblings are cancelled instantly.
Relaunch policies instead arm a timer that restarts still-running tasks once
with a fresh slowdown draw, on the same reservation.

Runs are strictly single-threaded; identical seeds and inputs give
bit-identical metrics. Independent runs share nothing mutable.
"""

import heapq
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError
from .policies import decide_redundancy
from .stochastic import RngStream

TAIL_GRID = (1.0, 1.5, 2.0, 3.0, 5.0, 10.0, 20.0, 50.0, 100.0)

_ARRIVAL, _COMPLETE, _RELAUNCH = 0, 1, 2


@dataclass
class NodeState:
    """One worker node: reserved units and the task attempts holding them."""

    node_id: int
    capacity: float
    occupied: float = 0.0
    running: set = field(default_factory=set)


@dataclass(slots=True)
class TaskRecord:
    """One task attempt as the event loop sees it."""

    task_id: int
    job_id: int
    node_id: int
    start_time: float
    straggle_factor: float
    completion_time: float
    status: str  # running | completed | cancelled | relaunched


@dataclass(slots=True)
class JobRecord:
    """Full lifecycle of one completed job."""

    job_id: int
    arrival_time: float
    k: int
    b: float
    n: int
    dispatch_time: float
    finish_time: float
    relaunch_count: int
    slowdown: float
    cost: float

    @property
    def response_time(self):
        return self.finish_time - self.arrival_time


@dataclass(frozen=True)
class SimConfig:
    """Run-length, warmup, and instability-detection knobs."""

    num_jobs: int
    seed: int = 0
    warmup_fraction: float = 0.0
    queue_limit: int = 1000
    checkpoint_count: int = 10

    def __post_init__(self):
        if self.num_jobs < 1:
            raise DomainError("num_jobs must be at least 1")
        if not (0 <= self.warmup_fraction < 1):
            raise DomainError("warmup_fraction must lie in [0, 1)")
        if self.queue_limit < 1:
            raise DomainError("queue_limit must be at least 1")
        if self.checkpoint_count < 2:
            raise DomainError("checkpoint_count must be at least 2")


@dataclass
class SimMetrics:
    """Aggregates over the post-warmup completed jobs."""

    records: list
    num_completed: int
    mean_response: float
    p50_response: float
    p99_response: float
    mean_slowdown: float
    p50_slowdown: float
    p90_slowdown: float
    p99_slowdown: float
    tail_grid: tuple
    tail_probs: tuple
    utilization: float
    unstable: bool


class ClusterView:
    """Read-only snapshot interface handed to policy decisions."""

    def __init__(self, nodes, params):
        self._nodes = nodes
        self.params = params
        self.capacity = nodes[0].capacity if nodes else 0.0

    @property
    def occupied(self):
        return [node.occupied for node in self._nodes]

    def preview_placement(self, n, r_cap):
        """Where n tasks would land right now, without reserving anything."""
        return place_tasks(self._nodes, n, r_cap)


def place_tasks(nodes, n, r_cap):
    """Greedy least-loaded placement of n tasks of size r_cap.

    Each task goes to the node with the smallest occupied/capacity fraction
    among those with r_cap free, ties to the lowest node id, updating the
    tentative occupancy between assignments. Returns the node ids, or None
    if some task cannot be placed (nothing is reserved either way).
    """
    if n < 1:
        raise DomainError("n must be at least 1")
    occ = [node.occupied for node in nodes]
    caps = [node.capacity for node in nodes]
    chosen = []
    for _ in range(n):
        best = -1
        best_frac = math.inf
        for i in range(len(nodes)):
            if caps[i] - occ[i] >= r_cap and occ[i] / caps[i] < best_frac:
                best = i
                best_frac = occ[i] / caps[i]
        if best < 0:
            return None
        occ[best] += r_cap
        chosen.append(best)
    return chosen


class _JobState:
    __slots__ = (
        "spec", "n", "relaunch_offset", "dispatch_time", "completed",
        "task_node", "task_attempt", "task_done", "task_end", "task_straggle",
        "relaunch_count",
    )

    def __init__(self, spec, n, relaunch_offset, dispatch_time):
        self.spec = spec
        self.n = n
        self.relaunch_offset = relaunch_offset
        self.dispatch_time = dispatch_time
        self.completed = 0
        self.task_node = [0] * n
        self.task_attempt = [0] * n
        self.task_done = [False] * n
        self.task_end = [0.0] * n
        self.task_straggle = [0.0] * n
        self.relaunch_count = 0


class Simulation:
    """Event-driven cluster engine; use run_simulation for the common case."""

    def __init__(self, workload, policy, params, cfg, straggle_factor=None,
                 trace_tasks=False):
        self.workload = workload
        self.policy = policy
        self.params = params
        self.cfg = cfg
        self.rng = RngStream(cfg.seed)
        self.trace_tasks = trace_tasks
        self.task_trace = []
        self.nodes = [
            NodeState(i, params.node_capacity) for i in range(params.num_nodes)
        ]
        self.view = ClusterView(self.nodes, params)
        self.queue = deque()
        self.active = {}
        self.records = []
        self.heap = []
        self._seq = 0
        self._straggle_override = straggle_factor
        self.now = 0.0
        self._last_t = 0.0
        self._total_occupied = 0.0
        self._busy_integral = 0.0
        self.unstable = False
        self._aborted = False
        self._notify_dispatched = getattr(policy, "notify_dispatched", None)
        self._notify_finished = getattr(policy, "notify_finished", None)
        self._inv_alpha = 1.0 / params.alpha

    # -- internals ---------------------------------------------------

    def _push(self, time, kind, job_id, task_idx, attempt):
        self._seq += 1
        heapq.heappush(self.heap, (time, self._seq, kind, job_id, task_idx, attempt))

    def _advance(self, t):
        self._busy_integral += self._total_occupied * (t - self._last_t)
        self._last_t = t
        self.now = t

    def _draw_straggle(self, job_id, task_idx, attempt):
        hook = self._straggle_override
        if hook is None:
            return self.rng.uniform01() ** (-self._inv_alpha)
        if callable(hook):
            return hook(job_id, task_idx, attempt)
        return float(hook)

    def _occupy(self, node_idx, key, r_cap):
        node = self.nodes[node_idx]
        node.occupied += r_cap
        node.running.add(key)
        self._total_occupied += r_cap

    def _release(self, node_idx, key, r_cap):
        node = self.nodes[node_idx]
        node.occupied -= r_cap
        node.running.discard(key)
        self._total_occupied -= r_cap

    def _trace(self, job, task_idx, node_idx, now, s):
        self.task_trace.append(
            TaskRecord(
                task_id=task_idx,
                job_id=job.job_id,
                node_id=node_idx,
                start_time=now,
                straggle_factor=s,
                completion_time=now + s * job.b,
                status="running",
            )
        )

    def _mark_trace(self, job_id, task_idx, status):
        # latest running attempt of this (job, task); traces are test-sized
        for rec in reversed(self.task_trace):
            if rec.job_id == job_id and rec.task_id == task_idx and rec.status == "running":
                rec.status = status
                return

    # -- event handlers ----------------------------------------------

    def try_dispatch(self, now):
        """Dispatch from the head of the queue while the head fits."""
        while self.queue:
            job = self.queue[0]
            decision = decide_redundancy(self.policy, job, self.view)
            n = decision.n
            if n * job.r_cap > self.params.num_nodes * self.params.node_capacity:
                raise DomainError(
                    f"job {job.job_id} needs {n} tasks of {job.r_cap} units; "
                    "the cluster can never fit it"
                )
            placement = place_tasks(self.nodes, n, job.r_cap)
            if placement is None:
                return
            self.queue.popleft()
            state = _JobState(job, n, decision.relaunch_time, now)
            self.active[job.job_id] = state
            for idx, node_idx in enumerate(placement):
                state.task_node[idx] = node_idx
                s = self._draw_straggle(job.job_id, idx, 0)
                state.task_straggle[idx] = s
                self._occupy(node_idx, (job.job_id, idx), job.r_cap)
                self._push(now + s * job.b, _COMPLETE, job.job_id, idx, 0)
                if self.trace_tasks:
                    self._trace(job, idx, node_idx, now, s)
            if state.relaunch_offset is not None:
                self._push(now + state.relaunch_offset, _RELAUNCH, job.job_id, -1, 0)
            if self._notify_dispatched is not None:
                self._notify_dispatched(job, now)

    def handle_task_completion(self, state, task_idx, now):
        """Mark a task done; on the k-th completion finish the job and cancel
        the outstanding siblings at no extra delay."""
        job = state.spec
        state.task_done[task_idx] = True
        state.task_end[task_idx] = now
        self._release(state.task_node[task_idx], (job.job_id, task_idx), job.r_cap)
        if self.trace_tasks:
            self._mark_trace(job.job_id, task_idx, "completed")
        state.completed += 1
        if state.completed > job.k:
            raise RuntimeError(
                f"job {job.job_id} recorded more completions than its k={job.k}"
            )
        if state.completed < job.k:
            return
        cost = 0.0
        for idx in range(state.n):
            if not state.task_done[idx]:
                state.task_done[idx] = True
                state.task_end[idx] = now
                self._release(state.task_node[idx], (job.job_id, idx), job.r_cap)
                if self.trace_tasks:
                    self._mark_trace(job.job_id, idx, "cancelled")
            cost += (state.task_end[idx] - state.dispatch_time) * job.r_cap
        del self.active[job.job_id]
        record = JobRecord(
            job_id=job.job_id,
            arrival_time=job.arrival_time,
            k=job.k,
            b=job.b,
            n=state.n,
            dispatch_time=state.dispatch_time,
            finish_time=now,
            relaunch_count=state.relaunch_count,
            slowdown=(now - job.arrival_time) / job.b,
            cost=cost,
        )
        self.records.append(record)
        if self._notify_finished is not None:
            self._notify_finished(record)
        self.try_dispatch(now)

    def handle_relaunch_timer(self, state, now):
        """Cancel and restart every still-running task, once, in place."""
        job = state.spec
        for idx in range(state.n):
            if state.task_done[idx]:
                continue
            state.task_attempt[idx] += 1
            s = self._draw_straggle(job.job_id, idx, state.task_attempt[idx])
            state.task_straggle[idx] = s
            state.relaunch_count += 1
            self._push(now + s * job.b, _COMPLETE, job.job_id, idx, state.task_attempt[idx])
            if self.trace_tasks:
                self._mark_trace(job.job_id, idx, "relaunched")
                self._trace(job, idx, state.task_node[idx], now, s)

    # -- main loop ----------------------------------------------------

    def run(self):
        target = min(self.cfg.num_jobs, len(self.workload))
        if target == 0:
            return []
        arrivals = iter(self.workload)
        first = next(arrivals)
        self._push(first.arrival_time, _ARRIVAL, first.job_id, -1, 0)
        pending = {first.job_id: first}
        while self.heap and len(self.records) < target:
            t, _, kind, job_id, task_idx, attempt = heapq.heappop(self.heap)
            self._advance(t)
            if kind == _ARRIVAL:
                self.queue.append(pending.pop(job_id))
                nxt = next(arrivals, None)
                if nxt is not None:
                    pending[nxt.job_id] = nxt
                    self._push(nxt.arrival_time, _ARRIVAL, nxt.job_id, -1, 0)
                if len(self.queue) > self.cfg.queue_limit:
                    self.unstable = True
                    self._aborted = True
                    break
                self.try_dispatch(t)
            elif kind == _COMPLETE:
                state = self.active.get(job_id)
                if (
                    state is None
                    or state.task_done[task_idx]
                    or state.task_attempt[task_idx] != attempt
                ):
                    continue  # stale: job finished or attempt superseded
                self.handle_task_completion(state, task_idx, t)
            else:  # _RELAUNCH
                state = self.active.get(job_id)
                if state is not None:
                    self.handle_relaunch_timer(state, t)
        if not self._aborted and _response_means_increase(
            self.records, self.cfg.checkpoint_count
        ):
            self.unstable = True
        return self.records

    def utilization(self):
        horizon = self._last_t
        if horizon <= 0:
            return 0.0
        total = self.params.num_nodes * self.params.node_capacity
        return self._busy_integral / (total * horizon)


def _response_means_increase(records, checkpoint_count):
    """True when mean response time rises strictly across every checkpoint
    window, the signature of a queue that never reaches steady state."""
    if len(records) < 2 * checkpoint_count:
        return False
    responses = np.array([r.response_time for r in records])
    windows = np.array_split(responses, checkpoint_count)
    means = [w.mean() for w in windows]
    return all(b > a for a, b in zip(means, means[1:]))


def run_simulation(workload, policy, params, cfg, straggle_factor=None):
    """Simulate a workload under a policy and summarize the outcome.

    straggle_factor overrides the Pareto slowdown draw for tests: a constant,
    or a callable (job_id, task_idx, attempt) -> factor.
    """
    sim = Simulation(workload, policy, params, cfg, straggle_factor)
    records = sim.run()
    if not records:
        return _empty_metrics(unstable=sim.unstable)
    return summarize(
        records,
        cfg.warmup_fraction,
        utilization=sim.utilization(),
        unstable=sim.unstable,
    )


def _empty_metrics(unstable=False):
    nan = math.nan
    return SimMetrics(
        records=[],
        num_completed=0,
        mean_response=nan,
        p50_response=nan,
        p99_response=nan,
        mean_slowdown=nan,
        p50_slowdown=nan,
        p90_slowdown=nan,
        p99_slowdown=nan,
        tail_grid=TAIL_GRID,
        tail_probs=tuple(0.0 for _ in TAIL_GRID),
        utilization=0.0,
        unstable=unstable,
    )


def summarize(records, warmup_fraction=0.0, utilization=math.nan, unstable=False):
    """Aggregate per-job records, dropping the first warmup fraction of
    completions."""
    if not records:
        raise DomainError("cannot summarize an empty record list")
    drop = int(len(records) * warmup_fraction)
    kept = records[drop:]
    if not kept:
        raise DomainError(
            f"warmup_fraction={warmup_fraction} leaves no records to summarize"
        )
    responses = np.array([r.response_time for r in kept])
    slowdowns = np.array([r.slowdown for r in kept])
    tail = tuple(float(np.mean(slowdowns > x)) for x in TAIL_GRID)
    return SimMetrics(
        records=kept,
        num_completed=len(kept),
        mean_response=float(responses.mean()),
        p50_response=float(np.percentile(responses, 50)),
        p99_response=float(np.percentile(responses, 99)),
        mean_slowdown=float(slowdowns.mean()),
        p50_slowdown=float(np.percentile(slowdowns, 50)),
        p90_slowdown=float(np.percentile(slowdowns, 90)),
        p99_slowdown=float(np.percentile(slowdowns, 99)),
        tail_grid=TAIL_GRID,
        tail_probs=tail,
        utilization=utilization,
        unstable=unstable,
    )


def export_records(records, path):
    """Write per-job records as CSV."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["job_id", "arrival", "dispatch", "finish", "k", "n", "b", "relaunched", "slowdown"]
        )
        for r in records:
            writer.writerow(
                [
                    r.job_id,
                    repr(r.arrival_time),
                    repr(r.dispatch_time),
                    repr(r.finish_time),
                    r.k,
                    r.n,
                    repr(r.b),
                    r.relaunch_count,
                    repr(r.slowdown),
                ]
            )
