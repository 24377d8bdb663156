"""Job arrival generation and demand accounting.

A workload is an ordered list of JobSpec records: Poisson arrivals, a Zipf
task count, and a Pareto (or upper-truncated Pareto) minimum service time
per job, all drawn from one RngStream so a seed pins the whole trace.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError
from .stochastic import (
    ParetoDist,
    TruncatedParetoDist,
    ZipfDist,
    pareto_moment,
    sample,
    truncated_pareto_moment,
    zipf_mean,
)


@dataclass(frozen=True)
class WorkloadParams:
    """System and model constants of the cluster under study."""

    num_nodes: int = 20
    node_capacity: float = 10.0
    k_max: int = 10
    b_min: float = 10.0
    beta: float = 3.0
    alpha: float = 3.0
    arrival_rate: float | None = None
    service_dist: str = "pareto"  # or "truncated_pareto"
    service_max: float | None = None

    def __post_init__(self):
        if self.num_nodes < 1:
            raise DomainError("num_nodes must be at least 1")
        if not self.node_capacity > 0:
            raise DomainError("node_capacity must be positive")
        if self.k_max < 1:
            raise DomainError("k_max must be at least 1")
        if not self.b_min > 0:
            raise DomainError("b_min must be positive")
        if not self.beta > 1:
            raise DomainError("beta must exceed 1 for a finite mean service time")
        if not self.alpha > 1:
            raise DomainError("alpha must exceed 1 for a finite mean slowdown")
        if self.arrival_rate is not None and not self.arrival_rate > 0:
            raise DomainError("arrival_rate must be positive when given")
        if self.service_dist not in ("pareto", "truncated_pareto"):
            raise DomainError(f"unknown service_dist {self.service_dist!r}")
        if self.service_dist == "truncated_pareto" and (
            self.service_max is None or self.service_max <= self.b_min
        ):
            raise DomainError("truncated_pareto needs service_max > b_min")

    @property
    def task_count_dist(self):
        return ZipfDist(self.k_max)

    @property
    def service_time_dist(self):
        if self.service_dist == "truncated_pareto":
            return TruncatedParetoDist(self.b_min, self.service_max, self.beta)
        return ParetoDist(self.b_min, self.beta)

    @property
    def slowdown_dist(self):
        return ParetoDist(1.0, self.alpha)

    def mean_service_time(self):
        d = self.service_time_dist
        if isinstance(d, TruncatedParetoDist):
            return truncated_pareto_moment(d, 1)
        return pareto_moment(d, 1)

    def mean_slowdown_factor(self):
        return pareto_moment(self.slowdown_dist, 1)

    def mean_task_count(self):
        return zipf_mean(self.task_count_dist)

    def with_arrival_rate(self, arrival_rate):
        return replace(self, arrival_rate=arrival_rate)


@dataclass(frozen=True, slots=True)
class JobSpec:
    """One arriving job: k tasks, each needing r_cap capacity for at least b."""

    job_id: int
    arrival_time: float
    k: int
    b: float
    r_cap: float = field(default=1.0)

    def __post_init__(self):
        if self.k < 1:
            raise DomainError("a job needs at least one task")
        if not self.b > 0:
            raise DomainError("minimum service time must be positive")


def job_demand(job):
    """Total demand D = k * r_cap * b of a job."""
    return job.k * job.r_cap * job.b


def generate_workload(params, num_jobs, rng):
    """Draw num_jobs arrivals: exponential gaps, Zipf k, Pareto b.

    The stream is consumed in a fixed order (gaps, then counts, then service
    times), so equal seeds give bit-identical workloads.
    """
    if params.arrival_rate is None:
        raise DomainError("params.arrival_rate must be set to generate arrivals")
    if num_jobs < 0:
        raise DomainError("num_jobs must be non-negative")
    if num_jobs == 0:
        return []
    gaps = -np.log(rng.uniform01(num_jobs)) / params.arrival_rate
    arrivals = np.cumsum(gaps)
    ks = sample(params.task_count_dist, rng, size=num_jobs)
    bs = sample(params.service_time_dist, rng, size=num_jobs)
    return [
        JobSpec(i + 1, float(arrivals[i]), int(ks[i]), float(bs[i]))
        for i in range(num_jobs)
    ]


def lambda_for_offered_load(rho0, params):
    """Arrival rate at which the no-mitigation baseline load equals rho0.

    Baseline cost per job is E[K] E[B] E[S], so
    lambda = rho0 * N * C / (E[K] E[B] E[S]).
    """
    if not (0 < rho0 < 1):
        raise DomainError(f"rho0 must lie in (0, 1), got {rho0}")
    denom = (
        params.mean_task_count()
        * params.mean_service_time()
        * params.mean_slowdown_factor()
    )
    return rho0 * params.num_nodes * params.node_capacity / denom


def export_workload(jobs, path):
    """Write a workload as CSV (full float precision, replayable)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["job_id", "arrival_time", "k", "b"])
        for job in jobs:
            writer.writerow([job.job_id, repr(job.arrival_time), job.k, repr(job.b)])


def import_workload(path):
    """Read a workload CSV written by export_workload."""
    jobs = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            jobs.append(
                JobSpec(
                    int(row["job_id"]),
                    float(row["arrival_time"]),
                    int(row["k"]),
                    float(row["b"]),
                )
            )
    return jobs
