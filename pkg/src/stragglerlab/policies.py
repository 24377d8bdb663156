"""Scheduling decision layer: how many tasks a job is dispatched with and
whether a relaunch timer is armed.

Decisions are pure functions of (policy, job, cluster view); a policy never
mutates cluster state.
"""

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .analysis import optimal_relaunch_factor_exact
from .errors import DomainError
from .specfn import ln_gamma
from .workload import job_demand


@dataclass(frozen=True)
class RedundantNone:
    """Dispatch every job plain."""


@dataclass(frozen=True)
class RedundantAll:
    """Dispatch every job with the maximum number of coded extras."""

    max_extra: int = 3

    def __post_init__(self):
        if self.max_extra < 0:
            raise DomainError("max_extra must be non-negative")


@dataclass(frozen=True)
class RedundantSmall:
    """Expand a job to ceil(r * k) tasks iff its demand is at most d."""

    r: float
    d: float

    def __post_init__(self):
        if not self.r > 1:
            raise DomainError("expansion rate r must exceed 1")
        if self.d < 0:
            raise DomainError("demand threshold d must be non-negative")


@dataclass(frozen=True)
class StragglerRelaunch:
    """Arm a relaunch timer at w * b after dispatch.

    w=None sets the factor per job by numerically minimizing that job
    size's expected latency (the same rule the analytical engine uses).
    """

    w: float | None = None

    def __post_init__(self):
        if self.w is not None and not self.w >= 1:
            raise DomainError("fixed relaunch factor w must be at least 1")


@dataclass(frozen=True)
class RLPolicy:
    """Greedy deployment of a trained Q-network: argmax action, no bonus."""

    network: object


PolicyConfig = Union[RedundantNone, RedundantAll, RedundantSmall, StragglerRelaunch, RLPolicy]


@dataclass(frozen=True)
class RedundancyDecision:
    """Dispatch n >= k tasks; relaunch_time is an offset from dispatch or None.

    Exactly one mitigation is ever active: n > k (coding), a timer
    (relaunch), or neither.
    """

    n: int
    relaunch_time: float | None = None


def per_job_optimal_w(k, alpha):
    """Closed-form relaunch factor sqrt(E[S_{k:k}]) for a k-task job.

    This is the sqrt(Gamma(k+1) Gamma(1-1/alpha) / Gamma(k+1-1/alpha)) rule,
    computed in log space and clamped at 1. It descends from a large-scale
    argument and can sit well above the exact minimum of the mean-latency
    curve at moderate tail indices; optimal_relaunch_factor_exact is the
    numerically tuned alternative.
    """
    if not alpha > 1:
        raise DomainError("alpha must exceed 1")
    if k < 1:
        raise DomainError("k must be at least 1")
    val = math.exp(
        0.5 * (ln_gamma(k + 1) + ln_gamma(1.0 - 1.0 / alpha) - ln_gamma(k + 1 - 1.0 / alpha))
    )
    return max(1.0, val)


def decide_redundancy(policy, job, cluster_view=None):
    """Map a policy and an arriving job to a RedundancyDecision."""
    if hasattr(policy, "decide"):  # live policies, e.g. a learner mid-training
        return policy.decide(job, cluster_view)
    k = job.k
    if isinstance(policy, RedundantNone):
        return RedundancyDecision(n=k)
    if isinstance(policy, RedundantAll):
        return RedundancyDecision(n=k + policy.max_extra)
    if isinstance(policy, RedundantSmall):
        if job_demand(job) <= policy.d:
            return RedundancyDecision(n=math.ceil(policy.r * k))
        return RedundancyDecision(n=k)
    if isinstance(policy, StragglerRelaunch):
        if policy.w is not None:
            w = policy.w
        else:
            alpha = cluster_view.params.alpha
            w = optimal_relaunch_factor_exact(k, alpha)
        return RedundancyDecision(n=k, relaunch_time=w * job.b)
    if isinstance(policy, RLPolicy):
        from .rl import encode_state, qnet_forward

        state = encode_state(cluster_view, job)
        action = int(np.argmax(qnet_forward(policy.network, state)))
        return RedundancyDecision(n=k + action)
    raise DomainError(f"unknown policy {type(policy).__name__}")
