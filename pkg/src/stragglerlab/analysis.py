"""Analytical performance engine.

Closed-form latency and cost moments for the demand-gated coding policy and
the straggler-relaunch policy, the non-integer Erlang-C formula, the M/G/c
response-time estimate for the Master-Worker cluster, and grid optimizers
for the policy parameters built on top of it.
"""

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

from .errors import DomainError, InfiniteMomentError, InstabilityError
from .specfn import SpecFnTolerance, ln_gamma, reg_inc_beta, reg_upper_inc_gamma
from .stochastic import (
    coded_cost_mean,
    orderstat_moment,
    pareto_moment,
    partial_moment,
    truncated_pareto_moment,
    zipf_pmf,
)
from .workload import lambda_for_offered_load

# Erlang-C evaluations inside optimizers sweep into slowly converging
# regimes (large c, rho near 1), so give them a deep iteration budget.
_ERLANG_TOL = SpecFnTolerance(rel_tol=1e-12, max_iter=200_000)

DEFAULT_DEMAND_GRID = None  # built lazily from b_min, see default_demand_grid()
SENTINEL_LARGE = 1e6


def default_demand_grid(b_min=10.0):
    """{0} + 40 log-spaced thresholds spanning [b_min, 1e4] + a large sentinel."""
    lo, hi = math.log10(b_min), 4.0
    pts = [10 ** (lo + (hi - lo) * i / 39.0) for i in range(40)]
    return [0.0] + pts + [SENTINEL_LARGE]


def default_relaunch_grid():
    """60 relaunch factors spanning [1, 12] + a no-relaunch sentinel."""
    return [1.0 + 11.0 * i / 59.0 for i in range(60)] + [SENTINEL_LARGE]


@dataclass(frozen=True)
class RedSmallModel:
    """Demand-gated coding: expand to ceil(r*k) tasks iff demand <= d."""

    params: object
    r: float
    d: float

    def __post_init__(self):
        if not self.r > 1:
            raise DomainError("expansion rate r must exceed 1")
        if self.d < 0:
            raise DomainError("demand threshold d must be non-negative")


@dataclass(frozen=True)
class RelaunchModel:
    """Straggler relaunch at w * b after dispatch; w=None picks w per job
    size by numerically minimizing that job's expected latency."""

    params: object
    w: float | None = None

    def __post_init__(self):
        if self.w is not None and not self.w >= 1:
            raise DomainError("fixed relaunch factor w must be at least 1")


@dataclass(frozen=True)
class MgcEstimate:
    """M/G/c view of the cluster and the response time it predicts."""

    c: float
    rho: float
    pr_queueing: float
    expected_T: float
    latency_m1: float
    latency_m2: float
    cost_m1: float
    asymptotic: bool = False


@dataclass(frozen=True)
class CurvePoint:
    """One sweep point; mirrors the curve CSV schema."""

    rho0: float
    param_name: str
    param_value: float
    latency_m1: float
    latency_m2: float
    cost_m1: float
    c: float
    rho: float
    pr_queueing: float
    expected_T: float
    unstable: bool


# ------------------------------------------------------------------
# Demand-gated coding moments


def _redsmall_branches(model, m):
    """Per-k head/tail service-time partial moments and slowdown moments."""
    p = model.params
    bdist = p.service_time_dist
    for k in range(1, p.k_max + 1):
        pmf = zipf_pmf(p.task_count_dist, k)
        n = math.ceil(model.r * k)
        cut = model.d / k
        below = partial_moment(bdist, m, cut, "below")
        try:
            above = partial_moment(bdist, m, cut, "above")
        except InfiniteMomentError as exc:
            raise InfiniteMomentError(
                f"no-redundancy branch k={k}: E[B^{m}] tail diverges "
                f"(beta={p.beta}); use a truncated service-time distribution"
            ) from exc
        yield k, n, pmf, below, above


def redsmall_latency_moment(model, m):
    """E[Latency^m]: mixture over k of the coded branch (demand <= d) and the
    plain branch, each a product of slowdown-order-statistic and service-time
    partial moments."""
    if m not in (1, 2):
        raise DomainError("only the first two latency moments are supported")
    alpha = model.params.alpha
    total = 0.0
    for k, n, pmf, below, above in _redsmall_branches(model, m):
        try:
            coded = orderstat_moment(n, k, alpha, m)
        except InfiniteMomentError as exc:
            raise InfiniteMomentError(f"coded branch k={k}, n={n}: {exc}") from exc
        try:
            plain = orderstat_moment(k, k, alpha, m)
        except InfiniteMomentError as exc:
            raise InfiniteMomentError(f"plain branch k={k}: {exc}") from exc
        total += pmf * (coded * below + plain * above)
    return total


def redsmall_cost_mean(model):
    """E[Cost]: coded jobs pay the k-of-n cancellation cost, plain jobs pay
    k * E[S] per unit of service time."""
    p = model.params
    alpha = p.alpha
    mean_s = pareto_moment(p.slowdown_dist, 1)
    total = 0.0
    for k, n, pmf, below, above in _redsmall_branches(model, 1):
        total += pmf * (coded_cost_mean(n, k, alpha) * below + k * mean_s * above)
    return total


def redsmall_moments(model):
    """(latency_m1, latency_m2, cost_m1) for the M/G/c plug-in."""
    return (
        redsmall_latency_moment(model, 1),
        redsmall_latency_moment(model, 2),
        redsmall_cost_mean(model),
    )


# ------------------------------------------------------------------
# System load and the M/G/c response-time estimate


def system_load(arrival_rate, num_nodes, node_capacity, cost_mean):
    """Average per-node load rho = lambda * E[Cost] / (N C)."""
    return arrival_rate * cost_mean / (num_nodes * node_capacity)


# Beyond this many busy servers the incomplete-Gamma factor of Erlang C is
# replaced by its large-scale form, under which the formula collapses to rho.
# Every operating point the optimizers visit sits far below the switch, where
# the exact log-space evaluation is used.
_LARGE_SCALE_SERVERS = 1000.0


def queueing_probability(c, rho, asymptotic=False):
    """Probability an arrival waits, for an M/M/c queue with (possibly
    non-integer) c servers at load rho.

    Evaluated via the incomplete-Gamma form of Erlang C entirely in log
    space. The asymptotic flag returns the large-scale limit of the model,
    which is rho; the non-asymptotic path switches to the same limit once
    c * rho exceeds _LARGE_SCALE_SERVERS.
    """
    if not c > 0:
        raise DomainError("server count c must be positive")
    if not (0 < rho < 1):
        raise DomainError(f"rho must lie in (0, 1), got {rho}")
    a = c * rho
    if asymptotic or a >= _LARGE_SCALE_SERVERS:
        return rho
    q = reg_upper_inc_gamma(c, a, _ERLANG_TOL)
    if q <= 0.0:
        return 1.0
    log_term = (
        math.log1p(-rho) + math.log(c) + a - c * math.log(a) + ln_gamma(c) + math.log(q)
    )
    if log_term > 700.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(log_term))


def mgc_response_time(
    latency_m1,
    latency_m2,
    cost_m1,
    arrival_rate,
    num_nodes,
    node_capacity,
    asymptotic=False,
):
    """Approximate mean response time of the cluster as an M/G/c queue.

    Each in-service job is treated as holding cost/latency capacity per unit
    time, giving c = N C * E[Latency] / E[Cost] servers, and the standard
    two-moment M/G/c correction scales the M/M/c waiting time.
    """
    if not (latency_m1 > 0 and latency_m2 > 0 and cost_m1 > 0):
        raise DomainError("moments must be positive")
    rho = system_load(arrival_rate, num_nodes, node_capacity, cost_m1)
    # the epsilon absorbs round-off when rho lands exactly on 1
    if rho >= 1.0 - 1e-9:
        raise InstabilityError(f"offered load rho={rho:.4f} >= 1", rho=rho)
    c = num_nodes * node_capacity * latency_m1 / cost_m1
    pr_q = queueing_probability(c, rho, asymptotic)
    wait = (latency_m2 / (2.0 * latency_m1**2)) * pr_q * rho / (
        arrival_rate * (1.0 - rho)
    )
    return MgcEstimate(
        c=c,
        rho=rho,
        pr_queueing=pr_q,
        expected_T=latency_m1 + wait,
        latency_m1=latency_m1,
        latency_m2=latency_m2,
        cost_m1=cost_m1,
        asymptotic=asymptotic,
    )


# ------------------------------------------------------------------
# Straggler relaunch moments
#
# A job of k tasks is dispatched at time 0 with a timer at w*b. Tasks still
# running when the timer fires are cancelled and restarted once with a fresh
# slowdown draw, finishing at (w + s') * b. With q = Pr{S <= w}:


def _relaunch_f(k, alpha, i):
    # f(i) = Gamma(k+1) Gamma(1-i/alpha) / Gamma(k+1-i/alpha) = E[S_{k:k}^i]
    return math.exp(
        ln_gamma(k + 1) + ln_gamma(1.0 - i / alpha) - ln_gamma(k + 1 - i / alpha)
    )


def relaunch_latency_mean(k, b, w, alpha):
    """Mean latency of a k-task job with service time b relaunched at w*b."""
    if not w >= 1:
        raise DomainError("relaunch factor w must be at least 1")
    if not alpha > 1:
        raise DomainError("alpha must exceed 1")
    q = 1.0 - w ** (-alpha)
    f1 = _relaunch_f(k, alpha, 1)
    beta_term = reg_inc_beta(1.0 - q, 1.0 - 1.0 / alpha, k)
    return b * w * (1.0 - q**k) + b * f1 * ((1.0 / w - 1.0) * beta_term + 1.0)


def relaunch_latency_second(k, b, w, alpha):
    """Second moment of the relaunched-job latency; needs alpha > 2."""
    if not w >= 1:
        raise DomainError("relaunch factor w must be at least 1")
    if not alpha > 2:
        raise InfiniteMomentError(
            f"E[Latency^2] under relaunch diverges for alpha={alpha} <= 2"
        )
    q = 1.0 - w ** (-alpha)
    one_minus_q = w ** (-alpha)
    f1 = _relaunch_f(k, alpha, 1)
    f2 = _relaunch_f(k, alpha, 2)
    i1 = reg_inc_beta(1.0 - q, 1.0 - 1.0 / alpha, k)
    i2 = reg_inc_beta(1.0 - q, 1.0 - 2.0 / alpha, k)
    return b * b * (
        f2
        + w * w * (1.0 - q**k)
        + 2.0 * w * f1 * one_minus_q ** (1.0 / alpha) * i1
        + (1.0 - w * w) * f2 * one_minus_q ** (2.0 / alpha) * i2
    )


def relaunch_cost_mean(k, b, w, alpha):
    """Mean resource-time charged to a relaunched job.

    Counts, per task, the running time of the attempt that completes it; the
    partial work of a cancelled first attempt is written off. This is the
    model's cost notion and what makes early relaunch look cheap; the
    capacity a job actually reserves is relaunch_reserved_cost_mean.
    """
    if not w >= 1:
        raise DomainError("relaunch factor w must be at least 1")
    if not alpha > 1:
        raise DomainError("alpha must exceed 1")
    q = 1.0 - w ** (-alpha)
    return b * k * (alpha / (alpha - 1.0)) * ((1.0 - q) * (1.0 - w) + 1.0)


def relaunch_reserved_cost_mean(k, b, w, alpha):
    """Mean resource-time a relaunched job actually occupies.

    Adds the cancelled first attempts' w*b of held capacity to
    relaunch_cost_mean; this is the quantity that drives cluster load.
    """
    extra = b * k * w ** (1.0 - alpha)  # (1-q) * w per task
    return relaunch_cost_mean(k, b, w, alpha) + extra


@lru_cache(maxsize=None)
def optimal_relaunch_factor_exact(k, alpha, w_max=30.0):
    """Per-job relaunch factor minimizing the exact mean latency.

    Coarse grid scan over [1, w_max] followed by golden-section refinement.
    """
    obj = lambda w: relaunch_latency_mean(k, 1.0, w, alpha)
    grid = [1.0 + (w_max - 1.0) * i / 299.0 for i in range(300)]
    vals = [obj(w) for w in grid]
    i = min(range(len(grid)), key=vals.__getitem__)
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = obj(x1), obj(x2)
    for _ in range(80):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = obj(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = obj(x2)
    return (a + b) / 2.0


def _relaunch_w_for(model, k):
    if model.w is not None:
        return model.w
    return optimal_relaunch_factor_exact(k, model.params.alpha)


def relaunch_moments_marginal(model):
    """(latency_m1, latency_m2, cost_m1) over the job-size and service-time
    mix; the per-(k, b) moments are homogeneous in b, so B only enters
    through its first two moments."""
    p = model.params
    bdist = p.service_time_dist
    mean_b = p.mean_service_time()
    if p.beta <= 2 and p.service_dist == "pareto":
        raise InfiniteMomentError(
            f"E[B^2] diverges for beta={p.beta}; switch to truncated_pareto"
        )
    mean_b2 = (
        pareto_moment(bdist, 2)
        if p.service_dist == "pareto"
        else truncated_pareto_moment(bdist, 2)
    )
    l1 = l2 = c1 = 0.0
    for k in range(1, p.k_max + 1):
        pmf = zipf_pmf(p.task_count_dist, k)
        w = _relaunch_w_for(model, k)
        l1 += pmf * mean_b * relaunch_latency_mean(k, 1.0, w, p.alpha)
        l2 += pmf * mean_b2 * relaunch_latency_second(k, 1.0, w, p.alpha)
        c1 += pmf * mean_b * relaunch_cost_mean(k, 1.0, w, p.alpha)
    return l1, l2, c1


def relaunch_reserved_cost_marginal(model):
    """Marginal mean reserved resource-time per job under relaunch."""
    p = model.params
    mean_b = p.mean_service_time()
    total = 0.0
    for k in range(1, p.k_max + 1):
        pmf = zipf_pmf(p.task_count_dist, k)
        w = _relaunch_w_for(model, k)
        total += pmf * mean_b * relaunch_reserved_cost_mean(k, 1.0, w, p.alpha)
    return total


# ------------------------------------------------------------------
# Parameter optimizers


def _sweep_point(rho0, name, value, l1, l2, occupancy, arrival_rate, p, asymptotic):
    try:
        est = mgc_response_time(
            l1, l2, occupancy, arrival_rate, p.num_nodes, p.node_capacity, asymptotic
        )
    except InstabilityError as exc:
        rho = exc.rho if exc.rho is not None else math.inf
        return CurvePoint(
            rho0, name, value, l1, l2, occupancy, math.nan, rho, math.nan,
            math.inf, True,
        )
    return CurvePoint(
        rho0, name, value, l1, l2, occupancy, est.c, est.rho, est.pr_queueing,
        est.expected_T, False,
    )


def optimize_demand_threshold(params, r, rho0, d_grid=None, asymptotic=False):
    """Sweep the demand threshold and return (d_star, curve).

    Unstable grid points (rho >= 1) are kept in the curve but never win;
    ties break toward the smaller threshold.
    """
    if d_grid is None:
        d_grid = default_demand_grid(params.b_min)
    if not d_grid:
        raise DomainError("d_grid must be non-empty")
    arrival_rate = lambda_for_offered_load(rho0, params)
    curve = []
    for d in sorted(d_grid):
        model = RedSmallModel(params, r, d)
        l1, l2, c1 = redsmall_moments(model)
        curve.append(
            _sweep_point(rho0, "d", d, l1, l2, c1, arrival_rate, params, asymptotic)
        )
    best = min(
        (pt for pt in curve if not pt.unstable),
        key=lambda pt: (pt.expected_T, pt.param_value),
    )
    return best.param_value, curve


def optimize_relaunch_factor(params, rho0, w_grid=None, asymptotic=False):
    """Sweep the fixed relaunch factor and return (w_star, curve).

    The load plugged into the M/G/c view is the reserved-capacity cost:
    cancelled first attempts hold their slots until the timer fires, and
    ignoring that misses real instability at high load and small w.
    """
    if w_grid is None:
        w_grid = default_relaunch_grid()
    if not w_grid:
        raise DomainError("w_grid must be non-empty")
    arrival_rate = lambda_for_offered_load(rho0, params)
    curve = []
    for w in sorted(w_grid):
        model = RelaunchModel(params, w)
        l1, l2, _ = relaunch_moments_marginal(model)
        occupancy = relaunch_reserved_cost_marginal(model)
        curve.append(
            _sweep_point(rho0, "w", w, l1, l2, occupancy, arrival_rate, params, asymptotic)
        )
    best = min(
        (pt for pt in curve if not pt.unstable),
        key=lambda pt: (pt.expected_T, pt.param_value),
    )
    return best.param_value, curve


def relaunch_mgc_estimate(params, rho0, w=None, asymptotic=False):
    """M/G/c estimate for the relaunch policy (fixed w, or per-job if None)."""
    arrival_rate = lambda_for_offered_load(rho0, params)
    model = RelaunchModel(params, w)
    l1, l2, _ = relaunch_moments_marginal(model)
    occupancy = relaunch_reserved_cost_marginal(model)
    return mgc_response_time(
        l1, l2, occupancy, arrival_rate, params.num_nodes, params.node_capacity,
        asymptotic,
    )


CURVE_FIELDS = [
    "rho0",
    "param_name",
    "param_value",
    "latency_m1",
    "latency_m2",
    "cost_m1",
    "c",
    "rho",
    "pr_queueing",
    "expected_T",
    "unstable",
]


def write_curve_csv(points, path):
    """Write sweep points with the standard curve schema."""
    from .cli import format_value  # deferred; cli owns the number format

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_FIELDS)
        for pt in points:
            writer.writerow([format_value(getattr(pt, f)) for f in CURVE_FIELDS])
