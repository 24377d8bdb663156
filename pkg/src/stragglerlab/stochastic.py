"""Heavy-tailed workload distributions, deterministic sampling streams, and
the closed-form order-statistic and coded-execution moments for Pareto
slowdowns.

Moment expressions that are ratios of Gamma values are evaluated in log
space; Gamma(n + 1) overflows for moderate n otherwise.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, InfiniteMomentError, NullEventError
from .specfn import ln_gamma


@dataclass(frozen=True)
class ParetoDist:
    """Pareto law Pr{X > x} = (minimum / x)^tail_index for x > minimum."""

    minimum: float
    tail_index: float

    def __post_init__(self):
        if not self.minimum > 0:
            raise DomainError("Pareto minimum must be positive")
        if not self.tail_index > 0:
            raise DomainError("Pareto tail index must be positive")


@dataclass(frozen=True)
class TruncatedParetoDist:
    """Pareto conditioned on X <= maximum; every moment is finite."""

    minimum: float
    maximum: float
    tail_index: float

    def __post_init__(self):
        if not self.minimum > 0:
            raise DomainError("minimum must be positive")
        if not self.maximum > self.minimum:
            raise DomainError("maximum must exceed minimum")
        if not self.tail_index > 0:
            raise DomainError("tail index must be positive")


@dataclass(frozen=True)
class ZipfDist:
    """Zipf pmf with exponent one: Pr{K = k} proportional to 1/k, k <= k_max."""

    k_max: int

    def __post_init__(self):
        if self.k_max < 1:
            raise DomainError("k_max must be at least 1")


class RngStream:
    """Deterministic random stream; one stream per logical actor.

    The same (seed, path) pair always yields the same sample sequence,
    bit for bit. child() derives an independent stream, so replications
    and sub-actors never share or perturb each other's draws.
    """

    def __init__(self, seed, _path=()):
        self.seed = int(seed)
        self._path = tuple(int(p) for p in _path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._path)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *path):
        return RngStream(self.seed, self._path + tuple(path))

    def uniform01(self, size=None):
        """Uniform draw on (0, 1], the support inverse-CDF samplers need."""
        return 1.0 - self._gen.random(size)

    def random(self, size=None):
        return self._gen.random(size)

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self._path})"


def derive_seed(seed, *path):
    """Integer seed for a named sub-purpose of a master seed.

    Deterministic and collision-resistant, so different roles (workload,
    service draws, training batches) never share a stream.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


# ------------------------------------------------------------------
# Pareto moments


def pareto_tail_prob(dist, x):
    """Pr{X > x}; equals 1 at or below the minimum."""
    if x <= dist.minimum:
        return 1.0
    return (dist.minimum / x) ** dist.tail_index


def pareto_moment(dist, m):
    """E[X^m] = tail * minimum^m / (tail - m), finite only for tail > m."""
    a = dist.tail_index
    if a <= m:
        raise InfiniteMomentError(
            f"E[X^{m}] is infinite for tail index {a}; "
            "use TruncatedParetoDist for heavier tails"
        )
    return a * dist.minimum**m / (a - m)


def pareto_partial_moment(dist, m, x, side):
    """E[X^m * 1{X <= x}] (side='below') or E[X^m * 1{X > x}] (side='above').

    The below side is finite for every tail index since the integrand is
    bounded; the above side requires tail_index > m.
    """
    a = dist.tail_index
    lo = dist.minimum
    if side == "below":
        if x <= lo:
            return 0.0
        if a == m:
            return a * lo**m * math.log(x / lo)
        return (a * lo**m / (a - m)) * (1.0 - (lo / x) ** (a - m))
    if side == "above":
        if a <= m:
            raise InfiniteMomentError(
                f"E[X^{m} * 1{{X > x}}] is infinite for tail index {a}"
            )
        return pareto_moment(dist, m) - pareto_partial_moment(dist, m, x, "below")
    raise DomainError(f"side must be 'below' or 'above', got {side!r}")


def pareto_cond_moment(dist, x, m, side):
    """Conditional moment E[X^m | X <= x] or E[X^m | X > x]."""
    if side == "below":
        if x <= dist.minimum:
            raise NullEventError(
                f"conditioning on X <= {x} has probability zero "
                f"(minimum is {dist.minimum})"
            )
        prob = 1.0 - pareto_tail_prob(dist, x)
        return pareto_partial_moment(dist, m, x, "below") / prob
    if side == "above":
        a = dist.tail_index
        if a <= m:
            raise InfiniteMomentError(
                f"E[X^{m} | X > x] is infinite for tail index {a}"
            )
        return a * max(x, dist.minimum) ** m / (a - m)
    raise DomainError(f"side must be 'below' or 'above', got {side!r}")


def truncated_pareto_moment(dist, m):
    """E[X^m] of the upper-truncated Pareto; finite for every tail index."""
    g = dist.tail_index
    lo, hi = dist.minimum, dist.maximum
    mass = 1.0 - (lo / hi) ** g
    if g == m:
        return g * lo**m * math.log(hi / lo) / mass
    return (g * lo**m / (g - m)) * (1.0 - (lo / hi) ** (g - m)) / mass


def partial_moment(dist, m, x, side):
    """E[X^m * 1{X <= x}] or E[X^m * 1{X > x}] for either Pareto variant."""
    if isinstance(dist, ParetoDist):
        return pareto_partial_moment(dist, m, x, side)
    if isinstance(dist, TruncatedParetoDist):
        plain = ParetoDist(dist.minimum, dist.tail_index)
        mass = 1.0 - (dist.minimum / dist.maximum) ** dist.tail_index
        below_cut = pareto_partial_moment(plain, m, min(x, dist.maximum), "below")
        if side == "below":
            return below_cut / mass
        if side == "above":
            below_max = pareto_partial_moment(plain, m, dist.maximum, "below")
            return (below_max - below_cut) / mass
        raise DomainError(f"side must be 'below' or 'above', got {side!r}")
    raise DomainError(f"no partial moment for {type(dist).__name__}")


# ------------------------------------------------------------------
# Sampling (inverse CDF throughout, so streams replay bit-exactly)


@lru_cache(maxsize=None)
def _zipf_tables(k_max):
    weights = 1.0 / np.arange(1, k_max + 1)
    pmf = weights / weights.sum()
    return pmf, np.cumsum(pmf)


def zipf_pmf(dist, k):
    """Pr{K = k}."""
    if k < 1 or k > dist.k_max:
        return 0.0
    pmf, _ = _zipf_tables(dist.k_max)
    return float(pmf[k - 1])


def zipf_mean(dist):
    """E[K] = k_max / H_{k_max} for the exponent-one Zipf."""
    harmonic = float(np.sum(1.0 / np.arange(1, dist.k_max + 1)))
    return dist.k_max / harmonic


def sample(dist, rng, size=None):
    """Draw from a ParetoDist, TruncatedParetoDist, or ZipfDist.

    Returns a scalar for size=None, otherwise an ndarray of the given size.
    """
    if isinstance(dist, ParetoDist):
        u = rng.uniform01(size)
        out = dist.minimum * u ** (-1.0 / dist.tail_index)
        return float(out) if size is None else out
    if isinstance(dist, TruncatedParetoDist):
        g = dist.tail_index
        mass = 1.0 - (dist.minimum / dist.maximum) ** g
        v = rng.random(size)
        out = dist.minimum * (1.0 - v * mass) ** (-1.0 / g)
        return float(out) if size is None else out
    if isinstance(dist, ZipfDist):
        _, cdf = _zipf_tables(dist.k_max)
        v = rng.random(size)
        out = np.searchsorted(cdf, v, side="right") + 1
        return int(out) if size is None else out
    raise DomainError(f"cannot sample from {type(dist).__name__}")


# ------------------------------------------------------------------
# Order statistics of unit-minimum Pareto slowdowns


def orderstat_moment(n, k, alpha, m=1):
    """E[S_{n:k}^m]: m-th moment of the k-th smallest of n iid Pareto(1, alpha).

    Finite iff alpha * (n - k + 1) > m. Computed entirely in log space.
    """
    if k < 1 or k > n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    e = m / alpha
    if n - k + 1 - e <= 0:
        raise InfiniteMomentError(
            f"E[S_{{{n}:{k}}}^{m}] is infinite: requires alpha*(n-k+1) > {m}"
        )
    return math.exp(
        ln_gamma(n + 1)
        - ln_gamma(n - k + 1)
        + ln_gamma(n - k + 1 - e)
        - ln_gamma(n + 1 - e)
    )


def orderstat_approx(n, k, alpha):
    """Approximation E[S_{n:k}] ~ (1 - k/n)^(-1/alpha), valid for n > k."""
    if n <= k:
        raise DomainError(f"approximation needs n > k, got n={n}, k={k}")
    return (1.0 - k / n) ** (-1.0 / alpha)


def coded_cost_mean(n, k, alpha):
    """Mean total slowdown-time of a k-of-n coded job with unit task time.

    Cost C_{n,k} = sum_{i<=k} S_{n:i} + (n-k) S_{n:k}: every task occupies
    its slot until it finishes or until the k-th completion cancels it.
    """
    if not alpha > 1:
        raise DomainError("alpha must exceed 1 for a finite mean cost")
    if k < 1 or k > n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n == k:
        return k * alpha / (alpha - 1.0)
    s = orderstat_moment(n, k, alpha, 1)
    return n / (alpha - 1.0) * (alpha - (1.0 - k / n) * s)


def cost_expansion_factor(alpha, r):
    """Continuous-rate cost factor f(alpha, r): mean cost per task of a job
    expanded at rate r, relative to its unit service time."""
    if not alpha > 1:
        raise DomainError("alpha must exceed 1")
    if not r > 1:
        raise DomainError("expansion rate must exceed 1")
    return r / (alpha - 1.0) * (alpha - (1.0 - 1.0 / r) ** (1.0 - 1.0 / alpha))


def cost_reduction_threshold(alpha):
    """Largest expansion rate at which coding still lowers mean cost:
    r* = (1 - alpha^-alpha)^-1."""
    if not alpha > 1:
        raise DomainError("alpha must exceed 1")
    return 1.0 / (1.0 - alpha ** (-alpha))
