import math

import pytest

from stragglerlab.analysis import optimal_relaunch_factor_exact
from stragglerlab.errors import DomainError
from stragglerlab.policies import (
    RedundancyDecision,
    RedundantAll,
    RedundantNone,
    RedundantSmall,
    StragglerRelaunch,
    decide_redundancy,
    per_job_optimal_w,
)
from stragglerlab.simulator import ClusterView, NodeState
from stragglerlab.stochastic import orderstat_moment
from stragglerlab.workload import JobSpec, WorkloadParams


def make_view(params=None):
    params = params or WorkloadParams()
    nodes = [NodeState(i, params.node_capacity) for i in range(params.num_nodes)]
    return ClusterView(nodes, params)


class TestDecideRedundancy:
    def test_none(self):
        job = JobSpec(1, 0.0, 4, 12.0)
        assert decide_redundancy(RedundantNone(), job, make_view()) == RedundancyDecision(4)

    def test_all_adds_fixed_extras(self):
        job = JobSpec(1, 0.0, 4, 12.0)
        dec = decide_redundancy(RedundantAll(), job, make_view())
        assert dec.n == 7 and dec.relaunch_time is None

    def test_small_expands_under_threshold(self):
        job = JobSpec(1, 0.0, 3, 20.0)  # demand 60
        dec = decide_redundancy(RedundantSmall(r=2.0, d=100.0), job, make_view())
        assert dec.n == 6

    def test_small_excludes_over_threshold(self):
        job = JobSpec(1, 0.0, 3, 20.0)
        dec = decide_redundancy(RedundantSmall(r=2.0, d=50.0), job, make_view())
        assert dec.n == 3

    def test_small_zero_threshold_is_plain(self):
        view = make_view()
        for k, b in ((1, 10.0), (5, 11.0), (10, 400.0)):
            job = JobSpec(1, 0.0, k, b)
            assert decide_redundancy(RedundantSmall(2.0, 0.0), job, view).n == k

    def test_small_monotone_in_threshold(self):
        job = JobSpec(1, 0.0, 4, 30.0)
        view = make_view()
        last = 0
        for d in (0.0, 50.0, 119.0, 120.0, 121.0, 1e6):
            n = decide_redundancy(RedundantSmall(1.7, d), job, view).n
            assert n >= last
            last = n

    def test_small_unbounded_threshold_expands_everything(self):
        view = make_view()
        for k in range(1, 11):
            job = JobSpec(1, 0.0, k, 5000.0)
            n = decide_redundancy(RedundantSmall(1.5, 1e12), job, view).n
            assert n == math.ceil(1.5 * k)

    def test_relaunch_fixed(self):
        job = JobSpec(1, 0.0, 3, 20.0)
        dec = decide_redundancy(StragglerRelaunch(w=2.0), job, make_view())
        assert dec.n == 3 and dec.relaunch_time == pytest.approx(40.0)

    def test_relaunch_per_job(self):
        job = JobSpec(1, 0.0, 5, 10.0)
        dec = decide_redundancy(StragglerRelaunch(), job, make_view())
        want = optimal_relaunch_factor_exact(5, 3.0) * 10.0
        assert dec.relaunch_time == pytest.approx(want)

    def test_decisions_are_pure(self):
        job = JobSpec(1, 0.0, 6, 17.0)
        view = make_view()
        for policy in (RedundantNone(), RedundantAll(), RedundantSmall(2.0, 90.0),
                       StragglerRelaunch(w=3.0)):
            assert decide_redundancy(policy, job, view) == decide_redundancy(
                policy, job, view
            )

    def test_validation(self):
        with pytest.raises(DomainError):
            RedundantSmall(r=1.0, d=10.0)
        with pytest.raises(DomainError):
            RedundantSmall(r=2.0, d=-1.0)
        with pytest.raises(DomainError):
            StragglerRelaunch(w=0.5)
        with pytest.raises(DomainError):
            RedundantAll(max_extra=-1)


class TestPerJobOptimalW:
    def test_single_task_value(self):
        assert per_job_optimal_w(1, 3.0) == pytest.approx(math.sqrt(1.5), rel=1e-10)

    def test_no_variability_limit(self):
        assert per_job_optimal_w(1, 1e6) == pytest.approx(1.0, abs=1e-4)

    def test_sqrt_of_max_orderstat_identity(self):
        want = math.sqrt(orderstat_moment(10, 10, 3.0, 1))
        assert per_job_optimal_w(10, 3.0) == pytest.approx(want, rel=1e-10)

    def test_monotone_in_job_size(self):
        for alpha in (2.0, 3.0, 5.0):
            vals = [per_job_optimal_w(k, alpha) for k in range(1, 51)]
            assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_domain(self):
        with pytest.raises(DomainError):
            per_job_optimal_w(3, 1.0)
