import math

import numpy as np
import pytest
from scipy import stats as scipy_stats

from stragglerlab.errors import DomainError
from stragglerlab.policies import RedundantNone
from stragglerlab.simulator import SimConfig, run_simulation
from stragglerlab.stochastic import RngStream, ZipfDist, derive_seed, zipf_pmf
from stragglerlab.workload import (
    JobSpec,
    WorkloadParams,
    export_workload,
    generate_workload,
    import_workload,
    job_demand,
    lambda_for_offered_load,
)


class TestWorkloadParams:
    def test_defaults_match_cluster_config(self, paper_params):
        assert paper_params.num_nodes == 20
        assert paper_params.node_capacity == 10.0
        assert paper_params.mean_task_count() == pytest.approx(3.41417, abs=1e-5)
        assert paper_params.mean_service_time() == pytest.approx(15.0)
        assert paper_params.mean_slowdown_factor() == pytest.approx(1.5)

    def test_validation(self):
        with pytest.raises(DomainError):
            WorkloadParams(beta=1.0)
        with pytest.raises(DomainError):
            WorkloadParams(k_max=0)
        with pytest.raises(DomainError):
            WorkloadParams(service_dist="truncated_pareto")  # needs service_max

    def test_truncated_variant(self):
        p = WorkloadParams(service_dist="truncated_pareto", service_max=1000.0)
        d = p.service_time_dist
        assert d.maximum == 1000.0
        assert p.mean_service_time() < 15.0  # truncation trims the tail


class TestGeneration:
    def test_interarrival_mean(self, paper_params):
        p = paper_params.with_arrival_rate(1.0)
        jobs = generate_workload(p, 10**6, RngStream(1))
        arrivals = np.array([j.arrival_time for j in jobs])
        gaps = np.diff(np.concatenate([[0.0], arrivals]))
        se = gaps.std() / math.sqrt(len(gaps))
        assert abs(gaps.mean() - 1.0) <= 3 * se

    def test_task_count_distribution(self, paper_params):
        p = paper_params.with_arrival_rate(1.0)
        jobs = generate_workload(p, 10**6, RngStream(2))
        ks = np.array([j.k for j in jobs])
        counts = np.bincount(ks, minlength=11)[1:]
        expected = np.array(
            [zipf_pmf(ZipfDist(10), k) * len(jobs) for k in range(1, 11)]
        )
        result = scipy_stats.chisquare(counts, expected)
        assert result.pvalue > 0.001

    def test_determinism(self, paper_params):
        p = paper_params.with_arrival_rate(1.5)
        a = generate_workload(p, 1000, RngStream(7))
        b = generate_workload(p, 1000, RngStream(7))
        assert a == b

    def test_arrivals_strictly_increasing(self, paper_params):
        p = paper_params.with_arrival_rate(2.0)
        jobs = generate_workload(p, 5000, RngStream(3))
        times = [j.arrival_time for j in jobs]
        assert all(b > a for a, b in zip(times, times[1:]))

    def test_requires_arrival_rate(self, paper_params):
        with pytest.raises(DomainError):
            generate_workload(paper_params, 10, RngStream(0))


class TestJobDemand:
    def test_values(self):
        assert job_demand(JobSpec(1, 0.0, 1, 10.0)) == 10.0
        assert job_demand(JobSpec(2, 0.0, 10, 25.0)) == 250.0
        assert job_demand(JobSpec(3, 0.0, 3, 10.0)) == 30.0


class TestOfferedLoad:
    def test_paper_configuration(self, paper_params):
        lam = lambda_for_offered_load(0.6, paper_params)
        denom = 3.414171521474055 * 15.0 * 1.5
        assert lam == pytest.approx(0.6 * 200.0 / denom, rel=1e-12)

    def test_small_load_scales_to_zero(self, paper_params):
        lam = lambda_for_offered_load(1e-9, paper_params)
        assert 0 < lam < 1e-8

    def test_linear_in_capacity(self, paper_params):
        lam1 = lambda_for_offered_load(0.5, paper_params)
        big = WorkloadParams(num_nodes=40, node_capacity=10.0)
        assert lambda_for_offered_load(0.5, big) == pytest.approx(2 * lam1)

    def test_domain(self, paper_params):
        with pytest.raises(DomainError):
            lambda_for_offered_load(0.0, paper_params)
        with pytest.raises(DomainError):
            lambda_for_offered_load(1.0, paper_params)

    @pytest.mark.parametrize("rho0", [0.3, 0.6])
    def test_baseline_load_closure(self, paper_params, rho0):
        # simulating with no mitigation must reproduce the requested load
        lam = lambda_for_offered_load(rho0, paper_params)
        loaded = paper_params.with_arrival_rate(lam)
        utils = []
        for seed in range(5):
            jobs = generate_workload(loaded, 50_000, RngStream(derive_seed(40, seed)))
            metrics = run_simulation(
                jobs,
                RedundantNone(),
                paper_params,
                SimConfig(num_jobs=50_000, seed=derive_seed(41, seed)),
            )
            utils.append(metrics.utilization)
        assert abs(float(np.mean(utils)) - rho0) <= 0.02


def test_demand_tail_is_heavy(paper_params):
    p = paper_params.with_arrival_rate(1.0)
    jobs = generate_workload(p, 10**6, RngStream(8))
    demands = np.array([job_demand(j) for j in jobs])
    grid = np.logspace(2, 4, 15)
    probs = np.array([np.mean(demands > x) for x in grid])
    # keep grid points with enough exceedances for a meaningful frequency
    keep = probs * len(demands) >= 30
    assert keep.sum() >= 5
    slope = np.polyfit(np.log(grid[keep]), np.log(probs[keep]), 1)[0]
    assert -3.5 <= slope <= -1.5


def test_csv_round_trip(tmp_path, paper_params):
    p = paper_params.with_arrival_rate(1.3)
    jobs = generate_workload(p, 500, RngStream(9))
    path = tmp_path / "workload.csv"
    export_workload(jobs, path)
    back = import_workload(path)
    assert back == jobs
