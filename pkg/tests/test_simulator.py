import math

import numpy as np
import pytest

from stragglerlab.analysis import relaunch_latency_mean
from stragglerlab.errors import DomainError
from stragglerlab.policies import (
    RedundantAll,
    RedundantNone,
    RedundantSmall,
    StragglerRelaunch,
)
from stragglerlab.simulator import (
    ClusterView,
    NodeState,
    SimConfig,
    Simulation,
    place_tasks,
    run_simulation,
    summarize,
)
from stragglerlab.stochastic import RngStream, coded_cost_mean, derive_seed, orderstat_moment
from stragglerlab.workload import (
    JobSpec,
    WorkloadParams,
    generate_workload,
    lambda_for_offered_load,
)


def spaced_jobs(count, k, b, gap=1e5):
    return [JobSpec(i + 1, i * gap, k, b) for i in range(count)]


class TestPlaceTasks:
    def test_greedy_alternation_with_tie_break(self):
        nodes = [NodeState(0, 10.0), NodeState(1, 10.0)]
        assert place_tasks(nodes, 3, 1.0) == [0, 1, 0]
        assert all(n.occupied == 0.0 for n in nodes)  # nothing reserved

    def test_full_cluster_does_not_fit(self):
        nodes = [NodeState(i, 4.0, occupied=4.0) for i in range(3)]
        assert place_tasks(nodes, 1, 1.0) is None

    def test_spreads_over_empty_cluster(self):
        nodes = [NodeState(i, 10.0) for i in range(20)]
        assert place_tasks(nodes, 20, 1.0) == list(range(20))

    def test_prefers_least_loaded(self):
        nodes = [NodeState(0, 10.0, occupied=5.0), NodeState(1, 10.0, occupied=1.0)]
        assert place_tasks(nodes, 2, 1.0) == [1, 1]


class TestBasicRuns:
    def test_single_job_no_straggle(self, paper_params):
        m = run_simulation(
            [JobSpec(1, 0.0, 1, 10.0)],
            RedundantNone(),
            paper_params,
            SimConfig(num_jobs=1),
            straggle_factor=1.0,
        )
        assert m.mean_response == pytest.approx(10.0)
        assert m.mean_slowdown == pytest.approx(1.0)

    def test_empty_workload(self, paper_params):
        m = run_simulation([], RedundantNone(), paper_params, SimConfig(num_jobs=5))
        assert m.num_completed == 0 and not m.unstable

    def test_k_of_n_completion_and_cancellation(self, paper_params):
        # three tasks finishing at 12, 15, 40: the job needs two, so it ends
        # at 15 and the slowest task is cancelled right there
        factors = {0: 1.2, 1: 1.5, 2: 4.0}
        sim = Simulation(
            [JobSpec(1, 0.0, 2, 10.0)],
            RedundantSmall(r=1.5, d=1e9),
            paper_params,
            SimConfig(num_jobs=1),
            straggle_factor=lambda j, t, a: factors[t],
            trace_tasks=True,
        )
        records = sim.run()
        assert records[0].n == 3
        assert records[0].finish_time == pytest.approx(15.0)
        statuses = sorted(t.status for t in sim.task_trace)
        assert statuses == ["cancelled", "completed", "completed"]
        assert records[0].cost == pytest.approx(12.0 + 15.0 + 15.0)

    def test_plain_job_waits_for_slowest(self, paper_params):
        factors = {0: 1.1, 1: 2.0}
        m = run_simulation(
            [JobSpec(1, 0.0, 2, 10.0)],
            RedundantNone(),
            paper_params,
            SimConfig(num_jobs=1),
            straggle_factor=lambda j, t, a: factors[t],
        )
        assert m.mean_response == pytest.approx(20.0)

    def test_relaunch_timer_semantics(self, paper_params):
        # task 0 finishes before the timer; task 1 straggles, is relaunched
        # at 2b and completes a fresh draw later
        draws = {(0, 0): 1.5, (1, 0): 5.0, (1, 1): 1.25}
        sim = Simulation(
            [JobSpec(1, 0.0, 2, 10.0)],
            StragglerRelaunch(w=2.0),
            paper_params,
            SimConfig(num_jobs=1),
            straggle_factor=lambda j, t, a: draws[(t, a)],
            trace_tasks=True,
        )
        records = sim.run()
        assert records[0].relaunch_count == 1
        assert records[0].finish_time == pytest.approx(20.0 + 12.5)
        assert records[0].cost == pytest.approx(15.0 + 32.5)

    def test_relaunch_noop_when_all_done(self, paper_params):
        m = run_simulation(
            [JobSpec(1, 0.0, 2, 10.0)],
            StragglerRelaunch(w=5.0),
            paper_params,
            SimConfig(num_jobs=1),
            straggle_factor=1.5,
        )
        assert m.records[0].relaunch_count == 0
        assert m.mean_response == pytest.approx(15.0)


class TestClosedFormAgreement:
    def test_coded_latency_on_idle_cluster(self, paper_params):
        jobs = spaced_jobs(20_000, k=10, b=1.0)
        m = run_simulation(
            jobs, RedundantSmall(r=1.5, d=1e12), paper_params,
            SimConfig(num_jobs=len(jobs), seed=51),
        )
        assert m.mean_response == pytest.approx(
            orderstat_moment(15, 10, 3.0, 1), rel=0.01
        )

    def test_relaunch_latency_on_idle_cluster(self, paper_params):
        jobs = spaced_jobs(20_000, k=10, b=1.0)
        m = run_simulation(
            jobs, StragglerRelaunch(w=2.0), paper_params,
            SimConfig(num_jobs=len(jobs), seed=52),
        )
        assert m.mean_response == pytest.approx(
            relaunch_latency_mean(10, 1.0, 2.0, 3.0), rel=0.01
        )

    def test_coded_cost_on_idle_cluster(self, paper_params):
        jobs = spaced_jobs(20_000, k=10, b=1.0)
        m = run_simulation(
            jobs, RedundantSmall(r=2.0, d=1e12), paper_params,
            SimConfig(num_jobs=len(jobs), seed=53),
        )
        costs = [r.cost for r in m.records]
        assert float(np.mean(costs)) == pytest.approx(
            coded_cost_mean(20, 10, 3.0), rel=0.01
        )


class _AuditedSimulation(Simulation):
    """Checks conservation and work conservation at every event."""

    def _advance(self, t):
        super()._advance(t)
        total = 0.0
        for node in self.nodes:
            assert -1e-9 <= node.occupied <= node.capacity + 1e-9
            assert node.occupied == pytest.approx(
                sum(1.0 for _ in node.running), abs=1e-9
            )
            total += node.occupied
        assert total == pytest.approx(self._total_occupied, abs=1e-6)

    def try_dispatch(self, now):
        super().try_dispatch(now)
        if self.queue:
            from stragglerlab.policies import decide_redundancy

            head = self.queue[0]
            decision = decide_redundancy(self.policy, head, self.view)
            assert place_tasks(self.nodes, decision.n, head.r_cap) is None


@pytest.mark.parametrize("policy", [RedundantSmall(r=2.0, d=200.0), StragglerRelaunch(w=2.0)])
def test_conservation_and_work_conservation(paper_params, policy):
    lam = lambda_for_offered_load(0.6, paper_params)
    jobs = generate_workload(paper_params.with_arrival_rate(lam), 2000, RngStream(54))
    sim = _AuditedSimulation(jobs, policy, paper_params, SimConfig(num_jobs=2000, seed=55))
    records = sim.run()
    assert len(records) == 2000
    assert sum(n.occupied for n in sim.nodes) == pytest.approx(0.0, abs=1e-9)


def test_determinism(paper_params):
    lam = lambda_for_offered_load(0.5, paper_params)
    jobs = generate_workload(paper_params.with_arrival_rate(lam), 3000, RngStream(56))
    runs = [
        run_simulation(jobs, RedundantSmall(2.0, 150.0), paper_params,
                       SimConfig(num_jobs=3000, seed=57))
        for _ in range(2)
    ]
    assert runs[0].records == runs[1].records
    assert runs[0].utilization == runs[1].utilization


def test_fifo_dispatch_order_and_slowdown_floor(paper_params):
    lam = lambda_for_offered_load(0.7, paper_params)
    jobs = generate_workload(paper_params.with_arrival_rate(lam), 5000, RngStream(58))
    m = run_simulation(jobs, RedundantNone(), paper_params, SimConfig(num_jobs=5000, seed=59))
    by_id = sorted(m.records, key=lambda r: r.job_id)
    dispatches = [r.dispatch_time for r in by_id]
    assert all(b >= a for a, b in zip(dispatches, dispatches[1:]))
    assert all(r.slowdown >= 1.0 - 1e-12 for r in m.records)
    assert all(r.finish_time >= r.dispatch_time + r.b - 1e-9 for r in m.records)


def test_instability_abort_and_flag(paper_params):
    lam = lambda_for_offered_load(0.7, paper_params)
    jobs = generate_workload(paper_params.with_arrival_rate(lam), 20_000, RngStream(60))
    m_all = run_simulation(jobs, RedundantAll(), paper_params,
                           SimConfig(num_jobs=20_000, seed=61))
    m_none = run_simulation(jobs, RedundantNone(), paper_params,
                            SimConfig(num_jobs=20_000, seed=61))
    assert m_all.unstable
    assert m_all.num_completed < 20_000  # partial metrics from the abort
    assert not m_none.unstable


class TestSummarize:
    def test_single_record(self):
        rec = _record(job_id=1, arrival=0.0, b=10.0, finish=25.0)
        m = summarize([rec])
        assert m.mean_slowdown == pytest.approx(2.5)
        assert m.mean_response == pytest.approx(25.0)

    def test_degenerate_percentiles(self):
        recs = [_record(i, 0.0, 10.0, 20.0) for i in range(50)]
        m = summarize(recs)
        assert m.p50_slowdown == m.p99_slowdown == m.mean_slowdown == pytest.approx(2.0)

    def test_warmup_keeps_tail(self):
        recs = [_record(i, 0.0, 10.0, 10.0 * (i + 1)) for i in range(10)]
        m = summarize(recs, warmup_fraction=0.5)
        assert m.num_completed == 5
        assert m.mean_slowdown == pytest.approx(np.mean([6, 7, 8, 9, 10]))

    def test_empty_after_warmup(self):
        with pytest.raises(DomainError):
            summarize([], warmup_fraction=0.0)

    def test_tail_curve(self):
        recs = [_record(i, 0.0, 1.0, s) for i, s in enumerate([1.2, 1.8, 2.5, 12.0])]
        m = summarize(recs)
        probs = dict(zip(m.tail_grid, m.tail_probs))
        assert probs[1.0] == 1.0
        assert probs[2.0] == pytest.approx(0.5)
        assert probs[10.0] == pytest.approx(0.25)
        assert probs[100.0] == 0.0


def _record(job_id, arrival, b, finish):
    from stragglerlab.simulator import JobRecord

    return JobRecord(
        job_id=job_id,
        arrival_time=arrival,
        k=1,
        b=b,
        n=1,
        dispatch_time=arrival,
        finish_time=finish,
        relaunch_count=0,
        slowdown=(finish - arrival) / b,
        cost=finish - arrival,
    )


def test_oversized_job_is_rejected(paper_params):
    small = WorkloadParams(num_nodes=2, node_capacity=1.0)
    with pytest.raises(DomainError):
        run_simulation(
            [JobSpec(1, 0.0, 3, 10.0)], RedundantNone(), small, SimConfig(num_jobs=1)
        )


def test_records_export_round_trip(tmp_path, paper_params):
    from stragglerlab.simulator import export_records

    lam = lambda_for_offered_load(0.4, paper_params)
    jobs = generate_workload(paper_params.with_arrival_rate(lam), 200, RngStream(62))
    m = run_simulation(jobs, RedundantNone(), paper_params, SimConfig(num_jobs=200, seed=63))
    path = tmp_path / "records.csv"
    export_records(m.records, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "job_id,arrival,dispatch,finish,k,n,b,relaunched,slowdown"
    assert len(lines) == 201
