"""stragglerlab: simulation and approximate analysis of straggler-mitigation
scheduling (coded redundancy, straggler relaunch, and a learned scheduler)
for Master-Worker compute clusters."""

from . import analysis, cli, policies, rl, simulator, specfn, stochastic, workload

__all__ = [
    "analysis",
    "cli",
    "policies",
    "rl",
    "simulator",
    "specfn",
    "stochastic",
    "workload",
]
