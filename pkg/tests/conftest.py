import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stragglerlab.workload import WorkloadParams


@pytest.fixture(scope="session")
def paper_params():
    """The default cluster configuration used throughout the experiments."""
    return WorkloadParams(
        num_nodes=20, node_capacity=10.0, k_max=10, b_min=10.0, beta=3.0, alpha=3.0
    )
