"""
Performance tests: per-worker state growth for limited-memory and dense workers
"""
import numpy as np
import pytest

from ldqn.core.baselines import DenseWorkerState
from ldqn.core.memory_manager import StateMemoryMonitor
from ldqn.core.objectives import random_quadratic_shards
from ldqn.core.protocol_master import master_init
from ldqn.core.protocol_worker import LimitedMemoryWorker
from ldqn.core.simulator import DelayModel, StopRule, run


def _peak_tuple_bytes(workers, updates=40):
    monitor = StateMemoryMonitor()
    master = master_init(np.zeros(workers[0].d), 0.8, workers)
    run(workers, master, DelayModel("uniform-integer", {"low": 1, "high": 3}, seed=0),
        StopRule(max_updates=updates), keep_iterates=False,
        observers=[lambda state, worker_list, record: monitor.observe_all(worker_list)])
    return monitor.summary()


@pytest.mark.performance
class TestMemoryContract:
    @pytest.mark.parametrize("d", [100, 200])
    def test_ldqn_tuple_storage_linear_in_m(self, d):
        shards = random_quadratic_shards(2, d, 1.0, 2.0, seed=0)
        peaks = {}
        for m in (10, 20):
            workers = [LimitedMemoryWorker(i + 1, s, np.zeros(d), 2.0, m) for i, s in enumerate(shards)]
            peaks[m] = _peak_tuple_bytes(workers)["worker_peak_tuple_bytes"]["1"]
        assert peaks[20] / peaks[10] == pytest.approx(2.0, rel=0.01)

    def test_ldqn_state_has_no_dense_matrix(self):
        d = 200
        shards = random_quadratic_shards(2, d, 1.0, 2.0, seed=0)
        workers = [LimitedMemoryWorker(i + 1, s, np.zeros(d), 2.0, 20) for i, s in enumerate(shards)]
        summary = _peak_tuple_bytes(workers)
        assert summary["max_worker_peak_bytes"] < d * d * 8 / 4

    def test_daveqn_state_quadratic_in_d(self):
        peaks = {}
        for d in (100, 200):
            shards = random_quadratic_shards(2, d, 1.0, 2.0, seed=0)
            workers = [DenseWorkerState(i + 1, s, np.zeros(d), 2.0) for i, s in enumerate(shards)]
            peaks[d] = _peak_tuple_bytes(workers)["worker_peak_tuple_bytes"]["1"]
        assert peaks[200] / peaks[100] == pytest.approx(4.0, rel=0.01)
