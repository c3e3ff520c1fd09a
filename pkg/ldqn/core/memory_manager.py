"""
Memory Accounting
Per-worker structural state size and process memory for the run summary
"""

from typing import Dict, Any
from datetime import datetime
import logging

import psutil

logger = logging.getLogger(__name__)


class StateMemoryMonitor:
    """Tracks peak worker state size (numpy nbytes) and process RSS"""

    def __init__(self):
        self.process = psutil.Process()
        self.peak_state: Dict[int, int] = {}
        self.peak_tuples: Dict[int, int] = {}
        self.peak_rss = 0
        self.history = []

    def observe(self, worker) -> int:
        """Record the current state size of one worker"""
        nbytes = int(worker.state_nbytes())
        tuple_bytes = int(worker.tuple_nbytes())
        wid = worker.worker_id
        if nbytes > self.peak_state.get(wid, 0):
            self.peak_state[wid] = nbytes
        if tuple_bytes > self.peak_tuples.get(wid, 0):
            self.peak_tuples[wid] = tuple_bytes
        return nbytes

    def observe_all(self, workers) -> None:
        for worker in workers:
            self.observe(worker)

    def process_rss(self) -> int:
        """Current resident set size of this process"""
        rss = self.process.memory_info().rss
        if rss > self.peak_rss:
            self.peak_rss = rss
        return rss

    def log_memory_usage(self, context: str = "") -> Dict[str, Any]:
        """Log current memory usage"""
        rss = self.process_rss()
        entry = {
            "context": context,
            "rss": rss,
            "worker_peak_max": max(self.peak_state.values(), default=0),
            "timestamp": datetime.now().isoformat()
        }
        self.history.append(entry)
        if len(self.history) > 100:
            self.history = self.history[-100:]
        logger.debug(f"Memory [{context}]: rss={rss / 1024 / 1024:.1f}MB, "
                     f"worker peak={entry['worker_peak_max']} bytes")
        return entry

    def summary(self) -> Dict[str, Any]:
        """Memory usage summary for the diagnostics report"""
        self.process_rss()
        return {
            "worker_peak_bytes": {str(k): v for k, v in sorted(self.peak_state.items())},
            "worker_peak_tuple_bytes": {str(k): v for k, v in sorted(self.peak_tuples.items())},
            "max_worker_peak_bytes": max(self.peak_state.values(), default=0),
            "process_peak_rss": self.peak_rss,
        }
