"""
End-to-end protocol checks: secant identity, inverse maintenance, delay and
epoch arithmetic, the linear rate on exact-Hessian quadratics, the DAve-QN
equivalence window and the desk-scale comparison against gradient descent
"""
import numpy as np
import pytest

from ldqn.core.baselines import DenseWorkerState, FixedEstimateWorker, run_sync_gd
from ldqn.core.data import generate_synthetic, partition
from ldqn.core.diagnostics import (
    AssumptionMonitor, certify, fit_epoch_rate, stepsize_window
)
from ldqn.core.linalg_memory import materialize
from ldqn.core.objectives import (
    FiniteSumObjective, global_constants, random_quadratic_shards, reference_solution
)
from ldqn.core.protocol_master import master_init, master_step
from ldqn.core.protocol_worker import LimitedMemoryWorker
from ldqn.core.reporting import RunData, compare_runs
from ldqn.core.simulator import (
    DelayModel, StopRule, Trace, compute_epochs, random_bounded_history, run
)
from ldqn.core.threaded_runtime import run_threaded
from ldqn.schemas.run_schemas import SynthConfig


def _ldqn_workers(shards, gamma0, memory, fixed_gamma=False):
    return [LimitedMemoryWorker(i + 1, s, np.zeros(s.d), gamma0, memory, fixed_gamma)
            for i, s in enumerate(shards)]


@pytest.mark.integration
class TestSecantIdentity:
    def test_secant_over_random_steps(self):
        gen = np.random.default_rng(2024)
        shards = random_quadratic_shards(10, 5, 0.5, 3.0, seed=1)
        shards += random_quadratic_shards(10, 20, 1.0, 10.0, seed=2)
        data = generate_synthetic(SynthConfig(N=600, d=15, seed=3))
        shards += partition(data, 30, seed=4, lam=0.01)
        assert len(shards) * 10 == 500

        checked = 0
        for shard in shards:
            worker = LimitedMemoryWorker(1, shard, np.zeros(shard.d), gamma0=1.0, memory_size=10)
            for _ in range(10):
                z, grad_z = worker.z.copy(), worker.grad_z.copy()
                x = z + gen.standard_normal(shard.d) * gen.uniform(0.01, 1.0)
                msg = worker.step(x)
                if msg.skipped:
                    continue
                s, y = x - z, shard.gradient(x) - grad_z
                B = materialize(worker.gamma, worker.memory, shard.d)
                assert np.linalg.norm(B @ s - y) <= 1e-8 * np.linalg.norm(y)
                checked += 1
        assert checked >= 250


@pytest.mark.integration
class TestInverseMaintenance:
    def test_inverse_and_ledgers_match_recomputation(self):
        shards = random_quadratic_shards(3, 10, 1.0, 5.0, seed=11)
        workers = _ldqn_workers(shards, gamma0=5.0, memory=5)
        master = master_init(np.zeros(10), 0.05, workers)
        worst = {"inverse": 0.0, "u": 0.0, "g": 0.0}

        def check(state, worker_list, record):
            if record.t % 50:
                return
            dense = [w.dense_estimate() for w in worker_list]
            inv = np.linalg.inv(sum(dense))
            worst["inverse"] = max(worst["inverse"],
                                   np.linalg.norm(state.B_inv - inv) / np.linalg.norm(inv))
            u = sum(B @ w.z for B, w in zip(dense, worker_list))
            g = sum(w.shard.gradient(w.z) for w in worker_list)
            worst["u"] = max(worst["u"], np.linalg.norm(state.u - u) / max(1.0, np.linalg.norm(u)))
            worst["g"] = max(worst["g"], np.linalg.norm(state.g - g) / max(1.0, np.linalg.norm(g)))

        run(workers, master, DelayModel("uniform-integer", {"low": 1, "high": 4}, seed=5),
            StopRule(max_updates=1000), observers=[check])
        assert master.t == 1000
        assert worst["inverse"] <= 1e-6
        assert worst["u"] <= 1e-8
        assert worst["g"] <= 1e-8


@pytest.mark.integration
class TestEpochArithmetic:
    def test_bounded_delay_epoch_length(self):
        gen = np.random.default_rng(0)
        for seed in range(100):
            d = int(gen.integers(2, 7))
            n = int(gen.integers(2, d + 2))
            epochs = compute_epochs(random_bounded_history(n, d, 300, seed=seed))
            gaps = np.diff(epochs.starts)
            assert epochs.complete_epochs > 1
            # the first epoch also waits for every first reply
            assert gaps[0] <= 2 * d + 2
            assert max(gaps[1:]) <= 2 * d + 1


@pytest.mark.integration
class TestLinearRate:
    def test_exact_hessian_contraction_per_epoch(self):
        n, d_max = 4, 3
        shards = random_quadratic_shards(n, 8, 1.0, 2.0, seed=21)
        x_star = shards[0].x_star
        objective = FiniteSumObjective(shards)
        constants = global_constants(shards)
        workers = [FixedEstimateWorker(i + 1, s, np.zeros(8)) for i, s in enumerate(shards)]

        monitor = AssumptionMonitor(interval=1)
        monitor.snapshot(workers)
        quality, spectrum = monitor.quality(), monitor.spectrum()
        eta = stepsize_window(quality.eps_d, quality.eps_u, constants.kappa).midpoint
        certification = certify(quality, constants, eta, n, spectrum)
        assert certification.certified
        assert certification.rho_theory < 1.0

        history = random_bounded_history(n, d_max, 150, seed=8)
        master = master_init(np.zeros(8), eta, workers)
        trace = Trace(master.x, f_star=0.0, x_star=x_star)
        trace.append(0, 1, 0.0, 0, master.x, float(np.linalg.norm(objective.gradient(master.x))))
        pending = {w.worker_id: master.x.copy() for w in workers}
        schedule = sorted((int(t), w) for w in history.workers for t in history.comms(w))
        for t, wid in schedule:
            master, record = master_step(master, workers[wid - 1].step(pending[wid]))
            assert record.t == t
            pending[wid] = master.x.copy()
            trace.append(t, 1, float(t), wid, master.x, record.grad_norm)

        epochs = compute_epochs(history)
        rate = fit_epoch_rate(trace, epochs, x_star, rho_theory=certification.rho_theory,
                              certified=True, window=certification.window)
        assert rate.epochs_used >= 10
        assert rate.violations == []
        assert rate.rho_fitted <= certification.rho_theory


@pytest.mark.integration
class TestDaveqnEquivalence:
    def test_fixed_gamma_matches_dense_bfgs(self):
        shards = random_quadratic_shards(3, 10, 1.0, 4.0, seed=31)
        objective = FiniteSumObjective(shards)
        traces = []
        for kind in ("ldqn", "daveqn"):
            if kind == "ldqn":
                workers = _ldqn_workers(shards, gamma0=4.0, memory=60, fixed_gamma=True)
            else:
                workers = [DenseWorkerState(i + 1, s, np.zeros(10), 4.0) for i, s in enumerate(shards)]
            master = master_init(np.zeros(10), 0.8, workers)
            trace, _ = run(workers, master, DelayModel("uniform-integer", {"low": 1, "high": 3}, seed=2),
                           StopRule(max_updates=50), objective=objective)
            traces.append(trace.iterate_array())
        np.testing.assert_allclose(traces[0], traces[1], rtol=0, atol=1e-8)


@pytest.mark.integration
class TestComparisons:
    def test_ldqn_beats_gd_on_ill_conditioned_quadratic(self):
        shards = random_quadratic_shards(4, 10, 1.0, 1e4, seed=41)
        objective = FiniteSumObjective(shards)
        x_star, f_star, _ = reference_solution(objective)
        stop = StopRule(max_updates=4000, subopt_tol=1e-8)

        gd = run_sync_gd(objective, np.zeros(10), 1.0 / 1e4, stop, f_star=f_star, x_star=x_star)
        workers = _ldqn_workers(shards, gamma0=1e4, memory=10)
        master = master_init(np.zeros(10), 0.8, workers)
        ldqn, _ = run(workers, master, DelayModel("uniform-integer", {"low": 1, "high": 3}, seed=1),
                      stop, objective=objective, f_star=f_star, x_star=x_star)

        table = compare_runs([RunData.from_trace("ldqn", ldqn), RunData.from_trace("gd", gd)],
                             tol=1e-8)["time_to_tolerance"]
        ldqn_epochs, gd_epochs = table.loc["ldqn", "epochs_to_tol"], table.loc["gd", "epochs_to_tol"]
        assert not np.isnan(ldqn_epochs)
        assert np.isnan(gd_epochs) or ldqn_epochs < gd_epochs
        assert ldqn.stop_reason == "subopt_tol"
        assert np.isfinite(ldqn.to_frame()["suboptimality"]).all()

    @pytest.mark.slow
    def test_desk_scale_synthetic_against_gd(self):
        data = generate_synthetic(SynthConfig(N=8000, d=200, seed=0, lam=0.01))
        shards = partition(data, 8, seed=0, lam=0.01)
        objective = FiniteSumObjective(shards)
        constants = global_constants(shards)
        x_star, f_star, _ = reference_solution(objective)
        tol = 1e-4

        gd = run_sync_gd(objective, np.zeros(200), 1.0 / constants.L,
                         StopRule(max_updates=6000, subopt_tol=tol), f_star=f_star)
        workers = _ldqn_workers(shards, gamma0=constants.L, memory=20)
        master = master_init(np.zeros(200), 0.8, workers)
        ldqn, _ = run(workers, master, DelayModel("uniform-integer", {"low": 1, "high": 4}, seed=3),
                      StopRule(max_updates=8000, subopt_tol=tol), objective=objective, f_star=f_star)

        table = compare_runs([RunData.from_trace("ldqn", ldqn), RunData.from_trace("gd", gd)],
                             tol=tol)["time_to_tolerance"]
        ldqn_epochs, gd_epochs = table.loc["ldqn", "epochs_to_tol"], table.loc["gd", "epochs_to_tol"]
        assert not np.isnan(ldqn_epochs)
        assert np.isnan(gd_epochs) or 2 * ldqn_epochs <= gd_epochs
        assert ldqn.stop_reason == "subopt_tol"


@pytest.mark.integration
class TestThreadedRuntime:
    def test_ledgers_stay_consistent(self, quadratic_shards, quadratic_objective):
        workers = _ldqn_workers(quadratic_shards, gamma0=2.0, memory=5)
        master = master_init(np.zeros(10), 0.8, workers)
        trace, history = run_threaded(workers, master, StopRule(max_updates=200),
                                      objective=quadratic_objective, f_star=0.0)
        assert history.is_complete()
        assert master.t >= 200
        assert trace.rows[-1]["t"] == master.t
        u = sum(w.dense_estimate() @ w.z for w in workers)
        np.testing.assert_allclose(master.u, u, rtol=1e-8, atol=1e-8)
        assert trace.rows[-1]["suboptimality"] < trace.rows[0]["suboptimality"]

    def test_observers_only_see_settled_workers(self, quadratic_shards):
        workers = _ldqn_workers(quadratic_shards, gamma0=2.0, memory=5)
        master = master_init(np.zeros(10), 0.8, workers)
        seen = []

        def check(state, worker_list, record):
            assert record.worker_id in [w.worker_id for w in worker_list]
            for w in worker_list:
                np.testing.assert_allclose(w.u_prev, w.dense_estimate() @ w.z, rtol=1e-8, atol=1e-8)
            seen.append(len(worker_list))

        run_threaded(workers, master, StopRule(max_updates=120), observers=[check])
        assert len(seen) == master.t
        assert all(1 <= k <= len(workers) for k in seen)
