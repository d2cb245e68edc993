import json

import numpy as np
import pytest

from cpx import algorithms as alg
from cpx import runtime, theory
from cpx.algorithms import AlgoConfig
from cpx.dataio import write_idx
from cpx.errors import ConfigError, TheoryViolation, UnsupportedMethodError
from cpx.runtime import ProblemSpec, RunConfig, account_traffic, run_experiment

SMALL = ProblemSpec(clients=5, rows=20, dim=4)


def cfg(method="gpdmm", eta=0.02, K=3, rounds=100, **kw):
    return RunConfig(AlgoConfig(method, eta, K), problem=SMALL, rounds=rounds, **kw)


def test_trace_row_count():
    assert len(run_experiment(cfg(rounds=100)).traces) == 100
    res = run_experiment(cfg(rounds=100, metrics_every=10))
    assert [t.round for t in res.traces] == list(range(10, 101, 10))


def strip_wall(traces):
    return [{k: v for k, v in vars(t).items() if k != "wall_ns"} for t in traces]


@pytest.mark.parametrize("method", alg.METHODS)
def test_runs_are_deterministic(method):
    a = run_experiment(cfg(method, rounds=30))
    b = run_experiment(cfg(method, rounds=30))
    assert strip_wall(a.traces) == strip_wall(b.traces)
    np.testing.assert_array_equal(a.state.xs, b.state.xs)


def test_gpdmm_desk_progress(desk_ls):
    config = RunConfig(AlgoConfig("gpdmm", 1e-2 / desk_ls.lipschitz, 5), rounds=500)
    traces = run_experiment(config, problem=desk_ls).traces
    assert traces[499].gap * 1e3 <= traces[49].gap


@pytest.mark.parametrize("method", alg.METHODS)
def test_gap_nonnegative(method, small_ls):
    res = run_experiment(RunConfig(AlgoConfig(method, 0.5 / small_ls.lipschitz, 3), rounds=80), problem=small_ls)
    assert min(t.gap for t in res.traces) >= -1e-9


def test_account_traffic_examples():
    assert account_traffic("gpdmm", 25) == (25, 25)
    assert account_traffic("agpdmm", 25) == (50, 25)
    assert account_traffic("scaffold", 25) == (50, 50)
    assert account_traffic("fedave", 25) == (25, 25)
    with pytest.raises(ConfigError):
        account_traffic("nadam", 3)


@pytest.mark.parametrize("method", alg.METHODS)
@pytest.mark.parametrize("rounds", [1, 13])
def test_ledger_matches_closed_form(method, rounds):
    res = run_experiment(cfg(method, rounds=rounds))
    down, up = account_traffic(method, SMALL.clients)
    t = res.summary["traffic"]
    assert (t["down_vecs"], t["up_vecs"]) == (rounds * down, rounds * up)
    assert t["down_bytes"] == rounds * down * SMALL.dim * 8
    downs = [tr.down_vecs for tr in res.traces]
    assert downs == sorted(downs)


def test_inexact_init_does_not_change_traffic():
    a = run_experiment(cfg("fedsplit_inexact", rounds=5))
    b = run_experiment(RunConfig(AlgoConfig("fedsplit_inexact", 0.02, 3, inexact_init="xs"), problem=SMALL, rounds=5))
    assert a.summary["traffic"] == b.summary["traffic"]


def test_theory_checks_attach_q(desk_ls):
    config = RunConfig(AlgoConfig("gpdmm", 0.9 / desk_ls.lipschitz, 5), rounds=60, theory_checks=True)
    res = run_experiment(config, problem=desk_ls)
    assert all(t.Q is not None and t.Q >= 0 for t in res.traces)
    t1 = res.summary["theorem1"]
    assert 0 < t1["max_ratio"] <= t1["beta"] < 1
    # other methods carry no Q
    res = run_experiment(RunConfig(AlgoConfig("agpdmm", 0.9 / desk_ls.lipschitz, 5), rounds=5, theory_checks=True),
                         problem=desk_ls)
    assert all(t.Q is None for t in res.traces)


def test_theory_violation_reports_round(desk_ls, monkeypatch):
    real = theory.rate_params

    def too_tight(*a, **kw):
        rp = real(*a, **kw)
        return theory.RateParams(rp.theta, rp.phi, rp.gamma1, rp.gamma2, 1e-6)

    monkeypatch.setattr(theory, "rate_params", too_tight)
    config = RunConfig(AlgoConfig("gpdmm", 0.9 / desk_ls.lipschitz, 5), rounds=10, theory_checks=True)
    with pytest.raises(TheoryViolation) as info:
        run_experiment(config, problem=desk_ls)
    assert info.value.round_index == 2


def test_kernel_error_carries_round(desk_softmax):
    with pytest.raises(UnsupportedMethodError) as info:
        run_experiment(RunConfig(AlgoConfig("pdmm_exact", 0.1, 1), rounds=3), problem=desk_softmax)
    assert info.value.round_index == 1


def test_dual_sum_tracked_for_pdmm_family():
    for method in alg.PDMM_FAMILY:
        res = run_experiment(cfg(method, rounds=40))
        assert res.summary["max_server_dual_sum"] is not None
    assert run_experiment(cfg("scaffold", rounds=3)).summary["max_server_dual_sum"] is None


def test_outputs(tmp_path):
    res = run_experiment(cfg(rounds=7))
    runtime.write_outputs(res, tmp_path)
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "round,gap,kkt_grad,kkt_cons,kkt_dual,Q,down_vecs,up_vecs,wall_ns"
    assert len(lines) == 8
    row = runtime.read_trace(tmp_path / "trace.csv")[0]
    assert row["Q"] == "" and float(row["gap"]) == res.traces[0].gap
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert RunConfig.from_dict(summary["config"]) == cfg(rounds=7)
    assert summary["traffic"]["up_vecs"] == 7 * SMALL.clients


def test_config_validation():
    with pytest.raises(ConfigError):
        cfg(rounds=0)
    with pytest.raises(ConfigError):
        cfg(metrics_every=0)
    with pytest.raises(ConfigError):
        ProblemSpec(kind="cifar")
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"algo": {"method": "gpdmm", "eta": 0.1}, "nope": 1})


def test_synthetic_softmax_run():
    spec = ProblemSpec(kind="synth-softmax", clients=3, rows=30, dim=4, batch=10)
    res = run_experiment(RunConfig(AlgoConfig("agpdmm", 0.05, 5), problem=spec, rounds=150))
    assert res.summary["final_gap"] < res.traces[0].gap
    assert res.summary["final_accuracy"] is None


def fake_image_dataset(root, per_class=12, seed=0):
    """Ten classes of 4x4 images whose bright pixel encodes the label."""
    rng = np.random.default_rng(seed)
    sub = root / "mnist"
    sub.mkdir()
    for split, prefix, n in (("train", "train", per_class), ("test", "t10k", 4)):
        labels = np.repeat(np.arange(10), n).astype(np.uint8)
        rng.shuffle(labels)
        images = rng.integers(0, 40, size=(labels.size, 4, 4)).astype(np.uint8)
        images.reshape(labels.size, 16)[np.arange(labels.size), labels] = 255
        write_idx(sub / f"{prefix}-images-idx3-ubyte", sub / f"{prefix}-labels-idx1-ubyte", images, labels)


def test_dataset_pipeline(tmp_path):
    fake_image_dataset(tmp_path)
    spec = ProblemSpec(kind="mnist", clients=10, batch=6, data_dir=str(tmp_path))
    res = run_experiment(RunConfig(AlgoConfig("agpdmm", 0.5, 5), problem=spec, rounds=60))
    assert res.summary["final_gap"] is None
    assert res.traces[0].gap is None
    assert res.summary["final_accuracy"] >= 0.9
    assert res.summary["traffic"]["down_vecs"] == 60 * 20
