"""Experiment driver: problem construction, round loop, metrics and traces."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import algorithms as alg
from . import dataio, kernels, theory
from .algorithms import AlgoConfig
from .errors import ConfigError, CpxError, TheoryViolation
from .objectives import FederatedProblem

log = logging.getLogger(__name__)

PROBLEM_KINDS = ("synth-ls", "synth-softmax", "mnist", "fashion-mnist")
TRACE_HEADER = ("round", "gap", "kkt_grad", "kkt_cons", "kkt_dual", "Q", "down_vecs", "up_vecs", "wall_ns")
BYTES_PER_ENTRY = 8


@dataclass(frozen=True)
class ProblemSpec:
    """Which problem to build.

    For ``synth-ls``: ``clients``, ``rows`` and ``dim`` are ``m``, ``n`` and
    ``d``. For ``synth-softmax``: one client per class, ``rows`` samples per
    class and ``dim`` raw features. Dataset problems use ``data_dir`` (or
    ``CPX_DATA_DIR``) and need ``clients == 10``.
    """

    kind: str = "synth-ls"
    clients: int = 25
    rows: int = 200
    dim: int = 20
    noise_std: float = 0.5
    rank: int | None = None
    batch: int = 300
    regularizer: float | None = None  # None: 1e-2 for synth-softmax, 0 for datasets
    data_dir: str | None = None

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ConfigError(f"unknown problem {self.kind!r}; choose from {', '.join(PROBLEM_KINDS)}")
        if min(self.clients, self.rows, self.dim, self.batch) < 1:
            raise ConfigError("clients, rows, dim and batch must be at least 1")


@dataclass(frozen=True)
class RunConfig:
    algo: AlgoConfig
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    rounds: int = 100
    seed: int = 0
    metrics_every: int = 1
    theory_checks: bool = False
    theta: float = 0.5
    phi: float = 0.5

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.metrics_every < 1:
            raise ConfigError(f"metrics_every must be >= 1, got {self.metrics_every}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def to_dict(self):
        d = asdict(self)
        d["algo"] = self.algo.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown run fields: {sorted(unknown)}")
        d["algo"] = AlgoConfig.from_dict(d["algo"])
        if "problem" in d:
            d["problem"] = ProblemSpec(**d["problem"])
        return cls(**d)


@dataclass
class RoundTrace:
    round: int
    gap: float | None
    kkt_grad: float
    kkt_cons: float
    kkt_dual: float
    Q: float | None
    down_vecs: int
    up_vecs: int
    wall_ns: int

    def row(self):
        def fmt(v):
            return "" if v is None else repr(v)

        return [fmt(getattr(self, name)) for name in TRACE_HEADER]


@dataclass
class TrafficLedger:
    dim: int
    down_vecs: int = 0
    up_vecs: int = 0

    @property
    def down_bytes(self):
        return self.down_vecs * self.dim * BYTES_PER_ENTRY

    @property
    def up_bytes(self):
        return self.up_vecs * self.dim * BYTES_PER_ENTRY

    def record(self, m, messages):
        self.down_vecs += m * len(messages.down)
        self.up_vecs += m * len(messages.up)

    def totals(self):
        return {
            "down_vecs": self.down_vecs,
            "up_vecs": self.up_vecs,
            "down_bytes": self.down_bytes,
            "up_bytes": self.up_bytes,
        }


def account_traffic(method, m, d=None, K=None):
    """Closed-form per-round ``(down_vectors, up_vectors)`` of a method.

    ``d`` and ``K`` do not change the counts; payloads are ``d``-vectors and
    local steps are free.
    """
    per_client = {
        "fedave": (1, 1),
        "pdmm_exact": (1, 1),
        "fedsplit": (1, 1),
        "fedsplit_inexact": (1, 1),
        "gpdmm": (1, 1),
        "agpdmm": (2, 1),
        "agpdmm_variant": (2, 1),
        "scaffold": (2, 2),
    }
    if method not in per_client:
        raise ConfigError(f"unknown method {method!r}")
    down, up = per_client[method]
    return down * m, up * m


@dataclass
class RunResult:
    state: object
    traces: list
    summary: dict
    problem: object = field(repr=False, default=None)

    def __iter__(self):
        yield self.state
        yield self.traces


def build_problem(spec: ProblemSpec, seed: int):
    """Construct the federated problem, with certified optimum when solvable."""
    if spec.kind == "synth-ls":
        problem, _ = dataio.gen_synthetic_ls(
            dataio.SyntheticLsSpec(m=spec.clients, n=spec.rows, d=spec.dim, noise_std=spec.noise_std,
                                   seed=seed, rank=spec.rank)
        )
        return problem
    if spec.kind == "synth-softmax":
        return dataio.gen_synthetic_softmax(
            num_classes=spec.clients,
            per_class=spec.rows,
            num_features=spec.dim,
            batch_size=min(spec.batch, spec.rows),
            regularizer=1e-2 if spec.regularizer is None else spec.regularizer,
            seed=seed,
        )
    train = dataio.load_dataset(spec.kind, "train", spec.data_dir)
    test = dataio.load_dataset(spec.kind, "test", spec.data_dir)
    clients = dataio.partition_by_class(
        train, spec.clients, batch_size=spec.batch, regularizer=spec.regularizer or 0.0
    )
    return FederatedProblem(clients, validation=(dataio.image_features(test), test.labels))


def client_view(state, problem, cfg):
    """Client primal iterates and dual estimates used for KKT residuals.

    PDMM family: ``(xbar_i, lambda_{i|s})``. FedSplit family:
    ``(x_i, (x_i - z_{i|s}) / gamma)``. SCAFFOLD: ``(x_i^K, c_i - c)``.
    FedAve: ``(x_i^K, grad f_i(x_s))``.
    """
    if isinstance(state, alg.PdmmState):
        return state.xbar, state.lam_c
    if isinstance(state, alg.FedSplitState):
        return state.x, alg.fedsplit_pdmm_inverse(state.x, state.z_c, cfg.gamma)
    if isinstance(state, alg.ScaffoldState):
        return state.x, state.c_i - state.c[None, :]
    return state.x, problem.client_grads(np.tile(state.xs, (problem.m, 1)))


def accuracy(problem, x):
    if problem.validation is None:
        return None
    X, y = problem.validation
    return float(np.mean(problem.clients[0].predict(x, X) == y))


def _theorem1_params(problem, cfg, config):
    if not (config.theory_checks and cfg.method == "gpdmm" and cfg.lambda_update == "average"):
        return None
    if not (problem.is_quadratic and problem.modulus > 0 and problem.optimum is not None):
        return None
    return theory.rate_params(cfg.eta, cfg.rho, problem.lipschitz, problem.modulus, config.theta, config.phi)


def run_experiment(config: RunConfig, problem=None) -> RunResult:
    """Run ``config.rounds`` rounds and collect traces every ``metrics_every`` rounds.

    PDMM- and FedSplit-family runs check after every server step that the
    server duals sum to zero (relative tolerance 1e-9) and raise
    :class:`TheoryViolation` otherwise. With ``theory_checks`` on a
    strongly convex least-squares GPDMM run (average dual update) also
    tracks the Lyapunov value and raises if ``Q^{r+1} > beta Q^r + 1e-12``.
    """
    cfg = config.algo.resolved()
    if problem is None:
        problem = build_problem(config.problem, config.seed)
    state = alg.init_state(cfg.method, problem)
    ledger = TrafficLedger(problem.dim)
    rate = _theorem1_params(problem, cfg, config)
    check_duals = cfg.method in alg.PDMM_FAMILY or cfg.method in alg.FEDSPLIT_FAMILY
    traces = []
    prev_Q = None
    first_Q = None
    max_ratio = 0.0
    max_dual_sum = 0.0
    for r in range(1, config.rounds + 1):
        t0 = time.perf_counter_ns()
        try:
            new = alg.run_round(state, problem, cfg)
        except CpxError as exc:
            exc.round_index = r
            raise
        except (ArithmeticError, np.linalg.LinAlgError) as exc:
            raise CpxError(f"round {r}: {exc}") from exc
        wall = time.perf_counter_ns() - t0
        ledger.record(problem.m, new.messages)
        if check_duals:
            ok, resid = alg.dual_sum_ok(new, gamma=cfg.gamma)
            max_dual_sum = max(max_dual_sum, resid)
            if not ok:
                raise TheoryViolation(f"round {r}: server duals sum to {resid:.3e}", r)
        Q = None
        if rate is not None:
            Q = theory.lyapunov_Q(state.x, new.xbar, new.lam_c, problem.optimum, cfg.eta, cfg.rho, cfg.K,
                                  rate.theta, problem.modulus, rate.gamma2, round=r).Q
            if prev_Q is not None:
                if Q > rate.beta * prev_Q + 1e-12:
                    raise TheoryViolation(
                        f"round {r}: Q = {Q:.6e} exceeds beta * Q_prev = {rate.beta * prev_Q:.6e}", r
                    )
                # ratios at the rounding floor carry no information
                if prev_Q > 1e-10 * first_Q:
                    max_ratio = max(max_ratio, Q / prev_Q)
            else:
                first_Q = Q
            prev_Q = Q
        state = new
        if r % config.metrics_every == 0:
            xs_c, lam_c = client_view(state, problem, cfg)
            kkt = theory.kkt_residual(state.xs, xs_c, lam_c, problem)
            gap = problem.gap(state.xs) if problem.optimum is not None else None
            traces.append(RoundTrace(r, gap, *kkt, Q, ledger.down_vecs, ledger.up_vecs, wall))
    summary = {
        "config": config.to_dict(),
        "resolved": {"rho": cfg.rho, "gamma": cfg.gamma},
        "backend": kernels.BACKEND,
        "final_gap": problem.gap(state.xs) if problem.optimum is not None else None,
        "final_objective": problem.total(state.xs),
        "final_accuracy": accuracy(problem, state.xs),
        "traffic": ledger.totals(),
        "traffic_per_round": list(account_traffic(cfg.method, problem.m)),
        "max_server_dual_sum": max_dual_sum if check_duals else None,
    }
    if rate is not None:
        summary["theorem1"] = {"beta": rate.beta, "max_ratio": max_ratio, "gamma1": rate.gamma1,
                               "gamma2": rate.gamma2}
    return RunResult(state, traces, summary, problem)


def write_trace(traces, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for t in traces:
            w.writerow(t.row())


def read_trace(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_outputs(result: RunResult, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(result.traces, out / "trace.csv")
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True))
    log.info("wrote %s", out)
    return out
