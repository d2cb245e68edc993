"""Hermetic numeric checks behind ``cpx verify``.

Every check builds its own synthetic problems, so no dataset files are
needed. Each returns a :class:`Check`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import algorithms as alg
from . import theory
from .algorithms import AlgoConfig
from .dataio import SyntheticLsSpec, gen_synthetic_ls, gen_synthetic_softmax
from .runtime import RunConfig, account_traffic, run_experiment


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _desk_ls(seed=0, **kw):
    spec = dict(m=10, n=60, d=8, seed=seed)
    spec.update(kw)
    return gen_synthetic_ls(SyntheticLsSpec(**spec))[0]


def lemma1_sweep(seeds=(0, 1), rounds=30, K=5, probes=4):
    """Per-step primal inequality at every inner step of GPDMM runs."""
    worst = np.inf
    worst_convex = np.inf
    for seed in seeds:
        P = _desk_ls(seed)
        L, mu = P.lipschitz, P.modulus
        cfg = AlgoConfig("gpdmm", 0.9 / L, K).resolved()
        rng = np.random.default_rng(seed)
        state = alg.init_state("gpdmm", P)
        for _ in range(rounds):
            path = np.empty((P.m, K + 1, P.dim))
            new = alg.gpdmm_round(state, P, cfg, path=path)
            for i, f in enumerate(P.clients):
                for k in range(K):
                    pts = [path[i, k + 1]] + [P.optimum.x_star + rng.normal(size=P.dim) for _ in range(probes)]
                    for x in pts:
                        args = (f, x, path[i, k], path[i, k + 1], state.xs, state.lam_s[i], cfg.eta, cfg.rho)
                        worst = min(worst, theory.check_lemma1(*args, 0.5, mu, L))
                        worst_convex = min(worst_convex, theory.check_lemma1(*args, 0.0, 0.0, L))
            state = new
    ok = worst >= -1e-9 and worst_convex >= -1e-9
    return Check("lemma1", ok, f"min slack {worst:.3e} (theta=1/2), {worst_convex:.3e} (theta=0, mu=0)")


def lemma3_fuzz(problems=5, draws=2000, seed=0):
    rng = np.random.default_rng(seed)
    worst = np.inf
    for p in range(problems):
        P = _desk_ls(100 + p, m=6, n=30, d=5)
        for _ in range(draws):
            scale = 10.0 ** rng.uniform(-4, 1)
            X = P.optimum.x_star + scale * rng.normal(size=(P.m, P.dim))
            worst = min(worst, theory.lemma3_gap(X, P))
    return Check("lemma3", worst >= -1e-9, f"min gap {worst:.3e} over {problems * draws} draws")


def theorem1_contraction(seeds=(0, 1, 2), rounds=200, K=5):
    worst = -np.inf
    detail = []
    for seed in seeds:
        P = _desk_ls(seed)
        cfg = AlgoConfig("gpdmm", 0.9 / P.lipschitz, K)
        try:
            res = run_experiment(RunConfig(cfg, rounds=rounds, theory_checks=True), problem=P)
        except theory.ConstraintError as exc:
            return Check("theorem1", False, str(exc))
        except alg.CpxError as exc:
            return Check("theorem1", False, f"seed {seed}: {exc}")
        t1 = res.summary["theorem1"]
        worst = max(worst, t1["max_ratio"] - t1["beta"])
        detail.append(f"{t1['max_ratio']:.3f}/{t1['beta']:.3f}")
    return Check("theorem1", worst <= 1e-12, "max ratio / beta per seed: " + ", ".join(detail))


def theorem2_certificate(rounds=2000, K=3, seed=0):
    P = _desk_ls(seed, m=6, n=30, d=8, rank=4)
    L = P.lipschitz
    eta = 0.9 / L
    cfg = AlgoConfig("gpdmm", eta, K).resolved()
    state = alg.init_state("gpdmm", P)
    x0 = state.x.copy()
    xbars = np.empty((rounds, P.m, P.dim))
    lams = np.empty_like(xbars)
    for r in range(rounds):
        state = alg.gpdmm_round(state, P, cfg)
        xbars[r] = state.xbar
        lams[r] = state.lam_c
    g1 = theory.gamma1(eta, L, 0.0)
    cert = theory.sublinear_certificate(xbars, lams, P, P.optimum, g1, eta, rho=cfg.rho, x0=x0, K=K)
    return Check(
        "theorem2",
        cert.passed,
        f"max R*gap {cert.series[:, 1].max():.3e}, bound {cert.bound:.3e}, relative slope {cert.rel_slope:.2e}",
    )


def _xs_trace(problem, cfg, rounds):
    state = alg.init_state(cfg.method, problem)
    out = np.empty((rounds, problem.dim))
    for r in range(rounds):
        state = alg.run_round(state, problem, cfg)
        out[r] = state.xs
    return out


def k1_collapse(rounds=200):
    """FedAve, AGPDMM with rho = 1/eta and SCAFFOLD coincide at K = 1."""
    worst = 0.0
    fixtures = {"quadratic": _desk_ls(0), "softmax": gen_synthetic_softmax()}
    for P in fixtures.values():
        eta = 0.5 / P.lipschitz
        ref = _xs_trace(P, AlgoConfig("fedave", eta, 1), rounds)
        for cfg in (AlgoConfig("agpdmm", eta, 1, rho=1.0 / eta), AlgoConfig("scaffold", eta, 1, eta_g=1.0)):
            worst = max(worst, float(np.max(np.abs(_xs_trace(P, cfg, rounds) - ref))))
    return Check("k1_collapse", worst <= 1e-12, f"max |x_s difference| {worst:.3e}")


def pdmm_fedsplit_equivalence(problems=10, rounds=100):
    worst = 0.0
    rng = np.random.default_rng(7)
    for p in range(problems):
        P = _desk_ls(200 + p, m=5, n=20, d=6)
        gamma = float(10.0 ** rng.uniform(-3, -1))
        a = _xs_trace(P, AlgoConfig("pdmm_exact", 1.0, 1, rho=1.0 / gamma), rounds)
        b = _xs_trace(P, AlgoConfig("fedsplit", 1.0, 1, gamma=gamma), rounds)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return Check("pdmm_fedsplit", worst <= 1e-10, f"max |x_s difference| {worst:.3e}")


def traffic_exactness(rounds=7):
    P = _desk_ls(0, m=4, n=20, d=5)
    bad = []
    for method in alg.METHODS:
        res = run_experiment(RunConfig(AlgoConfig(method, 0.5 / P.lipschitz, 2), rounds=rounds), problem=P)
        down, up = account_traffic(method, P.m)
        if (res.summary["traffic"]["down_vecs"], res.summary["traffic"]["up_vecs"]) != (rounds * down, rounds * up):
            bad.append(method)
    return Check("traffic", not bad, "all methods match closed form" if not bad else f"mismatch: {bad}")


def polarization(draws=200, seed=0):
    rng = np.random.default_rng(seed)
    counts = {"printed": 0, "standard": 0}
    for _ in range(draws):
        ys = rng.normal(size=(4, 6))
        for k, v in theory.polarization_readings(*ys).items():
            counts[k] += v
    return Check(
        "polarization",
        counts["standard"] == draws,
        f"standard reading holds {counts['standard']}/{draws}, printed reading {counts['printed']}/{draws}",
    )


CHECKS = (
    lemma1_sweep,
    lemma3_fuzz,
    theorem1_contraction,
    theorem2_certificate,
    k1_collapse,
    pdmm_fedsplit_equivalence,
    traffic_exactness,
    polarization,
)


def run_all():
    results = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for check in CHECKS:
            results.append(check())
    return results
