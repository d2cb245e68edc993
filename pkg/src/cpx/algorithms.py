"""Round kernels for the federated optimisers.

Every round function maps ``(state, problem, cfg)`` to a fresh successor
state; inputs are never mutated. The server reduction always sums client
contributions in ascending client index.

Methods
-------
fedave            local gradient steps from ``x_s``, server averages
pdmm_exact        client solves its proximal problem exactly
fedsplit          Peaceman-Rachford splitting in ``z`` variables
fedsplit_inexact  ``K`` gradient steps on the FedSplit client problem
gpdmm             gradient PDMM, warm start from the client's own endpoint
agpdmm            gradient PDMM started from ``x_s`` with both ``x_s`` and
                  the dual sent downlink
agpdmm_variant    inexact FedSplit step started from ``x_s`` (plain step
                  ``eta`` on the proximal objective)
scaffold          drift-corrected local steps with control variates
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import ConfigError, InputError, UnsupportedMethodError

METHODS = (
    "fedave",
    "pdmm_exact",
    "fedsplit",
    "fedsplit_inexact",
    "gpdmm",
    "agpdmm",
    "agpdmm_variant",
    "scaffold",
)
PDMM_FAMILY = ("pdmm_exact", "gpdmm", "agpdmm", "agpdmm_variant")
FEDSPLIT_FAMILY = ("fedsplit", "fedsplit_inexact")


@dataclass(frozen=True)
class AlgoConfig:
    """Hyper-parameters of one optimiser.

    ``rho`` defaults to ``1 / (K * eta)`` and ``gamma`` to ``1 / rho``; call
    :meth:`resolved` to fill them in. Fields a method does not use are kept
    so that configs round-trip unchanged.
    """

    method: str
    eta: float
    K: int = 1
    rho: float | None = None
    gamma: float | None = None
    eta_g: float = 1.0
    inexact_init: str = "z"
    lambda_update: str = "average"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError(f"K must be an integer >= 1, got {self.K}")
        if self.rho is not None and not self.rho > 0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not self.eta_g > 0:
            raise ConfigError(f"eta_g must be positive, got {self.eta_g}")
        if self.inexact_init not in ("z", "xs"):
            raise ConfigError(f"inexact_init must be 'z' or 'xs', got {self.inexact_init!r}")
        if self.lambda_update not in ("average", "recent"):
            raise ConfigError(f"lambda_update must be 'average' or 'recent', got {self.lambda_update!r}")

    def resolved(self) -> AlgoConfig:
        if self.rho is not None and self.gamma is not None:
            return self
        rho = self.rho if self.rho is not None else 1.0 / (self.K * self.eta)
        gamma = self.gamma if self.gamma is not None else 1.0 / rho
        return replace(self, rho=rho, gamma=gamma)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown algorithm fields: {sorted(unknown)}")
        return cls(**d)


class Messages(NamedTuple):
    """Names of the d-dimensional payloads sent to / from each client."""

    down: tuple
    up: tuple


def protocol(cfg: AlgoConfig) -> Messages:
    """Per-client payloads exchanged in one round of ``cfg.method``."""
    method = cfg.method
    if method == "fedave":
        return Messages(("x_s",), ("x_i^K",))
    if method in ("pdmm_exact", "gpdmm"):
        return Messages(("x_s - lambda_s|i/rho",), ("xbar_i - lambda_i|s/rho",))
    if method == "fedsplit":
        return Messages(("z_s|i",), ("z_i|s",))
    if method == "fedsplit_inexact":
        # with inexact_init='xs' the client rebuilds x_s = (z_s|i + z_i|s) / 2
        return Messages(("z_s|i",), ("z_i|s",))
    if method == "agpdmm":
        return Messages(("x_s", "lambda_s|i"), ("x_i^K - lambda_i|s/rho",))
    if method == "agpdmm_variant":
        return Messages(("x_s", "lambda_s|i"), ("x_i^K - lambda_i|s/rho",))
    if method == "scaffold":
        return Messages(("x_s", "c"), ("x_i^K - x_s", "c_i' - c_i"))
    raise ConfigError(f"unknown method {method!r}")


def _copy_arrays(obj):
    return {f.name: (getattr(obj, f.name).copy() if isinstance(getattr(obj, f.name), np.ndarray) else getattr(obj, f.name))
            for f in fields(obj)}


@dataclass
class FedAveState:
    xs: np.ndarray
    x: np.ndarray
    cursors: np.ndarray
    round: int = 0
    messages: Messages | None = None

    def copy(self):
        return FedAveState(**_copy_arrays(self))


@dataclass
class PdmmState:
    """Server ``x_s``, ``lambda_{s|i}``; clients ``x_i``, ``lambda_{i|s}``.

    ``x`` holds each client's last inner endpoint (the GPDMM warm start) and
    ``xbar`` the aggregate that entered the last dual update.
    """

    xs: np.ndarray
    lam_s: np.ndarray
    x: np.ndarray
    lam_c: np.ndarray
    xbar: np.ndarray
    cursors: np.ndarray
    round: int = 0
    messages: Messages | None = None

    def copy(self):
        return PdmmState(**_copy_arrays(self))


@dataclass
class FedSplitState:
    xs: np.ndarray
    z_s: np.ndarray
    x: np.ndarray
    z_c: np.ndarray
    cursors: np.ndarray
    round: int = 0
    messages: Messages | None = None

    def copy(self):
        return FedSplitState(**_copy_arrays(self))


@dataclass
class ScaffoldState:
    xs: np.ndarray
    c: np.ndarray
    x: np.ndarray
    c_i: np.ndarray
    cursors: np.ndarray
    round: int = 0
    messages: Messages | None = None

    def copy(self):
        return ScaffoldState(**_copy_arrays(self))


def init_state(method, problem, xs=None):
    """Zero initialisation: ``x_s`` (default 0), all duals and covariates 0,
    and every client's carried iterate equal to ``x_s``."""
    m, d = problem.m, problem.dim
    xs = np.zeros(d) if xs is None else np.array(xs, dtype=np.float64)
    if xs.shape != (d,):
        raise InputError(f"xs must have shape ({d},)")
    x = np.tile(xs, (m, 1))
    zeros = np.zeros((m, d))
    cursors = np.zeros(m, dtype=np.int64)
    if method == "fedave":
        return FedAveState(xs, x, cursors)
    if method in PDMM_FAMILY:
        return PdmmState(xs, zeros.copy(), x, zeros.copy(), x.copy(), cursors)
    if method in FEDSPLIT_FAMILY:
        return FedSplitState(xs, x.copy(), x, x.copy(), cursors)
    if method == "scaffold":
        return ScaffoldState(xs, np.zeros(d), x, zeros.copy(), cursors)
    raise ConfigError(f"unknown method {method!r}")


def saddle_state(method, problem, gamma=None):
    """State placed at the certified saddle point ``(x*, lambda*)``.

    Server duals are ``-lambda*_i``; FedSplit variables follow
    ``z = x - gamma * lambda``; SCAFFOLD covariates are ``c_i = lambda*_i``
    and ``c = mean_i c_i``.
    """
    opt = problem.optimum
    if opt is None:
        raise ConfigError("the problem has no certified optimum")
    state = init_state(method, problem, opt.x_star)
    lam = opt.lambda_star
    if isinstance(state, PdmmState):
        state.lam_s = -lam.copy()
        state.lam_c = lam.copy()
    elif isinstance(state, FedSplitState):
        if gamma is None:
            raise InputError("gamma is needed to place FedSplit variables")
        state.z_s = pdmm_fedsplit_transform(state.x, -lam, gamma)
        state.z_c = pdmm_fedsplit_transform(state.x, lam, gamma)
    elif isinstance(state, ScaffoldState):
        state.c_i = lam.copy()
        state.c = _server_mean(lam)
    return state


def _server_mean(rows):
    # explicit ascending-index accumulation keeps the reduction order fixed
    acc = np.zeros(rows.shape[1])
    for row in rows:
        acc += row
    return acc / rows.shape[0]


def inner_steps(problem, x0, anchor, shift, step, rho, K, cursors, path=None):
    """``K`` steps of ``x <- x - step * (g_i(x) + rho (x - anchor_i) + shift_i)``.

    ``g_i`` is the exact gradient for least-squares clients and the
    mini-batch gradient (advancing ``cursors``) otherwise.

    Returns ``(x^K, mean(x^1..x^K), cursors')``.
    """
    if problem.is_quadratic:
        xK, xavg = kernels.quad_steps(problem.grams, problem.atbs, x0, anchor, shift, step, rho, K, path)
        return xK, xavg, cursors.copy()
    if path is not None:
        raise UnsupportedMethodError("iterate recording is only available for least-squares clients")
    m = problem.m
    xK = np.empty_like(x0)
    xavg = np.empty_like(x0)
    cur = cursors.copy()
    for i, obj in enumerate(problem.clients):
        x = x0[i].copy()
        acc = np.zeros_like(x)
        c = int(cur[i])
        for _ in range(K):
            g, c = obj.minibatch_grad(x, c)
            x = x - step * (g + rho * (x - anchor[i]) + shift[i])
            acc += x
        xK[i] = x
        xavg[i] = acc / K
        cur[i] = c
    assert xK.shape[0] == m
    return xK, xavg, cur


def _warn_step(problem, eta):
    if 1.0 / eta < problem.lipschitz:
        warnings.warn(
            f"1/eta = {1 / eta:.4g} is below L = {problem.lipschitz:.4g}; "
            "the per-step descent inequality is not guaranteed",
            RuntimeWarning,
            stacklevel=3,
        )


def _check(cfg, allowed):
    if cfg.method not in allowed:
        raise ConfigError(f"{cfg.method!r} cannot run through this kernel (expects {allowed})")
    return cfg.resolved()


def fedave_round(state: FedAveState, problem, cfg: AlgoConfig) -> FedAveState:
    cfg = _check(cfg, ("fedave",))
    m, d = problem.m, problem.dim
    x0 = np.tile(state.xs, (m, 1))
    zeros = np.zeros((m, d))
    xK, _, cur = inner_steps(problem, x0, zeros, zeros, cfg.eta, 0.0, cfg.K, state.cursors)
    return FedAveState(_server_mean(xK), xK, cur, state.round + 1, protocol(cfg))


def _pdmm_server(xs, xbar, lam_c, rho):
    xs_new = _server_mean(xbar - lam_c / rho)
    lam_s = rho * (xbar - xs_new) - lam_c
    return xs_new, lam_s


def _batched_prox(problem, rho, V):
    d = problem.dim
    system = problem.grams + rho * np.eye(d)
    rhs = problem.atbs + rho * V
    X = np.linalg.solve(system, rhs[..., None])[..., 0]
    resid = np.einsum("ijk,ik->ij", system, X) - rhs
    return X - np.linalg.solve(system, resid[..., None])[..., 0]


def _require_quadratic(problem, method):
    if not problem.is_quadratic:
        raise UnsupportedMethodError(f"{method} needs an exact proximal map; only least-squares clients have one")


def pdmm_exact_round(state: PdmmState, problem, cfg: AlgoConfig) -> PdmmState:
    cfg = _check(cfg, ("pdmm_exact",))
    _require_quadratic(problem, "pdmm_exact")
    rho = cfg.rho
    x = _batched_prox(problem, rho, state.xs - state.lam_s / rho)
    lam_c = rho * (state.xs - x) - state.lam_s
    xs, lam_s = _pdmm_server(state.xs, x, lam_c, rho)
    return PdmmState(xs, lam_s, x, lam_c, x.copy(), state.cursors.copy(), state.round + 1, protocol(cfg))


def _fedsplit_server(z_c):
    xs = _server_mean(z_c)
    return xs, 2.0 * xs - z_c


def fedsplit_round(state: FedSplitState, problem, cfg: AlgoConfig) -> FedSplitState:
    cfg = _check(cfg, ("fedsplit",))
    _require_quadratic(problem, "fedsplit")
    x = _batched_prox(problem, 1.0 / cfg.gamma, state.z_s)
    z_c = 2.0 * x - state.z_s
    xs, z_s = _fedsplit_server(z_c)
    return FedSplitState(xs, z_s, x, z_c, state.cursors.copy(), state.round + 1, protocol(cfg))


def fedsplit_inexact_round(state: FedSplitState, problem, cfg: AlgoConfig) -> FedSplitState:
    """``K`` gradient steps of size ``eta`` on ``f_i + ||x - z_{s|i}||^2 / (2 gamma)``.

    ``inexact_init='z'`` starts the inner loop at ``z_{s|i}``; ``'xs'``
    starts it at ``x_s``, which each client reconstructs from its own last
    uplink as ``(z_{s|i} + z_{i|s}) / 2`` so no extra downlink is needed.
    """
    cfg = _check(cfg, ("fedsplit_inexact",))
    m, d = problem.m, problem.dim
    x0 = state.z_s if cfg.inexact_init == "z" else 0.5 * (state.z_s + state.z_c)
    xK, _, cur = inner_steps(
        problem, x0, state.z_s, np.zeros((m, d)), cfg.eta, 1.0 / cfg.gamma, cfg.K, state.cursors
    )
    z_c = 2.0 * xK - state.z_s
    xs, z_s = _fedsplit_server(z_c)
    return FedSplitState(xs, z_s, xK, z_c, cur, state.round + 1, protocol(cfg))


def _gradient_pdmm(state, problem, cfg, x0, step, use_average, path):
    rho = cfg.rho
    m = problem.m
    anchor = np.tile(state.xs, (m, 1))
    xK, xavg, cur = inner_steps(problem, x0, anchor, state.lam_s, step, rho, cfg.K, state.cursors, path)
    xbar = xavg if use_average else xK
    lam_c = rho * (state.xs - xbar) - state.lam_s
    xs, lam_s = _pdmm_server(state.xs, xbar, lam_c, rho)
    return PdmmState(xs, lam_s, xK, lam_c, xbar, cur, state.round + 1, protocol(cfg))


def gpdmm_round(state: PdmmState, problem, cfg: AlgoConfig, path=None) -> PdmmState:
    """GPDMM: warm start from the carried ``x_i^{r-1,K}``, step ``1/(1/eta + rho)``.

    ``lambda_update='average'`` feeds the mean of the ``K`` iterates into the
    dual update, ``'recent'`` the last iterate. ``path`` (shape
    ``(m, K + 1, d)``) optionally receives every inner iterate.
    """
    cfg = _check(cfg, ("gpdmm",))
    _warn_step(problem, cfg.eta)
    step = 1.0 / (1.0 / cfg.eta + cfg.rho)
    return _gradient_pdmm(state, problem, cfg, state.x, step, cfg.lambda_update == "average", path)


def agpdmm_round(state: PdmmState, problem, cfg: AlgoConfig, path=None) -> PdmmState:
    """AGPDMM: inner loop starts at ``x_s`` and the dual uses ``x_i^{r,K}``.

    ``agpdmm_variant`` takes the plain step ``eta`` on the proximal client
    objective instead of ``1/(1/eta + rho)``.
    """
    cfg = _check(cfg, ("agpdmm", "agpdmm_variant"))
    _warn_step(problem, cfg.eta)
    step = 1.0 / (1.0 / cfg.eta + cfg.rho) if cfg.method == "agpdmm" else cfg.eta
    x0 = np.tile(state.xs, (problem.m, 1))
    return _gradient_pdmm(state, problem, cfg, x0, step, False, path)


def scaffold_round(state: ScaffoldState, problem, cfg: AlgoConfig) -> ScaffoldState:
    cfg = _check(cfg, ("scaffold",))
    m, d = problem.m, problem.dim
    x0 = np.tile(state.xs, (m, 1))
    shift = state.c[None, :] - state.c_i
    xK, _, cur = inner_steps(problem, x0, np.zeros((m, d)), shift, cfg.eta, 0.0, cfg.K, state.cursors)
    c_i = state.c_i - state.c + (state.xs - xK) / (cfg.K * cfg.eta)
    xs = state.xs + cfg.eta_g * _server_mean(xK - state.xs)
    c = state.c + _server_mean(c_i - state.c_i)
    return ScaffoldState(xs, c, xK, c_i, cur, state.round + 1, protocol(cfg))


ROUNDS = {
    "fedave": fedave_round,
    "pdmm_exact": pdmm_exact_round,
    "fedsplit": fedsplit_round,
    "fedsplit_inexact": fedsplit_inexact_round,
    "gpdmm": gpdmm_round,
    "agpdmm": agpdmm_round,
    "agpdmm_variant": agpdmm_round,
    "scaffold": scaffold_round,
}


def run_round(state, problem, cfg: AlgoConfig):
    return ROUNDS[cfg.method](state, problem, cfg)


def pdmm_fedsplit_transform(x, lam, gamma):
    """``z = x - gamma * lambda``."""
    if not gamma > 0:
        raise InputError(f"gamma must be positive, got {gamma}")
    return np.asarray(x, dtype=np.float64) - gamma * np.asarray(lam, dtype=np.float64)


def fedsplit_pdmm_inverse(x, z, gamma):
    """Recover ``lambda = (x - z) / gamma``."""
    if not gamma > 0:
        raise InputError(f"gamma must be positive, got {gamma}")
    return (np.asarray(x, dtype=np.float64) - np.asarray(z, dtype=np.float64)) / gamma


def pdmm_to_fedsplit(state: PdmmState, gamma) -> FedSplitState:
    """Map a PDMM state to FedSplit variables (valid with ``rho = 1/gamma``)."""
    m = state.lam_s.shape[0]
    return FedSplitState(
        xs=state.xs.copy(),
        z_s=pdmm_fedsplit_transform(np.tile(state.xs, (m, 1)), state.lam_s, gamma),
        x=state.x.copy(),
        z_c=pdmm_fedsplit_transform(state.x, state.lam_c, gamma),
        cursors=state.cursors.copy(),
        round=state.round,
    )


def server_duals(state, gamma=None):
    """``lambda_{s|i}`` rows of a PDMM-family state, or of a FedSplit state
    through ``lambda_{s|i} = (x_s - z_{s|i}) / gamma``."""
    if isinstance(state, PdmmState):
        return state.lam_s
    if isinstance(state, FedSplitState):
        if gamma is None:
            raise InputError("gamma is needed to read duals from FedSplit variables")
        return fedsplit_pdmm_inverse(state.xs[None, :], state.z_s, gamma)
    raise InputError(f"{type(state).__name__} carries no server dual variables")


def dual_sum_ok(state, tol=1e-9, gamma=None):
    """``||sum_i lambda_{s|i}|| <= tol * (1 + max_i ||lambda_{s|i}||)``; returns ``(ok, lhs)``."""
    lam = server_duals(state, gamma)
    lhs = float(np.linalg.norm(lam.sum(axis=0)))
    return lhs <= tol * (1.0 + float(np.max(np.linalg.norm(lam, axis=1)))), lhs
