"""Numeric checks of the GPDMM convergence certificates.

Sign conventions: ``lambda*_i = grad f_i(x*)`` is the client-side dual at
the saddle point, so the server-side dual satisfies
``lambda*_{s|i} = -lambda*_i`` and ``sum_i lambda*_i = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstraintError, InputError, MisuseError


@dataclass(frozen=True)
class RateParams:
    """Contraction parameters of the strongly convex GPDMM rate."""

    theta: float
    phi: float
    gamma1: float
    gamma2: float
    beta: float


@dataclass(frozen=True)
class LyapunovSample:
    """``Q`` at one round with its per-client primal and primal-dual parts."""

    round: int | None
    Q: float
    primal: np.ndarray
    dual: np.ndarray


def kkt_residual(x_s, clients_x, lambdas, problem):
    """Return ``(max_i ||grad f_i(x_i) - lambda_i||, max_i ||x_i - x_s||, ||sum_i lambda_i||)``."""
    x_s = np.asarray(x_s, dtype=np.float64)
    X = np.asarray(clients_x, dtype=np.float64)
    lam = np.asarray(lambdas, dtype=np.float64)
    if X.shape != lam.shape or X.shape != (problem.m, x_s.shape[0]):
        raise InputError(f"inconsistent shapes: x_s {x_s.shape}, clients {X.shape}, lambdas {lam.shape}")
    grads = problem.client_grads(X)
    grad_res = float(np.max(np.linalg.norm(grads - lam, axis=1)))
    cons_res = float(np.max(np.linalg.norm(X - x_s[None, :], axis=1)))
    dual_res = float(np.linalg.norm(lam.sum(axis=0)))
    return grad_res, cons_res, dual_res


def gamma1(eta, L, theta):
    return min((1.0 - theta) / (2.0 * L * eta**2), (1.0 / eta - L) / 2.0)


def rate_params(eta, rho, L, mu, theta=0.5, phi=0.5) -> RateParams:
    """Compute ``gamma1``, ``gamma2`` and the contraction factor ``beta``.

    Raises
    ------
    ConstraintError
        If any of ``1/eta > L >= mu > 0``, ``0 < theta < 1``,
        ``0 < phi < 1``, ``theta mu phi / (4 rho^2) < 1 / (4 rho)`` fails.
    """
    checks = [
        (1.0 / eta > L, f"1/eta > L (1/eta = {1 / eta:.6g}, L = {L:.6g})"),
        (L >= mu, f"L >= mu (L = {L:.6g}, mu = {mu:.6g})"),
        (mu > 0, f"mu > 0 (mu = {mu:.6g})"),
        (0 < theta < 1, f"0 < theta < 1 (theta = {theta})"),
        (0 < phi < 1, f"0 < phi < 1 (phi = {phi})"),
        (rho > 0, f"rho > 0 (rho = {rho})"),
    ]
    for ok, what in checks:
        if not ok:
            raise ConstraintError(f"violated: {what}")
    if not theta * mu * phi / (4.0 * rho**2) < 1.0 / (4.0 * rho):
        raise ConstraintError(
            f"violated: theta*mu*phi/(4 rho^2) < 1/(4 rho) (theta*mu*phi = {theta * mu * phi:.6g}, rho = {rho:.6g})"
        )
    g1 = gamma1(eta, L, theta)
    g2 = min(theta * mu * phi / (2.0 * rho**2), g1 * eta**2 / 2.0)
    q = 1.0 / (4.0 * rho)
    beta = max((q - g2 / 2.0) / q, (1.0 / eta - theta * mu) / (1.0 / eta - theta * mu * phi))
    if not 0.0 < beta < 1.0:
        raise ConstraintError(f"violated: 0 < beta < 1 (beta = {beta!r})")
    return RateParams(theta=theta, phi=phi, gamma1=g1, gamma2=g2, beta=beta)


def lyapunov_Q(prev_clients_xK, xbar_list, lambda_next_list, optimum, eta, rho, K, theta, mu, gamma2, round=None):
    """Lyapunov value of one GPDMM round.

    Parameters
    ----------
    prev_clients_xK : (m, d)
        Client endpoints ``x_i^{r-1,K}`` that started round ``r``.
    xbar_list : (m, d)
        Averaged iterates ``xbar_i^{r,K}`` of round ``r``.
    lambda_next_list : (m, d)
        Client duals ``lambda_{i|s}^{r+1}`` produced in round ``r``.
    optimum : Optimum
    """
    x_star = optimum.x_star
    lam_star = optimum.lambda_star
    prev = np.asarray(prev_clients_xK, dtype=np.float64)
    xbar = np.asarray(xbar_list, dtype=np.float64)
    lam = np.asarray(lambda_next_list, dtype=np.float64)
    c1 = (1.0 / eta - theta * mu) / (2.0 * K)
    c2 = 1.0 / (4.0 * rho) - gamma2 / 2.0
    primal = c1 * np.sum((prev - x_star) ** 2, axis=1)
    dual = c2 * np.sum((rho * (xbar - x_star) + (lam - lam_star)) ** 2, axis=1)
    return LyapunovSample(round=round, Q=float(primal.sum() + dual.sum()), primal=primal, dual=dual)


def inner_step(f_i, x_rk, x_s, lambda_si, eta, rho):
    """One client step ``x - (grad f(x) + rho (x - x_s) + lambda_si) / (1/eta + rho)``."""
    return x_rk - (f_i.grad(x_rk) + rho * (x_rk - x_s) + lambda_si) / (1.0 / eta + rho)


def check_lemma1(f_i, x_probe, x_rk, x_rk1, x_s, lambda_si, eta, rho, theta, mu, L, rtol=1e-9):
    """Slack (LHS - RHS) of the per-step primal inequality at ``x_probe``.

    The inequality reads::

        f(x) - f(x+) >= (x - x+)^T (rho (x_s - x+) - lambda_si)
                        + ||x - x+||^2 / (2 eta)
                        - (1/eta - theta mu) / 2 * ||x_k - x||^2
                        + (1/eta - L) / 2 * ||x+ - x_k||^2
                        + (1 - theta) / (2 L) * ||grad f(x_k) - grad f(x)||^2

    with ``x+`` the inner step taken from ``x_k``. A nonnegative slack means
    the inequality holds.

    Raises
    ------
    MisuseError
        If ``x_rk1`` is not the inner step from ``x_rk``.
    """
    x = np.asarray(x_probe, dtype=np.float64)
    xk = np.asarray(x_rk, dtype=np.float64)
    xk1 = np.asarray(x_rk1, dtype=np.float64)
    expected = inner_step(f_i, xk, x_s, lambda_si, eta, rho)
    if np.linalg.norm(expected - xk1) > rtol * (1.0 + np.linalg.norm(expected)):
        raise MisuseError(
            f"x_rk1 is not the inner step from x_rk (off by {np.linalg.norm(expected - xk1):.3e})"
        )
    lhs = f_i.value(x) - f_i.value(xk1)
    rhs = (
        (x - xk1) @ (rho * (x_s - xk1) - lambda_si)
        + np.sum((x - xk1) ** 2) / (2.0 * eta)
        - (1.0 / eta - theta * mu) / 2.0 * np.sum((xk - x) ** 2)
        + (1.0 / eta - L) / 2.0 * np.sum((xk1 - xk) ** 2)
        + (1.0 - theta) / (2.0 * L) * np.sum((f_i.grad(xk) - f_i.grad(x)) ** 2)
    )
    return float(lhs - rhs)


def lemma3_gap(clients_x, problem, optimum=None):
    """``sum_i [f_i(x_i) - f_i(x*) - x_i^T lambda*_i]``, nonnegative for convex ``f_i``."""
    opt = optimum if optimum is not None else problem.optimum
    X = np.asarray(clients_x, dtype=np.float64)
    total = 0.0
    for i, f in enumerate(problem.clients):
        total += f.value(X[i]) - f.value(opt.x_star) - X[i] @ opt.lambda_star[i]
    return float(total)


@dataclass(frozen=True)
class SublinearCertificate:
    """``series[:, 0]`` holds ``R``, ``series[:, 1]`` holds ``R * combined_gap(R)``."""

    series: np.ndarray
    bound: float
    rel_slope: float
    explicit_bound: float
    passed: bool


def combined_gap(xbar_avg, lam_avg, problem, optimum, gamma1_, eta):
    gap = lemma3_gap(xbar_avg, problem, optimum)
    return gap + gamma1_ * eta**2 / 2.0 * float(np.sum((lam_avg - optimum.lambda_star) ** 2))


def sublinear_certificate(xbar_trace, lam_trace, problem, optimum, gamma1_, eta, rho=None, x0=None, K=None,
                          slope_tol=1e-3):
    """Check that ``R * combined_gap(R)`` stays bounded for running averages.

    ``xbar_trace[r]`` and ``lam_trace[r]`` are ``xbar_i^{r+1,K}`` and
    ``lambda_{i|s}^{r+2}`` (0-based rounds). The series passes when it
    never exceeds the maximum over its first quarter and its least-squares
    slope, scaled by ``R_max / max|series|``, is at most ``slope_tol``.

    With ``rho``, ``x0`` and ``K`` given, ``explicit_bound`` is the constant
    from the telescoped round inequality (``nan`` otherwise).
    """
    xbar_trace = np.asarray(xbar_trace, dtype=np.float64)
    lam_trace = np.asarray(lam_trace, dtype=np.float64)
    R = xbar_trace.shape[0]
    if R < 4:
        raise InputError("need at least 4 rounds for a sublinear certificate")
    xsum = np.cumsum(xbar_trace, axis=0)
    lsum = np.cumsum(lam_trace, axis=0)
    series = np.empty((R, 2))
    for r in range(R):
        n = r + 1
        series[r] = n, n * combined_gap(xsum[r] / n, lsum[r] / n, problem, optimum, gamma1_, eta)
    bound = float(np.max(series[: max(1, R // 4), 1]))
    slope = float(np.polyfit(series[:, 0], series[:, 1], 1)[0])
    scale = float(np.max(np.abs(series[:, 1])))
    rel_slope = slope * R / scale if scale > 0 else 0.0
    explicit = float("nan")
    if rho is not None and x0 is not None and K is not None:
        x0 = np.asarray(x0, dtype=np.float64)
        explicit = float(
            np.sum(
                (
                    (1.0 / eta) / 2.0 * np.sum((x0 - optimum.x_star) ** 2, axis=1)
                    + 1.0 / (4.0 * rho)
                    * np.sum((rho * (xbar_trace[0] - optimum.x_star) + lam_trace[0] - optimum.lambda_star) ** 2, axis=1)
                )
                / K
            )
        )
    scale_tol = 1e-12 * (1.0 + bound)
    passed = bool(np.all(series[:, 1] <= bound + scale_tol) and rel_slope <= slope_tol)
    return SublinearCertificate(series, bound, rel_slope, explicit, passed)


def polarization_identity(y1, y2, y3, y4, reading="printed"):
    """Return ``((y1 - y2)^T (y3 - y4), rhs)``.

    ``reading='printed'`` evaluates
    ``0.5 (||y1+y3||^2 - ||y2+y4||^2 - ||y2+y3||^2 + ||y2+y4||^2)``, in which
    the two ``||y2+y4||^2`` terms cancel. ``reading='standard'`` evaluates
    ``0.5 (||y1+y3||^2 - ||y1+y4||^2 - ||y2+y3||^2 + ||y2+y4||^2)``.
    """
    y1, y2, y3, y4 = (np.asarray(v, dtype=np.float64) for v in (y1, y2, y3, y4))
    if not (y1.shape == y2.shape == y3.shape == y4.shape):
        raise InputError("polarization vectors must share one shape")

    def sq(v):
        return float(v @ v)

    lhs = float((y1 - y2) @ (y3 - y4))
    if reading == "printed":
        rhs = 0.5 * (sq(y1 + y3) - sq(y2 + y4) - sq(y2 + y3) + sq(y2 + y4))
    elif reading == "standard":
        rhs = 0.5 * (sq(y1 + y3) - sq(y1 + y4) - sq(y2 + y3) + sq(y2 + y4))
    else:
        raise InputError(f"unknown reading {reading!r}")
    return lhs, rhs


def polarization_readings(y1, y2, y3, y4, rtol=1e-10):
    """Which reading of the identity holds for these vectors."""
    out = {}
    for reading in ("printed", "standard"):
        lhs, rhs = polarization_identity(y1, y2, y3, y4, reading)
        out[reading] = abs(lhs - rhs) <= rtol * (1.0 + abs(lhs) + abs(rhs))
    return out
