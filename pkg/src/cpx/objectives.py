"""Client objective functions and the federated problem container.

Two families of client losses are provided:

* :class:`QuadraticObjective`, ``f(x) = 0.5 * ||A x - b||^2``, which also
  exposes an exact proximal map;
* :class:`SoftmaxObjective`, the mean multinomial cross-entropy of a linear
  classifier plus an optional ridge term, with deterministic mini-batching.

:class:`FederatedProblem` bundles ``m`` client objectives together with the
certified global optimum produced by :func:`solve_global_optimum`.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, InputError

log = logging.getLogger(__name__)


def _as_point(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dim,):
        raise InputError(f"expected a vector of dimension {dim}, got shape {x.shape}")
    return x


class ClientObjective:
    """Interface shared by all client losses.

    Subclasses set ``dim``, ``lipschitz`` and ``modulus`` and implement
    :meth:`value` and :meth:`grad`.
    """

    dim: int
    lipschitz: float
    modulus: float

    def value(self, x) -> float:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError


class QuadraticObjective(ClientObjective):
    """Least-squares loss ``0.5 * ||A x - b||^2``.

    The gram matrix ``A^T A`` and ``A^T b`` are cached on construction; the
    curvature constants are its extreme eigenvalues.
    """

    def __init__(self, A, b):
        A = np.ascontiguousarray(A, dtype=np.float64)
        b = np.ascontiguousarray(b, dtype=np.float64)
        if A.ndim != 2 or b.shape != (A.shape[0],):
            raise InputError(f"A must be (n, d) and b (n,), got {A.shape} and {b.shape}")
        self.A = A
        self.b = b
        self.dim = A.shape[1]
        gram = A.T @ A
        self.gram = 0.5 * (gram + gram.T)
        self.atb = A.T @ b
        eig = np.linalg.eigvalsh(self.gram)
        self.lipschitz = float(eig[-1])
        # clip round-off below zero for rank-deficient A
        self.modulus = float(max(eig[0], 0.0))

    def value(self, x):
        x = _as_point(x, self.dim)
        r = self.A @ x - self.b
        return 0.5 * float(r @ r)

    def grad(self, x):
        x = _as_point(x, self.dim)
        return self.gram @ x - self.atb

    def prox(self, rho, v):
        """Return ``argmin_x f(x) + rho/2 * ||x - v||^2``."""
        return prox_quadratic(self, rho, v)

    def __repr__(self):
        n, d = self.A.shape
        return f"QuadraticObjective(n={n}, d={d}, L={self.lipschitz:.4g}, mu={self.modulus:.4g})"


def prox_quadratic(obj: QuadraticObjective, rho: float, v) -> np.ndarray:
    """Exact proximal map of a least-squares client.

    Solves ``(A^T A + rho I) x = A^T b + rho v``.
    """
    if not rho > 0:
        raise InputError(f"rho must be positive, got {rho}")
    v = _as_point(v, obj.dim)
    system = obj.gram + rho * np.eye(obj.dim)
    rhs = obj.atb + rho * v
    x = np.linalg.solve(system, rhs)
    resid = np.linalg.norm(system @ x - rhs)
    if resid > 1e-10 * (1.0 + np.linalg.norm(rhs)):
        # a single refinement pass recovers the lost digits
        x = x + np.linalg.solve(system, rhs - system @ x)
    return x


class SoftmaxObjective(ClientObjective):
    """Mean cross-entropy of a linear softmax classifier.

    The parameter vector is the row-major flattening of a ``(p, C)`` weight
    matrix, so ``dim = p * C``. The loss is averaged over the client's
    samples and ``regularizer / 2 * ||x||^2`` is added.

    Parameters
    ----------
    features : (N, p) array
    labels : (N,) integer array with entries in ``[0, num_classes)``
    num_classes : int
    batch_size : int, optional
        Samples per call of :meth:`minibatch_grad`; defaults to ``N``.
    regularizer : float
    """

    def __init__(self, features, labels, num_classes, batch_size=None, regularizer=0.0):
        X = np.ascontiguousarray(features, dtype=np.float64)
        y = np.asarray(labels)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise InputError(f"features must be (N, p) and labels (N,), got {X.shape} and {y.shape}")
        if X.shape[0] == 0:
            raise InputError("a softmax client needs at least one sample")
        if y.size and (y.min() < 0 or y.max() >= num_classes):
            raise InputError(f"labels must lie in [0, {num_classes})")
        if regularizer < 0:
            raise InputError("regularizer must be nonnegative")
        n = X.shape[0]
        batch_size = n if batch_size is None else int(batch_size)
        if not 1 <= batch_size <= n:
            raise ConfigError(f"batch size {batch_size} must lie in [1, {n}]")
        self.features = X
        self.labels = y.astype(np.int64)
        self.num_classes = int(num_classes)
        self.batch_size = batch_size
        self.regularizer = float(regularizer)
        self.num_features = X.shape[1]
        self.dim = self.num_features * self.num_classes
        self._onehot = np.zeros((n, self.num_classes))
        self._onehot[np.arange(n), self.labels] = 1.0
        # Hessian of the mean CE is bounded by (1/2) X^T X / N in spectral norm
        smax = np.linalg.norm(X, 2) ** 2 if min(X.shape) else 0.0
        self.lipschitz = 0.5 * smax / n + self.regularizer
        self.modulus = self.regularizer

    @property
    def num_samples(self):
        return self.features.shape[0]

    def weights(self, x):
        return _as_point(x, self.dim).reshape(self.num_features, self.num_classes)

    def _loss_and_grad(self, W, X, Y, need_grad=True):
        logits = X @ W
        logits -= logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        norm = expl.sum(axis=1, keepdims=True)
        logp = logits - np.log(norm)
        loss = -float(np.sum(Y * logp)) / X.shape[0]
        if not need_grad:
            return loss, None
        P = expl / norm
        G = X.T @ (P - Y) / X.shape[0]
        return loss, G

    def value(self, x):
        W = self.weights(x)
        loss, _ = self._loss_and_grad(W, self.features, self._onehot, need_grad=False)
        return loss + 0.5 * self.regularizer * float(x @ x)

    def grad(self, x):
        W = self.weights(x)
        _, G = self._loss_and_grad(W, self.features, self._onehot)
        return G.ravel() + self.regularizer * np.asarray(x, dtype=np.float64)

    def batch_indices(self, cursor):
        n = self.num_samples
        if not 0 <= cursor < n:
            raise InputError(f"cursor {cursor} outside [0, {n})")
        return (cursor + np.arange(self.batch_size)) % n

    def minibatch_grad(self, x, cursor):
        """Gradient over samples ``[cursor, cursor + B)`` modulo ``N``.

        Returns the gradient and the cursor for the next call.
        """
        W = self.weights(x)
        idx = self.batch_indices(cursor)
        if self.batch_size == self.num_samples and cursor == 0:
            X, Y = self.features, self._onehot
        else:
            X, Y = self.features[idx], self._onehot[idx]
        _, G = self._loss_and_grad(W, X, Y)
        nxt = (cursor + self.batch_size) % self.num_samples
        return G.ravel() + self.regularizer * np.asarray(x, dtype=np.float64), nxt

    def predict(self, x, features=None):
        X = self.features if features is None else np.asarray(features, dtype=np.float64)
        return np.argmax(X @ self.weights(x), axis=1)

    def __repr__(self):
        return (
            f"SoftmaxObjective(N={self.num_samples}, p={self.num_features}, "
            f"C={self.num_classes}, B={self.batch_size})"
        )


def value(obj: ClientObjective, x) -> float:
    return obj.value(x)


def grad(obj: ClientObjective, x) -> np.ndarray:
    return obj.grad(x)


def minibatch_grad(obj: SoftmaxObjective, x, cursor: int):
    return obj.minibatch_grad(x, cursor)


@dataclass
class Optimum:
    """Certified minimiser of ``F = sum_i f_i``.

    ``lambda_star[i]`` is ``grad f_i(x_star)``, the client-side dual variable
    at the saddle point. ``residual`` is the final ``||grad F(x_star)||``.
    """

    x_star: np.ndarray
    f_star: float
    lambda_star: np.ndarray
    residual: float
    converged: bool = True


@dataclass
class FederatedProblem:
    """``m`` client objectives sharing one parameter vector."""

    clients: list
    optimum: Optimum | None = None
    validation: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.clients:
            raise InputError("a federated problem needs at least one client")
        dims = {c.dim for c in self.clients}
        if len(dims) != 1:
            raise InputError(f"clients disagree on the dimension: {sorted(dims)}")

    @property
    def m(self):
        return len(self.clients)

    @property
    def dim(self):
        return self.clients[0].dim

    @property
    def lipschitz(self):
        return max(c.lipschitz for c in self.clients)

    @property
    def modulus(self):
        return min(c.modulus for c in self.clients)

    @property
    def is_quadratic(self):
        return all(isinstance(c, QuadraticObjective) for c in self.clients)

    @cached_property
    def grams(self):
        """Stacked ``(m, d, d)`` gram matrices of a least-squares problem."""
        return np.ascontiguousarray(np.stack([c.gram for c in self.clients]))

    @cached_property
    def atbs(self):
        return np.ascontiguousarray(np.stack([c.atb for c in self.clients]))

    @cached_property
    def hessian(self):
        return self.grams.sum(axis=0)

    def total(self, x):
        """``F(x) = sum_i f_i(x)``, accumulated in client order."""
        out = 0.0
        for c in self.clients:
            out += c.value(x)
        return out

    def total_grad(self, x):
        g = np.zeros(self.dim)
        for c in self.clients:
            g += c.grad(x)
        return g

    def client_grads(self, X):
        """Row ``i`` is ``grad f_i(X[i])``."""
        X = np.asarray(X, dtype=np.float64)
        if self.is_quadratic:
            return np.einsum("ijk,ik->ij", self.grams, X) - self.atbs
        return np.stack([c.grad(x) for c, x in zip(self.clients, X)])

    def gap(self, x):
        """Optimality gap ``F(x) - F*``.

        For least squares the gap equals ``0.5 (x - x*)^T H (x - x*)``
        exactly, which avoids cancelling two large objective values.
        """
        if self.optimum is None:
            raise ConfigError("the problem has no certified optimum")
        if self.is_quadratic:
            e = np.asarray(x, dtype=np.float64) - self.optimum.x_star
            return 0.5 * float(e @ (self.hessian @ e))
        return self.total(x) - self.optimum.f_star

    def with_optimum(self, **kwargs):
        self.optimum = solve_global_optimum(self, **kwargs)
        return self


def _certify(problem, x, converged):
    lam = np.stack([c.grad(x) for c in problem.clients])
    resid = float(np.linalg.norm(lam.sum(axis=0)))
    scale = 1.0 + float(np.max(np.linalg.norm(lam, axis=1)))
    if resid > 1e-8 * scale:
        converged = False
        warnings.warn(
            f"global optimum not certified: ||sum lambda*|| = {resid:.3e}",
            RuntimeWarning,
            stacklevel=3,
        )
    return Optimum(
        x_star=x,
        f_star=problem.total(x),
        lambda_star=lam,
        residual=resid,
        converged=converged,
    )


def solve_global_optimum(problem: FederatedProblem, tol=1e-10, max_steps=10**6) -> Optimum:
    """Compute ``x*``, ``F*`` and ``lambda*_i = grad f_i(x*)``.

    Least-squares problems are solved from the normal equations (minimum
    norm solution when the Hessian is singular, followed by one refinement
    pass). Other problems run full-batch gradient descent with step
    ``1 / sum_i L_i`` until ``||grad F|| <= tol`` or ``max_steps``.
    """
    if problem.is_quadratic:
        H = problem.hessian
        g = problem.atbs.sum(axis=0)
        x = np.linalg.lstsq(H, g, rcond=None)[0]
        x = x + np.linalg.lstsq(H, g - H @ x, rcond=None)[0]
        return _certify(problem, x, True)

    step = 1.0 / sum(c.lipschitz for c in problem.clients)
    x = np.zeros(problem.dim)
    g = problem.total_grad(x)
    steps = 0
    while np.linalg.norm(g) > tol and steps < max_steps:
        x = x - step * g
        g = problem.total_grad(x)
        steps += 1
    converged = bool(np.linalg.norm(g) <= tol)
    if not converged:
        log.warning("gradient descent stopped at ||grad F|| = %.3e after %d steps", np.linalg.norm(g), steps)
    return _certify(problem, x, converged)
