"""Maximum-likelihood fitting by iteratively reweighted least squares.

Each iteration solves a weighted least-squares problem via QR factorization
of the weighted design (never the normal equations).  A small ridge penalty
on the non-intercept coefficients keeps the all-levels one-hot encoding
identifiable and bounds the optimum on separated data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

from .model_core import LabeledVector, logit

log = logging.getLogger(__name__)

# Weights below this floor would blow up the working response; rows this
# saturated carry no usable curvature anyway.
_WEIGHT_FLOOR = 1e-12


class RankDeficientError(Exception):
    """Unpenalized least-squares system has effective rank below n_features."""


class DegenerateDataError(Exception):
    """Design rows are all-positive or all-negative."""


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 25
    tolerance: float = 1e-8  # relative deviance change
    ridge: float = 1e-6
    separation_eta_bound: float = 30.0
    reuse_qr: bool = False  # factor the design once, solve reweighted systems in R-space

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    converged: bool
    iterations: int
    final_deviance: float
    warnings: tuple[str, ...] = ()
    deviance_trace: tuple[float, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class DesignMatrix:
    """Sparse one-hot design: rows of active indices plus the feature count."""

    rows: tuple[LabeledVector, ...]
    n_features: int

    def __post_init__(self) -> None:
        if self.n_features < 1:
            raise ValueError("n_features must include the intercept")
        for row in self.rows:
            if row.active_indices and row.active_indices[-1] >= self.n_features:
                raise ValueError(
                    f"active index {row.active_indices[-1]} >= n_features {self.n_features}"
                )

    def to_dense(self) -> np.ndarray:
        x = np.zeros((len(self.rows), self.n_features))
        x[:, 0] = 1.0
        for i, row in enumerate(self.rows):
            for j in row.active_indices:
                x[i, j] = 1.0
        return x

    def responses(self) -> tuple[np.ndarray, np.ndarray]:
        y = np.array([r.response for r in self.rows], dtype=float)
        m = np.array([r.trials for r in self.rows], dtype=float)
        return y, m


def _wls_qr(
    x: np.ndarray, weights: np.ndarray, z: np.ndarray, ridge: float
) -> np.ndarray:
    """argmin sum w_i (z_i - x_i'b)^2 + ridge * ||b_1:||^2 via QR of the weighted design."""
    n, p = x.shape
    sw = np.sqrt(weights)
    a = x * sw[:, None]
    b = z * sw
    if ridge > 0 and p > 1:
        # Augmented rows sqrt(ridge) * e_j, j >= 1: penalty without touching the intercept.
        aug = math.sqrt(ridge) * np.eye(p)[1:]
        a = np.vstack([a, aug])
        b = np.concatenate([b, np.zeros(p - 1)])
    q, r = np.linalg.qr(a, mode="reduced")
    diag = np.abs(np.diag(r))
    if diag.min() <= diag.max() * 1e-10:
        if ridge == 0:
            raise RankDeficientError(
                f"effective rank below {p} columns; set ridge > 0 or drop collinear levels"
            )
        raise RankDeficientError("weighted design numerically singular despite ridge")
    return solve_triangular(r, q.T @ b)


def weighted_least_squares(
    design: DesignMatrix,
    weights: Sequence[float] | np.ndarray,
    working_response: Sequence[float] | np.ndarray,
    ridge: float = 0.0,
) -> np.ndarray:
    """One weighted least-squares solve over the design, orthogonal factorization only."""
    w = np.asarray(weights, dtype=float)
    z = np.asarray(working_response, dtype=float)
    if w.shape != (len(design.rows),) or z.shape != (len(design.rows),):
        raise ValueError("weights and working_response must match the row count")
    if not (np.all(np.isfinite(w)) and np.all(w >= 0)):
        raise ValueError("weights must be finite and non-negative")
    if int(np.count_nonzero(w > 0)) < design.n_features and ridge == 0:
        raise RankDeficientError(
            f"only {int(np.count_nonzero(w > 0))} positive-weight rows for "
            f"{design.n_features} features"
        )
    return _wls_qr(design.to_dense(), w, z, ridge)


def _saturated_log_likelihood(y: np.ndarray, m: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(y > 0, y * np.log(y / m), 0.0)
        t2 = np.where(m - y > 0, (m - y) * np.log(1.0 - y / m), 0.0)
    return float(np.sum(t1 + t2))


def _log_likelihood_eta(y: np.ndarray, m: np.ndarray, eta: np.ndarray) -> float:
    return float(np.sum(y * eta - m * np.logaddexp(0.0, eta)))


def deviance(beta: Sequence[float] | np.ndarray, design: DesignMatrix) -> float:
    """Twice the gap to the saturated model; the solver's convergence metric."""
    x = design.to_dense()
    y, m = design.responses()
    eta = x @ np.asarray(beta, dtype=float)
    return 2.0 * (_saturated_log_likelihood(y, m) - _log_likelihood_eta(y, m, eta))


class _ReusedQR:
    """Factor X = QR once; each reweighted solve reduces to a p x p system.

    Exact in exact arithmetic (it is the same least-squares problem expressed
    in the R-coordinate system) but numerically inferior to refactorizing, so
    it stays behind FitConfig.reuse_qr and is validated against the exact path.
    """

    def __init__(self, x: np.ndarray):
        self.q, self.r = np.linalg.qr(x, mode="reduced")
        diag = np.abs(np.diag(self.r))
        if diag.min() <= diag.max() * 1e-12:
            raise RankDeficientError("design rank-deficient; reuse path needs full rank")

    def solve(self, weights: np.ndarray, z: np.ndarray, ridge: float) -> np.ndarray:
        p = self.r.shape[0]
        wq = self.q * weights[:, None]
        a = self.r.T @ (self.q.T @ wq) @ self.r
        if ridge > 0:
            a[1:, 1:][np.diag_indices(p - 1)] += ridge
        b = self.r.T @ (self.q.T @ (weights * z))
        return np.linalg.solve(a, b)


def fit(design: DesignMatrix, config: FitConfig = FitConfig()) -> FitResult:
    """IRLS with step-halving; returns the best iterate even when not converged.

    Weights are m * pi * (1 - pi); each update is a QR-factorized weighted
    least-squares solve.  Quasi-separation (|eta| beyond the configured bound)
    is reported as a warning, not an error: the ridge keeps the optimum finite.
    """
    y, m = design.responses()
    n = len(design.rows)
    if n == 0:
        raise DegenerateDataError("empty design")
    if y.sum() == 0:
        raise DegenerateDataError("no positive responses in design")
    if (m - y).sum() == 0:
        raise DegenerateDataError("no negative responses in design")

    x = design.to_dense()
    p = design.n_features
    warnings: list[str] = []
    reused = _ReusedQR(x) if config.reuse_qr else None

    beta = np.zeros(p)
    beta[0] = logit((y.sum() + 0.5) / (m.sum() + 1.0))  # pooled-mean start

    def objective(b: np.ndarray) -> tuple[float, float]:
        eta = x @ b
        dev = 2.0 * (sat_ll - _log_likelihood_eta(y, m, eta))
        return dev, dev + config.ridge * float(b[1:] @ b[1:])

    sat_ll = _saturated_log_likelihood(y, m)
    dev, pen = objective(beta)
    trace = [dev]
    converged = False
    separated = False
    iterations = 0

    for iterations in range(1, config.max_iterations + 1):
        eta = x @ beta
        if not separated and float(np.max(np.abs(eta))) > config.separation_eta_bound:
            separated = True
            warnings.append(
                f"quasi-separation: |eta| exceeded {config.separation_eta_bound:g}"
            )
        pi = expit(eta)
        w = np.maximum(m * pi * (1.0 - pi), _WEIGHT_FLOOR)
        z = eta + (y - m * pi) / w
        if reused is not None:
            proposal = reused.solve(w, z, config.ridge)
        else:
            proposal = _wls_qr(x, w, z, config.ridge)

        # Step-halving: back off toward the current iterate if the penalized
        # deviance would increase (raw IRLS can overshoot on rare-event data).
        step = proposal - beta
        accepted = False
        for half in range(11):
            candidate = beta + step * (0.5**half)
            c_dev, c_pen = objective(candidate)
            if math.isfinite(c_pen) and c_pen <= pen + 1e-12 * (1.0 + abs(pen)):
                beta, new_dev, new_pen = candidate, c_dev, c_pen
                accepted = True
                break
        if not accepted:
            warnings.append("step-halving exhausted; keeping previous iterate")
            break

        trace.append(new_dev)
        rel_change = abs(pen - new_pen) / (abs(new_pen) + 0.1)
        dev, pen = new_dev, new_pen
        if rel_change < config.tolerance:
            converged = True
            break

    if not converged:
        warnings.append(f"not converged after {iterations} iterations")
    log.debug(
        "fit: n=%d p=%d iterations=%d converged=%s deviance=%.6g",
        n, p, iterations, converged, dev,
    )
    return FitResult(
        beta=beta,
        converged=converged,
        iterations=iterations,
        final_deviance=dev,
        warnings=tuple(warnings),
        deviance_trace=tuple(trace),
    )
