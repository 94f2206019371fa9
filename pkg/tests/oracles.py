"""Independent oracles used to freeze expected values.

Everything here recomputes results from first principles (direct summation,
exhaustive enumeration, lattice search, exact rational arithmetic) and
deliberately shares no code with the package's own numeric paths.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def direct_log_likelihood(beta, rows) -> float:
    """Term-by-term evaluation of the binomial log-likelihood, fsum-accumulated.

    rows: iterable of (y, m, active_indices).
    """
    terms = []
    for y, m, active in rows:
        eta = beta[0] + sum(beta[j] for j in active)
        if eta > 0:
            softplus = eta + math.log1p(math.exp(-eta))
        else:
            softplus = math.log1p(math.exp(eta))
        terms.append(y * eta - m * softplus)
    return math.fsum(terms)


def _ll_lattice(x: np.ndarray, y: np.ndarray, betas: np.ndarray) -> np.ndarray:
    """Vectorized Bernoulli log-likelihood for a lattice of coefficient vectors."""
    eta = betas @ x.T  # (n_points, n_rows)
    return eta @ y - np.logaddexp(0.0, eta).sum(axis=1)


def lattice_maximizer(
    x: np.ndarray,
    y: np.ndarray,
    span: float = 4.0,
    points: int = 9,
    final_step: float = 1e-3,
) -> np.ndarray:
    """Multi-resolution full-lattice search for the log-likelihood maximum.

    Only usable for a handful of coefficients (points**p lattice per level);
    it never looks at gradients, making it a genuine brute-force check.
    """
    p = x.shape[1]
    center = np.zeros(p)
    step = 2.0 * span / (points - 1)
    axes = np.linspace(-span, span, points)
    offsets = np.stack(np.meshgrid(*([axes] * p), indexing="ij"), axis=-1).reshape(-1, p)
    scale = 1.0
    while True:
        lattice = center + offsets * scale
        best = int(np.argmax(_ll_lattice(x, y, lattice)))
        center = lattice[best]
        if step * scale <= final_step:
            return center
        scale *= 2.0 / (points - 1)  # next lattice spans +-1 previous step


def coordinate_grid_maximizer(
    x: np.ndarray,
    y: np.ndarray,
    lo: float = -8.0,
    hi: float = 8.0,
    points: int = 41,
    final_step: float = 2e-4,
    sweeps: int = 60,
) -> np.ndarray:
    """Coordinate-wise zooming grid search on the Bernoulli log-likelihood.

    Each coordinate is optimized by repeated 1-d grid refinement while the
    others stay fixed; sweeps repeat until no coordinate moves.  Concavity
    of the objective makes the sweep converge to the global maximizer.
    """
    p = x.shape[1]
    beta = np.zeros(p)
    eta = x @ beta
    for _ in range(sweeps):
        moved = 0.0
        for j in range(p):
            base = eta - x[:, j] * beta[j]
            a, b = lo, hi
            best = beta[j]
            while True:
                grid = np.linspace(a, b, points)
                etas = base[None, :] + x[None, :, j] * grid[:, None]
                ll = etas @ y - np.logaddexp(0.0, etas).sum(axis=1)
                k = int(np.argmax(ll))
                best = grid[k]
                step = (b - a) / (points - 1)
                if step <= final_step:
                    break
                a, b = best - step, best + step
            moved = max(moved, abs(best - beta[j]))
            beta[j] = best
            eta = base + x[:, j] * best
        if moved < final_step:
            break
    return beta


def exact_normal_equations(x, w, z, ridge: float = 0.0) -> list[Fraction]:
    """Weighted ridge least squares solved exactly over the rationals.

    Forms X'WX + ridge*D (intercept unpenalized) from float inputs converted
    to Fractions, then Gauss-eliminates without any rounding.
    """
    n, p = len(x), len(x[0])
    xf = [[Fraction(v) for v in row] for row in x]
    wf = [Fraction(v) for v in w]
    zf = [Fraction(v) for v in z]
    a = [[Fraction(0)] * p for _ in range(p)]
    b = [Fraction(0)] * p
    for i in range(n):
        for r in range(p):
            xw = xf[i][r] * wf[i]
            b[r] += xw * zf[i]
            for c in range(p):
                a[r][c] += xw * xf[i][c]
    if ridge:
        rf = Fraction(ridge)
        for r in range(1, p):
            a[r][r] += rf
    # Gaussian elimination with partial pivoting (exact, pivot for zero-safety)
    for col in range(p):
        pivot = max(range(col, p), key=lambda r: abs(a[r][col]))
        if a[pivot][col] == 0:
            raise ZeroDivisionError("singular system")
        a[col], a[pivot] = a[pivot], a[col]
        b[col], b[pivot] = b[pivot], b[col]
        for r in range(col + 1, p):
            f = a[r][col] / a[col][col]
            if f:
                b[r] -= f * b[col]
                for c in range(col, p):
                    a[r][c] -= f * a[col][c]
    out = [Fraction(0)] * p
    for r in range(p - 1, -1, -1):
        s = b[r] - sum(a[r][c] * out[c] for c in range(r + 1, p))
        out[r] = s / a[r][r]
    return out


def pairwise_auc(pos_scores, neg_scores) -> float:
    """P(score+ > score-) + half the tie probability, by full enumeration."""
    wins = 0.0
    for sp in pos_scores:
        for sn in neg_scores:
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / (len(pos_scores) * len(neg_scores))


def dense_eta(beta0: float, beta: dict[int, float], active, n_features: int) -> float:
    """Dense dot-product x'b over the full coefficient vector."""
    vec = np.zeros(n_features)
    vec[0] = beta0
    for j, v in beta.items():
        vec[j] = v
    x = np.zeros(n_features)
    x[0] = 1.0
    for j in active:
        x[j] = 1.0
    return float(x @ vec)


def confusion_by_double_loop(truths, accepted_sets, chosens, campaign_ids,
                             credit_any_acceptor: bool):
    """Naive per-(impression, model) confusion recount.

    truths: list of true campaign ids; accepted_sets: list of sets;
    chosens: list of chosen id or None (ignored when crediting acceptors).
    """
    counts = {cid: {"tp": 0, "fp": 0, "tn": 0, "fn": 0} for cid in campaign_ids}
    for truth, accepted, chosen in zip(truths, accepted_sets, chosens):
        for cid in campaign_ids:
            if credit_any_acceptor:
                positive_call = cid in accepted
            else:
                positive_call = chosen == cid
            if positive_call and truth == cid:
                counts[cid]["tp"] += 1
            elif positive_call:
                counts[cid]["fp"] += 1
            elif truth == cid:
                counts[cid]["fn"] += 1
            else:
                counts[cid]["tn"] += 1
    return counts
