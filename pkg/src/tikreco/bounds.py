"""Numerical verification of the perturbed-operator error estimate.

For a truth satisfying the source condition x_true = A^t w (the quadratic
penalty's smoothness hypothesis), the minimizer x_a of

    0.5 * || A~ x - y_delta ||^2 + 0.5 * alpha * ||x||^2

with a perturbed operator A~ (operator error eps = ||A - A~||_2 in spectral
norm) and noisy data (data error delta = ||y_delta - y_true||) obeys

    || x_a - x_true ||^2 <= 4/alpha * (eps*||x_true|| + delta)^2
                            + 4*alpha*||w||^2 + 4*eps^2*||w||^2

and the sharper mixed-term inequality

    0.5*||x_a - x_true||^2 <= 1/alpha * (eps*||x_true|| + delta)^2
                              + alpha*||w||^2 + eps*||w||*||x_true - x_a||.

This module constructs instances where both must hold and checks them; any
violation on a valid instance indicates a defect in the solver or in the
instance construction, never a tolerance issue.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .kaczmarz import KaczmarzConfig, kaczmarz_solve


class InstanceNotConverged(RuntimeError):
    """Minimizer failed its accuracy check; the instance must not be counted."""


@dataclass
class BoundInstance:
    A: np.ndarray
    A_tilde: np.ndarray
    x_true: np.ndarray
    w: np.ndarray
    y_true: np.ndarray
    y_delta: np.ndarray
    alpha: float
    delta: float = None  # ||y_delta - y_true||
    eps: float = None  # ||A - A_tilde||_2, spectral

    def __post_init__(self):
        if self.delta is None:
            self.delta = float(np.linalg.norm(self.y_delta - self.y_true))
        if self.eps is None:
            self.eps = spectral_norm(self.A - self.A_tilde)


@dataclass
class BoundReport:
    alpha: float
    eps: float
    delta: float
    lhs: float  # ||x_a - x_true||^2
    rhs: float  # quadratic_bound_rhs
    holds: bool
    slack: float  # rhs - lhs
    mixed_lhs: float  # 0.5 * ||x_a - x_true||^2
    mixed_rhs: float
    mixed_holds: bool


def spectral_norm(M):
    """Largest singular value via dense SVD (verification-sized inputs)."""
    M = np.asarray(M, dtype=np.float64)
    if not M.any():
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[0])


def construct_source(A, w):
    """Truth pair (x_true, y_true) satisfying the source condition exactly."""
    A = np.asarray(A, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.shape[0] != A.shape[0]:
        raise ValueError(f"w must have length {A.shape[0]}, got {w.shape[0]}")
    x_true = A.T @ w
    return x_true, A @ x_true


def construct_nonneg_source(A, rng, max_tries=1000):
    """Resample w until A^t w is componentwise nonnegative.

    Returns (x_true, y_true, w, feasible). When no feasible w turns up
    within the budget the last draw is returned with feasible=False and the
    caller should fall back to unconstrained verification.
    """
    A = np.asarray(A, dtype=np.float64)
    w = None
    for _ in range(max_tries):
        w = rng.standard_normal(A.shape[0])
        x_true = A.T @ w
        if np.all(x_true >= 0):
            return x_true, A @ x_true, w, True
    x_true, y_true = construct_source(A, w)
    return x_true, y_true, w, False


def quadratic_bound_rhs(alpha, eps, delta, norm_xdag, norm_w):
    """Right-hand side of the squared-error estimate."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if min(eps, delta, norm_xdag, norm_w) < 0:
        raise ValueError("eps, delta and the norms must be nonnegative")
    c = eps * norm_xdag + delta
    return 4.0 * c**2 / alpha + 4.0 * alpha * norm_w**2 + 4.0 * eps**2 * norm_w**2


def optimal_alpha(eps, delta, norm_xdag, norm_w):
    """Balance point of the first two rhs terms, (eps*||x||+delta)/||w||."""
    if norm_w <= 0:
        raise ValueError("need a nonzero source element")
    return (eps * norm_xdag + delta) / norm_w


def _tikhonov_normal_eq(A, y, alpha):
    n, m = A.shape
    x = np.linalg.solve(A.T @ A + alpha * np.eye(m), A.T @ y)
    grad = A.T @ (A @ x - y) + alpha * x
    if np.linalg.norm(grad) > 1e-8:
        raise InstanceNotConverged(
            f"normal-equations gradient norm {np.linalg.norm(grad):.2e} > 1e-8"
        )
    return x


def _constrained_active_set(A, y, alpha):
    """Exhaustive minimizer of the constrained problem for tiny m."""
    m = A.shape[1]
    if m > 10:
        raise ValueError("active-set enumeration is limited to m <= 10")
    best_x, best_obj = None, np.inf
    for pattern in range(2**m):
        free = [j for j in range(m) if pattern >> j & 1]
        x = np.zeros(m)
        if free:
            Af = A[:, free]
            xf = np.linalg.solve(
                Af.T @ Af + alpha * np.eye(len(free)), Af.T @ y
            )
            if np.any(xf < 0):
                continue
            x[free] = xf
        obj = np.linalg.norm(A @ x - y) ** 2 + alpha * np.dot(x, x)
        if obj < best_obj:
            best_obj, best_x = obj, x
    return best_x


def _constrained_minimizer(A, y, alpha):
    cfg = KaczmarzConfig(alpha=alpha, sweeps=500)
    x_k = kaczmarz_solve(A, y, cfg).x
    if A.shape[1] <= 10:
        x_e = _constrained_active_set(A, y, alpha)
        scale = max(np.linalg.norm(x_e), 1.0)
        if np.linalg.norm(x_k - x_e) > 1e-5 * scale:
            raise InstanceNotConverged(
                "iterative and enumerated constrained minimizers disagree by "
                f"{np.linalg.norm(x_k - x_e):.2e}"
            )
        return x_e
    return x_k


def verify_bound(inst: BoundInstance, constrained=False):
    """Evaluate both inequalities on one instance.

    The minimizer is computed by normal equations (unconstrained, with an
    explicit gradient check) or, for constrained runs on tiny problems, by
    the row-action solver cross-checked against exhaustive enumeration.
    """
    if constrained:
        x_a = _constrained_minimizer(inst.A_tilde, inst.y_delta, inst.alpha)
    else:
        x_a = _tikhonov_normal_eq(inst.A_tilde, inst.y_delta, inst.alpha)

    norm_x = float(np.linalg.norm(inst.x_true))
    norm_w = float(np.linalg.norm(inst.w))
    err = float(np.linalg.norm(x_a - inst.x_true))

    lhs = err**2
    rhs = quadratic_bound_rhs(inst.alpha, inst.eps, inst.delta, norm_x, norm_w)
    c = inst.eps * norm_x + inst.delta
    mixed_rhs = c**2 / inst.alpha + inst.alpha * norm_w**2 + inst.eps * norm_w * err

    return BoundReport(
        alpha=inst.alpha,
        eps=inst.eps,
        delta=inst.delta,
        lhs=lhs,
        rhs=rhs,
        holds=bool(lhs <= rhs),
        slack=rhs - lhs,
        mixed_lhs=0.5 * lhs,
        mixed_rhs=mixed_rhs,
        mixed_holds=bool(0.5 * lhs <= mixed_rhs),
    )


def truncate_rank(A, k):
    """Rank-k spectral truncation (the canonical eps = sigma_{k+1} perturbation)."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return (U[:, :k] * s[:k]) @ Vt[:k]


def bound_sweep(n=10, m=6, seeds=range(7), alphas=None, trunc_ranks=(None, 2, 1),
                deltas=(0.0, 1e-3, 1e-1), constrained=False):
    """Exhaustive instance sweep; returns a list of BoundReport.

    Instances: seeded Gaussian A, source truth from a seeded w, operator
    perturbations from spectral truncation, data perturbations of exact
    norm delta. Non-converged instances are skipped, never counted.
    """
    if alphas is None:
        alphas = [10.0 ** (-i) for i in range(9)]  # 1e0 .. 1e-8
    reports = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((n, m))
        if constrained:
            x_true, y_true, w, feasible = construct_nonneg_source(A, rng)
            if not feasible:
                continue
        else:
            w = rng.standard_normal(n)
            x_true, y_true = construct_source(A, w)
        noise_dir = rng.standard_normal(n)
        noise_dir /= np.linalg.norm(noise_dir)
        for k in trunc_ranks:
            A_tilde = A if k is None else truncate_rank(A, k)
            for delta in deltas:
                y_delta = y_true + delta * noise_dir
                for alpha in alphas:
                    inst = BoundInstance(
                        A=A, A_tilde=A_tilde, x_true=x_true, w=w,
                        y_true=y_true, y_delta=y_delta, alpha=alpha,
                    )
                    try:
                        reports.append(verify_bound(inst, constrained=constrained))
                    except InstanceNotConverged:
                        continue
    return reports


def write_report_csv(path, reports):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "eps", "delta", "lhs", "rhs", "slack", "holds"])
        for r in reports:
            writer.writerow(
                ["%.17g" % r.alpha, "%.17g" % r.eps, "%.17g" % r.delta,
                 "%.17g" % r.lhs, "%.17g" % r.rhs, "%.17g" % r.slack,
                 int(r.holds)]
            )
