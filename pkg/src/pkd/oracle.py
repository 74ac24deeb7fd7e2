"""Exact, small-scale verification machinery for the method's guarantees.

Discrete finite-support worlds make the counterfactual target distribution
and the optimal discriminator exactly computable; the per-coordinate LP
oracle and its dual certificate verify the closed-form sparse step by
independent means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SATURATION = 1.0 - 1e-12
GAP_TOL = 1e-12


class CertificateError(RuntimeError):
    """A KKT/duality check failed; indicates an implementation bug."""


class WorldError(ValueError):
    pass


@dataclass
class DiscreteWorld:
    """Finite-support (P_X, P_l, P_G) triple, optionally with the derived
    counterfactual distribution P_H and its normalization constant Z."""

    p_x: np.ndarray
    p_l: np.ndarray
    p_g: np.ndarray | None = None
    p_h: np.ndarray | None = None
    z: float | None = None

    def __post_init__(self):
        self.p_x = np.asarray(self.p_x, dtype=np.float64)
        self.p_l = np.asarray(self.p_l, dtype=np.float64)
        if self.p_g is None:
            self.p_g = self.p_x.copy()
        self.p_g = np.asarray(self.p_g, dtype=np.float64)
        for name, p in (("p_x", self.p_x), ("p_g", self.p_g)):
            if abs(p.sum() - 1.0) > 1e-12 or np.any(p < 0):
                raise WorldError(f"{name} must be a probability vector (sum {p.sum()})")
        if np.any(self.p_l <= 0) or np.any(self.p_l >= 1):
            raise WorldError("p_l must be strictly inside (0, 1)")


def build_hypothetical(world: DiscreteWorld) -> DiscreteWorld:
    """Fill in P_H(x) proportional to P_G(x) * P_l(x)/(1-P_l(x)), recording Z."""
    if np.any(world.p_l >= SATURATION):
        raise WorldError("p_l >= 1 - 1e-12 somewhere: odds ratio diverges")
    unnormalized = world.p_g * world.p_l / (1.0 - world.p_l)
    z = float(unnormalized.sum())
    return DiscreteWorld(
        p_x=world.p_x, p_l=world.p_l, p_g=world.p_g, p_h=unnormalized / z, z=z
    )


def calibrate(world: DiscreteWorld, tol: float = 1e-12) -> DiscreteWorld:
    """Shift all posterior logits by a common offset until Z = 1.

    The clean optimal-discriminator identity D* = P_l needs the odds-ratio
    relation to hold between two *normalized* distributions, which pins one
    degree of freedom of P_l; bisection on the common logit shift finds it.
    """
    logits = np.log(world.p_l) - np.log1p(-world.p_l)

    def z_of(c: float) -> float:
        # sum p_g * odds, odds = exp(logit + c)
        return float(np.sum(world.p_g * np.exp(logits + c)))

    lo, hi = -1.0, 1.0
    while z_of(lo) > 1.0:
        lo *= 2
    while z_of(hi) < 1.0:
        hi *= 2
    while hi - lo > 1e-15:
        mid = 0.5 * (lo + hi)
        if z_of(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    p_l = 1.0 / (1.0 + np.exp(-(logits + c)))
    out = build_hypothetical(DiscreteWorld(p_x=world.p_x, p_l=p_l, p_g=world.p_g))
    if abs(out.z - 1.0) > max(tol, 1e-10):
        raise WorldError(f"calibration failed: Z = {out.z}")
    return out


def random_calibrated_world(rng: np.random.Generator, n_atoms: int) -> DiscreteWorld:
    p_g = rng.dirichlet(np.ones(n_atoms))
    p_g = np.maximum(p_g, 1e-6)
    p_g /= p_g.sum()
    p_l = rng.uniform(0.05, 0.95, size=n_atoms)
    return calibrate(DiscreteWorld(p_x=p_g, p_l=p_l, p_g=p_g))


def optimal_discriminator(world: DiscreteWorld) -> np.ndarray:
    """Per-atom maximizer of a*log(d) + b*log(1-d) with a = P_H, b = P_G,
    which is a/(a+b).  Equals P_l exactly when Z = 1."""
    if world.p_h is None:
        raise WorldError("world has no P_H; call build_hypothetical first")
    return world.p_h / (world.p_h + world.p_g)


def discriminator_by_bisection(a: float, b: float, tol: float = 1e-9) -> float:
    """Brute-force maximizer of a*log(d) + b*log(1-d) on (0, 1).

    Bisects on the sign of the derivative a/d - b/(1-d); independent of the
    closed form a/(a+b)."""
    lo, hi = tol, 1.0 - tol
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if a / mid - b / (1.0 - mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def lp_oracle(v: np.ndarray, eps: float, lam: float) -> np.ndarray:
    """Exact minimizer of sum_i v_i*x_i + lam*|x_i| over the box [-eps, eps]^N.

    The objective is separable and piecewise linear in each coordinate, so the
    optimum lies in {-eps, 0, +eps}; evaluate all three and keep the best,
    resolving ties toward 0."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros_like(v)
    for i, vi in np.ndenumerate(v):
        best_x, best_val = 0.0, 0.0
        for x in (-eps, eps):
            val = vi * x + lam * abs(x)
            if val < best_val:
                best_x, best_val = x, val
        out[i] = best_x
    return out


def lp_oracle_grid(v: np.ndarray, eps: float, lam: float, points: int = 201) -> np.ndarray:
    """Non-separable fallback: joint grid search over the box (<= 3 dims).

    Exists purely to validate the separability argument behind lp_oracle."""
    v = np.asarray(v, dtype=np.float64)
    if v.size > 3:
        raise ValueError("grid fallback supports at most 3 dimensions")
    axis = np.linspace(-eps, eps, points)
    grids = np.meshgrid(*([axis] * v.size), indexing="ij")
    x = np.stack([g.ravel() for g in grids], axis=1)
    vals = x @ v + lam * np.abs(x).sum(axis=1)
    return x[int(np.argmin(vals))]


@dataclass
class DualCertificate:
    beta: np.ndarray
    gamma: np.ndarray
    primal: float
    dual: float


def dual_solution(v: np.ndarray, eps: float, lam: float) -> DualCertificate:
    """Construct the box-constraint multipliers (beta, gamma) in closed form
    and verify dual feasibility, complementary slackness against the primal
    minimizer, and zero duality gap."""
    v = np.asarray(v, dtype=np.float64)
    beta = np.where(v <= -lam, -lam - v, 0.0)
    gamma = np.where(v >= lam, v - lam, 0.0)

    if np.any(beta < 0) or np.any(gamma < 0):
        raise CertificateError("multiplier negativity")
    if np.max(np.abs(v + beta - gamma), initial=0.0) > lam + GAP_TOL:
        raise CertificateError("dual infeasibility: ||V + beta - gamma||_inf > lambda")

    x = lp_oracle(v, eps, lam)
    slack = np.max(np.abs(beta * (x - eps)), initial=0.0)
    slack = max(slack, np.max(np.abs(gamma * (-eps - x)), initial=0.0))
    if slack > GAP_TOL * max(1.0, float(np.abs(v).max(initial=0.0))):
        raise CertificateError(f"complementary slackness violated by {slack}")

    primal = float(v @ x + lam * np.abs(x).sum())
    dual = float(-eps * (beta + gamma).sum())
    if abs(primal - dual) > GAP_TOL * max(1.0, abs(primal)):
        raise CertificateError(f"duality gap {primal - dual}")
    return DualCertificate(beta=beta, gamma=gamma, primal=primal, dual=dual)


@dataclass
class StepAccount:
    step: int
    active_count: int
    predicted: float  # first-order descent eps * sum of active |gradient|
    floor: float  # M_k * lambda * eps
    realized: float  # actual decrease of the fixed-batch objective
    flagged: bool  # |realized - predicted| beyond the curvature allowance


def verify_step_accounting(trace, lam: float, eps: float, curvature_allowance: float = 1e4):
    """Check each step of a fixed-batch run against the first-order theory:
    predicted descent >= M_k*lambda*eps, and realized close to predicted."""
    if not trace.fixed_batch:
        raise ValueError("step accounting requires a fixed-batch trace")
    out: list[StepAccount] = []
    for rec in trace.records:
        predicted = eps * rec.grad_active_abs_sum
        realized = rec.objective_batch_before - rec.objective_batch_after
        floor = rec.active_count * lam * eps
        if predicted < floor:
            raise CertificateError(
                f"step {rec.step}: predicted descent {predicted} < M*lambda*eps {floor}"
            )
        flagged = abs(realized - predicted) > curvature_allowance * eps * eps
        out.append(
            StepAccount(
                step=rec.step,
                active_count=rec.active_count,
                predicted=predicted,
                floor=floor,
                realized=realized,
                flagged=flagged,
            )
        )
    return out
