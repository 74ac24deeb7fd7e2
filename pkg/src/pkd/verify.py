"""Executable verification suites behind `pkd verify`.

Each check pits a production code path against an independent oracle
(three-point enumeration, bisection, central finite differences) and reports
a named pass/fail with its tolerance.  The acceptance tests reuse these.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import closed_form_step, knowledge_gradient
from .models import GeneratorModel, MlpSpec, PosteriorModel
from .oracle import (
    CertificateError,
    build_hypothetical,
    discriminator_by_bisection,
    dual_solution,
    lp_oracle,
    optimal_discriminator,
    random_calibrated_world,
)
from .rng import substream


@dataclass
class CheckResult:
    name: str
    tolerance: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" [{self.detail}]" if self.detail else ""
        return f"{status}  {self.name} (tolerance {self.tolerance}){extra}"


def _random_step_instances(n_instances: int, seed: int):
    """Random (n, eps, lam) triples; every instance gets coordinates pinned
    at |n_i| in {lam/2, lam, 2*lam} to exercise the threshold boundary."""
    rng = substream(seed, "verify-step")
    for _ in range(n_instances):
        size = int(rng.integers(1, 50))
        lam = float(rng.uniform(0.05, 2.0))
        eps = float(10.0 ** rng.uniform(-4, 0))
        n = rng.normal(scale=2.0 * lam, size=size)
        for frac in (0.5, 1.0, 2.0):
            i = int(rng.integers(size))
            n[i] = float(rng.choice([-1.0, 1.0])) * frac * lam
        yield n, eps, lam


def check_closed_form_vs_lp(n_instances: int = 1000, seed: int = 0) -> CheckResult:
    worst = 0
    for n, eps, lam in _random_step_instances(n_instances, seed):
        step = closed_form_step(n, eps, lam)
        oracle = lp_oracle(-n, eps, lam)
        if not np.array_equal(step.delta(), oracle):
            worst += 1
    return CheckResult(
        name=f"closed-form step == LP oracle on {n_instances} instances",
        tolerance="exact",
        passed=worst == 0,
        detail=f"{worst} mismatches" if worst else "",
    )


def check_dual_certificates(n_instances: int = 1000, seed: int = 0) -> CheckResult:
    failures = []
    for n, eps, lam in _random_step_instances(n_instances, seed):
        try:
            dual_solution(-n, eps, lam)
        except CertificateError as exc:
            failures.append(str(exc))
    return CheckResult(
        name=f"dual certificates (feasibility/slackness/gap) on {n_instances} instances",
        tolerance="1e-12",
        passed=not failures,
        detail=failures[0] if failures else "",
    )


def check_optimal_discriminator(n_worlds: int = 100, seed: int = 0) -> CheckResult:
    rng = substream(seed, "verify-worlds")
    worst_closed, worst_bisect = 0.0, 0.0
    for _ in range(n_worlds):
        world = build_hypothetical(
            random_calibrated_world(rng, int(rng.integers(2, 51)))
        )
        d_star = optimal_discriminator(world)
        worst_closed = max(worst_closed, float(np.abs(d_star - world.p_l).max()))
        for a, b, d in zip(world.p_h, world.p_g, d_star):
            worst_bisect = max(
                worst_bisect, abs(discriminator_by_bisection(a, b) - d)
            )
    passed = worst_closed <= 1e-9 and worst_bisect <= 5e-9
    return CheckResult(
        name=f"optimal discriminator == P_l on {n_worlds} calibrated worlds",
        tolerance="1e-9 (closed form), 5e-9 (bisection)",
        passed=passed,
        detail=f"max |D*-P_l| = {worst_closed:.2e}, bisection gap {worst_bisect:.2e}",
    )


def _random_model_pair(rng) -> tuple[GeneratorModel, PosteriorModel, np.ndarray]:
    latent = int(rng.integers(2, 6))
    out = int(rng.integers(2, 6))
    hidden = ((), (3,), (4, 2))[int(rng.integers(3))]
    gain = float(rng.uniform(1.0, 20.0))
    gen = GeneratorModel.initialized(
        MlpSpec(latent, hidden, out, output_gain=gain), seed=int(rng.integers(1 << 30))
    )
    post = PosteriorModel.initialized(
        MlpSpec(out, (), 1), seed=int(rng.integers(1 << 30))
    )
    z = rng.standard_normal((int(rng.integers(3, 9)), latent))
    return gen, post, z


def _objective_value(gen, post, z, theta) -> float:
    p = post.prob(gen.generate(z, theta))
    return float(np.mean(np.log1p(-p)))


def check_gradients_fd(n_instances: int = 100, seed: int = 0, h: float = 1e-6) -> CheckResult:
    """Reverse-mode gradient of mean log(1 - P_l(G(z))) against central
    differences.  Relative error uses a per-instance scale floor so that
    coordinates with negligible gradient do not amplify finite-difference
    round-off into spurious failures."""
    rng = substream(seed, "verify-grad")
    worst = 0.0
    for _ in range(n_instances):
        gen, post, z = _random_model_pair(rng)
        a = -knowledge_gradient(gen, post, z)  # gradient of the objective
        theta = gen.params
        f = np.empty_like(a)
        for i in range(theta.size):
            bump = np.zeros(theta.size)
            bump[i] = h
            up = _objective_value(gen, post, z, theta.replaced(theta.values + bump))
            dn = _objective_value(gen, post, z, theta.replaced(theta.values - bump))
            f[i] = (up - dn) / (2.0 * h)
        scale = max(float(np.abs(f).max()), 1e-6)
        rel = np.abs(a - f) / np.maximum(np.abs(f), 1e-2 * scale)
        worst = max(worst, float(rel.max()))
    return CheckResult(
        name=f"reverse-mode vs central differences (h={h:g}) on {n_instances} instances",
        tolerance="max relative error < 1e-4",
        passed=worst < 1e-4,
        detail=f"max relative error {worst:.2e}",
    )


SUITES = {
    "theorems": (
        check_closed_form_vs_lp,
        check_dual_certificates,
        check_optimal_discriminator,
    ),
    "gradients": (check_gradients_fd,),
}
SUITES["all"] = SUITES["theorems"] + SUITES["gradients"]


def run_suite(suite: str, seed: int = 0) -> list[CheckResult]:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    return [check(seed=seed) for check in SUITES[suite]]
