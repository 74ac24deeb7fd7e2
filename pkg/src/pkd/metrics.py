"""Quantitative evaluation: objective descent, remaining-knowledge drift,
probe-gradient bounds, and the sparsity metrics PPR/PSR, plus the lambda sweep.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .core import ExtrapolationTrace, PkdConfig, batch_objective, run_pkd
from .models import GeneratorModel, PosteriorModel, mlp_nodes
from .paramvec import ParamVector
from .rng import substream


@dataclass(frozen=True)
class Probe:
    """A fixed scalar probe f(x), differentiable through the generator."""

    name: str
    build: Callable[[ad.Node], ad.Node]  # (n, d) node -> (n, 1) node

    def __call__(self, x: np.ndarray) -> np.ndarray:
        node = self.build(ad.Node(np.atleast_2d(x), op="input:x"))
        return node.value[:, 0]


def posterior_probe(name: str, post: PosteriorModel) -> Probe:
    const = post.const_nodes()
    return Probe(name=name, build=lambda x: post.prob_nodes(x, const))


def coordinate_probe(i: int, dim: int) -> Probe:
    w = ad.Node(np.eye(dim)[i : i + 1], op="const:probe-dir")
    b = ad.Node(np.zeros(1), op="const:probe-bias")
    return Probe(name=f"coord_{i}", build=lambda x: ad.affine(x, w, b))


def objective_estimate(
    gen: GeneratorModel, post: PosteriorModel, z: np.ndarray, params: ParamVector | None = None
) -> tuple[float, float]:
    """Monte Carlo mean of log(1 - P_l(G(z))) with its standard error."""
    return batch_objective(gen, post, z, params)


def delta_descent(
    gen: GeneratorModel,
    post: PosteriorModel,
    theta_before: ParamVector,
    theta_after: ParamVector,
    z: np.ndarray,
) -> float:
    """Objective descent on a shared eval set; positive when extrapolation
    moved generated samples toward the knowledge of interest."""
    before, _ = batch_objective(gen, post, z, theta_before)
    after, _ = batch_objective(gen, post, z, theta_after)
    return before - after


def delta_remaining(
    gen: GeneratorModel,
    theta_before: ParamVector,
    theta_after: ParamVector,
    probes: list[Probe],
    z: np.ndarray,
) -> tuple[dict[str, float], float]:
    """Mean absolute probe shift over shared latent codes, per probe and the
    max across probes."""
    x_before = gen.generate(z, theta_before)
    x_after = gen.generate(z, theta_after)
    per_probe = {
        p.name: float(np.mean(np.abs(p(x_after) - p(x_before)))) for p in probes
    }
    return per_probe, max(per_probe.values()) if per_probe else 0.0


def lipschitz_estimate(
    gen: GeneratorModel,
    probes: list[Probe],
    radius: float,
    n_theta: int = 5,
    n_z: int = 16,
    seed: int = 0,
) -> float:
    """Sampled lower bound on sup ||grad_theta f(G_theta(z))||_inf over the
    infinity ball of the given radius around the current parameters."""
    if n_theta < 1 or n_z < 1:
        raise ValueError("need at least one theta and one z sample")
    rng = substream(seed, "lipschitz")
    thetas = [gen.params]
    for _ in range(n_theta - 1):
        bump = rng.uniform(-radius, radius, size=gen.params.size)
        thetas.append(gen.params.replaced(gen.params.values + bump))
    zs = gen.prior.sample(rng, n_z, gen.latent_dim)

    best = 0.0
    for probe in probes:

        def build(inputs, pnodes, probe=probe):
            x = mlp_nodes(inputs["z"], pnodes, gen.spec)
            return ad.mean(probe.build(x))

        graph = ad.Graph(build)
        for theta in thetas:
            for z in zs:
                graph.forward({"z": z.reshape(1, -1)}, theta)
                g = graph.backward()
                best = max(best, float(np.abs(g).max()))
    return best


def ppr(
    gen: GeneratorModel,
    post: PosteriorModel,
    theta_before: ParamVector,
    theta_after: ParamVector,
    z: np.ndarray,
) -> np.ndarray:
    """Knowledge-change-per-sample-change ratio, per latent code:
    |log P_l(after) - log P_l(before)| / (mean squared output change).

    The output dimension d plays the role of the pixel count for vector data.
    """
    z = np.atleast_2d(z)
    x_before = gen.generate(z, theta_before)
    x_after = gen.generate(z, theta_after)
    denom = np.sum((x_after - x_before) ** 2, axis=1) / gen.spec.out_dim
    if np.any(denom <= 1e-18):
        raise ValueError("no output change: PPR denominator is zero")
    num = np.abs(np.log(post.prob(x_after)) - np.log(post.prob(x_before)))
    return num / denom


def psr(trace: ExtrapolationTrace, n_params: int) -> float:
    """Fraction of parameters that were ever updated during the run."""
    if trace.cumulative_mask is None:
        raise ValueError("trace is incomplete")
    return float(trace.cumulative_mask.sum()) / n_params


@dataclass
class SweepRow:
    lam: float
    delta: float
    delta_rem: float
    ratio: float
    psr: float
    ppr_mean: float
    ppr_std: float


def lambda_sweep(
    gen: GeneratorModel,
    post: PosteriorModel,
    probes: list[Probe],
    lambdas: list[float],
    config: PkdConfig,
    ppr_sample: int = 256,
) -> list[SweepRow]:
    """One full run per lambda with a shared seed and shared eval set."""
    if len(lambdas) == 0:
        raise ValueError("lambda grid is empty")
    prior = gen.prior
    z_eval = prior.sample(substream(config.seed, "eval"), config.eval_size, gen.latent_dim)
    rows = []
    for lam in lambdas:
        theta, trace = run_pkd(gen, post, replace(config, lam=lam))
        delta = delta_descent(gen, post, gen.params, theta, z_eval)
        _, delta_rem = delta_remaining(gen, gen.params, theta, probes, z_eval)
        if trace.cumulative_mask.any():
            ratios = ppr(gen, post, gen.params, theta, z_eval[:ppr_sample])
            ppr_mean, ppr_std = float(ratios.mean()), float(ratios.std())
        else:
            ppr_mean, ppr_std = float("nan"), float("nan")
        rows.append(
            SweepRow(
                lam=float(lam),
                delta=delta,
                delta_rem=delta_rem,
                ratio=delta / max(delta_rem, 1e-15),
                psr=psr(trace, gen.params.size),
                ppr_mean=ppr_mean,
                ppr_std=ppr_std,
            )
        )
    return rows


def sweep_to_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["lambda", "delta", "delta_remaining", "delta_ratio", "psr", "ppr_mean", "ppr_std"])
        for r in rows:
            writer.writerow(
                [repr(v) for v in (r.lam, r.delta, r.delta_rem, r.ratio, r.psr, r.ppr_mean, r.ppr_std)]
            )


def plot_sweep(rows: list[SweepRow], path) -> None:
    """PSR and descent ratio against lambda on a log axis, as an SVG."""
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    lams = [r.lam for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(lams, [r.psr for r in rows], marker="o")
    ax1.set_xscale("log")
    ax1.set_xlabel("lambda")
    ax1.set_ylabel("PSR")
    ax2.plot(lams, [r.ratio for r in rows], marker="o", color="tab:orange")
    ax2.set_xscale("log")
    ax2.set_xlabel("lambda")
    ax2.set_ylabel("delta / delta_remaining")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
