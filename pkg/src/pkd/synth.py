"""Synthetic attribute-labeled Gaussian-mixture distributions.

These stand in for real image datasets: the data distribution is a diagonal
Gaussian mixture, and every attribute label is a logistic function of a fixed
linear functional of x, so the true posterior and the true hypothetical
(counterfactually extrapolated) density are analytically available.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .rng import substream

SATURATION = 1.0 - 1e-12


class PosteriorSaturatedError(ValueError):
    """The density ratio P_l/(1-P_l) diverges at this point."""


@dataclass(frozen=True)
class Attribute:
    """Logistic label: P(attr|x) = sigmoid(slope * (direction . x - offset))."""

    direction: np.ndarray
    offset: float
    slope: float

    def prob(self, x: np.ndarray) -> np.ndarray:
        z = self.slope * (np.asarray(x) @ self.direction - self.offset)
        return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: np.ndarray
    var: np.ndarray  # diagonal covariance entries


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    attributes: dict[str, float]


@dataclass(frozen=True)
class AttributeMixtureSpec:
    dimension: int
    components: list[MixtureComponent]
    attributes: dict[str, Attribute]
    knowledge: str  # name of the attribute being extrapolated

    def __post_init__(self):
        w = np.array([c.weight for c in self.components])
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("component weights must be positive and sum to 1")
        for c in self.components:
            if len(c.mean) != self.dimension or len(c.var) != self.dimension:
                raise ValueError("component mean/var dimension mismatch")
            if np.any(np.asarray(c.var) <= 0):
                raise ValueError("covariances must be strictly positive")
        if len(self.attributes) < 2:
            raise ValueError("need the knowledge attribute plus at least one remaining attribute")
        if self.knowledge not in self.attributes:
            raise ValueError(f"unknown knowledge attribute {self.knowledge!r}")

    @property
    def remaining(self) -> list[str]:
        return [a for a in self.attributes if a != self.knowledge]

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeMixtureSpec":
        comps = [
            MixtureComponent(
                weight=float(c["weight"]),
                mean=np.asarray(c["mean"], dtype=np.float64),
                var=np.asarray(c["var"], dtype=np.float64),
            )
            for c in d["components"]
        ]
        attrs = {
            name: Attribute(
                direction=np.asarray(a["direction"], dtype=np.float64),
                offset=float(a["offset"]),
                slope=float(a["slope"]),
            )
            for name, a in d["attributes"].items()
        }
        return cls(
            dimension=int(d["dimension"]),
            components=comps,
            attributes=attrs,
            knowledge=str(d["knowledge"]),
        )


def sample_array(spec: AttributeMixtureSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n i.i.d. mixture samples as an (n, d) array."""
    if n < 1:
        raise ValueError("n must be >= 1")
    weights = np.array([c.weight for c in spec.components])
    idx = rng.choice(len(spec.components), size=n, p=weights)
    means = np.stack([c.mean for c in spec.components])
    stds = np.sqrt(np.stack([c.var for c in spec.components]))
    return means[idx] + stds[idx] * rng.standard_normal((n, spec.dimension))


def sample(spec: AttributeMixtureSpec, n: int, seed: int) -> list[LabeledSample]:
    xs = sample_array(spec, n, substream(seed, "synth-data"))
    probs = {name: attr.prob(xs) for name, attr in spec.attributes.items()}
    return [
        LabeledSample(x=xs[i], attributes={name: float(p[i]) for name, p in probs.items()})
        for i in range(n)
    ]


def true_posterior(spec: AttributeMixtureSpec, attribute: str, x: np.ndarray) -> np.ndarray:
    if attribute not in spec.attributes:
        raise KeyError(f"unknown attribute {attribute!r}")
    return spec.attributes[attribute].prob(x)


def mixture_log_density(spec: AttributeMixtureSpec, x: np.ndarray) -> np.ndarray:
    """Exact log density of the mixture at x (single point or (n, d) batch)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    parts = []
    for c in spec.components:
        var = np.asarray(c.var)
        quad = ((x - c.mean) ** 2 / var).sum(axis=1)
        norm = 0.5 * (np.log(2 * np.pi) * spec.dimension + np.log(var).sum())
        parts.append(np.log(c.weight) - 0.5 * quad - norm)
    out = logsumexp(np.stack(parts), axis=0)
    return out if out.size > 1 else float(out[0])


def hypothetical_normalizer(
    spec: AttributeMixtureSpec,
    attribute: str,
    n_samples: int = 1_000_000,
    seed: int = 0,
) -> float:
    """Z = E_{P_X}[P_l/(1-P_l)] by importance sampling from the mixture itself."""
    xs = sample_array(spec, n_samples, substream(seed, "synth-normalizer"))
    p = true_posterior(spec, attribute, xs)
    p = np.minimum(p, SATURATION)
    return float(np.mean(p / (1.0 - p)))


def true_hypothetical_log_density(
    spec: AttributeMixtureSpec,
    attribute: str,
    x: np.ndarray,
    normalizer: float | None = None,
    n_samples: int = 1_000_000,
    seed: int = 0,
) -> float:
    """log P_H(x): the mixture density reweighted by the posterior odds of
    `attribute`, normalized explicitly (the counterfactual density ratio fixes
    P_H only up to a constant)."""
    p = float(true_posterior(spec, attribute, x))
    if p >= SATURATION:
        raise PosteriorSaturatedError(f"posterior {p} >= 1 - 1e-12 at x; odds ratio diverges")
    if normalizer is None:
        normalizer = hypothetical_normalizer(spec, attribute, n_samples=n_samples, seed=seed)
    return float(mixture_log_density(spec, x) + np.log(p) - np.log(1.0 - p) - np.log(normalizer))


def export_csv(spec: AttributeMixtureSpec, n: int, seed: int, path) -> None:
    """One row per sample: x_0..x_{d-1} then the attribute probabilities."""
    samples = sample(spec, n, seed)
    names = list(spec.attributes)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"x_{i}" for i in range(spec.dimension)] + names)
        for s in samples:
            writer.writerow(
                [repr(float(v)) for v in s.x]
                + [repr(float(s.attributes[a])) for a in names]
            )
