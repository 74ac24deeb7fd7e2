"""Sparse sign-step knowledge extrapolation for small generative models.

Takes a pretrained generator and a frozen attribute posterior and nudges a
sparse set of generator parameters — those whose objective gradient clears a
threshold — by fixed-size sign steps, shifting one attribute of the generated
distribution while leaving the rest in place.  Ships with discrete-world and
convex-duality oracles that verify the method's optimality and descent
guarantees at desk scale.
"""

from .core import (
    ExtrapolationTrace,
    PkdConfig,
    SparseStep,
    StepRecord,
    closed_form_step,
    knowledge_gradient,
    lambda_max_estimate,
    run_dirac,
    run_pkd,
)
from .models import (
    GeneratorModel,
    InversionConfig,
    MlpSpec,
    PosteriorModel,
    PriorSpec,
    TrainConfig,
    invert_latent,
    pretrain_generator,
    train_posterior,
)
from .paramvec import ParamVector, Segment
from .synth import Attribute, AttributeMixtureSpec, MixtureComponent, sample

__all__ = [
    "Attribute",
    "AttributeMixtureSpec",
    "ExtrapolationTrace",
    "GeneratorModel",
    "InversionConfig",
    "MixtureComponent",
    "MlpSpec",
    "ParamVector",
    "PkdConfig",
    "PosteriorModel",
    "PriorSpec",
    "Segment",
    "SparseStep",
    "StepRecord",
    "TrainConfig",
    "closed_form_step",
    "invert_latent",
    "knowledge_gradient",
    "lambda_max_estimate",
    "pretrain_generator",
    "run_dirac",
    "run_pkd",
    "sample",
    "train_posterior",
]

__version__ = "0.1.0"
