"""Shared fixtures: the toy-faces benchmark trained once per session."""

from pathlib import Path

import numpy as np
import pytest

from pkd.config import load_experiment
from pkd.models import GeneratorModel, PosteriorModel, pretrain_generator, train_posterior
from pkd.synth import sample

REPO_ROOT = Path(__file__).resolve().parents[1]
TOY_CONFIG = REPO_ROOT / "configs" / "toy_faces.yaml"


@pytest.fixture(scope="session")
def toy_cfg():
    return load_experiment(TOY_CONFIG)


@pytest.fixture(scope="session")
def toy_models(toy_cfg):
    """Pretrained generator plus one trained posterior per attribute."""
    cfg = toy_cfg
    gen = GeneratorModel.initialized(cfg.generator_spec, seed=cfg.generator_init_seed)
    theta, pre_report = pretrain_generator(cfg.data, gen, cfg.generator_train)
    gen.params = theta

    labeled = sample(cfg.data, cfg.posterior_samples, seed=cfg.posterior_data_seed)
    x = np.stack([s.x for s in labeled])
    posts, reports = {}, {}
    for attr in sorted(cfg.data.attributes):
        y = np.array([s.attributes[attr] for s in labeled])
        model = PosteriorModel.initialized(cfg.posterior_spec(), seed=cfg.posterior_init_seed)
        params, report = train_posterior(x, y, model, cfg.posterior_train)
        posts[attr] = PosteriorModel(cfg.posterior_spec(), params)
        reports[attr] = report
    return {"cfg": cfg, "gen": gen, "posteriors": posts,
            "pretrain_report": pre_report, "posterior_reports": reports}


@pytest.fixture(scope="session")
def cli_run_dir(tmp_path_factory):
    """Artifacts from one real `pkd pretrain` invocation."""
    from pkd.cli import main

    out = tmp_path_factory.mktemp("cli-run")
    code = main(["pretrain", "--config", str(TOY_CONFIG), "--out", str(out)])
    assert code == 0
    return out
