"""Batch experiment driver.

Subcommands: pretrain, extrapolate, sweep, verify.  Every command is
deterministic given config + seed; manifests embed the config hash and seed.
Exit codes: 0 success, 1 internal check failure, 2 user/config error.
Output files are written atomically (write to a temp sibling, then rename).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    config_hash,
    load_experiment,
)
from .core import (
    PkdConfig,
    batch_objective,
    resolve_lambda,
    run_dirac,
    run_pkd,
)
from .metrics import (
    Probe,
    coordinate_probe,
    delta_descent,
    delta_remaining,
    lambda_sweep,
    plot_sweep,
    posterior_probe,
    psr,
    sweep_to_csv,
)
from .models import (
    GeneratorModel,
    PosteriorModel,
    PretrainError,
    TrainingError,
    pretrain_generator,
    train_posterior,
)
from .paramvec import CheckpointError, ParamVector
from .rng import substream
from .synth import sample
from .verify import run_suite

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USER_ERROR = 2


class UserError(Exception):
    """Bad input that is the caller's fault (exit code 2)."""


# ---------------------------------------------------------------- file plumbing


def _atomic_write(path: Path, write_fn) -> None:
    """Write via a same-directory temp file and rename into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        write_fn(Path(tmp))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, payload: dict) -> None:
    _atomic_write(
        path, lambda tmp: tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    )


def _write_checkpoint(path: Path, params: ParamVector) -> None:
    _atomic_write(path, lambda tmp: params.save(tmp))


def _load_checkpoint(path: Path) -> ParamVector:
    if not path.is_file():
        raise UserError(f"checkpoint not found: {path} (run `pkd pretrain` first)")
    try:
        return ParamVector.load(path)
    except CheckpointError as exc:
        raise UserError(f"unreadable checkpoint {path}: {exc}") from exc


def _load_models(cfg: ExperimentConfig) -> tuple[GeneratorModel, dict[str, PosteriorModel]]:
    out = cfg.output_dir
    gen = GeneratorModel(cfg.generator_spec, _load_checkpoint(out / "generator.ckpt"))
    posts = {
        attr: PosteriorModel(
            cfg.posterior_spec(), _load_checkpoint(out / f"posterior_{attr}.ckpt")
        )
        for attr in cfg.data.attributes
    }
    return gen, posts


def _build_probes(cfg: ExperimentConfig, posts: dict[str, PosteriorModel]) -> list[Probe]:
    probes = []
    for text in cfg.probes:
        kind, _, arg = text.partition(":")
        if kind == "posterior":
            probes.append(posterior_probe(arg, posts[arg]))
        else:
            probes.append(coordinate_probe(int(arg), cfg.data.dimension))
    return probes


def _eval_latents(cfg: ExperimentConfig, gen: GeneratorModel) -> np.ndarray:
    rng = substream(cfg.pkd.seed, "eval")
    return gen.prior.sample(rng, cfg.pkd.eval_size, gen.latent_dim)


# ------------------------------------------------------------------- commands


def cmd_pretrain(cfg: ExperimentConfig) -> int:
    gen = GeneratorModel.initialized(cfg.generator_spec, seed=cfg.generator_init_seed)
    theta, pre_report = pretrain_generator(cfg.data, gen, cfg.generator_train)
    gen.params = theta

    labeled = sample(cfg.data, cfg.posterior_samples, seed=cfg.posterior_data_seed)
    x = np.stack([s.x for s in labeled])
    manifest_posteriors = {}
    posts = {}
    for attr in sorted(cfg.data.attributes):
        y = np.array([s.attributes[attr] for s in labeled])
        model = PosteriorModel.initialized(cfg.posterior_spec(), seed=cfg.posterior_init_seed)
        params, report = train_posterior(x, y, model, cfg.posterior_train)
        posts[attr] = PosteriorModel(cfg.posterior_spec(), params)
        manifest_posteriors[attr] = {
            "final_loss": report.final_loss,
            "holdout_calibration_mae": report.holdout_calibration_mae,
            "holdout_accuracy": report.holdout_accuracy,
        }

    z_eval = _eval_latents(cfg, gen)
    p_know = posts[cfg.data.knowledge].prob(gen.generate(z_eval))
    baseline_fraction = float((p_know > 0.5).mean())

    out = cfg.output_dir
    _write_checkpoint(out / "generator.ckpt", theta)
    for attr, post in posts.items():
        _write_checkpoint(out / f"posterior_{attr}.ckpt", post.params)
    _write_json(
        out / "manifest.json",
        {
            "command": "pretrain",
            "config_hash": config_hash(cfg),
            "seed": cfg.seed,
            "final_mmd": pre_report.final_mmd,
            "posteriors": manifest_posteriors,
            "baseline_knowledge_fraction": baseline_fraction,
        },
    )
    print(f"pretrained: final MMD {pre_report.final_mmd:.5f}, "
          f"baseline knowledge fraction {baseline_fraction:.3f}")
    return EXIT_OK


def _read_x0(path: Path, dim: int) -> np.ndarray:
    if not path.is_file():
        raise UserError(f"x0 file not found: {path}")
    values = np.loadtxt(path, dtype=np.float64).ravel()
    if values.size != dim:
        raise UserError(f"x0 file {path} has {values.size} values, expected {dim}")
    return values


def _trace_to_csv(trace, path: Path) -> None:
    import csv

    fields = [
        "step", "objective_eval", "objective_eval_se", "objective_batch_before",
        "objective_batch_after", "active_count", "grad_active_abs_sum",
        "cumulative_active_count", "checkpoint_hash",
    ]

    def write(tmp: Path) -> None:
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(fields)
            for rec in trace.records:
                writer.writerow([repr(getattr(rec, f)) if isinstance(getattr(rec, f), float)
                                 else getattr(rec, f) for f in fields])

    _atomic_write(path, write)


def _scatter_plot(cfg: ExperimentConfig, x_before: np.ndarray, x_after: np.ndarray, path: Path) -> None:
    """Before/after samples projected on the knowledge direction (x axis) and
    the first remaining attribute direction (y axis)."""
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    know = cfg.data.attributes[cfg.data.knowledge].direction
    rem_names = [a for a in sorted(cfg.data.attributes) if a != cfg.data.knowledge]
    rem = (cfg.data.attributes[rem_names[0]].direction if rem_names
           else np.eye(cfg.data.dimension)[-1])

    fig, ax = plt.subplots(figsize=(5, 4))
    for x, label, color in ((x_before, "before", "tab:blue"), (x_after, "after", "tab:orange")):
        ax.scatter(x @ know, x @ rem, s=4, alpha=0.35, label=label, color=color)
    ax.set_xlabel(f"knowledge projection ({cfg.data.knowledge})")
    ax.set_ylabel(f"remaining projection ({rem_names[0] if rem_names else 'last coord'})")
    ax.legend()
    fig.tight_layout()
    _atomic_write(path, lambda tmp: fig.savefig(tmp, format="svg"))
    plt.close(fig)


def cmd_extrapolate(cfg: ExperimentConfig, dirac_path: str | None, explicit_lam: bool) -> int:
    gen, posts = _load_models(cfg)
    post = posts[cfg.data.knowledge]
    probes = _build_probes(cfg, posts)
    cfg.pkd = _resolve_lam0(cfg, gen, probes)

    if dirac_path is not None:
        x0 = _read_x0(Path(dirac_path), cfg.data.dimension)
        # With a narrow prior the gradient scale depends on where x0 sits;
        # unless the caller pinned a threshold, re-derive it for this run.
        lam_scale = None if explicit_lam else 0.8
        theta, trace, z0 = run_dirac(gen, post, x0, cfg.pkd, lam_scale=lam_scale)
        from .models import PriorSpec

        eval_prior = PriorSpec(kind="gaussian", center=z0, xi=cfg.pkd.xi)
        z_eval = eval_prior.sample(substream(cfg.pkd.seed, "eval"), cfg.pkd.eval_size, gen.latent_dim)
    else:
        theta, trace = run_pkd(gen, post, cfg.pkd)
        z_eval = _eval_latents(cfg, gen)

    x_before = gen.generate(z_eval, gen.params)
    x_after = gen.generate(z_eval, theta)
    p_before = post.prob(x_before)
    p_after = post.prob(x_after)
    per_probe, delta_rem = delta_remaining(gen, gen.params, theta, probes, z_eval)

    out = cfg.output_dir
    _trace_to_csv(trace, out / "trace.csv")
    _write_checkpoint(out / "theta_final.ckpt", theta)
    _scatter_plot(cfg, x_before[:2000], x_after[:2000], out / "scatter.svg")
    report = {
        "command": "extrapolate",
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "status": trace.status,
        "dirac": dirac_path is not None,
        "steps_run": len(trace.records),
        "objective_before": batch_objective(gen, post, z_eval, gen.params)[0],
        "objective_after": batch_objective(gen, post, z_eval, theta)[0],
        "delta": delta_descent(gen, post, gen.params, theta, z_eval),
        "knowledge_fraction_before": float((p_before > 0.5).mean()),
        "knowledge_fraction_after": float((p_after > 0.5).mean()),
        "delta_remaining": per_probe,
        "delta_remaining_max": delta_rem,
        "psr": psr(trace, gen.params.size),
    }
    _write_json(out / "report.json", report)
    print(f"extrapolated: status {trace.status}, knowledge fraction "
          f"{report['knowledge_fraction_before']:.3f} -> "
          f"{report['knowledge_fraction_after']:.3f}, "
          f"remaining shift {delta_rem:.4f}")
    return EXIT_OK


def _resolve_lam0(cfg: ExperimentConfig, gen: GeneratorModel, probes: list[Probe]) -> PkdConfig:
    """Resolve a relative threshold (lambda0) against the measured probe
    Lipschitz bound over the reachable parameter ball."""
    if cfg.pkd.lam0 is None:
        return cfg.pkd
    if not probes:
        raise UserError("lambda0 needs at least one probe to bound L")
    from .metrics import lipschitz_estimate

    bound = lipschitz_estimate(
        gen, probes, radius=cfg.pkd.steps * cfg.pkd.epsilon, seed=cfg.pkd.seed
    )
    return resolve_lambda(cfg.pkd, bound)


def _sweep_one(args: tuple) -> dict:
    """Worker for --jobs > 1; reloads state from disk, runs one grid point."""
    config_path, overrides, lam = args
    cfg = load_experiment(config_path)
    cfg = apply_overrides(cfg, argparse.Namespace(**overrides))
    gen, posts = _load_models(cfg)
    base = _sweep_base_config(cfg)
    rows = lambda_sweep(
        gen, posts[cfg.data.knowledge], _build_probes(cfg, posts), [lam], base
    )
    return vars(rows[0])


def _sweep_base_config(cfg: ExperimentConfig) -> PkdConfig:
    from dataclasses import replace

    return replace(
        cfg.pkd, epsilon=cfg.sweep.epsilon, fixed_batch=cfg.sweep.fixed_batch,
        lam=1.0, lam0=None,
    )


def cmd_sweep(cfg: ExperimentConfig, config_path: str, overrides: dict, jobs: int) -> int:
    if cfg.sweep is None:
        raise UserError("config has no sweep section")
    grid = cfg.sweep.grid()
    gen, posts = _load_models(cfg)
    post = posts[cfg.data.knowledge]
    probes = _build_probes(cfg, posts)

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        from .metrics import SweepRow

        work = [(config_path, overrides, float(lam)) for lam in grid]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = [SweepRow(**r) for r in pool.map(_sweep_one, work)]
    else:
        rows = lambda_sweep(gen, post, probes, grid, _sweep_base_config(cfg))

    out = cfg.output_dir
    _atomic_write(out / "sweep.csv", lambda tmp: sweep_to_csv(rows, tmp))
    _atomic_write(out / "sweep.svg", lambda tmp: plot_sweep(rows, tmp))
    _write_json(
        out / "sweep_manifest.json",
        {
            "command": "sweep",
            "config_hash": config_hash(cfg),
            "seed": cfg.seed,
            "grid": [float(v) for v in grid],
        },
    )
    print(f"sweep complete: {len(rows)} grid points -> {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_verify(suite: str, seed: int) -> int:
    results = run_suite(suite, seed=seed)
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


# ----------------------------------------------------------------- entrypoint


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment YAML file")
    parser.add_argument("--lambda", dest="lam", type=float, default=None,
                        help="override sparsity threshold")
    parser.add_argument("--epsilon", type=float, default=None, help="override step size")
    parser.add_argument("--steps", type=int, default=None, help="override step count")
    parser.add_argument("--batch", type=int, default=None, help="override batch size")
    parser.add_argument("--seed", type=int, default=None, help="override global seed")
    parser.add_argument("--out", default=None, help="override output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pkd",
        description="Sparse sign-step knowledge extrapolation: experiment driver",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train the generator and attribute posteriors")
    _add_common(p)

    p = sub.add_parser("extrapolate", help="run the sparse extrapolation loop")
    _add_common(p)
    p.add_argument("--dirac", default=None, metavar="X0_FILE",
                   help="extrapolate a single sample read from a text file")

    p = sub.add_parser("sweep", help="lambda grid sweep with CSV/plot export")
    _add_common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker count")

    p = sub.add_parser("verify", help="run the oracle-backed property suites")
    p.add_argument("--suite", choices=["theorems", "gradients", "all"], default="all")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args.suite, args.seed)
        cfg = apply_overrides(load_experiment(args.config), args)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "extrapolate":
            return cmd_extrapolate(cfg, args.dirac, explicit_lam=args.lam is not None)
        if args.command == "sweep":
            overrides = {k: getattr(args, k) for k in ("lam", "epsilon", "steps", "batch", "seed", "out")}
            return cmd_sweep(cfg, args.config, overrides, args.jobs)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, UserError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    except (TrainingError, PretrainError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
