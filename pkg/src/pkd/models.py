"""Desk-scale generator and posterior networks plus their training loops.

The generator is a tanh MLP with a linear output layer carrying a fixed
output gain: the gain rescales parameter-space sensitivity (a unit move of an
output-layer parameter moves the output by `gain`) without changing the
expressible function family, which is what makes tiny sign steps effective.
The posterior model maps samples to a clamped probability in (0, 1).

Pretraining matches the data distribution by full-batch gradient descent on
an unbiased Gaussian-kernel MMD; the posterior trains on binary cross-entropy
against (possibly soft) labels.  Both loops are deterministic given a seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .mmd import median_bandwidth, mmd2, mmd2_and_grad, yy_term
from .paramvec import ParamVector
from .rng import substream
from .synth import AttributeMixtureSpec, sample_array


class TrainingError(RuntimeError):
    pass


class PretrainError(TrainingError):
    def __init__(self, msg: str, final_mmd: float):
        super().__init__(msg)
        self.final_mmd = final_mmd


class InversionError(TrainingError):
    def __init__(self, msg: str, best_error: float):
        super().__init__(msg)
        self.best_error = best_error


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    output_gain: float = 1.0

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        prev = self.in_dim
        for i, width in enumerate(self.hidden):
            shapes.append((f"layer{i}.w", (width, prev)))
            shapes.append((f"layer{i}.b", (width,)))
            prev = width
        shapes.append(("out.w", (self.out_dim, prev)))
        shapes.append(("out.b", (self.out_dim,)))
        return shapes


def init_params(spec: MlpSpec, rng: np.random.Generator, scale: float = 1.0) -> ParamVector:
    """Fan-in scaled normal weights, zero biases; the output layer is divided
    by the gain so the initial function is gain-independent."""
    arrays: dict[str, np.ndarray] = {}
    for name, shape in spec.layer_shapes():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape)
        else:
            fan_in = shape[1]
            arrays[name] = scale * rng.standard_normal(shape) / np.sqrt(fan_in)
        if name.startswith("out."):
            arrays[name] = arrays[name] / spec.output_gain
    return ParamVector.from_arrays(arrays)


def mlp_nodes(x: ad.Node, pnodes: dict[str, ad.Node], spec: MlpSpec) -> ad.Node:
    h = x
    for i in range(len(spec.hidden)):
        h = ad.tanh(ad.affine(h, pnodes[f"layer{i}.w"], pnodes[f"layer{i}.b"]))
    out = ad.affine(h, pnodes["out.w"], pnodes["out.b"])
    if spec.output_gain != 1.0:
        out = ad.scale(out, spec.output_gain)
    return out


@dataclass(frozen=True)
class PriorSpec:
    """Latent prior: the standard normal, or a narrow Gaussian N(center, xi*I)
    used for single-sample extrapolation."""

    kind: str = "standard-normal"
    center: np.ndarray | None = None
    xi: float | None = None

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.xi is None or self.xi <= 0:
                raise ValueError("gaussian prior requires xi > 0")
            if self.center is None:
                raise ValueError("gaussian prior requires a center")
        elif self.kind != "standard-normal":
            raise ValueError(f"unknown prior kind {self.kind!r}")

    def sample(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        z = rng.standard_normal((n, dim))
        if self.kind == "gaussian":
            return np.asarray(self.center) + np.sqrt(self.xi) * z
        return z


class GeneratorModel:
    def __init__(self, spec: MlpSpec, params: ParamVector, prior: PriorSpec | None = None):
        self.spec = spec
        self.params = params
        self.prior = prior or PriorSpec()

    @property
    def latent_dim(self) -> int:
        return self.spec.in_dim

    @classmethod
    def initialized(cls, spec: MlpSpec, seed: int, prior: PriorSpec | None = None):
        return cls(spec, init_params(spec, substream(seed, "gen-init")), prior)

    def graph(self) -> ad.Graph:
        return ad.Graph(lambda inputs, params: mlp_nodes(inputs["z"], params, self.spec))

    def generate(self, z: np.ndarray, params: ParamVector | None = None) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.latent_dim:
            raise ad.ShapeError(f"latent dim {z.shape[-1]} != {self.latent_dim}")
        return self.graph().forward({"z": z}, params or self.params)


class PosteriorModel:
    def __init__(self, spec: MlpSpec, params: ParamVector):
        if spec.out_dim != 1:
            raise ValueError("posterior model must have scalar output")
        self.spec = spec
        self.params = params

    @classmethod
    def initialized(cls, spec: MlpSpec, seed: int):
        return cls(spec, init_params(spec, substream(seed, "post-init")))

    def prob_nodes(self, x: ad.Node, pnodes: dict[str, ad.Node]) -> ad.Node:
        logit = mlp_nodes(x, pnodes, self.spec)
        return ad.clamp(ad.sigmoid(logit), 1e-12, 1.0 - 1e-12)

    def const_nodes(self, params: ParamVector | None = None) -> dict[str, ad.Node]:
        """Parameter leaves for use as frozen constants inside another graph."""
        pv = params or self.params
        return {name: ad.Node(pv.view(name), op=f"const:{name}") for name in pv.names()}

    def prob(self, x: np.ndarray, params: ParamVector | None = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        node = self.prob_nodes(ad.Node(x, op="input:x"), self.const_nodes(params))
        return node.value[:, 0]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 0.05
    data_size: int = 512
    batch_size: int = 256
    seed: int = 0
    mmd_bandwidth_scales: tuple[float, ...] = (0.5, 1.0, 2.0)
    mmd_threshold: float = 0.01
    holdout_fraction: float = 0.2


@dataclass
class PretrainReport:
    final_mmd: float
    history: list[float] = field(default_factory=list)


@dataclass
class PosteriorReport:
    final_loss: float
    holdout_calibration_mae: float
    holdout_accuracy: float


def pretrain_generator(
    data_spec: AttributeMixtureSpec, gen: GeneratorModel, cfg: TrainConfig
) -> tuple[ParamVector, PretrainReport]:
    """Fit the generator to the mixture by full-batch MMD descent.

    Optimization runs in the gain-free parameterization (output segments
    multiplied by the gain) so the descent is well conditioned; the result is
    converted back before returning.
    """
    data = sample_array(data_spec, cfg.data_size, substream(cfg.seed, "pretrain-data"))
    z = substream(cfg.seed, "pretrain-z").standard_normal((cfg.batch_size, gen.latent_dim))
    bw = median_bandwidth(data)
    sigmas = [bw * s for s in cfg.mmd_bandwidth_scales]
    yy = yy_term(data, sigmas)

    flat_spec = replace(gen.spec, output_gain=1.0)
    params = _to_effective(gen.params, gen.spec.output_gain)
    graph = ad.Graph(lambda inputs, p: mlp_nodes(inputs["z"], p, flat_spec))

    history = []
    for _ in range(cfg.epochs):
        x = graph.forward({"z": z}, params)
        loss, gx = mmd2_and_grad(x, data, sigmas, yy=yy)
        history.append(loss)
        grad = graph.backward(seed=gx)
        params = params.replaced(params.values - cfg.learning_rate * grad)

    final = mmd2(graph.forward({"z": z}, params), data, sigmas, yy=yy)
    history.append(final)
    if final >= cfg.mmd_threshold:
        raise PretrainError(
            f"MMD {final:.3e} above threshold {cfg.mmd_threshold:.3e} "
            f"after {cfg.epochs} epochs",
            final_mmd=final,
        )
    return _from_effective(params, gen.spec.output_gain), PretrainReport(final, history)


def _to_effective(params: ParamVector, gain: float) -> ParamVector:
    out = params.copy()
    for name in ("out.w", "out.b"):
        out.view(name)[...] *= gain
    return out


def _from_effective(params: ParamVector, gain: float) -> ParamVector:
    out = params.copy()
    for name in ("out.w", "out.b"):
        out.view(name)[...] /= gain
    return out


def train_posterior(
    x: np.ndarray, y: np.ndarray, post: PosteriorModel, cfg: TrainConfig
) -> tuple[ParamVector, PosteriorReport]:
    """Full-batch gradient descent on binary cross-entropy with soft labels."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if np.any((y < 0) | (y > 1)):
        raise ValueError("labels must lie in [0, 1]")
    n_hold = max(1, int(len(x) * cfg.holdout_fraction))
    perm = substream(cfg.seed, "posterior-split").permutation(len(x))
    train_idx, hold_idx = perm[n_hold:], perm[:n_hold]

    def build(inputs, pnodes):
        p = post.prob_nodes(inputs["x"], pnodes)
        y_node = inputs["y"]
        pos = ad.mul(y_node, ad.log(p))
        neg = ad.mul(ad.shift(ad.scale(y_node, -1.0), 1.0), ad.log(ad.shift(ad.scale(p, -1.0), 1.0)))
        return ad.scale(ad.mean(ad.add(pos, neg)), -1.0)

    graph = ad.Graph(build)
    params = post.params
    inputs = {"x": x[train_idx], "y": y[train_idx]}
    loss = np.inf
    for _ in range(cfg.epochs):
        loss = float(graph.forward(inputs, params))
        if not np.isfinite(loss):
            raise TrainingError("posterior training diverged (non-finite loss)")
        grad = graph.backward()
        params = params.replaced(params.values - cfg.learning_rate * grad)

    p_hold = post.prob(x[hold_idx], params)
    y_hold = y[hold_idx, 0]
    report = PosteriorReport(
        final_loss=loss,
        holdout_calibration_mae=float(np.mean(np.abs(p_hold - y_hold))),
        holdout_accuracy=float(np.mean((p_hold > 0.5) == (y_hold > 0.5))),
    )
    return params, report


@dataclass(frozen=True)
class InversionConfig:
    restarts: int = 8
    iterations: int = 2000
    learning_rate: float = 0.05
    tolerance: float = 1e-6
    seed: int = 0


def invert_latent(gen: GeneratorModel, x0: np.ndarray, cfg: InversionConfig) -> np.ndarray:
    """Find z with ||G(z) - x0||^2 <= tolerance by multi-restart gradient
    descent; the returned point is the best over all restarts and iterates."""
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    rng = substream(cfg.seed, "invert")
    target = ad.Node(x0, op="const:x0")

    def build(inputs, pnodes):
        x = mlp_nodes(inputs["z"], pnodes, gen.spec)
        diff = ad.sub(x, target)
        return ad.ssum(ad.mul(diff, diff))

    graph = ad.Graph(build)
    best_z, best_err = None, np.inf
    inits = [np.zeros(gen.latent_dim)] + [
        rng.standard_normal(gen.latent_dim) for _ in range(cfg.restarts - 1)
    ]
    for z in inits:
        z = z.copy()
        lr = cfg.learning_rate
        err = float(graph.forward({"z": z}, gen.params))
        for _ in range(cfg.iterations):
            if err < best_err:
                best_z, best_err = z.copy(), err
            if err <= cfg.tolerance:
                break
            step = graph.input_grad("z")
            # adaptive step size: accept only descent, otherwise backtrack
            while lr > 1e-16:
                z_new = z - lr * step
                err_new = float(graph.forward({"z": z_new}, gen.params))
                if err_new < err:
                    z, err = z_new, err_new
                    lr *= 1.2
                    break
                lr *= 0.5
            else:
                break
        if err < best_err:
            best_z, best_err = z.copy(), err
        if best_err <= cfg.tolerance:
            break
    if best_err > cfg.tolerance:
        raise InversionError(
            f"no restart reached tolerance {cfg.tolerance:.1e}; best error {best_err:.3e}",
            best_error=best_err,
        )
    return best_z
