"""
Small differentiable-network layer over flat parameter vectors.

Every network is an MLP whose weights live in one 1-D float64 tensor. Keeping
parameters flat makes the trust-region machinery (gradients, Fisher-vector
products, line-search trial points) plain vector arithmetic.
"""

import logging
import math
import os
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch.distributions import Normal, kl_divergence

from utils import CheckpointError, ConfigError, DimensionError, require_finite

logger = logging.getLogger(__name__)

DTYPE = torch.float64
DEFAULT_DAMPING = 0.01
CHECKPOINT_MAGIC = b"TRC1"

_ACTIVATIONS = {
    "linear": lambda x: x,
    "relu": F.relu,
    "sigmoid": torch.sigmoid,
    "softplus": F.softplus,
}


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: Tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ConfigError(f"MLP needs at least one hidden layer, got sizes {sizes}")
        if any(s <= 0 for s in sizes):
            raise ConfigError(f"MLP layer sizes must be positive, got {sizes}")
        if self.hidden_activation != "relu":
            raise ConfigError(f"unsupported hidden activation '{self.hidden_activation}'")
        if self.output_activation not in ("linear", "sigmoid", "softplus"):
            raise ConfigError(f"unsupported output activation '{self.output_activation}'")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def layer_shapes(self) -> List[Tuple[Tuple[int, int], Tuple[int]]]:
        return [((n_out, n_in), (n_out,))
                for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:])]


def param_count(spec: MlpSpec) -> int:
    return sum(w[0] * w[1] + b[0] for w, b in spec.layer_shapes())


def unflatten(spec: MlpSpec, params: torch.Tensor) -> List[Tuple[torch.Tensor, torch.Tensor]]:
    """Split a flat parameter vector into (weight, bias) views per layer."""
    expected = param_count(spec)
    if params.dim() != 1 or params.numel() != expected:
        raise DimensionError(f"expected {expected} parameters, got shape {tuple(params.shape)}")
    layers = []
    offset = 0
    for (n_out, n_in), _ in spec.layer_shapes():
        weight = params[offset:offset + n_out * n_in].view(n_out, n_in)
        offset += n_out * n_in
        bias = params[offset:offset + n_out]
        offset += n_out
        layers.append((weight, bias))
    return layers


def init_params(spec: MlpSpec, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization, as torch.nn.Linear."""
    chunks = []
    for (n_out, n_in), _ in spec.layer_shapes():
        bound = 1.0 / math.sqrt(n_in)
        chunks.append((torch.rand(n_out * n_in, generator=generator, dtype=DTYPE) * 2 - 1) * bound)
        chunks.append((torch.rand(n_out, generator=generator, dtype=DTYPE) * 2 - 1) * bound)
    return torch.cat(chunks)


def forward(spec: MlpSpec, params: torch.Tensor, inputs) -> torch.Tensor:
    """Evaluate the MLP on one input vector or a batch of rows."""
    x = torch.as_tensor(inputs, dtype=DTYPE)
    if x.shape[-1] != spec.input_dim or x.dim() not in (1, 2):
        raise DimensionError(f"expected input of width {spec.input_dim}, got shape {tuple(x.shape)}")
    layers = unflatten(spec, params)
    hidden = _ACTIVATIONS[spec.hidden_activation]
    for weight, bias in layers[:-1]:
        x = hidden(F.linear(x, weight, bias))
    weight, bias = layers[-1]
    return _ACTIVATIONS[spec.output_activation](F.linear(x, weight, bias))


def flat_grad(output: torch.Tensor, params: torch.Tensor,
              retain_graph: bool = False, create_graph: bool = False) -> torch.Tensor:
    (grad,) = torch.autograd.grad(output, params, retain_graph=retain_graph or create_graph,
                                  create_graph=create_graph, allow_unused=True)
    if grad is None:
        return torch.zeros_like(params)
    return grad


def grad_scalar(loss_fn: Callable[[torch.Tensor], torch.Tensor],
                params: torch.Tensor) -> torch.Tensor:
    """Reverse-mode gradient of a scalar loss closure at `params`."""
    point = params.detach().clone().requires_grad_(True)
    loss = loss_fn(point)
    if loss.numel() != 1:
        raise DimensionError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    require_finite("loss", loss.detach(), loss_value=float(loss.detach().reshape(-1)[0]),
                   param_norm=float(point.detach().norm()))
    if not loss.requires_grad:
        return torch.zeros_like(point.detach())
    grad = flat_grad(loss.reshape(()), point)
    require_finite("gradient", grad, loss=float(loss.detach()), grad_norm=float(grad.norm()))
    return grad.detach()


@dataclass
class GaussianPolicy:
    """Diagonal Gaussian policy: sigmoid MLP mean rescaled to the action box, free log_std.

    `params` holds the mean network parameters followed by one log_std per action dimension.
    """

    mean_spec: MlpSpec
    params: torch.Tensor
    action_low: float = -1.0
    action_high: float = 1.0

    def __post_init__(self):
        if self.mean_spec.output_activation != "sigmoid":
            raise ConfigError("policy mean network must use a sigmoid output")
        expected = param_count(self.mean_spec) + self.action_dim
        if self.params.numel() != expected:
            raise DimensionError(f"policy expects {expected} parameters, got {self.params.numel()}")

    @classmethod
    def create(cls, obs_dim: int, action_dim: int, hidden_sizes: Sequence[int],
               init_log_std: float = -0.5,
               generator: Optional[torch.Generator] = None) -> "GaussianPolicy":
        spec = MlpSpec((obs_dim, *hidden_sizes, action_dim), output_activation="sigmoid")
        log_std = torch.full((action_dim,), float(init_log_std), dtype=DTYPE)
        return cls(spec, torch.cat([init_params(spec, generator), log_std]))

    @property
    def action_dim(self) -> int:
        return self.mean_spec.output_dim

    @property
    def n_params(self) -> int:
        return self.params.numel()

    def split(self, params: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        params = self.params if params is None else params
        n_mean = param_count(self.mean_spec)
        return params[:n_mean], params[n_mean:]

    def with_params(self, params: torch.Tensor) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_spec, params, self.action_low, self.action_high)

    def mean(self, states, params: Optional[torch.Tensor] = None) -> torch.Tensor:
        mean_params, _ = self.split(params)
        squashed = forward(self.mean_spec, mean_params, states)
        return self.action_low + (self.action_high - self.action_low) * squashed

    def distribution(self, states, params: Optional[torch.Tensor] = None) -> Normal:
        _, log_std = self.split(params)
        mean = self.mean(states, params)
        return Normal(mean, torch.exp(log_std).expand_as(mean))

    def sample(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Unclipped action sample; the environment clips."""
        with torch.no_grad():
            mean = self.mean(state).numpy()
            std = torch.exp(self.split()[1]).numpy()
        return mean + std * rng.standard_normal(self.action_dim)

    def act(self, state: np.ndarray) -> np.ndarray:
        """Deterministic mean action."""
        with torch.no_grad():
            return self.mean(state).numpy()


def log_prob(policy: GaussianPolicy, state, action,
             params: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Diagonal Gaussian log density summed over action dimensions."""
    action = torch.as_tensor(action, dtype=DTYPE)
    return policy.distribution(state, params).log_prob(action).sum(-1)


def kl(policy_old: GaussianPolicy, policy_new: GaussianPolicy, states) -> torch.Tensor:
    """Mean over states of KL(policy_old || policy_new)."""
    if policy_old.action_dim != policy_new.action_dim:
        raise DimensionError("policies have different action dimensions")
    old = policy_old.distribution(states)
    new = policy_new.distribution(states)
    return kl_divergence(old, new).sum(-1).mean()


def make_fvp(policy: GaussianPolicy, states,
             damping: float = DEFAULT_DAMPING) -> Callable[[torch.Tensor], torch.Tensor]:
    """Build v -> (H + damping I) v, H the Hessian of mean KL at the current parameters.

    The KL gradient graph is built once and reused for every product.
    """
    point = policy.params.detach().clone().requires_grad_(True)
    with torch.no_grad():
        old = policy.distribution(states)
    old = Normal(old.loc.detach(), old.scale.detach())
    new = policy.distribution(states, point)
    mean_kl = kl_divergence(old, new).sum(-1).mean()
    grad_kl = flat_grad(mean_kl, point, create_graph=True)

    def fvp(v: torch.Tensor) -> torch.Tensor:
        v = torch.as_tensor(v, dtype=DTYPE)
        if v.shape != point.shape:
            raise DimensionError(f"vector of shape {tuple(v.shape)} does not match {tuple(point.shape)}")
        hv = flat_grad(torch.dot(grad_kl, v), point, retain_graph=True)
        return hv.detach() + damping * v

    return fvp


def fisher_vector_product(policy: GaussianPolicy, states, v: torch.Tensor,
                          damping: float = DEFAULT_DAMPING) -> torch.Tensor:
    return make_fvp(policy, states, damping)(v)


@dataclass
class ValueHead:
    """Scalar-output MLP: value (linear), cost value (linear) or cost square (softplus)."""

    spec: MlpSpec
    params: torch.Tensor

    @classmethod
    def create(cls, obs_dim: int, hidden_sizes: Sequence[int], output_activation: str = "linear",
               generator: Optional[torch.Generator] = None) -> "ValueHead":
        spec = MlpSpec((obs_dim, *hidden_sizes, 1), output_activation=output_activation)
        return cls(spec, init_params(spec, generator))

    def __call__(self, states, params: Optional[torch.Tensor] = None) -> torch.Tensor:
        return forward(self.spec, self.params if params is None else params, states).squeeze(-1)

    def predict(self, states) -> np.ndarray:
        with torch.no_grad():
            return self(states).numpy()


class RunningNorm:
    """Running observation mean/variance with clipped standardization."""

    def __init__(self, dim: int, clip: float = 10.0):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip

    def update(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.mean.shape[0])
        batch_mean = batch.mean(axis=0)
        batch_var = batch.var(axis=0)
        n = batch.shape[0]
        total = self.count + n
        delta = batch_mean - self.mean
        self.mean = self.mean + delta * n / total
        m2 = self.var * self.count + batch_var * n + delta ** 2 * self.count * n / total
        self.var = m2 / total
        self.count = total

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        scaled = (np.asarray(obs, dtype=np.float64) - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(scaled, -self.clip, self.clip)

    def copy(self) -> "RunningNorm":
        other = RunningNorm(self.mean.shape[0], self.clip)
        other.mean, other.var, other.count = self.mean.copy(), self.var.copy(), self.count
        return other


@dataclass
class Checkpoint:
    policy: GaussianPolicy
    value: ValueHead
    cost_value: ValueHead
    square: ValueHead
    normalizer: RunningNorm
    epoch: int


def save_checkpoint(path: str, checkpoint: Checkpoint) -> None:
    """Write the flat "TRC1" checkpoint: int32 header, then float64 parameter blocks."""
    policy = checkpoint.policy
    hidden = policy.mean_spec.layer_sizes[1:-1]
    header = [policy.mean_spec.input_dim, policy.action_dim, len(hidden), *hidden, checkpoint.epoch]
    mean_params, log_std = policy.split()
    norm = checkpoint.normalizer
    blocks = [
        mean_params, log_std,
        checkpoint.value.params, checkpoint.cost_value.params, checkpoint.square.params,
    ]
    payload = np.concatenate([b.detach().numpy() for b in blocks]
                             + [norm.mean, norm.var, [norm.count]])
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(np.asarray(header, dtype="<i4").tobytes())
        f.write(payload.astype("<f8").tobytes())
    logger.info(f"Saved checkpoint (epoch {checkpoint.epoch}) to {path}")


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise CheckpointError("path", f"{path} does not exist")
    with open(path, "rb") as f:
        data = f.read()

    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("magic", f"expected {CHECKPOINT_MAGIC!r}, found {data[:4]!r}")
    offset = 4

    def read_int(field: str, minimum: int) -> int:
        nonlocal offset
        if len(data) < offset + 4:
            raise CheckpointError(field, "file truncated inside header")
        value = int(np.frombuffer(data, dtype="<i4", count=1, offset=offset)[0])
        offset += 4
        if value < minimum:
            raise CheckpointError(field, f"invalid value {value}")
        return value

    obs_dim = read_int("obs_dim", 1)
    action_dim = read_int("action_dim", 1)
    n_hidden = read_int("n_hidden", 1)
    hidden = tuple(read_int(f"hidden_size[{i}]", 1) for i in range(n_hidden))
    epoch = read_int("epoch", 0)

    mean_spec = MlpSpec((obs_dim, *hidden, action_dim), output_activation="sigmoid")
    value_spec = MlpSpec((obs_dim, *hidden, 1))
    square_spec = MlpSpec((obs_dim, *hidden, 1), output_activation="softplus")
    sizes = [
        ("policy_mean", param_count(mean_spec)),
        ("log_std", action_dim),
        ("value", param_count(value_spec)),
        ("cost_value", param_count(value_spec)),
        ("cost_square", param_count(square_spec)),
        ("norm_mean", obs_dim),
        ("norm_var", obs_dim),
        ("norm_count", 1),
    ]
    expected = sum(n for _, n in sizes) * 8
    if len(data) - offset != expected:
        raise CheckpointError("payload", f"expected {expected} bytes after header, found {len(data) - offset}")
    values = np.frombuffer(data, dtype="<f8", offset=offset).astype(np.float64)

    blocks = {}
    start = 0
    for name, n in sizes:
        blocks[name] = values[start:start + n]
        start += n
        if not np.all(np.isfinite(blocks[name])):
            raise CheckpointError(name, "contains non-finite values")

    def tensor(name: str) -> torch.Tensor:
        return torch.tensor(blocks[name], dtype=DTYPE)

    policy = GaussianPolicy(mean_spec, torch.cat([tensor("policy_mean"), tensor("log_std")]))
    normalizer = RunningNorm(obs_dim)
    normalizer.mean = blocks["norm_mean"].copy()
    normalizer.var = blocks["norm_var"].copy()
    normalizer.count = float(blocks["norm_count"][0])
    return Checkpoint(
        policy=policy,
        value=ValueHead(value_spec, tensor("value")),
        cost_value=ValueHead(value_spec, tensor("cost_value")),
        square=ValueHead(square_spec, tensor("cost_square")),
        normalizer=normalizer,
        epoch=epoch,
    )
