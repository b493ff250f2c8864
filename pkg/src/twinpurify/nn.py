"""Dense networks with hand-written reverse-mode gradients.

Everything is float64 numpy. A network is an :class:`MLPSpec` plus a flat
``params`` dict (``W0, b0, W1, ...``; ``gamma{i}, beta{i}`` for layers with
batch normalization) and a ``buffers`` dict with running statistics.
Layer ``i`` computes ``act(bn(x @ W{i} + b{i}))``; hidden layers use
``spec.activation`` and the last layer ``spec.output_activation``.

The ReLU subgradient at 0 is 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from twinpurify import kernels
from twinpurify.errors import NonFiniteError, NumericalError, ValidationError

ACTIVATIONS = ("relu", "identity")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MLPSpec:
    layer_widths: tuple[int, ...]
    activation: str = "relu"
    output_activation: str = "identity"
    batch_norm: tuple[bool, ...] = ()

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValidationError("an MLP needs at least two widths")
        if min(widths) < 1:
            raise ValidationError("layer widths must be positive")
        for act in (self.activation, self.output_activation):
            if act not in ACTIVATIONS:
                raise ValidationError(f"unknown activation {act!r}")
        bn = tuple(bool(b) for b in self.batch_norm) or (False,) * self.n_layers
        if len(bn) != self.n_layers:
            raise ValidationError(f"need {self.n_layers} batch-norm flags, got {len(bn)}")
        object.__setattr__(self, "batch_norm", bn)

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    def layer_activation(self, i: int) -> str:
        return self.output_activation if i == self.n_layers - 1 else self.activation

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "activation": self.activation,
            "output_activation": self.output_activation,
            "batch_norm": list(self.batch_norm),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLPSpec":
        return cls(
            tuple(d["layer_widths"]),
            d.get("activation", "relu"),
            d.get("output_activation", "identity"),
            tuple(d.get("batch_norm", ())),
        )


def init_params(spec: MLPSpec, rng: np.random.Generator) -> tuple[dict, dict]:
    """He-normal weights for ReLU layers, LeCun-normal otherwise; zero biases."""
    params, buffers = {}, {}
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.layer_widths[i], spec.layer_widths[i + 1]
        gain = 2.0 if spec.layer_activation(i) == "relu" else 1.0
        params[f"W{i}"] = rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
        if spec.batch_norm[i]:
            params[f"gamma{i}"] = np.ones(fan_out)
            params[f"beta{i}"] = np.zeros(fan_out)
            buffers[f"run_mean{i}"] = np.zeros(fan_out)
            buffers[f"run_var{i}"] = np.ones(fan_out)
    return params, buffers


def _check_finite(a: np.ndarray, where: str) -> None:
    if not np.isfinite(a).all():
        raise NonFiniteError(f"non-finite values in {where}")


def forward(
    spec: MLPSpec,
    params: dict,
    x: np.ndarray,
    buffers: dict | None = None,
    train: bool = False,
) -> tuple[np.ndarray, list]:
    """Forward pass; returns the output and a cache for :func:`backward`.

    With ``train=True`` batch-norm layers use batch statistics and update
    the running averages in ``buffers``; otherwise they use the running
    averages.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.in_width:
        raise ValidationError(f"expected input of width {spec.in_width}, got shape {x.shape}")
    cache = []
    h = x
    for i in range(spec.n_layers):
        W, b = params[f"W{i}"], params[f"b{i}"]
        pre = h @ W + b
        bn = None
        if spec.batch_norm[i]:
            if train:
                if pre.shape[0] < 2:
                    raise ValidationError("batch normalization needs at least 2 rows")
                mu = pre.mean(axis=0)
                var = pre.var(axis=0)
                if buffers is not None:
                    buffers[f"run_mean{i}"] = (1 - BN_MOMENTUM) * buffers[f"run_mean{i}"] + BN_MOMENTUM * mu
                    buffers[f"run_var{i}"] = (1 - BN_MOMENTUM) * buffers[f"run_var{i}"] + BN_MOMENTUM * var
            else:
                mu, var = buffers[f"run_mean{i}"], buffers[f"run_var{i}"]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (pre - mu) * inv_std
            bn = (xhat, inv_std, train)
            pre = params[f"gamma{i}"] * xhat + params[f"beta{i}"]
        out = np.maximum(pre, 0.0) if spec.layer_activation(i) == "relu" else pre
        _check_finite(out, f"layer {i}")
        cache.append((h, pre, bn))
        h = out
    return h, cache


def backward(
    spec: MLPSpec, params: dict, cache: list, grad_out: np.ndarray, need_input_grad: bool = True
) -> tuple[dict, np.ndarray | None]:
    """Reverse-mode gradients of ``sum(grad_out * forward(x))``.

    Returns ``(param_grads, grad_x)``; ``grad_x`` is None when
    ``need_input_grad`` is False, which saves the widest matrix product.
    """
    if len(cache) != spec.n_layers:
        raise ValidationError("cache does not match network depth")
    g = np.asarray(grad_out, dtype=np.float64)
    grads = {}
    for i in reversed(range(spec.n_layers)):
        h, pre, bn = cache[i]
        if g.shape != pre.shape:
            raise ValidationError(f"gradient shape {g.shape} does not match layer {i} output {pre.shape}")
        if spec.layer_activation(i) == "relu":
            g = g * (pre > 0)
        if bn is not None:
            xhat, inv_std, batch_stats = bn
            grads[f"gamma{i}"] = (g * xhat).sum(axis=0)
            grads[f"beta{i}"] = g.sum(axis=0)
            gx = g * params[f"gamma{i}"]
            if batch_stats:
                g = inv_std * (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0))
            else:
                g = gx * inv_std
        grads[f"W{i}"] = h.T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        if i == 0 and not need_input_grad:
            return grads, None
        g = g @ params[f"W{i}"].T
        _check_finite(g, f"gradient of layer {i}")
    return grads, g


class MLP:
    """Convenience wrapper bundling spec, parameters and buffers."""

    def __init__(self, spec: MLPSpec, params: dict | None = None, buffers: dict | None = None, rng=None):
        self.spec = spec
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params, init_buffers = init_params(spec, rng)
            buffers = init_buffers if buffers is None else buffers
        self.params = params
        self.buffers = buffers if buffers is not None else {}

    def forward(self, x, train: bool = False):
        return forward(self.spec, self.params, x, self.buffers, train)

    def backward(self, cache, grad_out, need_input_grad: bool = True):
        return backward(self.spec, self.params, cache, grad_out, need_input_grad)

    def __call__(self, x):
        return self.forward(x)[0]

    def state_arrays(self, prefix: str) -> dict:
        out = {f"{prefix}.param.{k}": v for k, v in self.params.items()}
        out.update({f"{prefix}.buffer.{k}": v for k, v in self.buffers.items()})
        return out

    @classmethod
    def from_arrays(cls, spec: MLPSpec, arrays: dict, prefix: str) -> "MLP":
        params, buffers = {}, {}
        for key, val in arrays.items():
            if key.startswith(prefix + ".param."):
                params[key[len(prefix) + 7:]] = np.array(val)
            elif key.startswith(prefix + ".buffer."):
                buffers[key[len(prefix) + 8:]] = np.array(val)
        return cls(spec, params, buffers)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    _scratch: dict = field(default_factory=dict, repr=False)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValidationError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        g = np.ascontiguousarray(g, dtype=np.float64)
        if name not in state._scratch:
            state._scratch[name] = np.empty_like(p)
        kernels.adam_update(p, g, m, v, state.learning_rate, b1, b2, c1, c2, state.epsilon, state._scratch[name])
    return params


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_block: dict

    def __float__(self):
        return self.max_rel_error


def finite_diff_check(
    lossfn: Callable[[dict], tuple[float, dict]],
    params: dict,
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Compare analytic gradients with central differences.

    ``lossfn(params)`` must return ``(loss, grads)`` and be a pure function
    of ``params``. The error for coordinate k of a block is
    ``|a_k - n_k| / max(|a_k|, |n_k|, floor)`` with
    ``floor = max(1e-3 * block max |a|, 1e-5 * overall max |a|)``, so
    coordinates with negligible gradient, including blocks whose gradient
    is identically zero (a bias feeding a batch normalization), are judged
    against the gradient scale rather than against round-off. With
    ``max_coords`` only a random subset of each block is probed.
    """
    if not h > 0:
        raise ValidationError("step must be positive")
    loss, grads = lossfn(params)
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss")
    rng = rng if rng is not None else np.random.default_rng(0)
    overall = max((float(np.abs(g).max(initial=0.0)) for g in grads.values()), default=0.0)
    per_block = {}
    for name in sorted(grads):
        p = params[name]
        a = np.asarray(grads[name]).ravel()
        flat = p.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        num = np.empty(coords.size)
        for j, k in enumerate(coords):
            orig = flat[k]
            flat[k] = orig + h
            lp = lossfn(params)[0]
            flat[k] = orig - h
            lm = lossfn(params)[0]
            flat[k] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericalError(f"non-finite loss while perturbing {name}")
            num[j] = (lp - lm) / (2.0 * h)
        ak = a[coords]
        floor = max(1e-3 * float(np.abs(a).max(initial=0.0)), 1e-5 * overall, 1e-12)
        denom = np.maximum(np.maximum(np.abs(ak), np.abs(num)), floor)
        per_block[name] = float((np.abs(ak - num) / denom).max(initial=0.0))
    return GradCheckResult(max(per_block.values(), default=0.0), per_block)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, meta: dict, arrays: dict) -> Path:
    """Write an ``.npz`` container: a JSON header plus named float buffers.

    The header records ``format_version``; RNG states and specs go inside
    ``meta`` as plain JSON.
    """
    path = Path(path)
    header = dict(meta, format_version=CHECKPOINT_VERSION)
    blob = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    payload = {"__meta__": blob}
    for key, val in arrays.items():
        if key == "__meta__":
            raise ValidationError("reserved array name")
        payload[key] = np.asarray(val)
    with path.open("wb") as fh:
        np.savez(fh, **payload)
    return path


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"missing file: {path}")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        arrays = {k: np.array(z[k]) for k in z.files if k != "__meta__"}
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {meta.get('format_version')}")
    return meta, arrays


def rng_state(rng: np.random.Generator) -> dict:
    return json.loads(json.dumps(rng.bit_generator.state))


def rng_from_state(state: dict) -> np.random.Generator:
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)
