"""Backbone -> aggregation -> GAP -> BN neck -> FC, with hand-written backprop."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from lgareid.aggregate import AGGREGATIONS, Aggregator, global_average_pool, global_average_pool_backward
from lgareid.gridgraph import DEFAULT_RADIUS, build_grid_graph
from lgareid.pipeline import layers

BACKBONES = ("precomputed", "toy-conv")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture switches.

    ``precomputed`` consumes stored ``(in_channels, h, w)`` maps through a
    trainable 1x1 projection (``adapter``); ``toy-conv`` is a small stack of
    stride-2 3x3 convolutions standing in for a real backbone.  Neither is a
    pretrained network.
    """

    backbone: str = "precomputed"
    num_classes: int = 2
    channels: int = 32
    in_channels: int = 32
    grid: tuple[int, int] = (20, 20)
    radius: float = DEFAULT_RADIUS
    aggregation: str = "lga"
    lga_depth: int = 2
    lap_relu: bool = False
    bn_neck: bool = True
    adapter: bool = True
    adapter_relu: bool = False
    retrieval: str = "post-bn"
    input_size: int = 320
    stride: int = 16
    toy_widths: tuple[int, ...] = (16, 32, 64)
    flip_p: float = 0.5
    erase_p: float = 0.5
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if self.aggregation != "none" and self.lga_depth < 1:
            raise ConfigError("lga_depth must be >= 1 (use aggregation='none' to disable)")
        if self.retrieval not in ("pre-bn", "post-bn"):
            raise ConfigError(f"retrieval must be 'pre-bn' or 'post-bn', got {self.retrieval!r}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.backbone == "toy-conv":
            n = self.stride.bit_length() - 1
            if self.stride < 2 or 1 << n != self.stride:
                raise ConfigError(f"toy backbone stride must be a power of two, got {self.stride}")
            if self.input_size % self.stride:
                raise ConfigError(f"input size {self.input_size} is not divisible by stride {self.stride}")
            side = self.input_size // self.stride
            if tuple(self.grid) != (side, side):
                object.__setattr__(self, "grid", (side, side))

    def evolve(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


@dataclass
class Output:
    fmap: np.ndarray
    pre_bn: np.ndarray
    post_bn: np.ndarray
    logits: np.ndarray

    def retrieval(self, which: str = "post-bn") -> np.ndarray:
        return self.post_bn if which == "post-bn" else self.pre_bn


@dataclass
class Model:
    cfg: ModelConfig
    params: dict[str, np.ndarray]
    bn: layers.BNState | None = None
    aggregator: Aggregator | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def create(cls, cfg: ModelConfig, seed: int = 0) -> "Model":
        rng = np.random.default_rng([seed, 101])
        params: dict[str, np.ndarray] = {}
        if cfg.backbone == "toy-conv":
            widths = [3, *cfg.toy_widths]
            blocks = cfg.stride.bit_length() - 1
            widths = (widths + [cfg.channels] * blocks)[: blocks] + [cfg.channels]
            for i in range(blocks):
                ci, co = widths[i], widths[i + 1]
                params[f"backbone.conv{i}.weight"] = rng.normal(0, np.sqrt(2.0 / (9 * ci)), (co, ci, 3, 3))
                params[f"backbone.conv{i}.bias"] = np.zeros(co)
        elif cfg.adapter:
            params["adapter.weight"] = rng.normal(0, np.sqrt(1.0 / cfg.in_channels), (cfg.channels, cfg.in_channels))
            params["adapter.bias"] = np.zeros(cfg.channels)
        elif cfg.in_channels != cfg.channels:
            raise ConfigError("without an adapter, in_channels must equal channels")
        bn = None
        if cfg.bn_neck:
            bn = layers.BNState.create(cfg.channels, cfg.bn_momentum, cfg.bn_eps)
            params["bn.gamma"], params["bn.beta"] = bn.gamma, bn.beta
        params["fc.weight"] = rng.normal(0, 0.001, (cfg.num_classes, cfg.channels))
        if not cfg.bn_neck:
            params["fc.bias"] = np.zeros(cfg.num_classes)
        graph = build_grid_graph(cfg.grid[1], cfg.grid[0], cfg.radius)
        return cls(cfg, params, bn, Aggregator(graph, cfg.aggregation, cfg.lga_depth, cfg.lap_relu))

    # -- state ---------------------------------------------------------------

    def buffers(self) -> dict[str, np.ndarray]:
        if self.bn is None:
            return {}
        return {"bn.running_mean": self.bn.running_mean, "bn.running_var": self.bn.running_var}

    def state(self) -> dict[str, np.ndarray]:
        return {**self.params, **self.buffers()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.state())
        if set(state) != expected:
            missing, extra = expected - set(state), set(state) - expected
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in state.items():
            if name in self.params:
                if self.params[name].shape != arr.shape:
                    raise ValueError(f"{name}: shape {arr.shape} != expected {self.params[name].shape}")
                self.params[name][...] = arr
        if self.bn is not None:
            self.bn.running_mean = np.array(state["bn.running_mean"], dtype=np.float64)
            self.bn.running_var = np.array(state["bn.running_var"], dtype=np.float64)

    def trainable(self) -> list[str]:
        return list(self.params)

    # -- forward / backward --------------------------------------------------

    def backbone(self, x: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        x = np.asarray(x, dtype=np.float64)
        cache = []
        if cfg.backbone == "toy-conv":
            if x.ndim != 4 or x.shape[1] != 3:
                raise ValueError(f"toy backbone expects (B, 3, H, W) images, got shape {x.shape}")
            if x.shape[2] % cfg.stride or x.shape[3] % cfg.stride:
                raise ConfigError(f"input {x.shape[2]}x{x.shape[3]} is not divisible by stride {cfg.stride}")
            blocks = cfg.stride.bit_length() - 1
            for i in range(blocks):
                x, c = layers.conv2d_forward(x, self.params[f"backbone.conv{i}.weight"],
                                             self.params[f"backbone.conv{i}.bias"])
                relu = i < blocks - 1
                cache.append((c, x if relu else None))
                if relu:
                    x = np.maximum(x, 0.0)
        else:
            if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2:] != tuple(cfg.grid):
                raise ValueError(f"expected (B, {cfg.in_channels}, {cfg.grid[0]}, {cfg.grid[1]}) feature maps, "
                                 f"got shape {x.shape}")
            if cfg.adapter:
                x, c = layers.pointwise_forward(x, self.params["adapter.weight"], self.params["adapter.bias"])
                cache.append((c, x if cfg.adapter_relu else None))
                if cfg.adapter_relu:
                    x = np.maximum(x, 0.0)
        self._cache["backbone"] = cache
        return x

    def forward(self, x: np.ndarray, train: bool = False, update_stats: bool = True) -> Output:
        fmap = self.backbone(x)
        agg = self.aggregator.forward(fmap)
        pre = global_average_pool(agg)
        if self.bn is not None:
            post, bn_cache = layers.bn_forward(pre, self.bn, train, update_stats)
        else:
            post, bn_cache = pre, None
        logits = post @ self.params["fc.weight"].T
        if "fc.bias" in self.params:
            logits = logits + self.params["fc.bias"]
        self._cache.update(bn=bn_cache, post=post, spatial=agg.shape[2:])
        return Output(fmap, pre, post, logits)

    __call__ = forward

    def backward(self, d_logits: np.ndarray, d_pre: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Parameter gradients for the most recent forward pass."""
        cfg, c = self.cfg, self._cache
        grads: dict[str, np.ndarray] = {"fc.weight": d_logits.T @ c["post"]}
        if "fc.bias" in self.params:
            grads["fc.bias"] = d_logits.sum(axis=0)
        d_post = d_logits @ self.params["fc.weight"]
        if self.bn is not None:
            d_bn, grads["bn.gamma"], grads["bn.beta"] = layers.bn_backward(d_post, c["bn"], self.bn.gamma)
        else:
            d_bn = d_post
        if d_pre is not None:
            d_bn = d_bn + d_pre
        dx = self.aggregator.backward(global_average_pool_backward(d_bn, c["spatial"]))
        cache = c["backbone"]
        if cfg.backbone == "toy-conv":
            for i in reversed(range(len(cache))):
                conv_cache, pre_relu = cache[i]
                if pre_relu is not None:
                    dx = np.where(pre_relu > 0, dx, 0.0)
                dx, grads[f"backbone.conv{i}.weight"], grads[f"backbone.conv{i}.bias"] = \
                    layers.conv2d_backward(dx, conv_cache)
        elif cfg.adapter:
            inp, pre_relu = cache[0]
            if pre_relu is not None:
                dx = np.where(pre_relu > 0, dx, 0.0)
            _, grads["adapter.weight"], grads["adapter.bias"] = \
                layers.pointwise_backward(dx, inp, self.params["adapter.weight"])
        return grads

    def embed(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Inference-mode retrieval embeddings, computed in chunks."""
        out = [self.forward(x[i:i + batch_size], train=False).retrieval(self.cfg.retrieval)
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out)
