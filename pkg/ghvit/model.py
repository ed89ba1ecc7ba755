"""The five model variants, from image batch to class logits.

Hierarchical variants (hvit, gcn_hvit_1, gcn_hvit_2) run two levels:

    images [B,H,W,C] -> f1 [B,4,4,D] -> x_p [B,16,D] -> k [B,16,D]
      -> z [B,4,4,D] -> f2 [B,2,2,D] -> z_p [B,4,D] -> h [B,5,D] -> logits [B,K]

The single-level baselines (vit4, vit16) patchify once, prepend a class token
and add a learned table to every token.
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from ghvit.errors import ConfigError, ShapeError
from ghvit.graph import AdjacencyMode, gcn_positional_embedding, grid_operator
from ghvit.nn import MLP_RATIO, EncoderLayerParams, encoder_layer
from ghvit.rng import Rng
from ghvit.tensor import Tensor, concat, conv2d_patchify, matmul

logger = logging.getLogger(__name__)

Params = dict[str, Tensor]

LEVEL1_GRID = 4  # 16 small patches
LEVEL2_KERNEL = 2  # 2x2 merge of the level-1 token grid -> 4 large patches
INIT_STD = 0.02


class PosMode(str, Enum):
    LEARNABLE_1D = "learnable_1d"
    GCN = "gcn"


@dataclass(frozen=True)
class VariantSpec:
    hierarchical: bool
    grid: int  # patches per side at the first (or only) level
    pos_mode: PosMode
    adjacency_mode: Optional[AdjacencyMode]


VARIANTS: dict[str, VariantSpec] = {
    "vit4": VariantSpec(False, 2, PosMode.LEARNABLE_1D, None),
    "vit16": VariantSpec(False, 4, PosMode.LEARNABLE_1D, None),
    "hvit": VariantSpec(True, LEVEL1_GRID, PosMode.LEARNABLE_1D, None),
    "gcn_hvit_1": VariantSpec(True, LEVEL1_GRID, PosMode.GCN, AdjacencyMode.ONE_WAY),
    "gcn_hvit_2": VariantSpec(True, LEVEL1_GRID, PosMode.GCN, AdjacencyMode.BIDIRECTIONAL),
}


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    image_h: int
    image_w: int
    channels: int
    embed_dim: int = 64
    layers_per_level: int = 4
    heads: int = 4
    num_classes: int = 10
    # left as None, both follow from the variant
    pos_mode: Optional[PosMode] = None
    adjacency_mode: Optional[AdjacencyMode] = None

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; valid: {', '.join(VARIANTS)}")
        spec = VARIANTS[self.variant]
        if self.pos_mode is None:
            object.__setattr__(self, "pos_mode", spec.pos_mode)
            object.__setattr__(self, "adjacency_mode", spec.adjacency_mode)
        if (self.pos_mode, self.adjacency_mode) != (spec.pos_mode, spec.adjacency_mode):
            raise ConfigError(
                f"variant {self.variant} requires pos_mode={spec.pos_mode.value} "
                f"and adjacency_mode={spec.adjacency_mode.value if spec.adjacency_mode else 'n/a'}"
            )
        if self.image_h != self.image_w:
            raise ConfigError(f"images must be square, got {self.image_h}x{self.image_w}")
        if self.image_h % spec.grid:
            raise ConfigError(f"image side {self.image_h} is not divisible by {spec.grid} for {self.variant}")
        if min(self.channels, self.embed_dim, self.layers_per_level, self.num_classes) < 1:
            raise ConfigError("channels, embed_dim, layers_per_level and num_classes must be positive")
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")

    @property
    def spec(self) -> VariantSpec:
        return VARIANTS[self.variant]

    @property
    def hierarchical(self) -> bool:
        return self.spec.hierarchical

    @property
    def patch_size(self) -> int:
        return self.image_h // self.spec.grid

    @property
    def num_patches(self) -> int:
        return self.spec.grid**2

    @property
    def level2_patches(self) -> int:
        return (LEVEL1_GRID // LEVEL2_KERNEL) ** 2


def build_variant(
    name: str,
    dataset_dims: Sequence[int],
    *,
    num_classes: int = 10,
    embed_dim: int = 64,
    layers_per_level: int = 4,
    heads: int = 4,
) -> ModelConfig:
    """Populate a ModelConfig for `name` on images of (H, W[, C])."""
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; valid: {', '.join(VARIANTS)}")
    h, w = int(dataset_dims[0]), int(dataset_dims[1])
    c = int(dataset_dims[2]) if len(dataset_dims) > 2 else 1
    spec = VARIANTS[name]
    return ModelConfig(
        variant=name,
        image_h=h,
        image_w=w,
        channels=c,
        embed_dim=embed_dim,
        layers_per_level=layers_per_level,
        heads=heads,
        num_classes=num_classes,
        pos_mode=spec.pos_mode,
        adjacency_mode=spec.adjacency_mode,
    )


# ----------------------------------------------------------------------
# parameters
# ----------------------------------------------------------------------
def _layer_shapes(prefix: str, d: int) -> list[tuple[str, tuple[int, ...], str]]:
    hidden = MLP_RATIO * d
    out = [(f"{prefix}.ln1.gamma", (d,), "one"), (f"{prefix}.ln1.beta", (d,), "zero")]
    for name in ("q", "k", "v", "o"):
        out.append((f"{prefix}.attn.w_{name}", (d, d), "normal"))
        out.append((f"{prefix}.attn.b_{name}", (d,), "zero"))
    out += [
        (f"{prefix}.ln2.gamma", (d,), "one"),
        (f"{prefix}.ln2.beta", (d,), "zero"),
        (f"{prefix}.mlp.w1", (d, hidden), "normal"),
        (f"{prefix}.mlp.b1", (hidden,), "zero"),
        (f"{prefix}.mlp.w2", (hidden, d), "normal"),
        (f"{prefix}.mlp.b2", (d,), "zero"),
    ]
    return out


def param_layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init) for every parameter in storage order."""
    d, p, c = config.embed_dim, config.patch_size, config.channels
    layout: list[tuple[str, tuple[int, ...], str]] = []
    if config.hierarchical:
        for level, (kernel, cin, tokens) in enumerate(
            [(p, c, config.num_patches), (LEVEL2_KERNEL, d, config.level2_patches)], start=1
        ):
            prefix = f"level{level}"
            layout.append((f"{prefix}.embed.kernel", (kernel, kernel, cin, d), "normal"))
            layout.append((f"{prefix}.embed.bias", (d,), "zero"))
            if config.pos_mode is PosMode.GCN:
                layout.append((f"{prefix}.pos.gcn_w", (d, d), "normal"))
            else:
                layout.append((f"{prefix}.pos.table", (tokens, d), "zero"))
            if level == 2:
                layout.append((f"{prefix}.cls_token", (1, d), "zero"))
            for i in range(config.layers_per_level):
                layout += _layer_shapes(f"{prefix}.blocks.{i}", d)
    else:
        layout.append(("embed.kernel", (p, p, c, d), "normal"))
        layout.append(("embed.bias", (d,), "zero"))
        layout.append(("cls_token", (1, d), "zero"))
        layout.append(("pos.table", (config.num_patches + 1, d), "zero"))
        for i in range(config.layers_per_level):
            layout += _layer_shapes(f"blocks.{i}", d)
    # zero head: uniform logits at initialization
    layout.append(("head.weight", (d, config.num_classes), "zero"))
    layout.append(("head.bias", (config.num_classes,), "zero"))
    return layout


def init_params(config: ModelConfig, rng: Rng) -> Params:
    params: Params = {}
    for name, shape, kind in param_layout(config):
        if kind == "normal":
            data = rng.truncated_normal(shape, INIT_STD)
        elif kind == "one":
            data = np.ones(shape, dtype=np.float32)
        else:
            data = np.zeros(shape, dtype=np.float32)
        params[name] = Tensor(data, requires_grad=True, dtype=np.float32)
    logger.debug("initialized %d tensors (%d values) for %s", len(params), parameter_count(config), config.variant)
    return params


def parameter_count(config: ModelConfig) -> int:
    d, k, c, p, big_l = config.embed_dim, config.num_classes, config.channels, config.patch_size, config.layers_per_level
    per_layer = 12 * d * d + 13 * d
    head = d * k + k
    if not config.hierarchical:
        return p * p * c * d + d + d + (config.num_patches + 1) * d + big_l * per_layer + head
    gcn = config.pos_mode is PosMode.GCN
    pos1 = d * d if gcn else config.num_patches * d
    pos2 = d * d if gcn else config.level2_patches * d
    level1 = p * p * c * d + d + pos1 + big_l * per_layer
    level2 = LEVEL2_KERNEL * LEVEL2_KERNEL * d * d + d + pos2 + d + big_l * per_layer
    return level1 + level2 + head


# ----------------------------------------------------------------------
# forward
# ----------------------------------------------------------------------
@dataclass
class ForwardTrace:
    f1: Optional[Tensor] = None
    x_p: Optional[Tensor] = None
    e_pos1: Optional[Tensor] = None
    k: list[Tensor] = field(default_factory=list)
    z: Optional[Tensor] = None
    f2: Optional[Tensor] = None
    z_p: Optional[Tensor] = None
    e_pos2: Optional[Tensor] = None
    h: list[Tensor] = field(default_factory=list)
    logits: Optional[Tensor] = None


@contextmanager
def _stage(name: str) -> Iterator[None]:
    try:
        yield
    except ShapeError as e:
        raise ShapeError(f"{name}: {e.message}", details=e.details) from e


def reshape_bridge(k: Tensor) -> Tensor:
    """[B, 16, D] token sequence -> [B, 4, 4, D] grid, token i at (i // 4, i % 4)."""
    if k.ndim != 3 or k.shape[1] != LEVEL1_GRID * LEVEL1_GRID:
        raise ShapeError(f"reshape bridge expects [B, {LEVEL1_GRID * LEVEL1_GRID}, D], got {k.shape}")
    b, _, d = k.shape
    return k.reshape(b, LEVEL1_GRID, LEVEL1_GRID, d)


def _flatten_grid(f: Tensor) -> Tensor:
    b, gh, gw, d = f.shape
    return f.reshape(b, gh * gw, d)


def _positional(config: ModelConfig, params: Params, level: int, tokens: Tensor, grid: int) -> Tensor:
    prefix = f"level{level}.pos"
    if config.pos_mode is PosMode.GCN:
        operator = grid_operator(grid, grid, config.adjacency_mode.value)
        return gcn_positional_embedding(tokens, operator, params[f"{prefix}.gcn_w"])
    return params[f"{prefix}.table"]


def _encoder(config: ModelConfig, params: Params, prefix: str, x: Tensor, states: list[Tensor]) -> Tensor:
    states.append(x)
    for i in range(config.layers_per_level):
        x = encoder_layer(x, EncoderLayerParams.from_params(params, f"{prefix}.{i}", config.heads))
        states.append(x)
    return x


def classification_head(params: Params, tokens: Tensor) -> Tensor:
    """Logits from the class token at position 0; the other tokens are ignored."""
    return matmul(tokens.select(axis=1, index=0), params["head.weight"]) + params["head.bias"]


def _prepend_cls(cls_token: Tensor, tokens: Tensor) -> Tensor:
    b, _, d = tokens.shape
    return concat([cls_token.reshape(1, 1, d).broadcast_to((b, 1, d)), tokens], axis=1)


def forward(
    config: ModelConfig,
    params: Params,
    images: Union[Tensor, np.ndarray],
    trace: Optional[ForwardTrace] = None,
) -> Tensor:
    """Logits [B, num_classes]; fills `trace` with every intermediate when given."""
    if not isinstance(images, Tensor):
        images = Tensor(images)
    expected = (config.image_h, config.image_w, config.channels)
    if images.ndim != 4 or images.shape[1:] != expected:
        raise ShapeError(f"input images: expected [B, {', '.join(map(str, expected))}], got {images.shape}")
    t = trace if trace is not None else ForwardTrace()
    if config.hierarchical:
        logits = _forward_hierarchical(config, params, images, t)
    else:
        logits = _forward_single_level(config, params, images, t)
    t.logits = logits
    return logits


def _forward_hierarchical(config: ModelConfig, params: Params, images: Tensor, t: ForwardTrace) -> Tensor:
    with _stage("level-1 patch embedding"):
        t.f1 = conv2d_patchify(images, params["level1.embed.kernel"], params["level1.embed.bias"])
        t.x_p = _flatten_grid(t.f1)
    with _stage("level-1 positional embedding"):
        t.e_pos1 = _positional(config, params, 1, t.x_p, LEVEL1_GRID)
        k = t.x_p + t.e_pos1
    with _stage("level-1 encoder"):
        k = _encoder(config, params, "level1.blocks", k, t.k)
    with _stage("reshape bridge"):
        t.z = reshape_bridge(k)
    with _stage("level-2 patch embedding"):
        t.f2 = conv2d_patchify(t.z, params["level2.embed.kernel"], params["level2.embed.bias"])
        t.z_p = _flatten_grid(t.f2)
    with _stage("level-2 positional embedding"):
        t.e_pos2 = _positional(config, params, 2, t.z_p, LEVEL1_GRID // LEVEL2_KERNEL)
        h = _prepend_cls(params["level2.cls_token"], t.z_p + t.e_pos2)
    with _stage("level-2 encoder"):
        h = _encoder(config, params, "level2.blocks", h, t.h)
    with _stage("classification head"):
        return classification_head(params, h)


def _forward_single_level(config: ModelConfig, params: Params, images: Tensor, t: ForwardTrace) -> Tensor:
    with _stage("patch embedding"):
        t.f1 = conv2d_patchify(images, params["embed.kernel"], params["embed.bias"])
        t.x_p = _flatten_grid(t.f1)
    with _stage("positional embedding"):
        t.e_pos1 = params["pos.table"]
        k = _prepend_cls(params["cls_token"], t.x_p) + t.e_pos1
    with _stage("encoder"):
        k = _encoder(config, params, "blocks", k, t.k)
    with _stage("classification head"):
        return classification_head(params, k)


@dataclass(eq=False)
class Model:
    """A config bound to its parameter set."""

    config: ModelConfig
    params: Params

    @classmethod
    def create(cls, config: ModelConfig, rng: Rng) -> "Model":
        return cls(config, init_params(config, rng))

    def __call__(self, images: Union[Tensor, np.ndarray], trace: Optional[ForwardTrace] = None) -> Tensor:
        return forward(self.config, self.params, images, trace)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict[str, np.ndarray]) -> "Model":
        expected = {name: shape for name, shape, _ in param_layout(config)}
        if set(arrays) != set(expected):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise ShapeError(f"parameter set does not match {config.variant}: missing {missing}, unexpected {extra}")
        params: Params = {}
        for name, shape in expected.items():
            if arrays[name].shape != shape:
                raise ShapeError(f"parameter {name} has shape {arrays[name].shape}, expected {shape}")
            params[name] = Tensor(arrays[name].copy(), requires_grad=True, dtype=np.float32)
        return cls(config, params)
