"""Transformer encoder for normalized (latitude, longitude) pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import FeedForward, LayerNorm, Module, MultiHeadAttention, xavier_uniform, zeros
from .tensor import Tensor


@dataclass
class PositionEncoderConfig:
    d_g: int = 32
    layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    # one token per coordinate; False embeds the pair as a single token
    split_tokens: bool = True

    def __post_init__(self):
        if self.d_g % self.heads:
            raise DimensionError(f"d_g={self.d_g} is not divisible by heads={self.heads}")

    @property
    def head_dim(self) -> int:
        return self.d_g // self.heads


class PositionEmbedding(Module):
    """Affine lift of each coordinate into ``d_g`` features.

    ``weight`` has shape ``(d_g, 2)``: column t embeds coordinate t.
    """

    def __init__(self, rng, d_g: int):
        self.weight = xavier_uniform(rng, (d_g, 2), 2, d_g)
        self.bias = zeros((d_g,))

    def forward(self, x: Tensor, split_tokens: bool = True) -> Tensor:
        # x: (B, 2)
        if split_tokens:
            cols = T.transpose(self.weight, (1, 0)).reshape(1, 2, -1)
            return x.reshape(x.shape[0], 2, 1) * cols + self.bias
        return (x @ T.transpose(self.weight, (1, 0)) + self.bias).reshape(x.shape[0], 1, -1)


def embed_position(x, embedding: PositionEmbedding) -> Tensor:
    """Embed one normalized 2-vector as a ``(2, d_g)`` token sequence."""
    x = T.as_tensor(x).reshape(1, 2)
    return embedding(x).reshape(2, -1)


class EncoderLayer(Module):
    """Post-norm transformer layer: LN(x + MHA(x)) then LN(y + FFN(y))."""

    def __init__(self, rng, d_g: int, heads: int, hidden: int):
        self.attn = MultiHeadAttention(rng, d_g, heads)
        self.norm1 = LayerNorm(d_g)
        self.ffn = FeedForward(rng, d_g, hidden, T.relu)
        self.norm2 = LayerNorm(d_g)

    def forward(self, tokens: Tensor) -> Tensor:
        y = self.norm1(tokens + self.attn(tokens))
        return self.norm2(y + self.ffn(y))


class PositionEncoder(Module):
    def __init__(self, config: PositionEncoderConfig, rng: np.random.Generator):
        self.config = config
        self.embedding = PositionEmbedding(rng, config.d_g)
        self.layers = [EncoderLayer(rng, config.d_g, config.heads, config.ffn_mult * config.d_g)
                       for _ in range(config.layers)]

    @property
    def out_dim(self) -> int:
        return self.config.d_g

    def attention_weights(self) -> list[np.ndarray]:
        return [layer.attn.last_weights for layer in self.layers]

    def forward(self, x: Tensor) -> Tensor:
        """(B, 2) normalized coordinates -> (B, d_g) pooled features."""
        tokens = self.embedding(T.as_tensor(x), self.config.split_tokens)
        for layer in self.layers:
            tokens = layer(tokens)
        return tokens.mean(axis=1)
