"""Cross-attention decoding: queries from a high-resolution lateral map,
keys and values from the low-resolution map being upsampled.

Both maps are layer-normalized over channels and projected by convolutions
(distinct weights for k and v). Attention runs per head over channel
splits; the windowed form restricts each query window to its spatially
aligned kv window, the global form lets every query attend to every kv
position. A final convolution mixes the merged context map. No positional
encoding is added and windows are never shifted.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metering
from .conv import ConvSpec
from .tensor import (ContractError, ShapeError, Tensor, layer_norm, matmul,
                     permute, reshape, scale, softmax_rows, transpose_last2,
                     zeros, tensor)
from .windows import WindowGrid, merge, paired_partition, partition


@dataclass
class WauConfig:
    """Knobs for one upsampling stage.

    ratio      upsampling factor n (output is n times the source map)
    window     kv window size; query windows are ratio * window
    heads      attention heads; must divide the embedding width
    embed_dim  channel width of q/k/v; None derives it from the lateral map
    """

    ratio: int = 2
    window: int = 4
    heads: int = 4
    embed_dim: int | None = None
    proj_variant: str = "regular"
    proj_groups: int = 1
    proj_kernel: int = 3
    out_kernel: int = 3
    precision: str = "single"

    def validate(self) -> None:
        if self.ratio < 2:
            raise ContractError(f"ratio must be >= 2, got {self.ratio}")
        if self.window < 1:
            raise ContractError(f"window must be >= 1, got {self.window}")
        if self.heads < 1:
            raise ContractError(f"heads must be >= 1, got {self.heads}")
        for k in (self.proj_kernel, self.out_kernel):
            if k < 1 or k % 2 == 0:
                raise ContractError(f"kernels must be odd and positive, got {k}")
        if self.embed_dim is not None and self.embed_dim % self.heads:
            raise ContractError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")

    @property
    def query_window(self) -> int:
        return self.ratio * self.window


@dataclass
class AttentionRecord:
    """Detached attention weights captured during one windowed forward."""

    weights: np.ndarray                 # (num_windows, heads, Tq, Tkv)
    coords: list[tuple[int, int, int]]  # (batch, tile_row, tile_col) per window
    layer_index: int
    ratio: int
    window: int
    heads: int
    query_shape: tuple[int, int, int, int]

    def row_sums(self) -> np.ndarray:
        return self.weights.sum(axis=-1)


class AttentionDecoder:
    """Parameters and forward passes for one attention decoding stage."""

    def __init__(self, cfg: WauConfig, lateral_channels: int, source_channels: int,
                 rng: np.random.Generator, layer_index: int = 0):
        cfg.validate()
        embed = cfg.embed_dim if cfg.embed_dim is not None else lateral_channels
        if embed != lateral_channels:
            raise ContractError(
                f"embed_dim {embed} must equal the lateral channel count "
                f"{lateral_channels}; leave it unset to derive it")
        if embed % cfg.heads:
            raise ContractError(f"embed_dim {embed} not divisible by heads {cfg.heads}")
        self.cfg = cfg
        self.embed_dim = embed
        self.head_dim = embed // cfg.heads
        self.lateral_channels = lateral_channels
        self.source_channels = source_channels
        self.layer_index = layer_index
        p = cfg.precision

        one = np.ones(lateral_channels, dtype=np.float32)
        self.ln_q_gamma = tensor(one, precision=p, requires_grad=True)
        self.ln_q_beta = zeros((lateral_channels,), precision=p, requires_grad=True)
        self.ln_kv_gamma = tensor(np.ones(source_channels, dtype=np.float32),
                                  precision=p, requires_grad=True)
        self.ln_kv_beta = zeros((source_channels,), precision=p, requires_grad=True)

        def proj(in_ch):
            return ConvSpec(cfg.proj_variant, in_ch, embed, cfg.proj_kernel, rng,
                            groups=cfg.proj_groups, precision=p)

        self.q_proj = proj(lateral_channels)
        self.k_proj = proj(source_channels)
        self.v_proj = proj(source_channels)
        self.out_conv = ConvSpec("regular", embed, embed, cfg.out_kernel, rng, precision=p)

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = [("ln_q.gamma", self.ln_q_gamma), ("ln_q.beta", self.ln_q_beta),
               ("ln_kv.gamma", self.ln_kv_gamma), ("ln_kv.beta", self.ln_kv_beta)]
        for prefix, spec in (("q_proj", self.q_proj), ("k_proj", self.k_proj),
                             ("v_proj", self.v_proj), ("out_conv", self.out_conv)):
            out.extend((f"{prefix}.{n}", t) for n, t in spec.parameters())
        return out

    # -- projections --------------------------------------------------------

    def project_qkv(self, lateral: Tensor, source: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Normalize both maps and project to q (lateral) and k, v (source)."""
        if lateral.shape[0] != source.shape[0]:
            raise ShapeError(
                f"batch sizes differ: lateral {lateral.shape} vs source {source.shape}")
        if lateral.shape[1] != self.lateral_channels:
            raise ShapeError(
                f"lateral has {lateral.shape[1]} channels, expected {self.lateral_channels}")
        if source.shape[1] != self.source_channels:
            raise ShapeError(
                f"source has {source.shape[1]} channels, expected {self.source_channels}")
        ln_lat = layer_norm(lateral, self.ln_q_gamma, self.ln_q_beta)
        ln_src = layer_norm(source, self.ln_kv_gamma, self.ln_kv_beta)
        with metering.tagged("proj_q"):
            q = self.q_proj(ln_lat)
        with metering.tagged("proj_k"):
            k = self.k_proj(ln_src)
        with metering.tagged("proj_v"):
            v = self.v_proj(ln_src)
        metering.track_buffer("q", q.size)
        metering.track_buffer("k", k.size)
        metering.track_buffer("v", v.size)
        return q, k, v

    # -- attention core ------------------------------------------------------

    def _attend(self, q_tok: Tensor, k_tok: Tensor, v_tok: Tensor) -> tuple[Tensor, np.ndarray]:
        """Scaled dot-product attention over (B, T, E) token blocks."""
        B, Tq, E = q_tok.shape
        h, d = self.cfg.heads, self.head_dim
        qh = permute(reshape(q_tok, (B, Tq, h, d)), (0, 2, 1, 3))
        kh = permute(reshape(k_tok, (B, k_tok.shape[1], h, d)), (0, 2, 1, 3))
        vh = permute(reshape(v_tok, (B, v_tok.shape[1], h, d)), (0, 2, 1, 3))
        with metering.tagged("attn_scores"):
            scores = scale(matmul(qh, transpose_last2(kh)), 1.0 / np.sqrt(d))
        weights = softmax_rows(scores)
        metering.track_buffer("weights", weights.size)
        with metering.tagged("attn_apply"):
            ctx = matmul(weights, vh)
        merged = reshape(permute(ctx, (0, 2, 1, 3)), (B, Tq, E))
        return merged, weights.data

    def _context_windows(self, lateral: Tensor, source: Tensor
                         ) -> tuple[Tensor, WindowGrid, np.ndarray]:
        q, k, v = self.project_qkv(lateral, source)
        qgrid, kgrid = paired_partition(q, k, self.cfg.window, self.cfg.ratio)
        vgrid = partition(v, self.cfg.window)
        ctx, w = self._attend(qgrid.blocks, kgrid.blocks, vgrid.blocks)
        return ctx, qgrid, w

    def wad_features(self, lateral: Tensor, source: Tensor,
                     ) -> tuple[Tensor, AttentionRecord]:
        """Windowed attention context merged to map form, before out_conv."""
        ctx, qgrid, w = self._context_windows(lateral, source)
        merged = merge(WindowGrid(ctx, qgrid.source_shape, qgrid.window))
        rec = AttentionRecord(weights=w.copy(), coords=qgrid.coords(),
                              layer_index=self.layer_index, ratio=self.cfg.ratio,
                              window=self.cfg.window, heads=self.cfg.heads,
                              query_shape=merged.shape)
        return merged, rec

    def wad_forward(self, lateral: Tensor, source: Tensor,
                    record_attention: bool = False):
        """Windowed attention decode: (N, E, nH, nW) from source (N, C, H, W)."""
        feats, rec = self.wad_features(lateral, source)
        with metering.tagged("out_conv"):
            out = self.out_conv(feats)
        metering.release_buffers()
        if record_attention:
            return out, rec
        return out

    def ad_forward(self, lateral: Tensor, source: Tensor) -> Tensor:
        """Global attention decode: every query attends to all kv positions.

        Reference form the windowed decoder must reproduce when the window
        spans the whole source map. Quadratic cost in source pixels.
        """
        q, k, v = self.project_qkv(lateral, source)
        N, E, Hq, Wq = q.shape
        q_tok = reshape(permute(q, (0, 2, 3, 1)), (N, Hq * Wq, E))
        k_tok = reshape(permute(k, (0, 2, 3, 1)), (N, k.shape[2] * k.shape[3], E))
        v_tok = reshape(permute(v, (0, 2, 3, 1)), (N, v.shape[2] * v.shape[3], E))
        ctx, _ = self._attend(q_tok, k_tok, v_tok)
        feats = permute(reshape(ctx, (N, Hq, Wq, E)), (0, 3, 1, 2))
        with metering.tagged("out_conv"):
            out = self.out_conv(feats)
        metering.release_buffers()
        return out
