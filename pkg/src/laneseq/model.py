"""Conditional autoregressive transformer decoder over the token vocabulary,
the class-weighted likelihood objective, and the training loop.

The conditioning signal is a rasterized scene: non-overlapping patches are
linearly projected into context vectors that every block cross-attends to.
Blocks are pre-norm (causal self-attention, cross-attention, feedforward,
each residual). A step-mode cache makes autoregressive generation linear in
sequence length instead of quadratic.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import TokenSequence, VocabSpec
from .graph import BevExtent, DEFAULT_EXTENT

CHECKPOINT_MAGIC = b"LGCK1\n"


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 6
    embed_dim: int = 128
    num_heads: int = 8
    feedforward_dim: int = 512
    patch_size: int = 8
    dropout: float = 0.0
    cond_dropout: float = 0.15
    raster_h: int = 64
    raster_w: int = 64
    vertex_len: int = 48
    edge_len: int = 96

    def __post_init__(self) -> None:
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must divide evenly into num_heads")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.raster_h % self.patch_size or self.raster_w % self.patch_size:
            raise ValueError("raster dimensions must be multiples of patch_size")
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise ValueError("cond_dropout must lie in [0, 1]")

    @property
    def max_len(self) -> int:
        return 1 + self.vertex_len + self.edge_len

    @property
    def num_patches(self) -> int:
        return (self.raster_h // self.patch_size) * (self.raster_w // self.patch_size)


@dataclass(frozen=True)
class LossWeights:
    """Per-class loss weights: terminators are down-weighted, padding is
    excluded entirely (weight exactly 0, removed from the normalizer too)."""

    w_term: float = 0.5

    def __post_init__(self) -> None:
        if self.w_term < 0:
            raise ValueError("w_term must be >= 0")

    def vector(self, vocab: VocabSpec, dtype=torch.float32) -> torch.Tensor:
        w = torch.ones(vocab.vocab_size, dtype=dtype)
        w[vocab.EOV] = self.w_term
        w[vocab.SPLIT] = self.w_term
        w[vocab.EOE] = self.w_term
        w[vocab.NA] = 0.0
        return w


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.dropout = dropout

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, l, d = x.shape
        return x.view(b, l, self.heads, d // self.heads).transpose(1, 2)

    def forward(self, x, past_kv=None):
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q, k, v = self._split(q), self._split(k), self._split(v)
        if past_kv is not None:
            pk, pv = past_kv
            if pk is not None:
                k = torch.cat([pk, k], dim=2)
                v = torch.cat([pv, v], dim=2)
            # single new query attends to everything cached: no mask needed
            y = F.scaled_dot_product_attention(q, k, v)
            new_past = (k, v)
        else:
            y = F.scaled_dot_product_attention(
                q, k, v, dropout_p=self.dropout if self.training else 0.0, is_causal=True
            )
            new_past = None
        b, h, l, dh = y.shape
        return self.proj(y.transpose(1, 2).reshape(b, l, h * dh)), new_past


class CrossAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)
        self.dropout = dropout

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, l, d = x.shape
        return x.view(b, l, self.heads, d // self.heads).transpose(1, 2)

    def context_kv(self, ctx: torch.Tensor):
        k, v = self.kv(ctx).chunk(2, dim=-1)
        return self._split(k), self._split(v)

    def forward(self, x, ctx_kv):
        q = self._split(self.q(x))
        k, v = ctx_kv
        y = F.scaled_dot_product_attention(
            q, k, v, dropout_p=self.dropout if self.training else 0.0
        )
        b, h, l, dh = y.shape
        return self.proj(y.transpose(1, 2).reshape(b, l, h * dh))


class DecoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.embed_dim
        self.ln1 = nn.LayerNorm(d)
        self.attn = SelfAttention(d, cfg.num_heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(d)
        self.cross = CrossAttention(d, cfg.num_heads, cfg.dropout)
        self.ln3 = nn.LayerNorm(d)
        self.ff = nn.Sequential(
            nn.Linear(d, cfg.feedforward_dim),
            nn.GELU(),
            nn.Linear(cfg.feedforward_dim, d),
            nn.Dropout(cfg.dropout),
        )

    def forward(self, x, ctx_kv, past_kv=None):
        a, new_past = self.attn(self.ln1(x), past_kv)
        x = x + a
        x = x + self.cross(self.ln2(x), ctx_kv)
        x = x + self.ff(self.ln3(x))
        return x, new_past


class GenCache:
    """Per-layer self-attention KV plus precomputed context KV for step-mode
    generation. Grows by one position per forward_step call."""

    def __init__(self, ctx_kvs, num_layers: int):
        self.ctx_kvs = ctx_kvs
        self.self_kv = [(None, None) for _ in range(num_layers)]
        self.pos = 0


class LaneSeqDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig, vocab: VocabSpec):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        d = cfg.embed_dim
        p = cfg.patch_size
        self.token_emb = nn.Embedding(vocab.vocab_size, d)
        self.pos_emb = nn.Parameter(torch.zeros(cfg.max_len, d))
        self.patch_proj = nn.Linear(p * p, d)
        self.patch_row_emb = nn.Parameter(torch.zeros(cfg.raster_h // p, d))
        self.patch_col_emb = nn.Parameter(torch.zeros(cfg.raster_w // p, d))
        # Normalizing the context puts the cross-attention keys/values on the
        # same scale as the LayerNormed self-attention inputs; without it the
        # raw patch projections are ~30x weaker and conditioning trains far
        # too slowly to matter.
        self.ctx_ln = nn.LayerNorm(d)
        self.blocks = nn.ModuleList(DecoderBlock(cfg) for _ in range(cfg.num_layers))
        self.ln_f = nn.LayerNorm(d)
        self.head = nn.Linear(d, vocab.vocab_size)
        self.apply(self._init_weights)
        for p in (self.pos_emb, self.patch_row_emb, self.patch_col_emb):
            nn.init.normal_(p, std=0.02)

    @staticmethod
    def _init_weights(m: nn.Module) -> None:
        if isinstance(m, nn.Linear):
            nn.init.normal_(m.weight, std=0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.normal_(m.weight, std=0.02)
        elif isinstance(m, nn.Parameter):
            nn.init.normal_(m, std=0.02)

    def embed_context(self, raster: torch.Tensor) -> torch.Tensor:
        """(B, H, W) raster -> (B, P, d) context vectors: flattened
        non-overlapping patches, linearly projected, plus learned
        row + column position embeddings."""
        cfg = self.cfg
        if raster.dim() == 2:
            raster = raster.unsqueeze(0)
        b, h, w = raster.shape
        if (h, w) != (cfg.raster_h, cfg.raster_w):
            raise ValueError(f"raster {h}x{w} does not match configured {cfg.raster_h}x{cfg.raster_w}")
        p = cfg.patch_size
        patches = (
            raster.view(b, h // p, p, w // p, p)
            .permute(0, 1, 3, 2, 4)
            .reshape(b, (h // p) * (w // p), p * p)
        )
        pos = (self.patch_row_emb[:, None, :] + self.patch_col_emb[None, :, :]).reshape(
            1, cfg.num_patches, cfg.embed_dim
        )
        return self.ctx_ln(self.patch_proj(patches.to(self.pos_emb.dtype)) + pos)

    def forward(self, tokens: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        """Teacher-forcing forward: (B, L) token ids, (B, P, d) context ->
        (B, L, vocab) logits. Causal: position i sees tokens <= i only."""
        b, l = tokens.shape
        if l > self.cfg.max_len:
            raise ValueError(f"sequence length {l} exceeds max {self.cfg.max_len}")
        x = self.token_emb(tokens) + self.pos_emb[:l]
        for block in self.blocks:
            ctx_kv = block.cross.context_kv(ctx)
            x, _ = block(x, ctx_kv)
        return self.head(self.ln_f(x))

    def init_cache(self, ctx: torch.Tensor) -> GenCache:
        return GenCache([b.cross.context_kv(ctx) for b in self.blocks], self.cfg.num_layers)

    def forward_step(self, token: torch.Tensor, cache: GenCache) -> torch.Tensor:
        """Feed one token per row: (B,) or (B, 1) ids -> (B, vocab) logits
        for the next position. Appends this position to the cache."""
        if token.dim() == 1:
            token = token.unsqueeze(1)
        pos = cache.pos
        if pos >= self.cfg.max_len:
            raise ValueError("cache already holds a full-length sequence")
        x = self.token_emb(token) + self.pos_emb[pos : pos + 1]
        for i, block in enumerate(self.blocks):
            x, new_past = block(x, cache.ctx_kvs[i], past_kv=cache.self_kv[i])
            cache.self_kv[i] = new_past
        cache.pos = pos + 1
        return self.head(self.ln_f(x))[:, 0, :]


def sequence_loss(
    logits: torch.Tensor, targets: torch.Tensor, weight_vec: torch.Tensor
) -> torch.Tensor:
    """Negative weighted mean log-likelihood.

    weight_vec maps token class -> weight; NA positions (weight 0) appear in
    neither the numerator nor the denominator. A degenerate all-NA batch is
    defined as loss 0 (with a warning).
    """
    logp = F.log_softmax(logits, dim=-1)
    ll = logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    w = weight_vec.to(logits.dtype)[targets]
    # the scalar reduction runs in float64 so that zero-weight positions are
    # a true no-op regardless of summation order
    denom = w.double().sum()
    if denom.item() == 0.0:
        warnings.warn("all targets are padding; loss defined as 0")
        return logits.sum() * 0.0
    return (-(w * ll).double().sum() / denom).to(logits.dtype)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    weight_decay: float = 0.01
    batch_size: int = 32
    epochs: int = 40
    seed: int = 0
    w_term: float = 0.5
    log_every: int = 10
    checkpoint_every: int = 0  # steps; 0 = final checkpoint only


@dataclass
class Checkpoint:
    model_config: ModelConfig
    vocab: VocabSpec
    extent: BevExtent
    state: dict[str, np.ndarray]
    step: int
    version: int = 1


def model_to_checkpoint(model: LaneSeqDecoder, extent: BevExtent, step: int) -> Checkpoint:
    state = {
        name: tensor.detach().cpu().numpy().astype("<f4", copy=True)
        for name, tensor in model.state_dict().items()
    }
    return Checkpoint(model.cfg, model.vocab, extent, state, step)


def build_model(ckpt: Checkpoint) -> LaneSeqDecoder:
    model = LaneSeqDecoder(ckpt.model_config, ckpt.vocab)
    tensors = {k: torch.from_numpy(v.copy()) for k, v in ckpt.state.items()}
    model.load_state_dict(tensors)
    model.eval()
    return model


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Binary format: magic LGCK1, text header (config, vocab, extent, step,
    tensor table), then the concatenated little-endian float32 tensor data."""
    lines = [f"version={ckpt.version}", f"step={ckpt.step}"]
    for k, v in asdict(ckpt.model_config).items():
        lines.append(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
    lines.append(f"num_bins={ckpt.vocab.num_bins}")
    lines.append(f"max_vertices={ckpt.vocab.max_vertices}")
    e = ckpt.extent
    for k in ("x_min", "x_max", "y_min", "y_max", "sample_interval"):
        lines.append(f"extent_{k}={getattr(e, k)!r}")
    lines.append(f"tensors={len(ckpt.state)}")
    for name, arr in ckpt.state.items():
        dims = ",".join(str(d) for d in arr.shape) if arr.ndim else "scalar"
        lines.append(f"{name} {dims}")
    lines.append("data")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(("\n".join(lines) + "\n").encode("utf-8"))
        for arr in ckpt.state.values():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    cut = blob.index(b"data\n", len(CHECKPOINT_MAGIC)) + len(b"data\n")
    header = blob[len(CHECKPOINT_MAGIC) : cut].decode("utf-8").splitlines()
    kv: dict[str, str] = {}
    table: list[tuple[str, tuple[int, ...]]] = []
    it = iter(header)
    for ln in it:
        if ln == "data":
            break
        if ln.startswith("tensors="):
            count = int(ln.split("=", 1)[1])
            for _ in range(count):
                name, dims = next(it).split(" ", 1)
                shape = () if dims == "scalar" else tuple(int(d) for d in dims.split(","))
                table.append((name, shape))
        elif "=" in ln:
            k, v = ln.split("=", 1)
            kv[k] = v

    mc = ModelConfig(
        num_layers=int(kv["num_layers"]),
        embed_dim=int(kv["embed_dim"]),
        num_heads=int(kv["num_heads"]),
        feedforward_dim=int(kv["feedforward_dim"]),
        patch_size=int(kv["patch_size"]),
        dropout=float(kv["dropout"]),
        cond_dropout=float(kv["cond_dropout"]),
        raster_h=int(kv["raster_h"]),
        raster_w=int(kv["raster_w"]),
        vertex_len=int(kv["vertex_len"]),
        edge_len=int(kv["edge_len"]),
    )
    vocab = VocabSpec.create(int(kv["num_bins"]), int(kv["max_vertices"]))
    extent = BevExtent(
        float(kv["extent_x_min"]),
        float(kv["extent_x_max"]),
        float(kv["extent_y_min"]),
        float(kv["extent_y_max"]),
        float(kv["extent_sample_interval"]),
    )
    data = blob[cut:]
    state: dict[str, np.ndarray] = {}
    off = 0
    for name, shape in table:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape)
        state[name] = arr.copy()
        off += 4 * n
    return Checkpoint(mc, vocab, extent, state, int(kv["step"]), int(kv["version"]))


def make_training_tensors(
    sequences: list[TokenSequence], rasters: list[np.ndarray]
) -> tuple[torch.Tensor, torch.Tensor]:
    tokens = torch.tensor([s.tokens for s in sequences], dtype=torch.long)
    imgs = torch.from_numpy(np.stack(rasters).astype(np.float32))
    return tokens, imgs


def train(
    tokens: torch.Tensor,
    rasters: torch.Tensor,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    vocab: VocabSpec,
    extent: BevExtent = DEFAULT_EXTENT,
    out_dir: str | None = None,
    log_fn=None,
) -> Checkpoint:
    """Teacher-forced training: AdamW (decoupled weight decay) from the
    configured initial learning rate with cosine decay to near zero.

    Per sample, with probability cond_dropout the input vertex segment is
    replaced by MASK while the targets stay intact: the masked rows train the
    unconditioned stream used by classifier-free guidance, and their vertex
    positions, now unpredictable from history, supervise reading the raster
    directly. Aborts on non-finite loss. Writes `step loss lr` lines to
    out_dir/metrics.log when out_dir is set.
    """
    n = tokens.shape[0]
    if n == 0:
        raise ValueError("empty corpus")
    if tokens.shape[1] != model_cfg.max_len:
        raise ValueError(
            f"sequence length {tokens.shape[1]} does not match model max_len {model_cfg.max_len}"
        )
    torch.manual_seed(train_cfg.seed)
    model = LaneSeqDecoder(model_cfg, vocab)
    model.train()
    opt = torch.optim.AdamW(
        model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay
    )
    steps_per_epoch = math.ceil(n / train_cfg.batch_size)
    total_steps = steps_per_epoch * train_cfg.epochs
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=total_steps, eta_min=train_cfg.lr * 0.01
    )
    weight_vec = LossWeights(train_cfg.w_term).vector(vocab)
    g = torch.Generator().manual_seed(train_cfg.seed)
    vlen = model_cfg.vertex_len

    log_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_file = open(os.path.join(out_dir, "metrics.log"), "w", encoding="utf-8")

    step = 0
    try:
        for _epoch in range(train_cfg.epochs):
            perm = torch.randperm(n, generator=g)
            for s in range(steps_per_epoch):
                idx = perm[s * train_cfg.batch_size : (s + 1) * train_cfg.batch_size]
                batch = tokens[idx]
                inputs = batch[:, :-1].clone()
                targets = batch[:, 1:].clone()
                if model_cfg.cond_dropout > 0:
                    drop = torch.rand(len(idx), generator=g) < model_cfg.cond_dropout
                    inputs[drop, 1 : 1 + vlen] = vocab.MASK
                ctx = model.embed_context(rasters[idx])
                logits = model(inputs, ctx)
                loss = sequence_loss(logits, targets, weight_vec)
                if not torch.isfinite(loss):
                    raise RuntimeError(f"training diverged: non-finite loss at step {step}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                sched.step()
                step += 1
                if step % train_cfg.log_every == 0 or step == total_steps:
                    line = f"{step} {loss.item():.6f} {sched.get_last_lr()[0]:.8g}"
                    if log_file is not None:
                        log_file.write(line + "\n")
                        log_file.flush()
                    if log_fn is not None:
                        log_fn(line)
                if (
                    train_cfg.checkpoint_every
                    and out_dir is not None
                    and step % train_cfg.checkpoint_every == 0
                    and step != total_steps
                ):
                    save_checkpoint(
                        model_to_checkpoint(model, extent, step),
                        os.path.join(out_dir, f"ckpt-{step:06d}.lgck"),
                    )
    finally:
        if log_file is not None:
            log_file.close()

    model.eval()
    ckpt = model_to_checkpoint(model, extent, step)
    if out_dir is not None:
        save_checkpoint(ckpt, os.path.join(out_dir, "model.lgck"))
    return ckpt
