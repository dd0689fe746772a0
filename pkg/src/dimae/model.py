"""Content encoder and domain-specific decoder bank.

The encoder is a plain pre-norm ViT that sees only visible patches. Each
training domain owns a decoder with identical architecture but private
parameters and a private learnable mask token; all decoders share fixed
sinusoidal positional embeddings over the full patch grid. A linear bridge
maps encoder width to decoder width.
"""

import io
import json
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn

from .errors import ValidationError
from .patching import patchify_batch
from .seeds import substream_seed

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 6
    width: int = 192
    heads: int = 3
    patch_size: int = 4
    image_size: int = 32
    channels: int = 3
    feature_dim: int = 1024

    def __post_init__(self):
        if self.width % self.heads:
            raise ValidationError("width must be divisible by heads")
        if self.image_size % self.patch_size:
            raise ValidationError("image size must be divisible by patch size")

    @property
    def grid(self):
        g = self.image_size // self.patch_size
        return (g, g)

    @property
    def num_patches(self):
        g = self.image_size // self.patch_size
        return g * g

    @property
    def patch_dim(self):
        return self.channels * self.patch_size**2


@dataclass(frozen=True)
class DecoderConfig:
    depth: int = 8
    width: int = 128
    heads: int = 4

    def __post_init__(self):
        if self.width % self.heads:
            raise ValidationError("width must be divisible by heads")


def sincos_pos_embed(width: int, grid_h: int, grid_w: int) -> np.ndarray:
    """Fixed 2-D sine-cosine positional embeddings, (grid_h*grid_w, width)."""
    if width % 4:
        raise ValidationError("pos embed width must be divisible by 4")
    quarter = width // 4
    omega = 1.0 / 10000 ** (np.arange(quarter) / quarter)
    ys, xs = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    out = []
    for coord in (ys.reshape(-1), xs.reshape(-1)):
        angles = np.outer(coord, omega)
        out.extend([np.sin(angles), np.cos(angles)])
    return np.concatenate(out, axis=1)


class Attention(nn.Module):
    def __init__(self, dim, num_heads):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, c // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        x = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(x)


class Block(nn.Module):
    def __init__(self, dim, num_heads, mlp_ratio=4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim)
        )

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def _gather_tokens(table, idx):
    # table (1, N, D), idx (B, K) -> (B, K, D)
    b, k = idx.shape
    d = table.shape[-1]
    return table.expand(b, -1, -1).gather(1, idx.unsqueeze(-1).expand(b, k, d))


class ContentEncoder(nn.Module):
    """ViT over visible patches only; masked positions never enter."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Linear(cfg.patch_dim, cfg.width)
        pos = sincos_pos_embed(cfg.width, *cfg.grid)
        self.register_buffer("pos_embed", torch.from_numpy(pos).float()[None])
        self.blocks = nn.ModuleList(
            Block(cfg.width, cfg.heads) for _ in range(cfg.depth)
        )
        self.norm = nn.LayerNorm(cfg.width)
        # downstream features are the per-dimension mean and spread of the
        # token sequence; the mean alone discards too much of the spatial
        # signal once it is averaged over positions
        self.feature_proj = nn.Linear(2 * cfg.width, cfg.feature_dim)

    def forward(self, patches, visible_idx):
        """patches (B, Nv, patch_dim), visible_idx (B, Nv) -> (B, Nv, width)."""
        if patches.shape[-1] != self.cfg.patch_dim:
            raise ValidationError(
                f"patch dim {patches.shape[-1]} != configured {self.cfg.patch_dim}"
            )
        x = self.patch_embed(patches) + _gather_tokens(self.pos_embed, visible_idx)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


class DomainDecoder(nn.Module):
    def __init__(self, enc_width: int, cfg: DecoderConfig, patch_dim: int):
        super().__init__()
        self.embed = nn.Linear(enc_width, cfg.width)
        self.mask_token = nn.Parameter(torch.zeros(cfg.width))
        self.blocks = nn.ModuleList(
            Block(cfg.width, cfg.heads) for _ in range(cfg.depth)
        )
        self.norm = nn.LayerNorm(cfg.width)
        self.head = nn.Linear(cfg.width, patch_dim)


class DecoderBank(nn.Module):
    """One decoder per training domain; shared (fixed) positional embeddings."""

    def __init__(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, n_domains: int):
        super().__init__()
        if n_domains < 1:
            raise ValidationError("decoder bank needs at least one domain")
        self.n_domains = n_domains
        self.decoders = nn.ModuleList(
            DomainDecoder(enc_cfg.width, dec_cfg, enc_cfg.patch_dim)
            for _ in range(n_domains)
        )
        pos = sincos_pos_embed(dec_cfg.width, *enc_cfg.grid)
        self.register_buffer("pos_embed", torch.from_numpy(pos).float()[None])
        self.num_patches = enc_cfg.num_patches

    def forward(self, z, visible_idx, domain: int):
        """Predict all patches: encoder tokens at visible slots, mask tokens elsewhere.

        z (B, Nv, enc_width), visible_idx (B, Nv) -> (B, N, patch_dim).
        """
        if not 0 <= domain < self.n_domains:
            raise ValidationError(f"unknown domain id {domain}")
        dec = self.decoders[domain]
        b, nv, _ = z.shape
        tokens = dec.mask_token.expand(b, self.num_patches, -1).clone()
        src = dec.embed(z)
        idx = visible_idx.unsqueeze(-1).expand(b, nv, tokens.shape[-1])
        tokens = tokens.scatter(1, idx, src)
        x = tokens + self.pos_embed
        for blk in dec.blocks:
            x = blk(x)
        return dec.head(dec.norm(x))


class DiMAE(nn.Module):
    """Encoder plus decoder bank, with feature extraction for probing."""

    def __init__(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, n_domains: int):
        super().__init__()
        self.enc_cfg = enc_cfg
        self.dec_cfg = dec_cfg
        self.encoder = ContentEncoder(enc_cfg)
        self.bank = DecoderBank(enc_cfg, dec_cfg, n_domains)

    @property
    def n_domains(self):
        return self.bank.n_domains

    def encode(self, patches, visible_idx):
        return self.encoder(patches, visible_idx)

    def decode(self, z, visible_idx, domain: int):
        return self.bank(z, visible_idx, domain)

    def forward_features(self, images):
        """Mask-free features: encode all patches, pool mean and spread
        over the token axis, project."""
        patches = patchify_batch(images, self.enc_cfg.patch_size)
        b, n, _ = patches.shape
        idx = torch.arange(n, device=images.device).expand(b, n)
        tokens = self.encoder(patches, idx)
        pooled = torch.cat([tokens.mean(dim=1), tokens.std(dim=1)], dim=-1)
        return self.encoder.feature_proj(pooled)


def _init_weights(module):
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02)
        nn.init.zeros_(module.bias)


def build_model(
    enc_cfg: EncoderConfig,
    dec_cfg: DecoderConfig,
    n_domains: int,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> DiMAE:
    """Construct and initialize a model deterministically from `seed`."""
    torch.manual_seed(substream_seed(seed, "init"))
    model = DiMAE(enc_cfg, dec_cfg, n_domains)
    model.apply(_init_weights)
    for dec in model.bank.decoders:
        nn.init.trunc_normal_(dec.mask_token, std=0.02)
    return model.to(dtype)


# ---------------------------------------------------------------------------
# checkpoint format: npz archive of named arrays + config JSON


def _wire_named_arrays(model: DiMAE) -> dict:
    out = {}
    for k, v in model.encoder.state_dict().items():
        out[f"encoder.{k}"] = v.detach().cpu().numpy()
    out["decoder.pos_embed"] = model.bank.pos_embed.detach().cpu().numpy()
    for i, dec in enumerate(model.bank.decoders):
        for k, v in dec.state_dict().items():
            if k == "mask_token":
                out[f"mask_token.{i}"] = v.detach().cpu().numpy()
            else:
                out[f"decoder.{i}.{k}"] = v.detach().cpu().numpy()
    return out


def checkpoint_config(model: DiMAE) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "encoder": asdict(model.enc_cfg),
        "decoder": asdict(model.dec_cfg),
        "n_domains": model.n_domains,
    }


def save_checkpoint(model: DiMAE, path):
    arrays = _wire_named_arrays(model)
    arrays["__config__"] = np.frombuffer(
        json.dumps(checkpoint_config(model)).encode(), dtype=np.uint8
    )
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path, dtype: torch.dtype = torch.float32) -> DiMAE:
    with np.load(path) as archive:
        cfg = json.loads(bytes(archive["__config__"]).decode())
        if cfg["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise ValidationError(
                f"unsupported checkpoint format version {cfg['format_version']}"
            )
        arrays = {k: archive[k] for k in archive.files if k != "__config__"}
    model = DiMAE(
        EncoderConfig(**cfg["encoder"]),
        DecoderConfig(**cfg["decoder"]),
        cfg["n_domains"],
    )
    enc_state = {
        k[len("encoder.") :]: torch.from_numpy(v)
        for k, v in arrays.items()
        if k.startswith("encoder.")
    }
    model.encoder.load_state_dict(enc_state)
    model.bank.pos_embed.copy_(torch.from_numpy(arrays["decoder.pos_embed"]))
    for i, dec in enumerate(model.bank.decoders):
        prefix = f"decoder.{i}."
        state = {
            k[len(prefix) :]: torch.from_numpy(v)
            for k, v in arrays.items()
            if k.startswith(prefix)
        }
        state["mask_token"] = torch.from_numpy(arrays[f"mask_token.{i}"])
        dec.load_state_dict(state)
    return model.to(dtype)
