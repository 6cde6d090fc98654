"""Miniature pyramid vision transformer with a level-wise distillation token.

Parameter names are stable and appear in checkpoints as

    backbone.level{l}.patch_embed.proj.{weight,bias}
    backbone.level{l}.patch_embed.pos
    backbone.level{l}.blocks.{i}.norm1 / attn.q / attn.kv / attn.proj / attn.sr / attn.sr_norm / norm2 / mlp.fc1 / mlp.fc2
    backbone.level{l}.token            (initial distillation token, first token level only)
    backbone.level{l}.token_pos        (positional vector of the token at level l)
    backbone.level{l}.token_proj.{weight,bias}   (routing map C_l -> C_{l+1}, absent when widths match)
    backbone.level{m}.norm.{weight,bias}          (final norm, shared by f and mu)

with levels numbered from 1.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from sketchkd.helpers import component_seed
from sketchkd.exceptions import ConfigError, NonFiniteActivationError


TOKEN_DESIGNS = ("every_level", "last_level", "none")


@dataclass
class BackboneOutput:
    """Pair of features produced by the backbone.

    f is the discriminative feature [B, d]; mu is the distillation feature [B, d],
    or None in teacher mode.
    """
    f: torch.Tensor
    mu: Optional[torch.Tensor] = None


@dataclass(frozen=True)
class PatchEmbedConfig:
    stride: int
    in_channels: int
    out_channels: int


class PatchEmbed(nn.Module):
    """Non-overlapping stride x stride linear projection of flattened patches, plus a
    learned position encoding."""

    def __init__(self, config, in_side):
        super().__init__()

        if config.stride < 1 or in_side % config.stride != 0:
            raise ConfigError("patch_strides", config.stride, "input side {0} is not divisible by the stride".format(in_side))

        self.stride = config.stride
        self.out_side = in_side//config.stride
        self.proj = nn.Linear(config.in_channels*config.stride*config.stride, config.out_channels)
        self.pos = nn.Parameter(torch.zeros(1, self.out_side*self.out_side, config.out_channels))


    def forward(self, x):
        # x is [B, C, H, W]; returns [B, N, C_out] in row-major patch order
        B, C, H, W = x.shape
        s = self.stride
        patches = x.reshape(B, C, H//s, s, W//s, s).permute(0, 2, 4, 1, 3, 5).reshape(B, (H//s)*(W//s), C*s*s)
        return self.proj(patches)+self.pos


class SpatialReductionAttention(nn.Module):
    """Multi-head attention whose keys and values come from spatially subsampled patch tokens.

    Extra tokens (the distillation token) are placed first in the sequence and always
    join the keys and values at full resolution.

    Parameters
    ----------
    channels : int
        Token width C.

    heads : int
        Number of attention heads. Must divide C.

    sr_ratio : int
        Spatial-reduction ratio applied to the patch-token map before computing keys
        and values. 1 gives plain multi-head attention.
    """

    def __init__(self, channels, heads, sr_ratio=1):
        super().__init__()

        if channels % heads != 0:
            raise ConfigError("heads", heads, "width {0} is not divisible by the number of heads".format(channels))
        if sr_ratio < 1:
            raise ConfigError("sr_ratios", sr_ratio, "must be >= 1")

        self.heads = heads
        self.head_dim = channels//heads
        self.scale = self.head_dim**-0.5
        self.sr_ratio = sr_ratio

        self.q = nn.Linear(channels, channels)
        self.kv = nn.Linear(channels, 2*channels)
        self.proj = nn.Linear(channels, channels)
        if sr_ratio > 1:
            self.sr = nn.Conv2d(channels, channels, kernel_size=sr_ratio, stride=sr_ratio)
            self.sr_norm = nn.LayerNorm(channels)


    def forward(self, x, side, n_extra=0):
        B, N_t, C = x.shape

        q = self.q(x).reshape(B, N_t, self.heads, self.head_dim).permute(0, 2, 1, 3)

        # Subsample the patch tokens only
        if self.sr_ratio > 1:
            extra, patches = x[:, :n_extra], x[:, n_extra:]
            fmap = patches.transpose(1, 2).reshape(B, C, side, side)
            reduced = self.sr(fmap).reshape(B, C, -1).transpose(1, 2)
            kv_input = torch.cat([extra, self.sr_norm(reduced)], dim=1)
        else:
            kv_input = x

        kv = self.kv(kv_input).reshape(B, -1, 2, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        k, v = kv[0], kv[1]

        attn = torch.softmax((q @ k.transpose(-2, -1))*self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, N_t, C)
        return self.proj(out)


def attention_layer(tokens, heads, sr_ratio=1, **kwargs):
    """Applies spatial-reduction attention to a token sequence.

    Parameters
    ----------
    tokens : array or tensor
        Tokens [N_t, C] or [B, N_t, C]. The patch tokens (all but the first n_extra)
        must form a square map when sr_ratio > 1.

    heads : int

    sr_ratio : int, optional
        Defaults to 1.

    n_extra : int, optional
        Number of tokens ahead of the patch tokens. Defaults to 0.

    layer : SpatialReductionAttention, optional
        Layer to apply. A freshly initialised layer (seeded by seed) is used otherwise.

    seed : int, optional
        Defaults to 0.

    Returns
    -------
    tensor
        Same shape as tokens.

    Raises
    ------
    ConfigError
        If C is not divisible by heads.
    """
    n_extra = kwargs.get("n_extra", 0)
    layer = kwargs.get("layer", None)

    x = tokens if isinstance(tokens, torch.Tensor) else torch.as_tensor(np.asarray(tokens))
    unbatched = x.dim() == 2
    if unbatched:
        x = x[None]
    if x.dim() != 3:
        raise ValueError("Expected tokens of shape [N_t, C] or [B, N_t, C], got {0}.".format(list(x.shape)))

    n_patches = x.shape[1]-n_extra
    side = int(round(np.sqrt(max(n_patches, 0))))
    if sr_ratio > 1 and (side*side != n_patches or side % sr_ratio != 0):
        raise ValueError("{0} patch tokens do not form a square map divisible by sr_ratio {1}.".format(n_patches, sr_ratio))

    if layer is None:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(kwargs.get("seed", 0))
            layer = SpatialReductionAttention(x.shape[2], heads, sr_ratio).to(x.dtype)

    out = layer(x, side, n_extra)
    return out[0] if unbatched else out


class Mlp(nn.Module):

    def __init__(self, channels, ratio):
        super().__init__()
        self.fc1 = nn.Linear(channels, ratio*channels)
        self.fc2 = nn.Linear(ratio*channels, channels)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class TransformerLayer(nn.Module):
    """Pre-norm spatial-reduction attention and MLP, each with a residual connection."""

    def __init__(self, channels, heads, sr_ratio, mlp_ratio):
        super().__init__()
        self.norm1 = nn.LayerNorm(channels)
        self.attn = SpatialReductionAttention(channels, heads, sr_ratio)
        self.norm2 = nn.LayerNorm(channels)
        self.mlp = Mlp(channels, mlp_ratio)

    def forward(self, x, side, n_extra=0):
        x = x+self.attn(self.norm1(x), side, n_extra)
        return x+self.mlp(self.norm2(x))


class PyramidLevel(nn.Module):
    """One pyramid level: patch embedding, transformer layers, and the distillation-token plumbing."""

    def __init__(self, index, in_channels, in_side, hp, has_token, owns_initial_token, next_channels):
        super().__init__()

        l = index-1
        C = hp.channels[l]
        self.index = index
        self.channels = C
        self.patch_embed = PatchEmbed(PatchEmbedConfig(hp.patch_strides[l], in_channels, C), in_side)
        self.side = self.patch_embed.out_side

        if self.side % hp.sr_ratios[l] != 0:
            raise ConfigError("sr_ratios", hp.sr_ratios[l], "level {0} map side {1} is not divisible by the ratio".format(index, self.side))

        self.blocks = nn.ModuleList([TransformerLayer(C, hp.heads[l], hp.sr_ratios[l], hp.mlp_ratio) for _ in range(hp.depth)])

        self.has_token = has_token
        if owns_initial_token:
            self.token = nn.Parameter(torch.zeros(1, 1, C))
        if has_token:
            self.token_pos = nn.Parameter(torch.zeros(1, 1, C))
            if next_channels is not None:
                self.token_proj = nn.Linear(C, next_channels) if next_channels != C else nn.Identity()

        self.is_last = next_channels is None
        if self.is_last:
            self.norm = nn.LayerNorm(C)


class PyramidBackbone(nn.Module):
    """Pyramid vision transformer producing a discriminative feature f and, in student
    mode, a distillation feature mu.

    Parameters
    ----------
    hp : Hyperparameters
        Architecture is read from levels, patch_strides, channels, heads, sr_ratios,
        depth, mlp_ratio, image_size and d.

    token_design : str, optional
        "every_level" routes a learnable token through every level (default),
        "last_level" appends a token only at the final level, "none" uses no token and
        returns mu = f in student mode.

    seed : int, optional
        Seed for parameter initialization. Defaults to hp.seed.

    init_name : str, optional
        Component name under which the initialization seed is drawn, so that a
        teacher and a student built from one run seed start from different weights.
    """

    def __init__(self, hp, token_design="every_level", seed=None, init_name="backbone.init"):
        super().__init__()

        if token_design not in TOKEN_DESIGNS:
            raise ConfigError("token_design", token_design, "must be one of {0}".format(TOKEN_DESIGNS))

        self.image_size = hp.image_size
        self.d = hp.d
        self.n_levels = hp.levels
        self.token_design = token_design

        # Build levels
        in_channels = 3
        in_side = hp.image_size
        for l in range(hp.levels):
            index = l+1
            if token_design == "every_level":
                has_token = True
                owns_initial_token = index == 1
            elif token_design == "last_level":
                has_token = index == hp.levels
                owns_initial_token = has_token
            else:
                has_token = False
                owns_initial_token = False
            next_channels = hp.channels[l+1] if l+1 < hp.levels else None
            level = PyramidLevel(index, in_channels, in_side, hp, has_token, owns_initial_token, next_channels)
            self.add_module("level{0}".format(index), level)
            in_channels = hp.channels[l]
            in_side = level.side

        # Token counts and map sides seen by the last forward pass
        self.last_trace = []

        # Initialize
        seed = hp.seed if seed is None else seed
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(component_seed(seed, init_name))
            self.apply(self._init_module)
            for name, param in self.named_parameters():
                if name.endswith("token") or name.endswith("token_pos") or name.endswith(".pos"):
                    nn.init.trunc_normal_(param, std=0.02)


    @staticmethod
    def _init_module(module):
        if isinstance(module, (nn.Linear, nn.Conv2d)):
            nn.init.trunc_normal_(module.weight, std=0.02)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.LayerNorm):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)


    @property
    def levels(self):
        return [getattr(self, "level{0}".format(l+1)) for l in range(self.n_levels)]


    def forward(self, images, mode="student"):
        """Embeds a batch of images.

        Parameters
        ----------
        images : torch.Tensor
            Image batch [B, H, W, 3] with H = W = image_size.

        mode : str
            "student" or "teacher". Teacher mode never uses the distillation token.

        Returns
        -------
        BackboneOutput
        """

        if mode not in ("student", "teacher"):
            raise ValueError("Backbone mode must be 'student' or 'teacher', not '{0}'.".format(mode))
        if images.dim() != 4 or images.shape[1] != self.image_size or images.shape[2] != self.image_size or images.shape[3] != 3:
            raise ValueError("Expected images of shape [B, {0}, {0}, 3], got {1}.".format(self.image_size, list(images.shape)))

        B = images.shape[0]
        x = images.permute(0, 3, 1, 2)
        token_in = None
        token_out = None
        trace = []

        for level in self.levels:
            tokens = level.patch_embed(x)
            side = level.side

            # Concatenate the (routed) distillation token ahead of the patch tokens
            use_token = mode == "student" and level.has_token
            n_extra = 0
            if use_token:
                if token_in is None:
                    token_in = level.token.expand(B, -1, -1)
                tokens = torch.cat([token_in+level.token_pos, tokens], dim=1)
                n_extra = 1
            trace.append((tokens.shape[1], side))

            for block in level.blocks:
                tokens = block(tokens, side, n_extra)
            if level.is_last:
                tokens = level.norm(tokens)

            if not torch.isfinite(tokens).all():
                raise NonFiniteActivationError(level.index)

            # Set the token aside before reshaping the patch tokens to the feature map
            patches = tokens[:, n_extra:]
            x = patches.transpose(1, 2).reshape(B, level.channels, side, side)
            if use_token:
                token_out = tokens[:, :1]
                if not level.is_last:
                    token_in = level.token_proj(token_in+token_out)

        self.last_trace = trace

        f = x.flatten(2).mean(dim=2)
        if mode == "teacher":
            return BackboneOutput(f=f, mu=None)
        if self.token_design == "none":
            return BackboneOutput(f=f, mu=f)
        return BackboneOutput(f=f, mu=token_out[:, 0])


    def embed(self, images, mode="teacher", batch_size=64):
        """Embeds a numpy or torch image stack in chunks without tracking gradients.

        Returns the discriminative features (teacher mode) or the pair (f, mu)
        (student mode) as float64 numpy arrays.
        """
        f_chunks = []
        mu_chunks = []
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                batch = as_image_tensor(images[start:start+batch_size], dtype=self.dtype)
                output = self(batch, mode=mode)
                f_chunks.append(output.f.double().numpy())
                if output.mu is not None:
                    mu_chunks.append(output.mu.double().numpy())
        f = np.concatenate(f_chunks, axis=0) if f_chunks else np.zeros((0, self.d))
        if mode == "teacher":
            return f
        return f, np.concatenate(mu_chunks, axis=0) if mu_chunks else np.zeros((0, self.d))


    @property
    def dtype(self):
        return next(self.parameters()).dtype


def as_image_tensor(images, dtype=torch.float32):
    """Converts an image stack [B, H, W, 3] (numpy or torch) to a torch tensor of the given dtype."""
    if isinstance(images, torch.Tensor):
        return images.to(dtype)
    if isinstance(images, (list, tuple)):
        images = np.stack(images, axis=0)
    return torch.as_tensor(images).to(dtype)
