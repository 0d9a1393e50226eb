"""
Two-expert transformer over mixed text/image sequences.

Every block holds two parallel parameter sets, one for the understanding
expert (text positions) and one for the generation expert (image slots).
Both experts read and write the same residual stream and attend jointly
over the whole sequence; token and position embeddings are shared.

Image slots enter as a projected latent chunk plus a timestep embedding
and a slot embedding. The velocity head reads the generation expert's final
state at each slot and predicts that slot's chunk of the velocity u(z_t, t).
"""

import math
from typing import Dict, List, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from models.layout import Kind, SequenceLayout
from utils.config import ModelConfig
from utils.errors import ConfigurationError, ContextOverflowError

EXPERTS = ('und', 'gen')
PARTITIONS = ('und', 'gen', 'shared')


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of flow times in [0, 1]"""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=t.dtype) / max(half, 1))
    args = (t[:, None] * 1000.0) * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ExpertBlock(nn.Module):
    """Per-expert weights of one transformer block"""

    def __init__(self, d_model: int, ffn_mult: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)
        self.ln2 = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(nn.Linear(d_model, ffn_mult * d_model), nn.GELU(),
                                 nn.Linear(ffn_mult * d_model, d_model))


class MixedBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int, ffn_mult: int):
        super().__init__()
        self.n_heads = n_heads
        self.experts = nn.ModuleDict({name: ExpertBlock(d_model, ffn_mult) for name in EXPERTS})

    def forward(self, h: torch.Tensor, routes: Dict[str, torch.Tensor], allowed: torch.Tensor) -> torch.Tensor:
        n, d = h.shape
        qkv = _route(h, routes, {k: (lambda x, e=e: e.qkv(e.ln1(x))) for k, e in self.experts.items()})
        q, k, v = qkv.view(n, 3, self.n_heads, d // self.n_heads).permute(1, 2, 0, 3)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // self.n_heads)
        scores = scores.masked_fill(~allowed, float('-inf'))
        attended = (scores.softmax(dim=-1) @ v).transpose(0, 1).reshape(n, d)
        h = h + _route(attended, routes, {k: e.out for k, e in self.experts.items()})
        return h + _route(h, routes, {k: (lambda x, e=e: e.ffn(e.ln2(x))) for k, e in self.experts.items()})


def _route(x: torch.Tensor, routes: Dict[str, torch.Tensor], fns) -> torch.Tensor:
    """Apply each expert's function to its own positions"""
    parts = [(idx, fns[name](x[idx])) for name, idx in routes.items() if idx.numel()]
    out = x.new_zeros(x.shape[0], parts[0][1].shape[1])
    for idx, y in parts:
        out = out.index_copy(0, idx, y)
    return out


class TwoExpertTransformer(nn.Module):
    """
    Unified model with a text head and a velocity head

    Args:
        cfg: Model dimensions
        vocab_size: Number of text tokens
    """

    def __init__(self, cfg: ModelConfig, vocab_size: int):
        super().__init__()
        if vocab_size > cfg.vocab_size:
            raise ConfigurationError(f"Vocabulary of {vocab_size} exceeds vocab_size {cfg.vocab_size}")
        if cfg.latent_dim % cfg.slots_per_image:
            raise ConfigurationError('latent_dim must be divisible by slots_per_image')
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.chunk = cfg.latent_dim // cfg.slots_per_image
        d = cfg.d_model
        self.tok_emb = nn.Embedding(vocab_size, d)
        self.pos_emb = nn.Embedding(cfg.max_positions, d)
        self.slot_proj = nn.Linear(self.chunk, d)
        self.time_proj = nn.Linear(d, d)
        self.slot_emb = nn.Embedding(cfg.slots_per_image, d)
        self.blocks = nn.ModuleList([MixedBlock(d, cfg.n_heads, cfg.ffn_mult) for _ in range(cfg.n_layers)])
        self.final_norm = nn.ModuleDict({name: nn.LayerNorm(d) for name in EXPERTS})
        self.text_head = nn.Linear(d, vocab_size)
        self.velocity_head = nn.Linear(d, self.chunk)
        self.apply(self._init_weights)
        self.partition_labels = {name: _label(name) for name, _ in self.named_parameters()}

    def _init_weights(self, module: nn.Module) -> None:
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, mean=0.0, std=self.cfg.init_std)
            if isinstance(module, nn.Linear) and module.bias is not None:
                nn.init.zeros_(module.bias)

    @property
    def dtype(self) -> torch.dtype:
        return self.tok_emb.weight.dtype

    def forward(self, layout: SequenceLayout) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Run the model on one (possibly packed) layout

        Args:
            layout: Sequence layout; image positions carry z_t and t per image

        Returns:
            Logits at text positions (n_text, V) and velocities per image (n_images, D)
        """
        layout.validate()
        if layout.position_ids and max(layout.position_ids) >= self.cfg.max_positions:
            raise ContextOverflowError(f"Sample of {max(layout.position_ids) + 1} positions exceeds "
                                       f"the context budget of {self.cfg.max_positions}")
        kinds = torch.tensor(layout.kinds, dtype=torch.long)
        routes = {'und': torch.nonzero(kinds == Kind.TEXT).flatten(),
                  'gen': torch.nonzero(kinds == Kind.IMAGE).flatten()}
        h = self._embed(layout, routes)
        allowed = layout.attention_mask()
        for block in self.blocks:
            h = block(h, routes, allowed)
        text_h = self.final_norm['und'](h[routes['und']])
        logits = self.text_head(text_h)
        velocity = self._velocity(layout, h, routes['gen'])
        return logits, velocity

    def _image_inputs(self, layout: SequenceLayout, image_pos: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        chunks, times = [], []
        for i in image_pos.tolist():
            image = layout.images[layout.image_ids[i]]
            slot = layout.slot_ids[i]
            chunks.append(torch.as_tensor(image.latent[slot * self.chunk:(slot + 1) * self.chunk], dtype=self.dtype))
            times.append(float(image.t))
        return torch.stack(chunks), torch.tensor(times, dtype=self.dtype)

    def _embed(self, layout: SequenceLayout, routes: Dict[str, torch.Tensor]) -> torch.Tensor:
        positions = torch.tensor(layout.position_ids, dtype=torch.long)
        tokens = torch.tensor(layout.tokens, dtype=torch.long)
        h = self.pos_emb(positions)
        text_pos, image_pos = routes['und'], routes['gen']
        parts: List[Tuple[torch.Tensor, torch.Tensor]] = []
        if text_pos.numel():
            parts.append((text_pos, self.tok_emb(tokens[text_pos])))
        if image_pos.numel():
            latents, times = self._image_inputs(layout, image_pos)
            slots = torch.tensor([layout.slot_ids[i] for i in image_pos.tolist()], dtype=torch.long)
            emb = (self.slot_proj(latents) + self.time_proj(timestep_embedding(times, self.cfg.d_model))
                   + self.slot_emb(slots))
            parts.append((image_pos, emb))
        content = h.new_zeros(h.shape)
        for idx, value in parts:
            content = content.index_copy(0, idx, value)
        return h + content

    def _velocity(self, layout: SequenceLayout, h: torch.Tensor, image_pos: torch.Tensor) -> torch.Tensor:
        n_images = len(layout.images)
        if n_images == 0:
            return h.new_zeros(0, self.cfg.latent_dim)
        predicted = self.velocity_head(self.final_norm['gen'](h[image_pos]))
        positions = image_pos.tolist()
        rows = []
        for image_id in range(n_images):
            slots = [j for j, i in enumerate(positions) if layout.image_ids[i] == image_id]
            ordered = sorted(slots, key=lambda j: layout.slot_ids[positions[j]])
            rows.append(torch.cat([predicted[j] for j in ordered]))
        return torch.stack(rows)

    def parameters_in(self, partition: str) -> List[nn.Parameter]:
        return [p for name, p in self.named_parameters() if self.partition_labels[name] == partition]


def _label(name: str) -> str:
    """Partition label of a parameter, by where it lives"""
    if name.startswith(('tok_emb', 'pos_emb')):
        return 'shared'
    if name.startswith(('text_head', 'final_norm.und')) or '.experts.und.' in name:
        return 'und'
    if name.startswith(('velocity_head', 'slot_proj', 'time_proj', 'slot_emb', 'final_norm.gen')) \
            or '.experts.gen.' in name:
        return 'gen'
    raise ConfigurationError(f"Parameter {name} has no partition")


def param_partition(model: TwoExpertTransformer) -> Tuple[List[str], List[str], List[str]]:
    """
    Split parameter names by label

    Returns:
        (und, gen, shared) name lists; disjoint and exhaustive
    """
    groups = {p: [] for p in PARTITIONS}
    for name, _ in model.named_parameters():
        groups[model.partition_labels[name]].append(name)
    return groups['und'], groups['gen'], groups['shared']
