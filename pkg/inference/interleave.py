"""
Interleaved inference: reason, generate, reflect, refine.

One rollout walks a single sequence. Text segments are decoded greedily
until <end>; each image slot is filled by the Euler sampler conditioned on
everything before it. In reason_refine mode the decoded draft re-enters
the sequence as a clean image, the same way an editing source does, and
the model writes its reflection and the refined image after it.
"""

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from loguru import logger
from PIL import Image, ImageDraw

from models.codec import CodecParams
from models.flow import euler_sample
from models.layout import ImageSlot, Role, SequenceLayout
from models.transformer import TwoExpertTransformer
from toyworld.entities import COLOR_RGB, GridImage
from toyworld.vocab import BOS, PAD, SEP, THINK, UNK, Vocabulary
from training.sequences import prompt_layout
from utils.config import SamplerConfig
from utils.errors import ContextOverflowError, RejectedInputError
from utils.seeding import derive_rng


class InferenceMode(str, Enum):
    DIRECT = 'direct'
    REASON = 'reason'
    REASON_REFINE = 'reason_refine'

    @classmethod
    def parse(cls, value: Union[str, 'InferenceMode']) -> 'InferenceMode':
        try:
            return cls(value)
        except ValueError:
            raise RejectedInputError(f"Unknown inference mode '{value}'") from None


@dataclass
class Rollout:
    context: str
    mode: InferenceMode
    t1: str
    i1: GridImage
    t2: Optional[str] = None
    i2: Optional[GridImage] = None
    source: Optional[GridImage] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def final_image(self) -> GridImage:
        return self.i2 if self.i2 is not None else self.i1

    def to_dict(self) -> Dict[str, Any]:
        return {
            'context': self.context,
            'mode': self.mode.value,
            'source': None if self.source is None else self.source.to_codes(),
            'T1': self.t1,
            'I1': self.i1.to_codes(),
            'T2': self.t2,
            'I2': None if self.i2 is None else self.i2.to_codes(),
            'metadata': self.metadata
        }

    def to_ascii(self) -> str:
        parts = [f"C: {self.context}"]
        if self.source is not None:
            parts += ['SRC:', self.source.to_ascii()]
        if self.t1:
            parts.append(f"T1: {self.t1}")
        parts += ['I1:', self.i1.to_ascii()]
        if self.t2 is not None:
            parts.append(f"T2: {self.t2}")
        if self.i2 is not None:
            parts += ['I2:', self.i2.to_ascii()]
        return '\n'.join(parts) + '\n'

    def save_png(self, path: Path, cell: int = 24) -> Path:
        """Source (if any), I1 and I2 side by side"""
        panels = [grid_png(img, cell) for img in (self.source, self.i1, self.i2) if img is not None]
        gap = cell // 2
        width = sum(p.width for p in panels) + gap * (len(panels) - 1)
        canvas = Image.new('RGB', (width, panels[0].height), (255, 255, 255))
        x = 0
        for panel in panels:
            canvas.paste(panel, (x, 0))
            x += panel.width + gap
        canvas.save(path)
        return Path(path)


def _shape_points(shape: str, x0: float, y0: float, size: float) -> List[Tuple[float, float]]:
    cx, cy, r = x0 + size / 2, y0 + size / 2, size * 0.4
    if shape == 'triangle':
        return [(cx, cy - r), (cx + r, cy + r), (cx - r, cy + r)]
    if shape == 'diamond':
        return [(cx, cy - r), (cx + r, cy), (cx, cy + r), (cx - r, cy)]
    # star: ten points alternating outer and inner radius
    angles = np.linspace(-np.pi / 2, 3 * np.pi / 2, 10, endpoint=False)
    radii = [r if i % 2 == 0 else r * 0.45 for i in range(10)]
    return [(cx + rad * np.cos(a), cy + rad * np.sin(a)) for a, rad in zip(angles, radii)]


def grid_png(img: GridImage, cell: int = 24) -> Image.Image:
    """Render a grid with one drawn shape per occupied cell"""
    canvas = Image.new('RGB', (img.grid_w * cell, img.grid_h * cell), (235, 235, 235))
    draw = ImageDraw.Draw(canvas)
    for r in range(img.grid_h + 1):
        draw.line([(0, r * cell), (img.grid_w * cell, r * cell)], fill=(200, 200, 200))
    for c in range(img.grid_w + 1):
        draw.line([(c * cell, 0), (c * cell, img.grid_h * cell)], fill=(200, 200, 200))
    for entity in img.entities():
        x0, y0 = entity.col * cell, entity.row * cell
        fill = COLOR_RGB[entity.color]
        inset = cell * 0.1
        box = [x0 + inset, y0 + inset, x0 + cell - inset, y0 + cell - inset]
        if entity.shape == 'circle':
            draw.ellipse(box, fill=fill, outline=(0, 0, 0))
        elif entity.shape == 'square':
            draw.rectangle(box, fill=fill, outline=(0, 0, 0))
        else:
            draw.polygon(_shape_points(entity.shape, x0, y0, cell), fill=fill, outline=(0, 0, 0))
    return canvas


class InterleaveEngine:
    """
    Rollouts of a trained two-expert model

    Args:
        model: Trained model
        codec: Codec the model was trained with
        vocab: Vocabulary the model was trained with
        sampler: Default Euler sampler settings
        max_segment_tokens: Cap on one reasoning segment
    """

    def __init__(self, model: TwoExpertTransformer, codec: CodecParams, vocab: Vocabulary,
                 sampler: Optional[SamplerConfig] = None, max_segment_tokens: int = 64):
        if codec.latent_dim != model.cfg.latent_dim:
            raise RejectedInputError(f"Codec latent dim {codec.latent_dim} != model latent dim {model.cfg.latent_dim}")
        self.model = model
        self.codec = codec
        self.vocab = vocab
        self.sampler = sampler or SamplerConfig()
        self.max_segment_tokens = max_segment_tokens
        self.slots = model.cfg.slots_per_image
        self._banned = [vocab.id(t) for t in (PAD, BOS, SEP, THINK, UNK)]

    @classmethod
    def from_checkpoint(cls, checkpoint, sampler: Optional[SamplerConfig] = None,
                        max_segment_tokens: int = 64) -> 'InterleaveEngine':
        return cls(checkpoint.model, checkpoint.codec, checkpoint.vocab, sampler, max_segment_tokens)

    def run(self, text: str, mode: Union[str, InferenceMode] = InferenceMode.REASON_REFINE,
            sampler: Optional[SamplerConfig] = None, rng: Optional[np.random.Generator] = None) -> Rollout:
        """
        Text-to-image rollout

        Args:
            text: Instruction C
            mode: direct, reason or reason_refine
            sampler: Euler settings; the engine default when omitted
            rng: Random source; derived from the sampler seed and the text when omitted

        Returns:
            Rollout whose shape matches the mode
        """
        return self._rollout(text, None, InferenceMode.parse(mode), sampler or self.sampler, rng)

    def edit(self, source: GridImage, text: str, mode: Union[str, InferenceMode] = InferenceMode.REASON,
             sampler: Optional[SamplerConfig] = None, rng: Optional[np.random.Generator] = None) -> Rollout:
        """Editing rollout: the source latent is a clean context image ahead of the instruction"""
        if source is None:
            raise RejectedInputError('Editing needs a source image')
        return self._rollout(text, source, InferenceMode.parse(mode), sampler or self.sampler, rng)

    def _check_budget(self, layout: SequenceLayout, mode: InferenceMode) -> None:
        images = 2 if mode == InferenceMode.REASON_REFINE else 1
        segments = {InferenceMode.DIRECT: 0, InferenceMode.REASON: 1, InferenceMode.REASON_REFINE: 2}[mode]
        needed = len(layout) + images * self.slots + segments * 2
        if needed > self.model.cfg.max_positions:
            raise ContextOverflowError(f"Instruction needs at least {needed} positions, the context budget is "
                                       f"{self.model.cfg.max_positions}")

    def _decode_segment(self, layout: SequenceLayout) -> Tuple[str, bool]:
        """Greedy decoding after <think>; returns the text and whether the cap closed it"""
        layout.add_text([self.vocab.id(THINK)], Role.CONTEXT)
        ids: List[int] = []
        with torch.no_grad():
            while len(ids) < self.max_segment_tokens:
                if len(layout) >= self.model.cfg.max_positions:
                    raise ContextOverflowError('Reasoning segment ran past the context budget')
                logits, _ = self.model(layout)
                scores = logits[-1].clone()
                scores[self._banned] = float('-inf')
                token = int(torch.argmax(scores))
                layout.add_text([token], Role.CONTEXT)
                if token == self.vocab.end_id:
                    return self.vocab.decode(ids), False
                ids.append(token)
        layout.add_text([self.vocab.end_id], Role.CONTEXT)
        return self.vocab.decode(ids), True

    def _generate_image(self, layout: SequenceLayout, sampler: SamplerConfig, seed: int, stage: str) -> GridImage:
        layout.add_image(ImageSlot(np.zeros(self.codec.latent_dim), 0.0, Role.CONTEXT), self.slots, self.vocab.pad_id)
        z = euler_sample(self.model, layout, sampler, derive_rng(seed, stage), stage)
        image = self.codec.decode(z)
        # The decoded grid re-enters as a clean latent, as a training draft does
        layout.images[-1].latent = self.codec.encode(image)
        return image

    def _rollout(self, text: str, source: Optional[GridImage], mode: InferenceMode, sampler: SamplerConfig,
                 rng: Optional[np.random.Generator]) -> Rollout:
        unknown = self.vocab.unknown_words(text)
        if unknown:
            logger.warning(f"Instruction has words outside the vocabulary: {unknown}")
        rng = rng if rng is not None else derive_rng(sampler.seed, text)
        seed = int(rng.integers(0, 2**31 - 1))
        layout = prompt_layout(self.vocab, self.codec, text, source, self.slots)
        self._check_budget(layout, mode)
        was_training = self.model.training
        self.model.eval()
        try:
            truncated = {}
            t1 = ''
            if mode != InferenceMode.DIRECT:
                t1, truncated['T1'] = self._decode_segment(layout)
            i1 = self._generate_image(layout, sampler, seed, 'I1')
            t2 = i2 = None
            if mode == InferenceMode.REASON_REFINE:
                t2, truncated['T2'] = self._decode_segment(layout)
                i2 = self._generate_image(layout, sampler, seed, 'I2')
        finally:
            self.model.train(was_training)
        metadata = {
            'seed': seed,
            'image_stages': ['I1', 'I2'] if i2 is not None else ['I1'],
            'flow_steps': sampler.steps,
            'truncated': truncated,
            'positions': len(layout)
        }
        return Rollout(text, mode, t1, i1, t2, i2, source, metadata)
