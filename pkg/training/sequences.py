"""
Sample -> sequence layout conversion.

    stage-1       <bos> [SRC] C <sep> [I]
    single-turn   <bos> [SRC] C <sep> <think> T <end> [I]
    refinement    <bos> [SRC] C <sep> <think> T1 <end> [I1] <think> T2 <end> [I2]

<think> opens a segment as context; the segment body and its <end> carry
the segment's role. Supervised images enter noised at a fresh flow point;
source and draft images enter clean at t = 1.
"""

from typing import List, Optional

import numpy as np

from corpus.samples import RefineSample, Sample, SingleTurnSample, Stage1Sample
from models.codec import CodecParams
from models.flow import make_flow_point
from models.layout import ImageSlot, Kind, Role, SequenceLayout
from toyworld.entities import GridImage
from toyworld.vocab import BOS, END, SEP, THINK, Vocabulary
from utils.errors import MaskViolationError, RejectedInputError


def prompt_layout(vocab: Vocabulary, codec: CodecParams, text: str, source: Optional[GridImage] = None,
                  slots: int = 1) -> SequenceLayout:
    """Context prefix shared by training and inference"""
    layout = SequenceLayout().add_text([vocab.id(BOS)], Role.CONTEXT)
    if source is not None:
        layout.add_image(ImageSlot(codec.encode(source), 1.0, Role.CONTEXT), slots, vocab.pad_id)
    return layout.add_text(vocab.encode(text) + [vocab.id(SEP)], Role.CONTEXT)


def add_segment(layout: SequenceLayout, vocab: Vocabulary, text: str, role: Role) -> SequenceLayout:
    layout.add_text([vocab.id(THINK)], Role.CONTEXT)
    return layout.add_text(vocab.encode(text) + [vocab.id(END)], role)


def supervised_image(codec: CodecParams, image: GridImage, rng: np.random.Generator) -> ImageSlot:
    point = make_flow_point(codec.encode(image), rng)
    return ImageSlot(point.z_t, point.t, Role.SUPERVISED, point.u_star)


def clean_image(codec: CodecParams, image: GridImage, role: Role) -> ImageSlot:
    return ImageSlot(codec.encode(image), 1.0, role)


def to_layout(sample: Sample, vocab: Vocabulary, codec: CodecParams, rng: np.random.Generator,
              slots: int = 1) -> SequenceLayout:
    """
    Build the training layout of one sample

    Args:
        sample: Stage-1, single-turn or refinement sample
        vocab: Vocabulary
        codec: Fitted codec
        rng: Draws the flow point of every supervised image
        slots: Slots per image

    Returns:
        Validated layout
    """
    spec = sample.spec
    layout = prompt_layout(vocab, codec, spec.text, spec.source, slots)
    if isinstance(sample, Stage1Sample):
        layout.add_image(supervised_image(codec, sample.target, rng), slots, vocab.pad_id)
    elif isinstance(sample, SingleTurnSample):
        add_segment(layout, vocab, sample.reasoning, Role.SUPERVISED)
        layout.add_image(supervised_image(codec, sample.target, rng), slots, vocab.pad_id)
    elif isinstance(sample, RefineSample):
        add_segment(layout, vocab, sample.draft_reasoning, Role.DRAFT)
        layout.add_image(clean_image(codec, sample.draft, Role.DRAFT), slots, vocab.pad_id)
        add_segment(layout, vocab, sample.reflection, Role.SUPERVISED)
        layout.add_image(supervised_image(codec, sample.refined, rng), slots, vocab.pad_id)
    else:
        raise RejectedInputError(f"Cannot lay out {type(sample).__name__}")
    layout.validate()
    return layout


def layout_length(sample: Sample, vocab: Vocabulary, slots: int = 1) -> int:
    """Positions the sample occupies, without encoding any image"""
    spec = sample.spec
    n = 2 + len(vocab.encode(spec.text)) + (slots if spec.is_edit else 0) + slots
    if isinstance(sample, SingleTurnSample):
        n += 2 + len(vocab.encode(sample.reasoning))
    elif isinstance(sample, RefineSample):
        n += 4 + len(vocab.encode(sample.draft_reasoning)) + len(vocab.encode(sample.reflection)) + slots
    return n


def check_masks(layout: SequenceLayout, sample: Sample) -> None:
    """
    Structural supervision check for one unpacked layout

    Raises:
        MaskViolationError: roles disagree with the sample type
    """
    image_roles: List[Role] = [img.role for img in layout.images]
    text_roles = {Role(r) for r, k in zip(layout.roles, layout.kinds) if k == Kind.TEXT}
    source = [Role.CONTEXT] if sample.spec.is_edit else []
    if isinstance(sample, Stage1Sample):
        expected = source + [Role.SUPERVISED]
        ok = image_roles == expected and text_roles == {Role.CONTEXT}
    elif isinstance(sample, SingleTurnSample):
        expected = source + [Role.SUPERVISED]
        ok = image_roles == expected and Role.DRAFT not in text_roles
    else:
        expected = source + [Role.DRAFT, Role.SUPERVISED]
        ok = image_roles == expected and text_roles == {Role.CONTEXT, Role.DRAFT, Role.SUPERVISED}
    if not ok:
        raise MaskViolationError(f"Sample {sample.sample_id}: image roles {image_roles}, text roles {text_roles}")
