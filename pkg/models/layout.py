"""
Sequence layouts: the mixed text/image sequences the model reads.

A layout is a flat list of positions. Text positions hold a token id;
image positions are slots of an image that carries a latent, a flow time
and a velocity target. Every position carries a role (context,
supervised or draft) saying whether its content is learned. A text
position is trained to predict the next token only when that token is a
supervised text token of the same sample.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Sequence

import numpy as np
import torch

from utils.errors import RejectedInputError

IGNORE_INDEX = -100


class Kind(IntEnum):
    TEXT = 0
    IMAGE = 1


class Role(IntEnum):
    CONTEXT = 0
    SUPERVISED = 1
    DRAFT = 2


@dataclass
class ImageSlot:
    """One image in a layout. `latent` is what the model sees: z_t when noised, the clean latent otherwise."""

    latent: np.ndarray
    t: float
    role: Role
    target: Optional[np.ndarray] = None

    def __post_init__(self):
        self.latent = np.asarray(self.latent, dtype=np.float64)
        if self.target is not None:
            self.target = np.asarray(self.target, dtype=np.float64)
        self.role = Role(self.role)


@dataclass
class SequenceLayout:
    tokens: List[int] = field(default_factory=list)
    kinds: List[int] = field(default_factory=list)
    roles: List[int] = field(default_factory=list)
    image_ids: List[int] = field(default_factory=list)
    slot_ids: List[int] = field(default_factory=list)
    segment_ids: List[int] = field(default_factory=list)
    position_ids: List[int] = field(default_factory=list)
    images: List[ImageSlot] = field(default_factory=list)
    # Next-token targets per position; IGNORE_INDEX where no text token follows
    text_targets: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)

    # Construction ---------------------------------------------------------

    def add_text(self, ids: Sequence[int], role: Role) -> 'SequenceLayout':
        for token in ids:
            self._append(int(token), Kind.TEXT, role, -1, 0)
        return self

    def add_image(self, image: ImageSlot, slots: int = 1, pad_id: int = 0) -> 'SequenceLayout':
        index = len(self.images)
        self.images.append(image)
        for slot in range(slots):
            self._append(pad_id, Kind.IMAGE, image.role, index, slot)
        return self

    def _append(self, token: int, kind: Kind, role: Role, image_id: int, slot: int) -> None:
        segment = self.segment_ids[-1] if self.segment_ids else 0
        position = self.position_ids[-1] + 1 if self.position_ids else 0
        self.tokens.append(token)
        self.kinds.append(int(kind))
        self.roles.append(int(role))
        self.image_ids.append(image_id)
        self.slot_ids.append(slot)
        self.segment_ids.append(segment)
        self.position_ids.append(position)
        self.text_targets.append(IGNORE_INDEX)
        if len(self.tokens) > 1 and self.kinds[-2] == Kind.TEXT and kind == Kind.TEXT:
            self.text_targets[-2] = token

    # Queries ---------------------------------------------------------------

    def validate(self) -> None:
        n = len(self.tokens)
        columns = (self.kinds, self.roles, self.image_ids, self.slot_ids, self.segment_ids,
                   self.position_ids, self.text_targets)
        if any(len(col) != n for col in columns):
            raise RejectedInputError('Layout columns disagree in length')
        for kind, role in zip(self.kinds, self.roles):
            if kind not in (Kind.TEXT, Kind.IMAGE) or role not in (Role.CONTEXT, Role.SUPERVISED, Role.DRAFT):
                raise RejectedInputError(f"Unlabeled position (kind={kind}, role={role})")
        for i, image_id in enumerate(self.image_ids):
            if (self.kinds[i] == Kind.IMAGE) != (image_id >= 0) or image_id >= len(self.images):
                raise RejectedInputError(f"Position {i} has an inconsistent image reference")

    def text_positions(self) -> List[int]:
        return [i for i, k in enumerate(self.kinds) if k == Kind.TEXT]

    def text_mask(self) -> List[bool]:
        """Per text position: is its next-token target supervised?"""
        mask = []
        for i in self.text_positions():
            nxt = i + 1
            mask.append(self.text_targets[i] != IGNORE_INDEX and nxt < len(self.tokens)
                        and self.segment_ids[nxt] == self.segment_ids[i] and self.roles[nxt] == Role.SUPERVISED)
        return mask

    def supervised_text_count(self) -> int:
        return sum(self.text_mask())

    def image_mask(self) -> List[bool]:
        return [img.role == Role.SUPERVISED for img in self.images]

    def attention_mask(self) -> torch.Tensor:
        """Boolean (n, n): causal within a sample, full among slots of one image"""
        seg = torch.tensor(self.segment_ids)
        img = torch.tensor(self.image_ids)
        n = len(self.tokens)
        causal = torch.ones(n, n, dtype=torch.bool).tril()
        same_image = (img[:, None] == img[None, :]) & (img[:, None] >= 0)
        return (causal | same_image) & (seg[:, None] == seg[None, :])

    def velocity_targets(self) -> torch.Tensor:
        rows = [img.target if img.target is not None else np.zeros_like(img.latent) for img in self.images]
        if not rows:
            return torch.zeros(0, 0, dtype=torch.float64)
        return torch.from_numpy(np.stack(rows))

    def tokens_between(self, start: int, stop: int) -> List[int]:
        return [self.tokens[i] for i in range(start, stop) if self.kinds[i] == Kind.TEXT]

    def copy(self) -> 'SequenceLayout':
        return SequenceLayout(
            list(self.tokens), list(self.kinds), list(self.roles), list(self.image_ids), list(self.slot_ids),
            list(self.segment_ids), list(self.position_ids),
            [ImageSlot(img.latent.copy(), img.t, img.role, None if img.target is None else img.target.copy())
             for img in self.images],
            list(self.text_targets))


def concat_layouts(layouts: Sequence[SequenceLayout]) -> SequenceLayout:
    """Pack layouts into one sequence; each keeps its own segment and position ids"""
    packed = SequenceLayout()
    for segment, layout in enumerate(layouts):
        offset = len(packed.images)
        packed.tokens += layout.tokens
        packed.kinds += layout.kinds
        packed.roles += layout.roles
        packed.image_ids += [i + offset if i >= 0 else -1 for i in layout.image_ids]
        packed.slot_ids += layout.slot_ids
        packed.segment_ids += [segment] * len(layout)
        packed.position_ids += layout.position_ids
        packed.text_targets += layout.text_targets
        packed.images += layout.images
    return packed
