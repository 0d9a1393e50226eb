"""
Sequence packing.

Greedy first-fit: each sample goes into the first pack with room for it.
Samples are never split; packed samples keep their own segment and
position ids, so attention never crosses a sample boundary.
"""

from typing import List, Sequence

from models.layout import SequenceLayout, concat_layouts
from utils.errors import PackingError


def plan_packs(lengths: Sequence[int], pack_len: int) -> List[List[int]]:
    """
    Assign sample indices to packs

    Args:
        lengths: Positions per sample
        pack_len: Capacity of one pack

    Returns:
        Index lists, one per pack, in first-fit order
    """
    packs: List[List[int]] = []
    used: List[int] = []
    for index, length in enumerate(lengths):
        if length > pack_len:
            raise PackingError(f"Sample {index} has {length} positions, more than pack_len {pack_len}")
        for p, filled in enumerate(used):
            if filled + length <= pack_len:
                packs[p].append(index)
                used[p] += length
                break
        else:
            packs.append([index])
            used.append(length)
    return packs


def pack_sequences(layouts: Sequence[SequenceLayout], pack_len: int) -> List[SequenceLayout]:
    """Pack layouts into sequences of at most pack_len positions"""
    plan = plan_packs([len(layout) for layout in layouts], pack_len)
    return [concat_layouts([layouts[i] for i in pack]) for pack in plan]
