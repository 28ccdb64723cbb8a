"""Tag lattice primitives shared by every stage of the accelerator model.

A tag is an 8-bit security-domain label: 0 marks public data, any nonzero
value names one client domain. Values from two distinct nonzero domains must
never combine, so the join of two such tags is a fault rather than a value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

TAG_BITS = 8
TAG_MAX = (1 << TAG_BITS) - 1


class MixingFault(Exception):
    """Two distinct nonzero domains would have been combined."""

    def __init__(self, a: int, b: int, context: str = ""):
        self.a = a
        self.b = b
        self.context = context
        msg = f"tag mixing: {a} vs {b}"
        if context:
            msg = f"{msg} ({context})"
        super().__init__(msg)


def check_tag(t: int) -> int:
    if not isinstance(t, int) or not 0 <= t <= TAG_MAX:
        raise ValueError(f"tag {t!r} outside [0, {TAG_MAX}]")
    return t


def tag_join(a: int, b: int) -> int:
    """Join two domain labels.

    0 is the identity. Equal nonzero labels join to themselves. Two distinct
    nonzero labels raise MixingFault carrying both offenders.
    """
    check_tag(a)
    check_tag(b)
    if a == 0:
        return b
    if b == 0 or b == a:
        return a
    raise MixingFault(a, b)


def tag_fold(tags: Iterable[int]) -> int:
    """Left-fold of tag_join over a sequence; empty folds to 0 (public)."""
    acc = 0
    for t in tags:
        acc = tag_join(acc, t)
    return acc


@dataclass(frozen=True)
class TaggedWord:
    """One 64-bit word of main memory plus the tag covering all its bytes."""

    data: int
    tag: int = 0

    def __post_init__(self):
        if not 0 <= self.data < (1 << 64):
            raise ValueError(f"word {self.data:#x} outside 64 bits")
        check_tag(self.tag)


@dataclass(frozen=True)
class TaggedRow:
    """A vector of matrix elements sharing a single domain tag.

    Rows are the tagging granularity everywhere: one tag covers the whole
    element vector, whether it lives in memory, a scratchpad, or the mesh.
    """

    elems: tuple[int, ...]
    tag: int = 0

    def __post_init__(self):
        object.__setattr__(self, "elems", tuple(self.elems))
        check_tag(self.tag)

    def __len__(self):
        return len(self.elems)
