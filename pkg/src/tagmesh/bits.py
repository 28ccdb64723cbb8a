"""Fixed-width integer helpers for the 64-bit word <-> element conversions."""

from __future__ import annotations

from typing import Sequence

WORD_BITS = 64
WORD_MASK = (1 << WORD_BITS) - 1

# element widths the datapath supports: 8-bit inputs, 32-bit accumulators
ELEM_WIDTHS = (8, 32)


def wrap_signed(value: int, bits: int) -> int:
    """Two's-complement wraparound of an arbitrary int to `bits` bits."""
    m = 1 << bits
    v = value & (m - 1)
    return v - m if v >= (m >> 1) else v


def wrap8(value: int) -> int:
    return wrap_signed(value, 8)


def wrap32(value: int) -> int:
    return wrap_signed(value, 32)


def elems_per_word(elem_bits: int) -> int:
    if elem_bits not in ELEM_WIDTHS:
        raise ValueError(f"unsupported element width {elem_bits}")
    return WORD_BITS // elem_bits


def span_words(n_elems: int, elem_bits: int) -> int:
    """Number of whole 64-bit words covered by n_elems packed elements.

    Spans that end mid-word are rejected: every row transfer must cover an
    integral number of words so one tag covers exactly one row's words.
    """
    per = elems_per_word(elem_bits)
    if n_elems < 1:
        raise ValueError("empty element span")
    if n_elems % per != 0:
        raise ValueError(
            f"{n_elems} elements of {elem_bits} bits is a partial-word span")
    return n_elems // per


def pack_row(elems: Sequence[int], elem_bits: int) -> list[int]:
    """Pack signed elements into 64-bit words, little-endian within the word."""
    per = elems_per_word(elem_bits)
    n = span_words(len(elems), elem_bits)
    emask = (1 << elem_bits) - 1
    words = []
    for w in range(n):
        word = 0
        for i in range(per):
            word |= (elems[w * per + i] & emask) << (i * elem_bits)
        words.append(word)
    return words


def unpack_row(words: Sequence[int], n_elems: int, elem_bits: int) -> tuple[int, ...]:
    """Inverse of pack_row; elements come back sign-extended."""
    per = elems_per_word(elem_bits)
    if span_words(n_elems, elem_bits) != len(words):
        raise ValueError("word count does not match element span")
    emask = (1 << elem_bits) - 1
    out = []
    for k in range(n_elems):
        word = words[k // per]
        raw = (word >> ((k % per) * elem_bits)) & emask
        out.append(wrap_signed(raw, elem_bits))
    return tuple(out)
