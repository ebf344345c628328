"""Non-neural segmenters: an even splitter and a lexical-cohesion tiler.

Both are pure functions and freely concurrent.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .corpus import Document

# Corpus-level mean paragraphs-per-section used to pick a default section
# count when none is given.
DEFAULT_PARAS_PER_SECTION = 12.7


class BaselineError(ValueError):
    """Invalid segmenter arguments."""


@dataclass
class TilingParams:
    """Knobs for the cosine-block tiler.

    ``block_size`` paragraphs on each side of a gap are compared;
    gap scores are smoothed with a centered moving average of width
    ``smoothing_width``; boundaries fire where the depth score exceeds
    mean(depth) - cutoff_std_frac * std(depth).
    """

    block_size: int = 2
    smoothing_width: int = 1
    cutoff_std_frac: float = 0.5

    def __post_init__(self):
        if self.block_size < 1:
            raise BaselineError(f"block_size must be >= 1, got {self.block_size}")
        if self.smoothing_width < 1 or self.smoothing_width % 2 == 0:
            raise BaselineError(
                f"smoothing_width must be a positive odd integer, got {self.smoothing_width}"
            )


def even_segmenter(num_paragraphs: int, num_sections: int) -> list[int]:
    """Split M paragraphs into N near-equal sections, larger sections first."""
    m, n = num_paragraphs, num_sections
    if n < 1:
        raise BaselineError(f"num_sections must be >= 1, got {n}")
    if n > m:
        raise BaselineError(f"cannot split {m} paragraphs into {n} sections")
    base, rem = divmod(m, n)
    boundaries = []
    pos = 0
    for j in range(n - 1):
        pos += base + (1 if j < rem else 0)
        boundaries.append(pos)
    return boundaries


def default_num_sections(num_paragraphs: int, paras_per_section: float = DEFAULT_PARAS_PER_SECTION) -> int:
    """Section count from a mean paragraphs-per-section prior, clamped to [1, M]."""
    n = round(num_paragraphs / paras_per_section)
    return max(1, min(num_paragraphs, n))


def _cosine(a: Counter, b: Counter) -> float:
    dot = sum(c * b[t] for t, c in a.items())
    na = math.sqrt(sum(c * c for c in a.values()))
    nb = math.sqrt(sum(c * c for c in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def gap_scores(doc: Document, params: TilingParams) -> list[float]:
    """Cosine similarity at each paragraph gap between the blocks of
    up to ``block_size`` paragraphs before and after it (clamped at the
    document edges)."""
    m = doc.num_paragraphs
    w = params.block_size
    scores = []
    for g in range(1, m):
        before: Counter = Counter()
        for p in doc.paragraphs[max(0, g - w) : g]:
            before.update(p)
        after: Counter = Counter()
        for p in doc.paragraphs[g : min(m, g + w)]:
            after.update(p)
        scores.append(_cosine(before, after))
    return scores


def _smooth(series: list[float], width: int) -> list[float]:
    if width <= 1:
        return list(series)
    half = width // 2
    out = []
    for i in range(len(series)):
        lo, hi = max(0, i - half), min(len(series), i + half + 1)
        out.append(sum(series[lo:hi]) / (hi - lo))
    return out


def depth_scores(scores: list[float]) -> list[float]:
    """Depth of each valley: rise to the nearest peak on each side."""
    depths = []
    for i, s in enumerate(scores):
        left = s
        j = i
        while j > 0 and scores[j - 1] >= left:
            left = scores[j - 1]
            j -= 1
        right = s
        j = i
        while j < len(scores) - 1 and scores[j + 1] >= right:
            right = scores[j + 1]
            j += 1
        depths.append((left - s) + (right - s))
    return depths


def texttiling(doc: Document, params: TilingParams | None = None) -> list[int]:
    """Unsupervised boundary detection from lexical cohesion dips.

    Returns ascending paragraph-gap indices; may be empty.
    """
    params = params or TilingParams()
    if doc.num_paragraphs < 2:
        return []
    scores = _smooth(gap_scores(doc, params), params.smoothing_width)
    depths = depth_scores(scores)
    n = len(depths)
    mean = sum(depths) / n
    var = sum((d - mean) ** 2 for d in depths) / n
    cutoff = mean - params.cutoff_std_frac * math.sqrt(var)
    return [g + 1 for g in range(n) if depths[g] > cutoff]
