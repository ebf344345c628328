"""Constrained beam search: exactly one heading per summarizable section.

The end-of-sequence token is only allowed once the hypothesis has emitted
K-1 heading separators, and the separator is banned after that point, so
every finished decode splits into exactly K headings. Ties in scores are
broken by lower token ids, then by shorter hypotheses.

Decoding one document is single-threaded; a batch may be decoded
concurrently against a frozen model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import BOS_ID, EOS_ID, PAD_ID, X_SEP_ID, Y_SEP_ID
from .model import SegSumTransformer, build_seg_mask
from .numerics.tensor import log_softmax_np, no_grad


class DecodingError(ValueError):
    """Invalid decoding arguments."""


@dataclass
class BeamHypothesis:
    """One partial decode: tokens start with [BOS]."""

    tokens: tuple[int, ...]
    logprob: float
    ysep_count: int
    section: int  # section of the tokens being generated now
    finished: bool


@dataclass
class DecodeResult:
    headings: list[list[int]]
    tokens: list[int]
    score: float
    degenerate: bool
    k_clamped: bool


def length_penalty(length: int, alpha: float) -> float:
    """((5 + length) / 6) ** alpha; hypotheses rank by logprob / penalty."""
    return ((5.0 + length) / 6.0) ** alpha


def required_headings(num_sections: int, first_section_has_summary: bool) -> tuple[int, bool]:
    """Heading count for a section count, clamped to at least one."""
    k = num_sections if first_section_has_summary else num_sections - 1
    if k < 1:
        return 1, True
    return k, False


def token_sections(
    tokens: Sequence[int], first_section_has_summary: bool
) -> list[int]:
    """Section id per decoder-input token.

    [BOS] opens the first summarizable section; a separator belongs to
    the section it terminates, and the section advances after it.
    """
    section = 1 if first_section_has_summary else 2
    out = []
    for tok in tokens:
        out.append(section)
        if tok == Y_SEP_ID:
            section += 1
    return out


def _normalized(hyp: BeamHypothesis, alpha: float) -> float:
    return hyp.logprob / length_penalty(max(1, len(hyp.tokens) - 1), alpha)


def _order_key(item: tuple[float, BeamHypothesis]):
    score, hyp = item
    return (-score, hyp.tokens)


def split_headings(tokens: Sequence[int], k: int) -> list[list[int]]:
    """Split generated tokens on separators and pad to exactly k headings."""
    headings: list[list[int]] = [[]]
    for tok in tokens:
        if tok == BOS_ID:
            continue
        if tok == EOS_ID:
            break
        if tok == Y_SEP_ID:
            headings.append([])
        else:
            headings[-1].append(tok)
    while len(headings) < k:
        headings.append([])
    return headings[:k]


def beam_search(
    model: SegSumTransformer,
    src_ids,
    src_section_of_token,
    num_sections: int,
    first_section_has_summary: bool,
    beam_size: int = 5,
    alpha: float = 0.8,
    max_len: int | None = None,
) -> DecodeResult:
    """Decode one document given its (predicted or gold) sections.

    ``max_len`` bounds the number of generated tokens (excluding [BOS]);
    hitting it without finishing yields a degenerate decode padded with
    empty headings.
    """
    if beam_size < 1:
        raise DecodingError(f"beam_size must be >= 1, got {beam_size}")
    src_ids = np.asarray(src_ids, dtype=np.int64)
    src_sections = np.asarray(src_section_of_token, dtype=np.int64)
    if max_len is None:
        max_len = model.config.max_tgt_len - 1
    max_len = min(max_len, model.config.max_tgt_len - 1)

    k, k_clamped = required_headings(num_sections, first_section_has_summary)

    with no_grad():
        enc_out = model.encode(src_ids)

        start_section = 1 if first_section_has_summary else 2
        beam = [BeamHypothesis((BOS_ID,), 0.0, 0, start_section, False)]

        for _ in range(max_len):
            if all(h.finished for h in beam):
                break
            # Finished hypotheses carry over unchanged and compete for
            # beam slots by normalized score like everything else.
            candidates = [(_normalized(h, alpha), h) for h in beam if h.finished]
            for hyp in beam:
                if hyp.finished:
                    continue
                sections = token_sections(hyp.tokens, first_section_has_summary)
                seg_mask = build_seg_mask(src_sections, sections)
                logits = model.decoder_forward(enc_out, np.asarray(hyp.tokens), seg_mask=seg_mask)
                logp = log_softmax_np(logits.data[-1])

                banned = {PAD_ID, BOS_ID, X_SEP_ID}
                if hyp.ysep_count != k - 1:
                    banned.add(EOS_ID)
                if hyp.ysep_count >= k - 1:
                    banned.add(Y_SEP_ID)
                for tok in range(len(logp)):
                    if tok in banned:
                        continue
                    new = BeamHypothesis(
                        tokens=hyp.tokens + (tok,),
                        logprob=hyp.logprob + float(logp[tok]),
                        ysep_count=hyp.ysep_count + (tok == Y_SEP_ID),
                        section=hyp.section + (tok == Y_SEP_ID),
                        finished=tok == EOS_ID,
                    )
                    candidates.append((_normalized(new, alpha), new))

            candidates.sort(key=_order_key)
            beam = [hyp for _, hyp in candidates[:beam_size]]

    done = sorted(
        ((_normalized(h, alpha), h) for h in beam if h.finished), key=_order_key
    )
    if done:
        score, best = done[0]
        degenerate = False
    else:
        # Length limit hit with nothing finished: take the best live
        # hypothesis; missing headings are padded out below.
        ranked = sorted(((_normalized(h, alpha), h) for h in beam), key=_order_key)
        score, best = ranked[0]
        degenerate = True
    return DecodeResult(
        headings=split_headings(best.tokens, k),
        tokens=list(best.tokens),
        score=score,
        degenerate=degenerate,
        k_clamped=k_clamped,
    )
