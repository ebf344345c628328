"""Segmentation and summarization metrics, plus run-level aggregation.

Pk and WinDiff follow the sliding-window definitions with 0-based unit
indices: windows start at i in [0, M-k-1]. Pk compares whether units i
and i+k share a segment in reference vs hypothesis; WinDiff compares the
number of boundaries strictly inside (i, i+k]. ROUGE uses lowercase
whitespace tokens, no stemming, no stopword removal.

All functions are pure; per-document scoring can run concurrently.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence


class MetricsError(ValueError):
    """Incompatible segmentations or invalid metric arguments."""


@dataclass(frozen=True)
class Segmentation:
    """A document length plus its boundary set."""

    num_units: int
    boundaries: tuple[int, ...]

    def __post_init__(self):
        m = self.num_units
        if m < 1:
            raise MetricsError("segmentation: num_units must be >= 1")
        b = self.boundaries
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise MetricsError("segmentation: boundaries must be strictly ascending")
        if any(x < 1 or x > m - 1 for x in b):
            raise MetricsError(f"segmentation: boundaries must lie in [1, {m - 1}]")

    @property
    def num_segments(self) -> int:
        return len(self.boundaries) + 1

    def segment_ids(self) -> list[int]:
        """0-based segment id per unit."""
        ids = []
        seg = 0
        bset = set(self.boundaries)
        for unit in range(1, self.num_units + 1):
            ids.append(seg)
            if unit in bset:
                seg += 1
        return ids


def default_window(ref: Segmentation) -> int:
    """Half the mean reference segment length, rounded, at least 1."""
    return max(1, round(ref.num_units / (2 * ref.num_segments)))


def _check_pair(ref: Segmentation, hyp: Segmentation, k: int | None) -> int:
    if ref.num_units != hyp.num_units:
        raise MetricsError(
            f"unit count mismatch: ref {ref.num_units} vs hyp {hyp.num_units}"
        )
    if k is None:
        k = default_window(ref)
    if k < 1:
        raise MetricsError(f"window k must be >= 1, got {k}")
    if ref.num_units <= k:
        raise MetricsError(f"window k={k} too large for {ref.num_units} units")
    return k


def pk(ref: Segmentation, hyp: Segmentation, k: int | None = None) -> float:
    """Fraction of width-k windows whose endpoints disagree on same-segment."""
    k = _check_pair(ref, hyp, k)
    ref_ids = ref.segment_ids()
    hyp_ids = hyp.segment_ids()
    m = ref.num_units
    errors = 0
    for i in range(m - k):
        if (ref_ids[i] == ref_ids[i + k]) != (hyp_ids[i] == hyp_ids[i + k]):
            errors += 1
    return errors / (m - k)


def windiff(ref: Segmentation, hyp: Segmentation, k: int | None = None) -> float:
    """Fraction of width-k windows whose boundary counts differ."""
    k = _check_pair(ref, hyp, k)
    m = ref.num_units

    def prefix(seg: Segmentation) -> list[int]:
        counts = [0] * (m + 1)
        for b in seg.boundaries:
            counts[b] = 1
        for i in range(1, m + 1):
            counts[i] += counts[i - 1]
        return counts

    ref_pre = prefix(ref)
    hyp_pre = prefix(hyp)
    errors = 0
    for i in range(m - k):
        if ref_pre[i + k] - ref_pre[i] != hyp_pre[i + k] - hyp_pre[i]:
            errors += 1
    return errors / (m - k)


def boundary_prf(ref: Segmentation, hyp: Segmentation) -> tuple[float, float, float]:
    """Exact-position boundary precision/recall/F1."""
    if ref.num_units != hyp.num_units:
        raise MetricsError(
            f"unit count mismatch: ref {ref.num_units} vs hyp {hyp.num_units}"
        )
    r, h = set(ref.boundaries), set(hyp.boundaries)
    if not r and not h:
        return 1.0, 1.0, 1.0
    tp = len(r & h)
    p = tp / len(h) if h else 1.0
    rec = tp / len(r) if r else 1.0
    f1 = 2 * p * rec / (p + rec) if p + rec > 0 else 0.0
    return p, rec, f1


# -- ROUGE ---------------------------------------------------------------------


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @staticmethod
    def zero() -> "RougeScore":
        return RougeScore(0.0, 0.0, 0.0)

    @staticmethod
    def from_counts(overlap: float, n_candidate: float, n_reference: float) -> "RougeScore":
        if n_candidate == 0 or n_reference == 0:
            return RougeScore.zero()
        p = overlap / n_candidate
        r = overlap / n_reference
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return RougeScore(p, r, f1)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> RougeScore:
    """Clipped n-gram overlap precision/recall/F1."""
    if n < 1:
        raise MetricsError(f"rouge_n: n must be >= 1, got {n}")
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    overlap = sum(min(c, ref[g]) for g, c in cand.items())
    return RougeScore.from_counts(overlap, sum(cand.values()), sum(ref.values()))


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    """Longest-common-subsequence precision/recall/F1."""
    nc, nr = len(candidate), len(reference)
    if nc == 0 or nr == 0:
        return RougeScore.zero()
    prev = [0] * (nr + 1)
    for i in range(1, nc + 1):
        cur = [0] * (nr + 1)
        ci = candidate[i - 1]
        for j in range(1, nr + 1):
            if ci == reference[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return RougeScore.from_counts(prev[nr], nc, nr)


# -- run-level aggregation -------------------------------------------------------


@dataclass
class Prediction:
    """One system output for one document."""

    boundaries: list[int]
    headings: list[list[str]]
    degenerate: bool = False
    k_clamped: bool = False


@dataclass
class DocScores:
    pk: float | None
    windiff: float | None
    boundary_p: float
    boundary_r: float
    boundary_f1: float
    rouge1: RougeScore
    rouge2: RougeScore
    rougel: RougeScore


@dataclass
class MetricsReport:
    mode: str
    per_document: list[DocScores]
    degenerate_decodes: int
    k_clamped_decodes: int
    notes: list[str] = field(default_factory=list)

    def mean(self, attr: str) -> float:
        if attr in ("pk", "windiff"):
            vals = [getattr(d, attr) for d in self.per_document if getattr(d, attr) is not None]
        elif attr.startswith("rouge"):
            name, part = attr.rsplit("_", 1)
            vals = [getattr(getattr(d, name), part) for d in self.per_document]
        else:
            vals = [getattr(d, attr) for d in self.per_document]
        return sum(vals) / len(vals) if vals else 0.0

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "num_documents": len(self.per_document),
            "pk": self.mean("pk"),
            "windiff": self.mean("windiff"),
            "boundary_precision": self.mean("boundary_p"),
            "boundary_recall": self.mean("boundary_r"),
            "boundary_f1": self.mean("boundary_f1"),
            "rouge1_f1": self.mean("rouge1_f1"),
            "rouge2_f1": self.mean("rouge2_f1"),
            "rougel_f1": self.mean("rougel_f1"),
            "degenerate_decodes": self.degenerate_decodes,
            "k_clamped_decodes": self.k_clamped_decodes,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        payload = self.summary()
        payload["per_document"] = [
            {
                "pk": d.pk,
                "windiff": d.windiff,
                "boundary_precision": d.boundary_p,
                "boundary_recall": d.boundary_r,
                "boundary_f1": d.boundary_f1,
                "rouge1": [d.rouge1.precision, d.rouge1.recall, d.rouge1.f1],
                "rouge2": [d.rouge2.precision, d.rouge2.recall, d.rouge2.f1],
                "rougel": [d.rougel.precision, d.rougel.recall, d.rougel.f1],
            }
            for d in self.per_document
        ]
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_table(self) -> str:
        s = self.summary()
        rows = [
            ("documents", f"{s['num_documents']}"),
            ("Pk", f"{s['pk']:.4f}"),
            ("WinDiff", f"{s['windiff']:.4f}"),
            ("boundary P", f"{s['boundary_precision']:.4f}"),
            ("boundary R", f"{s['boundary_recall']:.4f}"),
            ("boundary F1", f"{s['boundary_f1']:.4f}"),
            ("ROUGE-1 F1", f"{s['rouge1_f1']:.4f}"),
            ("ROUGE-2 F1", f"{s['rouge2_f1']:.4f}"),
            ("ROUGE-L F1", f"{s['rougel_f1']:.4f}"),
            ("degenerate decodes", f"{s['degenerate_decodes']}"),
            ("K-clamped decodes", f"{s['k_clamped_decodes']}"),
            ("ROUGE mode", self.mode),
        ]
        width = max(len(name) for name, _ in rows)
        lines = [f"{name:<{width}}  {val}" for name, val in rows]
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)


def _rouge_triple(candidate: Sequence[str], reference: Sequence[str]):
    return (
        rouge_n(candidate, reference, 1),
        rouge_n(candidate, reference, 2),
        rouge_l(candidate, reference),
    )


def _mean_scores(scores: list[RougeScore]) -> RougeScore:
    if not scores:
        return RougeScore.zero()
    n = len(scores)
    return RougeScore(
        sum(s.precision for s in scores) / n,
        sum(s.recall for s in scores) / n,
        sum(s.f1 for s in scores) / n,
    )


def evaluate_run(
    gold_docs: Sequence,
    predictions: Sequence[Prediction],
    mode: str = "aligned",
    pk_window: int | None = None,
) -> MetricsReport:
    """Score predictions against gold documents.

    ``mode`` controls summary scoring: ``concat`` joins all headings and
    scores the joined sequences; ``aligned`` scores heading j against
    gold heading j when the counts match, falling back to concat
    otherwise. Segmentation metrics include every boundary; single
    paragraph documents are skipped for Pk/WinDiff (no window fits).
    """
    if mode not in ("concat", "aligned"):
        raise MetricsError(f"unknown rouge mode {mode!r}")
    if len(predictions) != len(gold_docs):
        raise MetricsError(
            f"predictions cover {len(predictions)} documents, corpus has {len(gold_docs)}"
        )
    per_doc: list[DocScores] = []
    skipped_seg = 0
    for doc, pred in zip(gold_docs, predictions):
        m = doc.num_paragraphs
        ref = Segmentation(m, tuple(doc.gold_boundaries))
        hyp = Segmentation(m, tuple(sorted(set(pred.boundaries))))
        if m >= 2 and m > (pk_window or default_window(ref)):
            pk_score = pk(ref, hyp, pk_window)
            wd_score = windiff(ref, hyp, pk_window)
        else:
            pk_score = wd_score = None
            skipped_seg += 1
        bp, br, bf = boundary_prf(ref, hyp)

        gold_headings = [list(s) for s in doc.gold_summaries]
        pred_headings = [list(h) for h in pred.headings]
        if mode == "aligned" and len(gold_headings) == len(pred_headings) and gold_headings:
            triples = [_rouge_triple(c, r) for c, r in zip(pred_headings, gold_headings)]
            r1 = _mean_scores([t[0] for t in triples])
            r2 = _mean_scores([t[1] for t in triples])
            rl = _mean_scores([t[2] for t in triples])
        else:
            cand = [tok for h in pred_headings for tok in h]
            refc = [tok for h in gold_headings for tok in h]
            r1, r2, rl = _rouge_triple(cand, refc)
        per_doc.append(DocScores(pk_score, wd_score, bp, br, bf, r1, r2, rl))

    report = MetricsReport(
        mode=mode,
        per_document=per_doc,
        degenerate_decodes=sum(1 for p in predictions if p.degenerate),
        k_clamped_decodes=sum(1 for p in predictions if p.k_clamped),
    )
    report.notes.append("segmentation metrics include all boundaries")
    if skipped_seg:
        report.notes.append(
            f"{skipped_seg} documents too short for Pk/WinDiff windows (excluded from those means)"
        )
    return report
