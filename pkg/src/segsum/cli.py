"""Command-line entry point and experiment orchestration.

Commands: generate-data, train, evaluate, ablate-c, segment, summarize,
grad-check. Configuration is a flat-key JSON file; command-line flags
override file values. Runs are deterministic given the seed; all file
writes are whole-file atomic.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure. Errors print
one machine-parsable line: ``ERROR:<code>: message``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corpus as cp
from .baselines import BaselineError, TilingParams, default_num_sections, even_segmenter, texttiling
from .decoding import DecodingError, beam_search
from .metrics import MetricsError, MetricsReport, Prediction, evaluate_run
from .model import ModelConfig, ModelError, SegSumTransformer
from .numerics import Adam, grad_check
from .numerics.checkpoint import CheckpointError
from .numerics.tensor import TensorError, no_grad


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    # corpus
    train_path: str | None = None
    valid_path: str | None = None
    test_path: str | None = None
    min_freq: int = 1
    # model
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_model: int = 64
    n_head: int = 4
    c: int = 2
    d_ff: int | None = None
    max_src_len: int = 256
    max_tgt_len: int = 64
    label_smoothing: float = 0.1
    dropout: float = 0.1
    # optimizer
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 8
    epochs: int = 16
    seed: int = 0
    # decoding / evaluation
    beam_size: int = 5
    alpha: float = 0.8
    boundary_threshold: float = 0.5
    rouge_mode: str = "aligned"
    # mode flags
    use_seg_loss: bool = True
    seg_loss_weight: float = 1.0
    first_section_has_summary: bool | None = None  # None: trust each document

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            n_enc_layers=self.n_enc_layers,
            n_dec_layers=self.n_dec_layers,
            d_model=self.d_model,
            n_head=self.n_head,
            c=self.c,
            d_ff=self.d_ff,
            max_src_len=self.max_src_len,
            max_tgt_len=self.max_tgt_len,
            label_smoothing=self.label_smoothing,
            dropout=self.dropout,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_RUN_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def load_run_config(path: str | None, overrides: dict) -> RunConfig:
    values: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise cp.CorpusError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {path}: invalid JSON ({e.msg})") from None
        if not isinstance(raw, dict):
            raise UsageError(f"config file {path}: expected a JSON object with flat keys")
        for key, val in raw.items():
            if key not in _RUN_FIELDS:
                raise UsageError(f"config file {path}: unknown key {key!r}")
            values[key] = val
    for key, val in overrides.items():
        if val is not None:
            values[key] = val
    try:
        return RunConfig(**values)
    except TypeError as e:
        raise UsageError(f"bad config: {e}") from None


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file with flat RunConfig keys")
    g = parser.add_argument_group("config overrides")
    g.add_argument("--train-path")
    g.add_argument("--valid-path")
    g.add_argument("--test-path")
    g.add_argument("--min-freq", type=int)
    g.add_argument("--n-enc-layers", type=int)
    g.add_argument("--n-dec-layers", type=int)
    g.add_argument("--d-model", type=int)
    g.add_argument("--n-head", type=int)
    g.add_argument("--c", type=int)
    g.add_argument("--d-ff", type=int)
    g.add_argument("--max-src-len", type=int)
    g.add_argument("--max-tgt-len", type=int)
    g.add_argument("--label-smoothing", type=float)
    g.add_argument("--dropout", type=float)
    g.add_argument("--lr", type=float)
    g.add_argument("--beta1", type=float)
    g.add_argument("--beta2", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--beam-size", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--boundary-threshold", type=float)
    g.add_argument("--rouge-mode", choices=["concat", "aligned"])
    g.add_argument("--use-seg-loss", type=_parse_bool)
    g.add_argument("--seg-loss-weight", type=float)


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {
        name: getattr(args, name, None)
        for name in _RUN_FIELDS
        if hasattr(args, name)
    }
    return load_run_config(getattr(args, "config", None), overrides)


# ---------------------------------------------------------------------------
# Training / evaluation machinery
# ---------------------------------------------------------------------------


def encode_corpus(docs, vocab, cfg: RunConfig) -> list[cp.EncodedExample]:
    return [cp.encode_document(d, vocab, cfg.max_src_len, cfg.max_tgt_len) for d in docs]


def token_accuracy(token_logits: np.ndarray, targets: np.ndarray, ignore_id: int = cp.PAD_ID) -> tuple[int, int]:
    keep = targets != ignore_id
    pred = token_logits.argmax(axis=-1)
    return int((pred[keep] == targets[keep]).sum()), int(keep.sum())


def validate_model(model: SegSumTransformer, examples, threshold: float, use_seg_loss: bool) -> dict:
    """Teacher-forced validation: losses, boundary micro-F1, token accuracy."""
    total_l = total_seg = total_gen = 0.0
    tp = fp = fn = 0
    correct = total = 0
    with no_grad():
        for ex in examples:
            out = model.forward_train(ex, use_seg_loss=use_seg_loss)
            total_l += out.loss.item()
            total_gen += out.l_gen.item()
            if out.l_seg is not None:
                total_seg += out.l_seg.item()
            decisions = out.boundary_probs > threshold
            gold = ex.boundary_labels.astype(bool)
            tp += int((decisions & gold).sum())
            fp += int((decisions & ~gold).sum())
            fn += int((~decisions & gold).sum())
            c, t = token_accuracy(out.token_logits, ex.tgt_ids[1:])
            correct += c
            total += t
    n = max(1, len(examples))
    prec = tp / (tp + fp) if tp + fp else 1.0
    rec = tp / (tp + fn) if tp + fn else 1.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return {
        "loss": total_l / n,
        "l_seg": (total_seg / n) if use_seg_loss else None,
        "l_gen": total_gen / n,
        "boundary_f1": f1,
        "token_acc": correct / total if total else 0.0,
    }


def train_model(
    cfg: RunConfig,
    train_examples,
    valid_examples,
    vocab_size: int,
    log=None,
    restore_best: bool = True,
) -> tuple[SegSumTransformer, list[str]]:
    """Teacher-forced training with per-epoch validation.

    By default keeps the parameter snapshot with the lowest validation
    loss and restores it before returning; ``restore_best=False`` returns
    the final-epoch weights. Raises TensorError on non-finite loss.
    """
    model = SegSumTransformer(cfg.model_config(vocab_size), seed=cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    rng = np.random.default_rng(cfg.seed)
    lines: list[str] = []
    best_loss = float("inf")
    best_state: dict[str, np.ndarray] | None = None

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_examples))
        epoch_l = epoch_seg = epoch_gen = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            opt.zero_grad()
            for idx in batch:
                ex = train_examples[idx]
                out = model.forward_train(ex, use_seg_loss=cfg.use_seg_loss, train=True)
                loss = out.loss
                if cfg.use_seg_loss and cfg.seg_loss_weight != 1.0 and out.l_seg is not None:
                    loss = out.l_seg * cfg.seg_loss_weight + out.l_gen
                value = loss.item()
                if not np.isfinite(value):
                    raise TensorError(
                        f"non-finite training loss {value} at epoch {epoch}"
                    )
                loss.backward(np.asarray(1.0 / len(batch)))
                epoch_l += out.loss.item()
                epoch_gen += out.l_gen.item()
                if out.l_seg is not None:
                    epoch_seg += out.l_seg.item()
            opt.step()
        n = len(train_examples)
        val = validate_model(model, valid_examples, cfg.boundary_threshold, cfg.use_seg_loss)
        seg_txt = f"{epoch_seg / n:.6f}" if cfg.use_seg_loss else "-"
        line = (
            f"epoch {epoch:3d} | L {epoch_l / n:.6f} | L_seg {seg_txt}"
            f" | L_gen {epoch_gen / n:.6f} | val_L {val['loss']:.6f}"
            f" | val_boundary_F1 {val['boundary_f1']:.4f}"
            f" | val_token_acc {val['token_acc']:.4f}"
        )
        lines.append(line)
        if log:
            log(line)
        if restore_best and val["loss"] < best_loss:
            best_loss = val["loss"]
            best_state = {p.name: p.data.copy() for p in model.parameters()}

    if restore_best and best_state is not None:
        for p in model.parameters():
            p.data = best_state[p.name]
    return model, lines


def decode_corpus(
    model: SegSumTransformer,
    vocab: cp.Vocabulary,
    docs,
    cfg: RunConfig,
    protocol: str,
) -> tuple[list[Prediction], list[cp.Document]]:
    """Decode each document under gold or predicted sections.

    Returns predictions plus the (possibly truncated) documents they
    are scored against.
    """
    if protocol not in ("gold", "predicted"):
        raise UsageError(f"unknown protocol {protocol!r}")
    predictions = []
    scored_docs = []
    for doc in docs:
        doc_t = cp.truncate_document(doc, cfg.max_src_len)
        ex = cp.encode_document(doc_t, vocab, cfg.max_src_len, cfg.max_tgt_len)
        if protocol == "gold":
            boundaries = list(doc_t.gold_boundaries)
            sections = ex.src_section_of_token
            n_sections = doc_t.num_sections
        else:
            inferred = model.forward_infer_sections(
                ex.src_ids, ex.xsep_positions, cfg.boundary_threshold
            )
            boundaries = inferred.boundaries
            sections = inferred.src_section_of_token
            n_sections = inferred.num_sections
        result = beam_search(
            model,
            ex.src_ids,
            sections,
            n_sections,
            doc_t.first_section_has_summary,
            beam_size=cfg.beam_size,
            alpha=cfg.alpha,
        )
        predictions.append(
            Prediction(
                boundaries=boundaries,
                headings=[vocab.decode(h) for h in result.headings],
                degenerate=result.degenerate,
                k_clamped=result.k_clamped,
            )
        )
        scored_docs.append(doc_t)
    return predictions, scored_docs


def evaluate_protocols(
    model: SegSumTransformer, vocab: cp.Vocabulary, docs, cfg: RunConfig
) -> dict[str, MetricsReport]:
    reports = {}
    for protocol in ("gold", "predicted"):
        predictions, scored = decode_corpus(model, vocab, docs, cfg, protocol)
        report = evaluate_run(scored, predictions, mode=cfg.rouge_mode)
        report.notes.append(f"segments: {protocol}")
        reports[protocol] = report
    return reports


# ---------------------------------------------------------------------------
# File helpers
# ---------------------------------------------------------------------------


def _write_text_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_corpus_or_fail(path: str | None, what: str) -> list[cp.Document]:
    if not path:
        raise UsageError(f"missing {what} corpus path")
    return cp.load_jsonl(path)


def _load_model(path: str) -> tuple[SegSumTransformer, cp.Vocabulary, dict]:
    model, config = SegSumTransformer.load(path)
    if "vocab" not in config:
        raise CheckpointError(f"checkpoint {path!r} carries no vocabulary")
    vocab = cp.Vocabulary(list(config["vocab"]))
    if len(vocab) != model.config.vocab_size:
        raise CheckpointError(
            f"checkpoint vocabulary size {len(vocab)} != model vocab_size {model.config.vocab_size}"
        )
    return model, vocab, config


def _load_single_document(path: str) -> cp.Document:
    docs = cp.load_jsonl(path)
    if len(docs) != 1:
        raise cp.CorpusError(f"{path}: expected exactly one document, found {len(docs)}")
    return docs[0]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_generate_data(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    sections = (args.sections[0], args.sections[1])
    paras = (args.paras_per_section[0], args.paras_per_section[1])
    para_len = (args.para_len[0], args.para_len[1])

    n_valid = max(1, args.n_docs // 10)
    n_test = max(1, args.n_docs // 10)
    n_train = args.n_docs - n_valid - n_test
    if n_train < 1:
        raise UsageError(f"--n-docs {args.n_docs} too small for an 80/10/10 split")

    # Topic pools are disjoint across splits, so the key phrases used as
    # gold headings never overlap between train and held-out data.
    topics = list(range(args.n_topics))
    pool_eval = max(sections[1], args.n_topics // 10)
    if args.n_topics - 2 * pool_eval < sections[1]:
        raise UsageError(
            f"--n-topics {args.n_topics} too small to give each split {sections[1]} topics"
        )
    pools = {
        "train": topics[: args.n_topics - 2 * pool_eval],
        "valid": topics[args.n_topics - 2 * pool_eval : args.n_topics - pool_eval],
        "test": topics[args.n_topics - pool_eval :],
    }
    counts = {"train": n_train, "valid": n_valid, "test": n_test}
    for i, (split, pool) in enumerate(pools.items()):
        docs = cp.synth_generate(
            counts[split],
            args.n_topics,
            args.vocab_per_topic,
            sections,
            paras,
            para_len,
            seed=args.seed + i,
            topic_pool=pool,
        )
        lines = [json.dumps(cp.document_to_record(d), sort_keys=True) for d in docs]
        _write_text_atomic(out_dir / f"{split}.jsonl", "\n".join(lines) + "\n")
        print(f"wrote {counts[split]} documents to {out_dir / (split + '.jsonl')}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    train_docs = _load_corpus_or_fail(cfg.train_path, "train")
    valid_docs = _load_corpus_or_fail(cfg.valid_path, "valid")
    vocab_docs = list(train_docs) + list(valid_docs)
    if cfg.test_path:
        vocab_docs += cp.load_jsonl(cfg.test_path)
    vocab = cp.build_vocab(vocab_docs, cfg.min_freq)

    train_examples = encode_corpus(train_docs, vocab, cfg)
    valid_examples = encode_corpus(valid_docs, vocab, cfg)
    model, lines = train_model(cfg, train_examples, valid_examples, len(vocab), log=print)

    out = args.out
    model.save(out, {"run": cfg.to_dict(), "vocab": vocab.id_to_token})
    vocab.save(out + ".vocab.tsv")
    _write_text_atomic(out + ".log", "\n".join(lines) + "\n")
    print(f"saved checkpoint to {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    model, vocab, config = _load_model(args.checkpoint)
    cfg = _config_from_args(args)
    if args.config is None:
        # reuse the training-run settings stored in the checkpoint,
        # still allowing flag overrides
        stored = config.get("run", {})
        overrides = {k: v for k, v in cfg.to_dict().items() if v != getattr(RunConfig(), k)}
        merged = {**stored, **overrides}
        cfg = RunConfig(**{k: v for k, v in merged.items() if k in _RUN_FIELDS})
    docs = _load_corpus_or_fail(args.test_path or cfg.test_path, "test")
    reports = evaluate_protocols(model, vocab, docs, cfg)
    out = args.out
    for protocol, report in reports.items():
        _write_text_atomic(f"{out}.{protocol}.json", report.to_json() + "\n")
        _write_text_atomic(f"{out}.{protocol}.txt", report.to_table() + "\n")
        print(f"== segments: {protocol} ==")
        print(report.to_table())
    return 0


def cmd_ablate_c(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    c_list = [int(x) for x in args.c_list.split(",") if x != ""]
    for c in c_list:
        if c > cfg.n_head:
            raise UsageError(f"c={c} exceeds n_head={cfg.n_head}")
    train_docs = _load_corpus_or_fail(cfg.train_path, "train")
    valid_docs = _load_corpus_or_fail(cfg.valid_path, "valid")
    test_docs = _load_corpus_or_fail(cfg.test_path, "test")
    vocab = cp.build_vocab(train_docs + valid_docs + test_docs, cfg.min_freq)
    train_examples = encode_corpus(train_docs, vocab, cfg)
    valid_examples = encode_corpus(valid_docs, vocab, cfg)

    rows = []
    variants = [(c, True) for c in c_list] + [(cfg.c, False)]
    for c, use_seg_loss in variants:
        run_cfg = dataclasses.replace(cfg, c=c, use_seg_loss=use_seg_loss)
        model, _ = train_model(run_cfg, train_examples, valid_examples, len(vocab))
        val = validate_model(model, valid_examples, cfg.boundary_threshold, use_seg_loss)
        reports = evaluate_protocols(model, vocab, test_docs, run_cfg)
        label = f"c={c}" if use_seg_loss else f"c={c} (w/o seg loss)"
        rows.append(
            {
                "variant": label,
                "c": c,
                "seg_loss": use_seg_loss,
                "val_L_seg": val["l_seg"],
                "val_L_gen": val["l_gen"],
                "val_boundary_f1": val["boundary_f1"],
                "val_token_acc": val["token_acc"],
                "test_rouge1_f1_predicted": reports["predicted"].mean("rouge1_f1"),
                "test_pk_predicted": reports["predicted"].mean("pk"),
            }
        )
        print(
            f"{label:>22} | val_boundary_F1 {val['boundary_f1']:.4f}"
            f" | val_token_acc {val['token_acc']:.4f}"
            f" | test_R1 {rows[-1]['test_rouge1_f1_predicted']:.4f}"
        )

    header = (
        f"{'variant':>22} | {'L_seg':>9} | {'L_gen':>9} | {'bnd_F1':>7}"
        f" | {'tok_acc':>7} | {'R1_pred':>7} | {'Pk_pred':>7}"
    )
    table = [header, "-" * len(header)]
    for r in rows:
        l_seg = f"{r['val_L_seg']:.4f}" if r["val_L_seg"] is not None else "-"
        table.append(
            f"{r['variant']:>22} | {l_seg:>9} | {r['val_L_gen']:>9.4f}"
            f" | {r['val_boundary_f1']:>7.4f} | {r['val_token_acc']:>7.4f}"
            f" | {r['test_rouge1_f1_predicted']:>7.4f} | {r['test_pk_predicted']:>7.4f}"
        )
    _write_text_atomic(args.out + ".json", json.dumps(rows, sort_keys=True, indent=2) + "\n")
    _write_text_atomic(args.out + ".txt", "\n".join(table) + "\n")
    print("\n".join(table))
    return 0


def cmd_segment(args: argparse.Namespace) -> int:
    doc = _load_single_document(args.input)
    if args.baseline is not None:
        if args.baseline == "even":
            n = args.n or default_num_sections(doc.num_paragraphs)
            boundaries = even_segmenter(doc.num_paragraphs, n)
        elif args.baseline == "texttiling":
            params = TilingParams(
                block_size=args.block_size,
                smoothing_width=args.smoothing_width,
                cutoff_std_frac=args.cutoff_std_frac,
            )
            boundaries = texttiling(doc, params)
        else:
            raise UsageError(
                f"unknown baseline {args.baseline!r} (options: even, texttiling)"
            )
    elif args.checkpoint:
        model, vocab, _ = _load_model(args.checkpoint)
        ex = cp.encode_document(
            cp.truncate_document(doc, model.config.max_src_len),
            vocab,
            model.config.max_src_len,
            model.config.max_tgt_len,
        )
        inferred = model.forward_infer_sections(ex.src_ids, ex.xsep_positions, args.threshold)
        boundaries = inferred.boundaries
    else:
        raise UsageError("segment needs --checkpoint or --baseline")
    print(json.dumps({"boundaries": list(boundaries), "num_sections": len(boundaries) + 1}))
    return 0


def cmd_summarize(args: argparse.Namespace) -> int:
    doc = _load_single_document(args.input)
    model, vocab, _ = _load_model(args.checkpoint)
    doc_t = cp.truncate_document(doc, model.config.max_src_len)
    ex = cp.encode_document(doc_t, vocab, model.config.max_src_len, model.config.max_tgt_len)
    if args.gold_segments:
        boundaries = list(doc_t.gold_boundaries)
        sections = ex.src_section_of_token
        n_sections = doc_t.num_sections
    else:
        inferred = model.forward_infer_sections(ex.src_ids, ex.xsep_positions, args.threshold)
        boundaries = inferred.boundaries
        sections = inferred.src_section_of_token
        n_sections = inferred.num_sections
    result = beam_search(
        model,
        ex.src_ids,
        sections,
        n_sections,
        doc_t.first_section_has_summary,
        beam_size=args.beam_size,
        alpha=args.alpha,
    )
    print(
        json.dumps(
            {
                "boundaries": boundaries,
                "headings": [vocab.decode(h) for h in result.headings],
                "degenerate": result.degenerate,
                "k_clamped": result.k_clamped,
            }
        )
    )
    return 0


def cmd_grad_check(args: argparse.Namespace) -> int:
    docs = cp.synth_generate(
        n_docs=1,
        n_topics=4,
        vocab_per_topic=6,
        sections_range=(2, 3),
        paras_per_section_range=(1, 2),
        para_len_range=(3, 5),
        seed=args.seed,
    )
    vocab = cp.build_vocab(docs)
    config = ModelConfig(
        vocab_size=len(vocab),
        n_enc_layers=args.enc_layers,
        n_dec_layers=args.dec_layers,
        d_model=args.d_model,
        n_head=args.n_head,
        c=args.c,
        max_src_len=64,
        max_tgt_len=32,
        label_smoothing=0.1,
        dropout=0.0,
    )
    model = SegSumTransformer(config, seed=args.seed, dtype=np.float64)
    ex = cp.encode_document(docs[0], vocab, 64, 32)
    report = grad_check(
        model.parameters(),
        lambda: model.forward_train(ex).loss,
        h=args.h,
        tolerance=args.tolerance,
        max_coords_per_param=args.max_coords,
        rng=np.random.default_rng(args.seed),
    )
    for line in report.summary_lines():
        print(line)
    if report.fraction_within >= args.min_fraction:
        print(f"PASS: {report.fraction_within:.4f} of coordinates within {args.tolerance:g}")
        return 0
    raise TensorError(
        f"gradient check failed: only {report.fraction_within:.4f} of coordinates"
        f" within {args.tolerance:g} (need {args.min_fraction:g})"
    )


# ---------------------------------------------------------------------------
# Argument parsing / entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segsum", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write synthetic train/valid/test JSONL splits")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-docs", type=int, default=625)
    p.add_argument("--n-topics", type=int, default=50)
    p.add_argument("--vocab-per-topic", type=int, default=10)
    p.add_argument("--sections", type=int, nargs=2, default=[2, 4], metavar=("LO", "HI"))
    p.add_argument("--paras-per-section", type=int, nargs=2, default=[2, 3], metavar=("LO", "HI"))
    p.add_argument("--para-len", type=int, nargs=2, default=[4, 8], metavar=("LO", "HI"))
    p.add_argument("--seed", type=int, default=13)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train a joint model")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint under gold and predicted segments")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="report output prefix")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate-c", help="sweep the segmentation-aware head count")
    _add_config_flags(p)
    p.add_argument("--c-list", required=True, help="comma-separated c values")
    p.add_argument("--out", required=True, help="sweep report output prefix")
    p.set_defaults(func=cmd_ablate_c)

    p = sub.add_parser("segment", help="print predicted boundaries for one document")
    p.add_argument("--input", required=True, help="JSONL file with exactly one document")
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", help="even or texttiling")
    p.add_argument("--n", type=int, help="section count for the even baseline")
    p.add_argument("--block-size", type=int, default=2)
    p.add_argument("--smoothing-width", type=int, default=1)
    p.add_argument("--cutoff-std-frac", type=float, default=0.5)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("summarize", help="print boundaries and headings for one document")
    p.add_argument("--input", required=True, help="JSONL file with exactly one document")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gold-segments", action="store_true")
    p.add_argument("--beam-size", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("grad-check", help="finite-difference check of the joint loss gradients")
    p.add_argument("--d-model", type=int, default=16)
    p.add_argument("--enc-layers", type=int, default=2)
    p.add_argument("--dec-layers", type=int, default=2)
    p.add_argument("--n-head", type=int, default=2)
    p.add_argument("--c", type=int, default=1)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--min-fraction", type=float, default=0.99)
    p.add_argument("--max-coords", type=int, help="sample at most this many coordinates per parameter")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"ERROR:usage: {e}", file=sys.stderr)
        return 1
    except (cp.CorpusError, CheckpointError, MetricsError, BaselineError, ModelError, FileNotFoundError) as e:
        print(f"ERROR:data: {e}", file=sys.stderr)
        return 2
    except (TensorError, DecodingError) as e:
        print(f"ERROR:numeric: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
