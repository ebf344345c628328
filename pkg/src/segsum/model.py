"""Joint encoder-decoder transformer for segmentation and heading generation.

The encoder runs full self-attention; a logistic head over the paragraph
separator outputs classifies section breaks. The decoder splits its
cross-attention heads: the first ``c`` heads are masked so a target
position attends only to source tokens of its own section, the remaining
heads keep full attention. The training loss is the sum of the boundary
classification loss and the label-smoothed generation loss.

Training mutates parameters on one thread; a trained model is immutable
and safe for concurrent inference (per-call state is local).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import EncodedExample, PAD_ID, sections_from_boundaries
from .numerics import checkpoint as ckpt
from .numerics.tensor import (
    Parameter,
    Tensor,
    bce_with_logits,
    cross_entropy_label_smoothed,
    dropout,
    gather_rows,
    gelu,
    layer_norm,
    linear,
    matmul,
    merge_heads,
    no_grad,
    reshape,
    scale,
    softmax_masked,
    split_heads,
    transpose,
    _sigmoid_np,
)


class ModelError(ValueError):
    """Invalid configuration or input to the model."""


@dataclass
class ModelConfig:
    vocab_size: int
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

    def __post_init__(self):
        if self.d_model % self.n_head != 0:
            raise ModelError(f"d_model={self.d_model} not divisible by n_head={self.n_head}")
        if not 0 <= self.c <= self.n_head:
            raise ModelError(f"c={self.c} outside [0, n_head={self.n_head}]")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ModelError(f"label_smoothing={self.label_smoothing} outside [0, 1)")
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_head

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "n_enc_layers": self.n_enc_layers,
            "n_dec_layers": self.n_dec_layers,
            "d_model": self.d_model,
            "n_head": self.n_head,
            "c": self.c,
            "d_ff": self.d_ff,
            "max_src_len": self.max_src_len,
            "max_tgt_len": self.max_tgt_len,
            "label_smoothing": self.label_smoothing,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def build_seg_mask(src_sections, tgt_sections) -> np.ndarray:
    """Binary (target x source) same-section mask.

    Target section ids above the last source section are clamped down to
    it; a row whose section has no source tokens becomes all-ones so the
    masked softmax stays well defined.
    """
    src = np.asarray(src_sections, dtype=np.int64)
    tgt = np.asarray(tgt_sections, dtype=np.int64)
    if src.size == 0:
        return np.ones((tgt.size, 0), dtype=bool)
    tgt_eff = np.clip(tgt, 1, int(src.max()))
    mask = tgt_eff[:, None] == src[None, :]
    empty = ~mask.any(axis=1)
    if empty.any():
        mask[empty] = True
    return mask


@dataclass
class ModelOutput:
    boundary_probs: np.ndarray
    token_logits: np.ndarray
    l_seg: Tensor | None
    l_gen: Tensor
    loss: Tensor


@dataclass
class InferredSegmentation:
    boundaries: list[int]
    num_sections: int
    src_section_of_token: np.ndarray
    boundary_probs: np.ndarray


class _Attention:
    """One multi-head attention block's parameters."""

    def __init__(self, model: "SegSumTransformer", prefix: str):
        d = model.config.d_model
        self.wq = model._param(f"{prefix}.wq", model._xavier(d, d))
        self.bq = model._param(f"{prefix}.bq", np.zeros(d))
        self.wk = model._param(f"{prefix}.wk", model._xavier(d, d))
        self.bk = model._param(f"{prefix}.bk", np.zeros(d))
        self.wv = model._param(f"{prefix}.wv", model._xavier(d, d))
        self.bv = model._param(f"{prefix}.bv", np.zeros(d))
        self.wo = model._param(f"{prefix}.wo", model._xavier(d, d))
        self.bo = model._param(f"{prefix}.bo", np.zeros(d))


class _LayerNorm:
    def __init__(self, model: "SegSumTransformer", prefix: str):
        d = model.config.d_model
        self.g = model._param(f"{prefix}.g", np.ones(d))
        self.b = model._param(f"{prefix}.b", np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.g, self.b)


class _FeedForward:
    def __init__(self, model: "SegSumTransformer", prefix: str):
        d, dff = model.config.d_model, model.config.d_ff
        self.w1 = model._param(f"{prefix}.w1", model._xavier(d, dff))
        self.b1 = model._param(f"{prefix}.b1", np.zeros(dff))
        self.w2 = model._param(f"{prefix}.w2", model._xavier(dff, d))
        self.b2 = model._param(f"{prefix}.b2", np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(gelu(linear(x, self.w1, self.b1)), self.w2, self.b2)


class SegSumTransformer:
    """The joint segmenter/summarizer.

    ``dtype`` is float32 for training and float64 for gradient checking.
    The decoder output projection is tied to the token embedding table.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self._init_rng = np.random.default_rng(seed)
        self._dropout_rng = np.random.default_rng(seed + 0x9E3779B9)
        self._params: dict[str, Parameter] = {}

        d = config.d_model
        self.tok_emb = self._param("tok_emb", self._init_rng.normal(0.0, 0.02, (config.vocab_size, d)))
        self.pos_src = self._param("pos_src", self._init_rng.normal(0.0, 0.02, (config.max_src_len, d)))
        self.pos_tgt = self._param("pos_tgt", self._init_rng.normal(0.0, 0.02, (config.max_tgt_len, d)))

        self.enc_layers = []
        for i in range(config.n_enc_layers):
            self.enc_layers.append(
                {
                    "ln1": _LayerNorm(self, f"enc{i}.ln1"),
                    "attn": _Attention(self, f"enc{i}.attn"),
                    "ln2": _LayerNorm(self, f"enc{i}.ln2"),
                    "ffn": _FeedForward(self, f"enc{i}.ffn"),
                }
            )
        self.enc_final_ln = _LayerNorm(self, "enc_final_ln")

        self.dec_layers = []
        for i in range(config.n_dec_layers):
            self.dec_layers.append(
                {
                    "ln1": _LayerNorm(self, f"dec{i}.ln1"),
                    "self": _Attention(self, f"dec{i}.self"),
                    "ln2": _LayerNorm(self, f"dec{i}.ln2"),
                    "cross": _Attention(self, f"dec{i}.cross"),
                    "ln3": _LayerNorm(self, f"dec{i}.ln3"),
                    "ffn": _FeedForward(self, f"dec{i}.ffn"),
                }
            )
        self.dec_final_ln = _LayerNorm(self, "dec_final_ln")

        self.boundary_w = self._param("boundary.w", self._xavier(d, 1))
        self.boundary_b = self._param("boundary.b", np.zeros(1))

    # -- parameter plumbing -------------------------------------------------

    def _xavier(self, fan_in: int, fan_out: int) -> np.ndarray:
        std = math.sqrt(2.0 / (fan_in + fan_out))
        return self._init_rng.normal(0.0, std, (fan_in, fan_out))

    def _param(self, name: str, data: np.ndarray) -> Parameter:
        if name in self._params:
            raise ModelError(f"duplicate parameter name {name!r}")
        p = Parameter(name, np.asarray(data, dtype=self.dtype))
        self._params[name] = p
        return p

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    # -- building blocks -------------------------------------------------------

    def _dropout(self, x: Tensor, train: bool) -> Tensor:
        if not train or self.config.dropout <= 0.0:
            return x
        return dropout(x, self.config.dropout, self._dropout_rng)

    def _attend(
        self,
        block: _Attention,
        q_in: Tensor,
        kv_in: Tensor,
        mask: np.ndarray | None,
        train: bool,
        attn_sink: list | None = None,
    ) -> Tensor:
        cfg = self.config
        h, dh = cfg.n_head, cfg.d_head
        q = split_heads(linear(q_in, block.wq, block.bq), h)
        k = split_heads(linear(kv_in, block.wk, block.bk), h)
        v = split_heads(linear(kv_in, block.wv, block.bv), h)
        logits = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
        probs = softmax_masked(logits, mask)
        if attn_sink is not None:
            attn_sink.append({"probs": probs.data, "mask": mask})
        probs = self._dropout(probs, train)
        ctx = merge_heads(matmul(probs, v))
        return linear(ctx, block.wo, block.bo)

    def _embed(self, ids: np.ndarray, pos_table: Parameter, train: bool) -> Tensor:
        n = len(ids)
        tok = gather_rows(self.tok_emb, ids)
        pos = gather_rows(pos_table, np.arange(n))
        return self._dropout(tok + pos, train)

    @staticmethod
    def _pad_to_mask(pad_mask: np.ndarray | None, lk: int) -> np.ndarray | None:
        """Lift a (Lk,) keep-mask to a broadcastable attention mask."""
        if pad_mask is None:
            return None
        pad_mask = np.asarray(pad_mask)
        if pad_mask.shape != (lk,):
            raise ModelError(f"pad mask shape {pad_mask.shape} does not match length {lk}")
        return pad_mask.astype(bool)[None, None, :]

    # -- encoder ------------------------------------------------------------------

    def encode(self, src_ids, src_pad_mask=None, train: bool = False) -> Tensor:
        src_ids = np.asarray(src_ids, dtype=np.int64)
        if len(src_ids) > self.config.max_src_len:
            raise ModelError(
                f"source length {len(src_ids)} exceeds max_src_len={self.config.max_src_len}"
            )
        mask = self._pad_to_mask(src_pad_mask, len(src_ids))
        x = self._embed(src_ids, self.pos_src, train)
        for layer in self.enc_layers:
            normed = layer["ln1"](x)
            x = x + self._dropout(self._attend(layer["attn"], normed, normed, mask, train), train)
            x = x + self._dropout(layer["ffn"](layer["ln2"](x)), train)
        return self.enc_final_ln(x)

    # -- boundary head -----------------------------------------------------------

    def boundary_logits(self, enc_out: Tensor, xsep_positions) -> Tensor:
        xsep_positions = np.asarray(xsep_positions, dtype=np.int64)
        u = gather_rows(enc_out, xsep_positions)
        return reshape(linear(u, self.boundary_w, self.boundary_b), (len(xsep_positions),))

    def predict_boundaries(
        self, enc_out: Tensor, xsep_positions, threshold: float = 0.5
    ) -> tuple[np.ndarray, list[int]]:
        """Boundary probabilities and the paragraph indices that exceed
        the threshold. [X_SEP] j follows paragraph j+1."""
        xsep_positions = np.asarray(xsep_positions, dtype=np.int64)
        if len(xsep_positions) == 0:
            return np.zeros(0, dtype=self.dtype), []
        logits = self.boundary_logits(enc_out, xsep_positions)
        probs = _sigmoid_np(logits.data)
        boundaries = [j + 1 for j, p in enumerate(probs) if p > threshold]
        return probs, boundaries

    # -- decoder --------------------------------------------------------------------

    def _cross_mask(
        self,
        seg_mask: np.ndarray | None,
        src_pad_mask: np.ndarray | None,
        lq: int,
        lk: int,
    ) -> np.ndarray | None:
        """Compose the per-head cross-attention mask.

        Heads below ``c`` see the same-section mask (intersected with the
        pad mask); the remaining heads see only the pad mask.
        """
        cfg = self.config
        pad = None if src_pad_mask is None else np.asarray(src_pad_mask, dtype=bool)
        if seg_mask is None or cfg.c == 0:
            return None if pad is None else pad[None, None, :]
        if seg_mask.shape != (lq, lk):
            raise ModelError(f"seg mask shape {seg_mask.shape} does not match ({lq}, {lk})")
        seg = seg_mask.astype(bool)
        if pad is not None:
            seg = seg & pad[None, :]
        full = np.empty((cfg.n_head, lq, lk), dtype=bool)
        full[: cfg.c] = seg[None, :, :]
        full[cfg.c :] = True if pad is None else pad[None, None, :]
        return full

    def decoder_forward(
        self,
        enc_out: Tensor,
        tgt_in_ids,
        seg_mask: np.ndarray | None = None,
        src_pad_mask=None,
        train: bool = False,
        attn_sink: list | None = None,
    ) -> Tensor:
        """Token logits for each decoder input position (causal self-attention)."""
        tgt_in_ids = np.asarray(tgt_in_ids, dtype=np.int64)
        lt = len(tgt_in_ids)
        if lt > self.config.max_tgt_len:
            raise ModelError(
                f"target length {lt} exceeds max_tgt_len={self.config.max_tgt_len}"
            )
        ls = enc_out.shape[0]
        causal = np.tril(np.ones((lt, lt), dtype=bool))[None, :, :]
        cross = self._cross_mask(seg_mask, src_pad_mask, lt, ls)

        x = self._embed(tgt_in_ids, self.pos_tgt, train)
        for layer in self.dec_layers:
            normed = layer["ln1"](x)
            x = x + self._dropout(self._attend(layer["self"], normed, normed, causal, train), train)
            x = x + self._dropout(
                self._attend(layer["cross"], layer["ln2"](x), enc_out, cross, train, attn_sink),
                train,
            )
            x = x + self._dropout(layer["ffn"](layer["ln3"](x)), train)
        h = self.dec_final_ln(x)
        return matmul(h, transpose(self.tok_emb))

    # -- joint training forward ---------------------------------------------------

    def forward_train(
        self,
        example: EncodedExample,
        use_seg_loss: bool = True,
        train: bool = False,
        vanilla: bool = False,
        attn_sink: list | None = None,
    ) -> ModelOutput:
        """Teacher-forced forward pass producing the joint loss.

        ``vanilla`` disables the same-section masking entirely (reference
        path for the c=0 equivalence check).
        """
        enc_out = self.encode(example.src_ids, train=train)

        if len(example.xsep_positions) > 0:
            logits_b = self.boundary_logits(enc_out, example.xsep_positions)
            probs = _sigmoid_np(logits_b.data)
            l_seg = bce_with_logits(logits_b, example.boundary_labels.astype(self.dtype))
        else:
            probs = np.zeros(0, dtype=self.dtype)
            l_seg = Tensor(np.asarray(0.0, dtype=self.dtype))

        dec_in = example.tgt_ids[:-1]
        seg_mask = None
        if not vanilla:
            seg_mask = build_seg_mask(
                example.src_section_of_token, example.tgt_section_of_token[:-1]
            )
        token_logits = self.decoder_forward(
            enc_out, dec_in, seg_mask=seg_mask, train=train, attn_sink=attn_sink
        )
        l_gen = cross_entropy_label_smoothed(
            token_logits, example.tgt_ids[1:], self.config.label_smoothing, ignore_id=PAD_ID
        )
        if use_seg_loss:
            loss = l_seg + l_gen
            out_l_seg = l_seg
        else:
            loss = l_gen
            out_l_seg = None
        return ModelOutput(
            boundary_probs=probs,
            token_logits=token_logits.data,
            l_seg=out_l_seg,
            l_gen=l_gen,
            loss=loss,
        )

    # -- inference -----------------------------------------------------------------

    def forward_infer_sections(
        self, src_ids, xsep_positions, threshold: float = 0.5
    ) -> InferredSegmentation:
        """Predict boundaries, then derive the per-token section map."""
        src_ids = np.asarray(src_ids, dtype=np.int64)
        xsep_positions = np.asarray(xsep_positions, dtype=np.int64)
        with no_grad():
            enc_out = self.encode(src_ids)
            probs, boundaries = self.predict_boundaries(enc_out, xsep_positions, threshold)
        num_paragraphs = len(xsep_positions) + 1
        para_sections = sections_from_boundaries(num_paragraphs, boundaries)
        # paragraph index per source position; separators close the
        # preceding paragraph
        para_of_token = np.searchsorted(xsep_positions, np.arange(len(src_ids)), side="left")
        section_of_token = np.asarray(para_sections, dtype=np.int64)[para_of_token]
        return InferredSegmentation(
            boundaries=boundaries,
            num_sections=len(boundaries) + 1,
            src_section_of_token=section_of_token,
            boundary_probs=probs,
        )

    # -- persistence ------------------------------------------------------------------

    def save(self, path: str, extra_config: dict | None = None) -> None:
        config = {"model": self.config.to_dict()}
        if extra_config:
            config.update(extra_config)
        ckpt.save_checkpoint(path, config, [(p.name, p.data) for p in self.parameters()])

    @classmethod
    def load(cls, path: str) -> tuple["SegSumTransformer", dict]:
        config, tensors = ckpt.load_checkpoint(path)
        if "model" not in config:
            raise ckpt.CheckpointError(f"checkpoint {path!r} carries no model config")
        model_cfg = ModelConfig.from_dict(config["model"])
        dtype = next(iter(tensors.values())).dtype if tensors else np.float32
        model = cls(model_cfg, seed=0, dtype=dtype)
        own = {p.name for p in model.parameters()}
        if own != set(tensors):
            missing = own - set(tensors)
            extra = set(tensors) - own
            raise ckpt.CheckpointError(
                f"checkpoint/config mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for p in model.parameters():
            stored = tensors[p.name]
            if stored.shape != p.data.shape:
                raise ckpt.CheckpointError(
                    f"tensor {p.name!r}: shape {stored.shape} != expected {p.data.shape}"
                )
            p.data = stored.astype(model.dtype)
            p.adam_m = np.zeros_like(p.data)
            p.adam_v = np.zeros_like(p.data)
        return model, config
