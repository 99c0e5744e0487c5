"""Small trainable span encoder with hand-derived analytic gradients.

The network stands in for a pretrained transformer at desk scale:

* words split into fixed-size character chunks, hashed into an embedding table
* a window-3 linear layer contextualizes the chunk sequence
* each word vector is the mean of its contextualized chunk vectors
* span vectors are attention-weighted sums of their word vectors, projected
  to a low-dimensional representation used both for the 16-way span-tag
  softmax and for prototype construction/regularization

Everything is plain numpy. The backward pass is exact and is checked against
central finite differences in the test suite; training runs in float32,
gradient checks in float64.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Span
from .tagging import NUM_CLASSES, span_layout

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """A loss or gradient went non-finite."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = 2048
    embed_dim: int = 32
    hidden_dim: int = 32
    rep_dim: int = 16
    chunk_size: int = 4
    hash_seed: int = 0
    l_max: int = 10
    precision: str = "float32"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.precision)

    def param_count(self) -> int:
        return (
            self.vocab_size * self.embed_dim
            + self.hidden_dim * 3 * self.embed_dim
            + self.hidden_dim
            + self.hidden_dim
            + self.rep_dim * self.hidden_dim
            + self.rep_dim
            + NUM_CLASSES * self.rep_dim
            + NUM_CLASSES
        )


def split_subwords(word: str, chunk_size: int) -> list[str]:
    """Split a word into fixed-size character chunks (last may be shorter)."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    return [word[i : i + chunk_size] for i in range(0, len(word), chunk_size)]


@dataclass(eq=False)
class Tokenization:
    """Hashed chunk ids plus word boundaries for one sentence."""

    n_words: int
    subword_ids: np.ndarray  # (m,) int64
    word_offsets: np.ndarray  # (n_words + 1,) int64, word i owns [off[i], off[i+1])

    @property
    def word_sizes(self) -> np.ndarray:
        return np.diff(self.word_offsets)


class Tokenizer:
    """Deterministic chunking + keyed-hash vocabulary lookup (cached)."""

    def __init__(self, vocab_size: int, chunk_size: int, hash_seed: int = 0):
        self.vocab_size = vocab_size
        self.chunk_size = chunk_size
        self.hash_seed = hash_seed
        self._key = hash_seed.to_bytes(8, "little", signed=False)
        self._cache: dict[str, int] = {}

    def subword_id(self, subword: str) -> int:
        cached = self._cache.get(subword)
        if cached is None:
            digest = hashlib.blake2b(
                subword.encode("utf-8"), digest_size=8, key=self._key
            ).digest()
            cached = int.from_bytes(digest, "little") % self.vocab_size
            self._cache[subword] = cached
        return cached

    def tokenize(self, tokens: Sequence[str]) -> Tokenization:
        if not tokens:
            raise ValueError("cannot tokenize an empty sentence")
        ids: list[int] = []
        offsets = [0]
        for word in tokens:
            if not word:
                raise ValueError("cannot tokenize an empty token")
            for sub in split_subwords(word, self.chunk_size):
                ids.append(self.subword_id(sub))
            offsets.append(len(ids))
        return Tokenization(
            len(tokens),
            np.asarray(ids, dtype=np.int64),
            np.asarray(offsets, dtype=np.int64),
        )


@dataclass(eq=False)
class EncoderParams:
    """All trainable arrays; also the container for gradients."""

    embed: np.ndarray  # (V, embed_dim)
    w_ctx: np.ndarray  # (hidden_dim, 3 * embed_dim)
    b_ctx: np.ndarray  # (hidden_dim,)
    w_attn: np.ndarray  # (hidden_dim,)
    w_proj: np.ndarray  # (rep_dim, hidden_dim)
    b_proj: np.ndarray  # (rep_dim,)
    w_cls: np.ndarray  # (NUM_CLASSES, rep_dim)
    b_cls: np.ndarray  # (NUM_CLASSES,)

    BLOCKS = ("embed", "w_ctx", "b_ctx", "w_attn", "w_proj", "b_proj", "w_cls", "b_cls")

    def blocks(self):
        for name in self.BLOCKS:
            yield name, getattr(self, name)

    @classmethod
    def initialize(cls, config: EncoderConfig, seed: int) -> "EncoderParams":
        rng = np.random.default_rng(seed)
        dt = config.dtype
        d_e, d_h, d_z = config.embed_dim, config.hidden_dim, config.rep_dim
        # Attention starts at zero (uniform pooling): concentrated attention
        # early on makes wide spans collapse onto their argmax word and the
        # softmax corner is hard to leave once entered.
        return cls(
            embed=rng.normal(0.0, 1.0, (config.vocab_size, d_e)).astype(dt),
            w_ctx=rng.normal(0.0, 1.0 / np.sqrt(3 * d_e), (d_h, 3 * d_e)).astype(dt),
            b_ctx=np.zeros(d_h, dtype=dt),
            w_attn=np.zeros(d_h, dtype=dt),
            w_proj=rng.normal(0.0, 1.0 / np.sqrt(d_h), (d_z, d_h)).astype(dt),
            b_proj=np.zeros(d_z, dtype=dt),
            w_cls=rng.normal(0.0, 1.0 / np.sqrt(d_z), (NUM_CLASSES, d_z)).astype(dt),
            b_cls=np.zeros(NUM_CLASSES, dtype=dt),
        )

    @classmethod
    def zeros_like(cls, other: "EncoderParams") -> "EncoderParams":
        return cls(**{name: np.zeros_like(arr) for name, arr in other.blocks()})

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{name: arr.copy() for name, arr in self.blocks()})

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(**{name: arr.astype(dtype) for name, arr in self.blocks()})

    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.blocks())

    def flatten(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for _, arr in self.blocks()])

    def with_flat(self, flat: np.ndarray) -> "EncoderParams":
        out = {}
        pos = 0
        for name, arr in self.blocks():
            out[name] = flat[pos : pos + arr.size].reshape(arr.shape).astype(arr.dtype)
            pos += arr.size
        if pos != flat.size:
            raise ValueError("flat vector size does not match parameter shapes")
        return EncoderParams(**out)

    def check_finite(self, what: str = "parameter") -> None:
        for name, arr in self.blocks():
            if not np.all(np.isfinite(arr)):
                raise TrainingDivergedError(f"non-finite {what} in block {name!r}")


# Gradients reuse the parameter container: identical block names and shapes.
GradientBundle = EncoderParams


def word_representations(params: EncoderParams, tok: Tokenization) -> np.ndarray:
    """(n_words, hidden_dim) contextual word vectors.

    Chunk embeddings pass through the window-3 linear layer (zero padding at
    sentence boundaries); each word vector is the mean over its chunks.
    """
    if tok.n_words < 1:
        raise ValueError("empty sentence")
    d_e = params.embed.shape[1]
    sub = params.embed[tok.subword_ids]  # (m, d_e)
    m = sub.shape[0]
    x = np.zeros((m, 3 * d_e), dtype=sub.dtype)
    x[:, d_e : 2 * d_e] = sub
    x[1:, :d_e] = sub[:-1]
    x[:-1, 2 * d_e :] = sub[1:]
    h_sub = x @ params.w_ctx.T + params.b_ctx
    sums = np.add.reduceat(h_sub, tok.word_offsets[:-1], axis=0)
    return sums / tok.word_sizes[:, None].astype(sub.dtype)


def attention_weights(word_vecs: np.ndarray, span: Span, w_attn: np.ndarray) -> np.ndarray:
    """Softmax over the span's per-word attention scores."""
    scores = word_vecs[span.start : span.end + 1] @ w_attn
    shifted = np.exp(scores - scores.max())
    return shifted / shifted.sum()


def span_representation(word_vecs: np.ndarray, span: Span, params: EncoderParams) -> np.ndarray:
    """(rep_dim,) projected attention-pooled vector for one span."""
    alpha = attention_weights(word_vecs, span, params.w_attn)
    pooled = alpha @ word_vecs[span.start : span.end + 1]
    return params.w_proj @ pooled + params.b_proj


def classify_span(rep: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Probability over the 16 composite tags for one span representation."""
    logits = params.w_cls @ rep + params.b_cls
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def tag_loss(probs: np.ndarray, gold_classes: np.ndarray) -> float:
    """Mean cross-entropy, one probability row per enumerated span."""
    probs = np.asarray(probs)
    gold_classes = np.asarray(gold_classes)
    if probs.ndim != 2 or probs.shape[0] != gold_classes.shape[0]:
        raise ValueError(
            f"need one probability row per span: {probs.shape} vs {gold_classes.shape}"
        )
    picked = probs[np.arange(len(gold_classes)), gold_classes]
    return float(-np.log(picked).mean())


@dataclass(eq=False)
class ForwardPass:
    """Per-sentence activations kept for the backward pass."""

    tok: Tokenization
    x: np.ndarray  # (m, 3*embed_dim) windowed chunk embeddings
    word_vecs: np.ndarray  # (n, hidden_dim)
    pos: np.ndarray  # (S, L) gathered word indices (clipped)
    mask: np.ndarray  # (S, L)
    alpha: np.ndarray  # (S, L) attention, zero outside mask
    gathered: np.ndarray  # (S, L, hidden_dim) masked word vectors
    pooled: np.ndarray  # (S, hidden_dim)
    reps: np.ndarray  # (S, rep_dim)
    probs: np.ndarray  # (S, NUM_CLASSES)
    log_probs: np.ndarray  # (S, NUM_CLASSES)


def forward_sentence(params: EncoderParams, tok: Tokenization, l_max: int) -> ForwardPass:
    n = tok.n_words
    d_e = params.embed.shape[1]
    sub = params.embed[tok.subword_ids]
    m = sub.shape[0]
    x = np.zeros((m, 3 * d_e), dtype=sub.dtype)
    x[:, d_e : 2 * d_e] = sub
    x[1:, :d_e] = sub[:-1]
    x[:-1, 2 * d_e :] = sub[1:]
    h_sub = x @ params.w_ctx.T + params.b_ctx
    word_sizes = tok.word_sizes[:, None].astype(sub.dtype)
    word_vecs = np.add.reduceat(h_sub, tok.word_offsets[:-1], axis=0) / word_sizes

    starts, ends, _ = span_layout(n, l_max)
    width = min(l_max, n)
    pos_raw = starts[:, None] + np.arange(width)
    mask = pos_raw <= ends[:, None]
    pos = np.minimum(pos_raw, n - 1)

    scores = word_vecs @ params.w_attn  # (n,)
    span_scores = np.where(mask, scores[pos], -np.inf)
    span_scores_max = span_scores.max(axis=1, keepdims=True)
    exp_scores = np.exp(span_scores - span_scores_max)
    alpha = exp_scores / exp_scores.sum(axis=1, keepdims=True)

    gathered = word_vecs[pos] * mask[:, :, None]
    pooled = np.einsum("sl,sld->sd", alpha, gathered)
    reps = pooled @ params.w_proj.T + params.b_proj
    logits = reps @ params.w_cls.T + params.b_cls
    logits_max = logits.max(axis=1, keepdims=True)
    log_norm = logits_max + np.log(np.exp(logits - logits_max).sum(axis=1, keepdims=True))
    log_probs = logits - log_norm
    probs = np.exp(log_probs)
    return ForwardPass(tok, x, word_vecs, pos, mask, alpha, gathered, pooled, reps, probs, log_probs)


@dataclass(frozen=True)
class LossWeights:
    """Scaling of the prototype regularizer inside the total training loss."""

    proto_weight: float = 1.0  # multiplies the whole prototype term
    align_weight: float = 0.002  # pull toward the gold-class prototype
    sep_weight: float = 0.00025  # push away from other class prototypes


@dataclass(eq=False)
class LossBreakdown:
    total: float
    tag: float
    proto: float


@dataclass(eq=False)
class BatchReps:
    """Selected-span representations, for prototype construction."""

    reps: np.ndarray  # (N_sel, rep_dim)
    pred_classes: np.ndarray  # (N_sel,)
    gold_classes: np.ndarray  # (N_sel,)


def _unit_rows(matrix: np.ndarray, present: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(matrix, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = matrix / safe[:, None]
    unit[norms == 0] = 0.0
    unit[~present] = 0.0
    return unit, norms


def batch_gradients(
    params: EncoderParams,
    toks: Sequence[Tokenization],
    golds: Sequence[np.ndarray],
    selections: Sequence[np.ndarray],
    l_max: int,
    proto_vecs: np.ndarray | None = None,
    proto_present: np.ndarray | None = None,
    weights: LossWeights = LossWeights(),
) -> tuple[LossBreakdown, GradientBundle, BatchReps]:
    """Loss and exact gradients for one batch of sentences.

    ``golds`` holds one class-index array per sentence (enumerate_spans
    order), ``selections`` the span indices participating in the prototype
    term for that sentence (also harvested for prototype construction).
    The tag loss is the mean over sentences of the per-sentence mean span
    cross-entropy; the prototype term averages over all selected spans of
    the batch and is active only when global prototypes are given.
    """
    if not (len(toks) == len(golds) == len(selections)):
        raise ValueError("toks, golds and selections must be aligned")
    n_sentences = len(toks)
    if n_sentences == 0:
        raise ValueError("empty batch")
    grads = EncoderParams.zeros_like(params)
    d_e = params.embed.shape[1]

    dtype = params.w_proj.dtype
    proto_active = proto_vecs is not None and weights.proto_weight != 0.0
    if proto_active:
        unit_prot, _ = _unit_rows(
            np.asarray(proto_vecs, dtype=dtype), np.asarray(proto_present)
        )

    n_selected = int(sum(len(sel) for sel in selections))
    tag_total = 0.0
    proto_total = 0.0
    sel_reps: list[np.ndarray] = []
    sel_pred: list[np.ndarray] = []
    sel_gold: list[np.ndarray] = []

    for tok, gold, sel in zip(toks, golds, selections):
        fp = forward_sentence(params, tok, l_max)
        n_spans = fp.reps.shape[0]
        gold = np.asarray(gold)
        if gold.shape[0] != n_spans:
            raise ValueError(f"gold classes misaligned: {gold.shape[0]} vs {n_spans} spans")
        sel = np.asarray(sel, dtype=np.int64)

        # Span-tag cross-entropy, normalized per sentence then per batch.
        rows = np.arange(n_spans)
        tag_total += float(-fp.log_probs[rows, gold].mean())
        coeff = 1.0 / (n_spans * n_sentences)
        dlogits = fp.probs.copy()
        dlogits[rows, gold] -= 1.0
        dlogits *= coeff

        dreps_extra = np.zeros_like(fp.reps)
        if len(sel):
            z = fp.reps[sel]
            sel_reps.append(z.copy())
            sel_pred.append(fp.probs[sel].argmax(axis=1))
            sel_gold.append(gold[sel])
            if proto_active and n_selected:
                y = gold[sel]
                z_norm = np.linalg.norm(z, axis=1)
                valid = z_norm > 0
                if not valid.all():
                    logger.debug("%d zero-norm span representations skipped", int((~valid).sum()))
                safe_norm = np.where(valid, z_norm, 1.0)
                zhat = z / safe_norm[:, None]
                zhat[~valid] = 0.0
                cos = zhat @ unit_prot.T  # (k, C); absent/zero prototypes give 0

                # Alignment: -cos(z, prototype of the gold class).
                cos_y = cos[np.arange(len(sel)), y]
                align_vals = np.where(valid, -cos_y, 0.0)
                d_align = (cos_y[:, None] * zhat - unit_prot[y]) / safe_norm[:, None]
                d_align[~valid] = 0.0

                # Separation: log-sum-exp of cosines to the other present classes.
                other = np.asarray(proto_present)[None, :] & (
                    np.arange(unit_prot.shape[0])[None, :] != y[:, None]
                )
                exp_cos = np.where(other, np.exp(cos), 0.0)
                row_sum = exp_cos.sum(axis=1)
                has_other = row_sum > 0
                sep_vals = np.where(valid & has_other, np.log(np.where(has_other, row_sum, 1.0)), 0.0)
                w = exp_cos / np.where(has_other, row_sum, 1.0)[:, None]
                w_dot_cos = (w * cos).sum(axis=1)
                d_sep = (w @ unit_prot - w_dot_cos[:, None] * zhat) / safe_norm[:, None]
                d_sep[~(valid & has_other)] = 0.0

                proto_total += float(
                    weights.align_weight * align_vals.sum() + weights.sep_weight * sep_vals.sum()
                )
                scale = weights.proto_weight / n_selected
                dreps_extra[sel] += scale * (
                    weights.align_weight * d_align + weights.sep_weight * d_sep
                )

        # Classifier block.
        grads.w_cls += dlogits.T @ fp.reps
        grads.b_cls += dlogits.sum(axis=0)
        dreps = dlogits @ params.w_cls + dreps_extra

        # Projection block.
        grads.w_proj += dreps.T @ fp.pooled
        grads.b_proj += dreps.sum(axis=0)
        dpooled = dreps @ params.w_proj

        # Attention pooling: alpha is zero outside the span mask, so masked
        # positions contribute nothing below.
        dalpha = np.einsum("sd,sld->sl", dpooled, fp.gathered)
        inner = (fp.alpha * dalpha).sum(axis=1, keepdims=True)
        dscore = fp.alpha * (dalpha - inner)
        grads.w_attn += np.einsum("sl,sld->d", dscore, fp.gathered)
        dword_terms = (
            fp.alpha[:, :, None] * dpooled[:, None, :]
            + dscore[:, :, None] * params.w_attn[None, None, :]
        ) * fp.mask[:, :, None]
        dword = np.zeros_like(fp.word_vecs)
        np.add.at(dword, fp.pos.ravel(), dword_terms.reshape(-1, dword.shape[1]))

        # Word mean over chunks, then the window-3 context layer.
        sizes = tok.word_sizes
        dh_sub = np.repeat(dword / sizes[:, None].astype(dword.dtype), sizes, axis=0)
        grads.w_ctx += dh_sub.T @ fp.x
        grads.b_ctx += dh_sub.sum(axis=0)
        dx = dh_sub @ params.w_ctx
        d_sub = dx[:, d_e : 2 * d_e].copy()
        d_sub[:-1] += dx[1:, :d_e]
        d_sub[1:] += dx[:-1, 2 * d_e :]
        np.add.at(grads.embed, tok.subword_ids, d_sub)

    tag_mean = tag_total / n_sentences
    proto_mean = proto_total / n_selected if (proto_active and n_selected) else 0.0
    total = tag_mean + weights.proto_weight * proto_mean
    if not np.isfinite(total):
        raise TrainingDivergedError("non-finite training loss")
    grads.check_finite("gradient")

    if sel_reps:
        batch_reps = BatchReps(
            np.concatenate(sel_reps), np.concatenate(sel_pred), np.concatenate(sel_gold)
        )
    else:
        rep_dim = params.w_proj.shape[0]
        batch_reps = BatchReps(
            np.zeros((0, rep_dim), dtype=params.w_proj.dtype),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
        )
    return LossBreakdown(float(total), float(tag_mean), float(proto_mean)), grads, batch_reps


def batch_loss(
    params: EncoderParams,
    toks: Sequence[Tokenization],
    golds: Sequence[np.ndarray],
    selections: Sequence[np.ndarray],
    l_max: int,
    proto_vecs: np.ndarray | None = None,
    proto_present: np.ndarray | None = None,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """Forward-only counterpart of batch_gradients (finite-difference probes)."""
    breakdown, _, _ = batch_gradients(
        params, toks, golds, selections, l_max, proto_vecs, proto_present, weights
    )
    return breakdown


def sgd_step(params: EncoderParams, grads: GradientBundle, lr: float) -> EncoderParams:
    return EncoderParams(
        **{name: arr - lr * getattr(grads, name) for name, arr in params.blocks()}
    )


@dataclass(eq=False)
class AdamState:
    step: int
    m: EncoderParams
    v: EncoderParams

    @classmethod
    def zeros(cls, params: EncoderParams) -> "AdamState":
        return cls(0, EncoderParams.zeros_like(params), EncoderParams.zeros_like(params))


def adam_step(
    params: EncoderParams,
    grads: GradientBundle,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[EncoderParams, AdamState]:
    t = state.step + 1
    new_params = {}
    new_m = {}
    new_v = {}
    bias1 = 1.0 - beta1**t
    bias2 = 1.0 - beta2**t
    for name, arr in params.blocks():
        g = getattr(grads, name)
        m = beta1 * getattr(state.m, name) + (1.0 - beta1) * g
        v = beta2 * getattr(state.v, name) + (1.0 - beta2) * g * g
        step = lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
        new_params[name] = arr - step.astype(arr.dtype)
        new_m[name] = m
        new_v[name] = v
    return EncoderParams(**new_params), AdamState(t, EncoderParams(**new_m), EncoderParams(**new_v))


_CKPT_MAGIC = b"SPTG"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHIHHHHHHI")


def save_params(path: str | Path, params: EncoderParams, config: EncoderConfig) -> None:
    """Checkpoint: fixed header then float32 little-endian blocks in order."""
    header = _CKPT_HEADER.pack(
        _CKPT_MAGIC,
        _CKPT_VERSION,
        config.vocab_size,
        config.embed_dim,
        config.hidden_dim,
        config.rep_dim,
        NUM_CLASSES,
        config.chunk_size,
        config.l_max,
        config.hash_seed,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for _, arr in params.blocks():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_params(path: str | Path) -> tuple[EncoderParams, EncoderConfig]:
    blob = Path(path).read_bytes()
    if len(blob) < _CKPT_HEADER.size:
        raise CheckpointError("checkpoint truncated before header")
    magic, version, vocab, d_e, d_h, d_z, n_cls, chunk, l_max, hash_seed = _CKPT_HEADER.unpack_from(
        blob
    )
    if magic != _CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if n_cls != NUM_CLASSES:
        raise CheckpointError(f"checkpoint has {n_cls} classes, expected {NUM_CLASSES}")
    config = EncoderConfig(
        vocab_size=vocab,
        embed_dim=d_e,
        hidden_dim=d_h,
        rep_dim=d_z,
        chunk_size=chunk,
        hash_seed=hash_seed,
        l_max=l_max,
        precision="float32",
    )
    shapes = [
        (vocab, d_e),
        (d_h, 3 * d_e),
        (d_h,),
        (d_h,),
        (d_z, d_h),
        (d_z,),
        (NUM_CLASSES, d_z),
        (NUM_CLASSES,),
    ]
    offset = _CKPT_HEADER.size
    arrays = []
    for shape in shapes:
        size = int(np.prod(shape)) * 4
        chunk_bytes = blob[offset : offset + size]
        if len(chunk_bytes) != size:
            raise CheckpointError("checkpoint truncated inside parameter blocks")
        arrays.append(np.frombuffer(chunk_bytes, dtype="<f4").reshape(shape).copy())
        offset += size
    if offset != len(blob):
        raise CheckpointError("trailing bytes after parameter blocks")
    params = EncoderParams(*arrays)
    params.check_finite()
    return params, config
