"""Span-tagging triplet extractor with a scikit-learn style surface.

``SpanTagger`` wraps the encoder, the composite-tag supervision and the
prototype bookkeeping behind ``fit`` / ``partial_fit`` / ``predict`` /
``score`` plus ``get_params`` / ``set_params``, so it can slot into generic
tooling and serve as the unit trained on each federated client.
"""

from __future__ import annotations

import inspect
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Sentence, Triplet, TripletMetrics, evaluate_triplets, validate_sentence
from .decoding import decode_triplets
from .encoder import (
    AdamState,
    EncoderConfig,
    EncoderParams,
    LossWeights,
    Tokenizer,
    adam_step,
    batch_gradients,
    forward_sentence,
    load_params,
    save_params,
    sgd_step,
)
from .prototypes import PrototypeSet, build_local_prototypes, momentum_update
from .tagging import TagMatrix, derive_gold_tags

logger = logging.getLogger(__name__)


class NotFittedError(RuntimeError):
    pass


def validate_sentences(sentences: Sequence[Sentence]) -> None:
    """Input check shared by fit/predict entry points."""
    if len(sentences) == 0:
        raise ValueError("need at least one sentence")
    for i, sentence in enumerate(sentences):
        try:
            validate_sentence(sentence)
        except ValueError as exc:
            raise ValueError(f"sentence {i}: {exc}") from exc


def select_proto_spans(
    gold_classes: np.ndarray, rng: np.random.Generator, null_ratio: float
) -> np.ndarray:
    """Spans feeding the prototype term: all labeled spans plus a sample of
    background spans capped at ``null_ratio`` times the labeled count."""
    gold_classes = np.asarray(gold_classes)
    labeled = np.flatnonzero(gold_classes != 0)
    nulls = np.flatnonzero(gold_classes == 0)
    n_null = min(len(nulls), int(round(null_ratio * len(labeled))))
    if n_null > 0:
        sampled = rng.choice(nulls, size=n_null, replace=False)
        return np.sort(np.concatenate([labeled, sampled]))
    return labeled


class SpanTagger:
    """Trainable span tagger + triplet decoder.

    Parameters mirror the experiment configuration: encoder dimensions,
    optimizer settings and the prototype-regularization weights. ``seed``
    drives data order and span sampling; ``params_seed`` drives weight
    initialization (kept separate so federated clients can share their
    starting point while seeing data in different orders).
    """

    def __init__(
        self,
        embed_dim: int = 32,
        hidden_dim: int = 32,
        rep_dim: int = 16,
        vocab_size: int = 2048,
        chunk_size: int = 4,
        hash_seed: int = 0,
        l_max: int = 10,
        optimizer: str = "adam",
        learning_rate: float = 0.01,
        lr_decay_steps: float | None = 600.0,
        batch_size: int = 8,
        proto_weight: float = 25.0,
        align_weight: float = 0.002,
        sep_weight: float = 0.00025,
        prototype_momentum: float = 0.9,
        null_span_ratio: float = 1.0,
        prototype_assignment: str = "predicted",
        seed: int | tuple = 0,
        params_seed: int = 0,
        precision: str = "float32",
    ):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.rep_dim = rep_dim
        self.vocab_size = vocab_size
        self.chunk_size = chunk_size
        self.hash_seed = hash_seed
        self.l_max = l_max
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.lr_decay_steps = lr_decay_steps
        self.batch_size = batch_size
        self.proto_weight = proto_weight
        self.align_weight = align_weight
        self.sep_weight = sep_weight
        self.prototype_momentum = prototype_momentum
        self.null_span_ratio = null_span_ratio
        self.prototype_assignment = prototype_assignment
        self.seed = seed
        self.params_seed = params_seed
        self.precision = precision
        self._reset_state()

    _PARAM_NAMES = tuple(
        name
        for name in inspect.signature(__init__).parameters
        if name != "self"
    )

    # -- scikit-learn protocol -------------------------------------------------

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "SpanTagger":
        for name, value in params.items():
            if name not in self._PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r} for SpanTagger")
            setattr(self, name, value)
        self._reset_state()
        return self

    # -- lifecycle ---------------------------------------------------------------

    def _reset_state(self) -> None:
        self.params_: EncoderParams | None = None
        self.opt_state_: AdamState | None = None
        self.prototypes_: PrototypeSet | None = None
        self.n_steps_ = 0
        self.last_fit_metrics_: dict | None = None
        self._rng = None
        self._tokenizer = None

    @property
    def is_fitted(self) -> bool:
        return self.params_ is not None

    def _encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=self.vocab_size,
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            rep_dim=self.rep_dim,
            chunk_size=self.chunk_size,
            hash_seed=self.hash_seed,
            l_max=self.l_max,
            precision=self.precision,
        )

    def _initialize(self) -> None:
        config = self._encoder_config()
        self.params_ = EncoderParams.initialize(config, self.params_seed)
        self.opt_state_ = AdamState.zeros(self.params_) if self.optimizer == "adam" else None
        self.prototypes_ = PrototypeSet(self.rep_dim)
        self.n_steps_ = 0
        self._rng = np.random.default_rng(self.seed)
        self._tokenizer = Tokenizer(self.vocab_size, self.chunk_size, self.hash_seed)
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def _require_fitted(self) -> None:
        if not self.is_fitted:
            raise NotFittedError("call fit or partial_fit first")

    # -- training ------------------------------------------------------------------

    def fit(
        self,
        sentences: Sequence[Sentence],
        epochs: int = 5,
        global_prototypes: PrototypeSet | None = None,
    ) -> "SpanTagger":
        """Reinitialize and train; see partial_fit for the incremental variant."""
        self._reset_state()
        return self.partial_fit(sentences, epochs=epochs, global_prototypes=global_prototypes)

    def partial_fit(
        self,
        sentences: Sequence[Sentence],
        epochs: int = 1,
        global_prototypes: PrototypeSet | None = None,
    ) -> "SpanTagger":
        """Run training epochs, keeping parameters and prototypes across calls.

        The prototype regularizer is active only when ``global_prototypes``
        is given (from the second federated round onward). Local prototypes
        are rebuilt every batch from the selected spans and smoothed with the
        configured momentum.
        """
        validate_sentences(sentences)
        if not self.is_fitted:
            self._initialize()
        toks = [self._tokenizer.tokenize(s.tokens) for s in sentences]
        golds = [derive_gold_tags(s, self.l_max).classes.astype(np.int64) for s in sentences]
        if global_prototypes is not None and global_prototypes.dim != self.rep_dim:
            raise ValueError(
                f"global prototypes have dim {global_prototypes.dim}, model uses {self.rep_dim}"
            )
        proto_vecs = proto_present = None
        if global_prototypes is not None and len(global_prototypes.vectors):
            proto_vecs, proto_present = global_prototypes.as_arrays()
        weights = LossWeights(self.proto_weight, self.align_weight, self.sep_weight)

        loss_sums = np.zeros(3)
        n_batches = 0
        indices = np.arange(len(sentences))
        for _ in range(epochs):
            order = self._rng.permutation(indices)
            for lo in range(0, len(order), self.batch_size):
                batch_ids = order[lo : lo + self.batch_size]
                breakdown = self._train_batch(
                    [toks[i] for i in batch_ids],
                    [golds[i] for i in batch_ids],
                    proto_vecs,
                    proto_present,
                    weights,
                )
                loss_sums += (breakdown.total, breakdown.tag, breakdown.proto)
                n_batches += 1
        self.last_fit_metrics_ = {
            "train_loss": float(loss_sums[0] / n_batches),
            "tag_loss": float(loss_sums[1] / n_batches),
            "proto_loss": float(loss_sums[2] / n_batches),
            "batches": n_batches,
        }
        return self

    def _train_batch(self, toks, golds, proto_vecs, proto_present, weights):
        selections = [
            select_proto_spans(gold, self._rng, self.null_span_ratio) for gold in golds
        ]
        breakdown, grads, batch_reps = batch_gradients(
            self.params_,
            toks,
            golds,
            selections,
            self.l_max,
            proto_vecs,
            proto_present,
            weights,
        )
        lr = self.learning_rate
        if self.lr_decay_steps:
            lr = lr / (1.0 + self.n_steps_ / self.lr_decay_steps)
        if self.optimizer == "adam":
            self.params_, self.opt_state_ = adam_step(self.params_, grads, self.opt_state_, lr)
        else:
            self.params_ = sgd_step(self.params_, grads, lr)
        self.n_steps_ += 1

        if len(batch_reps.reps):
            classes = (
                batch_reps.pred_classes
                if self.prototype_assignment == "predicted"
                else batch_reps.gold_classes
            )
            batch_protos = build_local_prototypes(batch_reps.reps, classes)
            self.prototypes_ = momentum_update(
                self.prototypes_, batch_protos, self.prototype_momentum
            )
        return breakdown

    # -- inference -------------------------------------------------------------------

    def predict_tags(self, sentences: Sequence[Sentence]) -> list[TagMatrix]:
        self._require_fitted()
        validate_sentences(sentences)
        out = []
        for sentence in sentences:
            tok = self._tokenizer.tokenize(sentence.tokens)
            fp = forward_sentence(self.params_, tok, self.l_max)
            classes = fp.probs.argmax(axis=1).astype(np.int16)
            out.append(TagMatrix(len(sentence.tokens), self.l_max, classes))
        return out

    def predict(self, sentences: Sequence[Sentence]) -> list[list[Triplet]]:
        return [decode_triplets(tags) for tags in self.predict_tags(sentences)]

    def evaluate(self, sentences: Sequence[Sentence]) -> TripletMetrics:
        pred = self.predict(sentences)
        gold = [s.triplets for s in sentences]
        return evaluate_triplets(pred, gold)

    def score(self, sentences: Sequence[Sentence]) -> float:
        """Triplet-level micro F1 on the given sentences."""
        return self.evaluate(sentences).f1

    # -- persistence -------------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        self._require_fitted()
        save_params(path, self.params_, self._encoder_config())

    @classmethod
    def load(cls, path: str | Path) -> "SpanTagger":
        params, config = load_params(path)
        tagger = cls(
            embed_dim=config.embed_dim,
            hidden_dim=config.hidden_dim,
            rep_dim=config.rep_dim,
            vocab_size=config.vocab_size,
            chunk_size=config.chunk_size,
            hash_seed=config.hash_seed,
            l_max=config.l_max,
        )
        tagger._initialize()
        tagger.params_ = params
        return tagger
