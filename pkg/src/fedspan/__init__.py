"""Federated prototype-sharing span tagger for sentiment triplet extraction."""

from .config import ConfigError, ExperimentConfig
from .corpus import (
    Corpus,
    CorpusFormatError,
    Polarity,
    Sentence,
    Span,
    Triplet,
    TripletMetrics,
    deduplicate,
    evaluate_triplets,
    parse_corpus,
    read_corpus_dir,
    serialize_corpus,
    serialize_sentence,
    write_corpus_dir,
)
from .decoding import brute_force_decode, decode_triplets
from .federation import (
    ClientState,
    Server,
    aggregate_global,
    aggregation_weights,
    client_round,
    comm_ledger,
    prototype_similarity,
    run_baselines,
    run_federated,
)
from .model import SpanTagger
from .prototypes import (
    PayloadError,
    PrototypePayload,
    PrototypeSet,
    align_loss,
    build_local_prototypes,
    decode_payload,
    encode_payload,
    make_payload,
    momentum_update,
    proto_loss,
    sep_loss,
)
from .synth import SynthConfig, default_synth_config, generate_synthetic
from .tagging import TagMatrix, derive_gold_tags, enumerate_spans, tag_components, tag_index

__version__ = "0.1.0"

__all__ = [
    "ClientState",
    "ConfigError",
    "Corpus",
    "CorpusFormatError",
    "ExperimentConfig",
    "PayloadError",
    "Polarity",
    "PrototypePayload",
    "PrototypeSet",
    "Sentence",
    "Server",
    "Span",
    "SpanTagger",
    "SynthConfig",
    "TagMatrix",
    "Triplet",
    "TripletMetrics",
    "aggregate_global",
    "aggregation_weights",
    "align_loss",
    "brute_force_decode",
    "build_local_prototypes",
    "client_round",
    "comm_ledger",
    "decode_payload",
    "decode_triplets",
    "deduplicate",
    "default_synth_config",
    "derive_gold_tags",
    "encode_payload",
    "enumerate_spans",
    "evaluate_triplets",
    "generate_synthetic",
    "make_payload",
    "momentum_update",
    "parse_corpus",
    "proto_loss",
    "prototype_similarity",
    "read_corpus_dir",
    "run_baselines",
    "run_federated",
    "sep_loss",
    "serialize_corpus",
    "serialize_sentence",
    "tag_components",
    "tag_index",
    "write_corpus_dir",
]
