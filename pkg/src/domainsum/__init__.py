"""Multi-domain extractive summarization lab."""

from .corpus import (
    Corpus,
    CorpusError,
    Document,
    DomainId,
    Sentence,
    Vocabulary,
    build_vocabulary,
    ingest,
    stats,
    tokenize,
    write_corpus,
)
from .estimator import ExtractiveSummarizer
from .evaluation import (
    ClassifierResult,
    EvalMatrix,
    EvalReport,
    PositionHistogram,
    cross_domain_matrix,
    delta_r,
    domain_classifier,
    evaluate_model,
    evaluate_settings,
    gamma_sweep,
    position_histogram,
    select_top_k,
)
from .labeling import LabelVector, ext_oracle_eval, greedy_oracle, lead_k
from .metrics import (
    FragmentStats,
    RougeScore,
    extractive_fragments,
    rouge_l,
    rouge_mean,
    rouge_n,
)
from .strategies import (
    TrainConfig,
    TrainReport,
    joint_step,
    meta_step,
    pretrained_step,
    tag_relabel,
    tag_step,
    train,
)
from .synth import SynthDomainSpec, SynthSpec, make_synthetic_corpus, preset_spec

__version__ = "0.1.0"

__all__ = [
    "ClassifierResult",
    "Corpus",
    "CorpusError",
    "Document",
    "DomainId",
    "EvalMatrix",
    "EvalReport",
    "ExtractiveSummarizer",
    "FragmentStats",
    "LabelVector",
    "PositionHistogram",
    "RougeScore",
    "Sentence",
    "SynthDomainSpec",
    "SynthSpec",
    "TrainConfig",
    "TrainReport",
    "Vocabulary",
    "build_vocabulary",
    "cross_domain_matrix",
    "delta_r",
    "domain_classifier",
    "evaluate_model",
    "evaluate_settings",
    "ext_oracle_eval",
    "extractive_fragments",
    "gamma_sweep",
    "greedy_oracle",
    "ingest",
    "joint_step",
    "lead_k",
    "make_synthetic_corpus",
    "meta_step",
    "position_histogram",
    "preset_spec",
    "pretrained_step",
    "rouge_l",
    "rouge_mean",
    "rouge_n",
    "select_top_k",
    "stats",
    "tag_relabel",
    "tag_step",
    "tokenize",
    "train",
    "write_corpus",
]
