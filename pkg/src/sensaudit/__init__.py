"""Token-level sensitivity auditing for text classifiers."""

from .corpus import Corpus, Note, SyntheticSpec, build_corpus, generate_synthetic, subset_containing, tokenize
from .classifiers import (
    Classifier,
    ConstantClassifier,
    LinearModel,
    TrainingConfig,
    constant_classifier,
    tfidf_embed,
    train_linear,
)
from .metrics import auprc, auroc, calibrate_threshold
from .perturbation import (
    FilterSet,
    PerturbationFilter,
    SwapScheme,
    build_context_filters,
    build_onegram_filters,
    build_uniform_filters,
    perturb,
)
from .sensitivity import FilterSpec, SensitivityReport, audit, delta, note_sensitivity, overall_sensitivity
from .stats import Ranking, combine_raters, pearson, rank_tokens, spearman

__version__ = "0.1.0"
