"""groov: generative open-vocabulary multi-label tagging at desk scale."""

from .corpus import (
    Corpus,
    CorpusFormatError,
    Instance,
    LabelPartition,
    build_ov_split,
    load_corpus,
    partition_labels,
    write_corpus,
)
from .label_trie import GoldTracker
from .model import (
    CheckpointError,
    Model,
    ModelConfig,
    OptimizerState,
    backward,
    backward_and_update,
    forward_logits,
    forward_with_cache,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    TargetAssembly,
    TrainConfig,
    assemble_target,
    multi_softmax,
    sample_permutation,
    sequence_loss,
    train,
)
from .decoding import (
    Beam,
    Prediction,
    beam_search,
    greedy_decode,
    marginal_scores,
    predict,
    split_labels,
)
from .metrics import (
    EvalReport,
    MatchRule,
    PropensityModel,
    compute_propensities,
    evaluate,
    levenshtein,
    match_sets,
    nlsr_at_k,
    precision_recall_at_k,
    psp_at_k,
    soft_match,
    unseen_projection,
)

__version__ = "0.1.0"
