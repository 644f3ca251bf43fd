"""Target assembly, the two sequence losses, and the training loop.

A training target flattens one sampled ordering of the gold label set into
``tok(l1) SEP tok(l2) ... SEP tok(ln) EOS``.  The cross-entropy loss scores
exactly that sequence; the multi-softmax loss widens the numerator at every
position to all tokens that could continue *some* yet-unproduced gold label,
so the model is not penalized for preferring a different valid ordering.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .corpus import Corpus
from .label_trie import GoldTracker
from .model import Model, OptimizerState
from .tokenizer import BOS, EOS, SEP, VOCAB_SIZE, TokenSeq, encode_label, encode_text

LOSS_CE = "ce"
LOSS_MSM = "msm"


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = LOSS_MSM
    batch_size: int = 32
    epochs: int = 1
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    seed: int = 0
    max_input_len: int = 512
    max_output_len: int = 128
    log_every: int = 0  # epochs between progress prints; 0 = silent

    def __post_init__(self) -> None:
        if self.loss_kind not in (LOSS_CE, LOSS_MSM):
            raise ValueError(f"loss_kind must be {LOSS_CE!r} or {LOSS_MSM!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class TargetAssembly:
    """The flattened target and the per-position admissible token sets.

    ``tokens`` ends with EOS and contains ``len(labels) - 1`` SEP tokens.
    ``admissible_sets[t]`` always contains ``tokens[t]``.
    """

    tokens: TokenSeq
    admissible_sets: list[frozenset[int]] = field(default_factory=list)


def sample_permutation(labels: set[str] | frozenset[str], rng: random.Random) -> list[str]:
    """Uniformly random ordering of the label set, deterministic under rng state."""
    if not labels:
        raise ValueError("cannot permute an empty label set")
    ordered = sorted(labels)
    rng.shuffle(ordered)
    return ordered


def assemble_target(ordered_labels: list[str]) -> TargetAssembly:
    """Flatten an ordered label list into the SEP-joined, EOS-terminated target."""
    if not ordered_labels:
        raise ValueError("ordered label list must be non-empty")
    encoded = [encode_label(label) for label in ordered_labels]
    tokens: list[int] = []
    for i, seq in enumerate(encoded):
        tokens.extend(seq)
        tokens.append(SEP if i < len(encoded) - 1 else EOS)
    tracker = GoldTracker(frozenset(encoded))
    sets: list[frozenset[int]] = []
    for token in tokens:
        sets.append(tracker.admissible_tokens())
        tracker.advance(token)
    return TargetAssembly(tokens=tuple(tokens), admissible_sets=sets)


def multi_softmax(z: np.ndarray, numerator: frozenset[int] | set[int]) -> float:
    """sum_{i in G} e^{z_i} / sum_i e^{z_i}, max-subtracted for stability."""
    if not numerator:
        raise ValueError("numerator index set must be non-empty")
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return float(e[sorted(numerator)].sum() / e.sum())


def sequence_loss(
    logits: np.ndarray, assembly: TargetAssembly, loss_kind: str
) -> tuple[float, np.ndarray]:
    """Summed negative log-likelihood over target positions, plus its logit gradient.

    Cross-entropy uses the single target token at each position; multi-softmax
    sums the numerator over the position's admissible set.  The gradient row is
    ``softmax(z) - target_distribution`` where the target distribution is the
    one-hot token (CE) or the softmax restricted to the admissible set (MSM).
    """
    logits = np.asarray(logits, dtype=np.float64)
    n = len(assembly.tokens)
    if logits.shape != (n, VOCAB_SIZE):
        raise ValueError(f"logits shape {logits.shape} does not match target length {n}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1)
    probs = exp / denom[:, None]
    grad = probs.copy()
    rows = np.arange(n)
    targets = np.asarray(assembly.tokens, dtype=np.int64)
    if loss_kind == LOSS_CE:
        loss = float((np.log(denom) - shifted[rows, targets]).sum())
        grad[rows, targets] -= 1.0
    elif loss_kind == LOSS_MSM:
        if len(assembly.admissible_sets) != n:
            raise ValueError("assembly is missing admissible sets for the MSM loss")
        loss = 0.0
        for t, allowed in enumerate(assembly.admissible_sets):
            idx = sorted(allowed)
            e_allowed = exp[t, idx]
            num = e_allowed.sum()
            loss += float(np.log(denom[t]) - np.log(num))
            grad[t, idx] -= e_allowed / num
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    return loss, grad


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    wall_seconds: float
    examples_seen: int
    skipped_empty: int = 0

    def to_json(self) -> str:
        # The serialized schema is fixed: {epoch, mean_loss, wall_seconds,
        # examples_seen}.  The skip counter stays in-memory only.
        return json.dumps(
            {
                "epoch": self.epoch,
                "mean_loss": self.mean_loss,
                "wall_seconds": self.wall_seconds,
                "examples_seen": self.examples_seen,
            }
        )


def train(
    train_corpus: Corpus,
    model: Model,
    opt: OptimizerState,
    config: TrainConfig,
    rng: random.Random,
) -> tuple[Model, list[EpochLog]]:
    """Run the training loop; returns the trained model and per-epoch logs.

    Each example sees a freshly sampled label permutation every epoch (a
    single-sample estimate of the expectation over orderings).  Gradients
    are accumulated over ``batch_size`` examples and normalized by the
    total token count before each optimizer step, so the loss scale does
    not depend on target lengths.  Instances with empty label sets are
    skipped and counted.
    """
    if len(train_corpus) == 0:
        raise ValueError("training corpus is empty")
    logs: list[EpochLog] = []
    for epoch in range(1, config.epochs + 1):
        start = time.monotonic()
        order = list(range(len(train_corpus)))
        rng.shuffle(order)
        epoch_loss = 0.0
        epoch_tokens = 0
        examples = 0
        skipped_empty = 0
        batch_grads: dict[str, np.ndarray] | None = None
        batch_tokens = 0
        for pos in order:
            inst = train_corpus.instances[pos]
            if not inst.labels:
                skipped_empty += 1
                continue
            ordered = sample_permutation(inst.labels, rng)
            assembly = assemble_target(ordered)
            src = encode_text(inst.text, config.max_input_len)
            prefix = (BOS,) + assembly.tokens[:-1]
            logits, cache = model_mod.forward_with_cache(model, src, prefix, dtype=np.float32)
            loss, dlogits = sequence_loss(logits, assembly, config.loss_kind)
            if not np.isfinite(loss):
                raise ValueError(f"non-finite loss on instance {inst.id!r} (epoch {epoch})")
            batch_grads = model_mod.backward(model, cache, dlogits, batch_grads)
            batch_tokens += len(assembly.tokens)
            epoch_loss += loss
            epoch_tokens += len(assembly.tokens)
            examples += 1
            if examples % config.batch_size == 0:
                for g in batch_grads.values():
                    g /= batch_tokens
                model_mod.apply_update(model, opt, batch_grads)
                batch_grads = None
                batch_tokens = 0
        if batch_grads is not None and batch_tokens > 0:
            for g in batch_grads.values():
                g /= batch_tokens
            model_mod.apply_update(model, opt, batch_grads)
        log = EpochLog(
            epoch=epoch,
            mean_loss=epoch_loss / max(epoch_tokens, 1),
            wall_seconds=time.monotonic() - start,
            examples_seen=examples,
            skipped_empty=skipped_empty,
        )
        logs.append(log)
        if config.log_every and epoch % config.log_every == 0:
            print(log.to_json())
    return model, logs
