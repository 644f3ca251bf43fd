"""Turning a trained scorer into label sets.

Greedy decoding emits the single most likely token sequence and splits it on
the separator token.  Ranking labels by probability instead requires a
marginal: a beam search collects the most probable whole sequences, and each
label is scored by the summed probability of the beams that contain it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import Instance
from .model import Model, decoder_logits, encode_source
from .tokenizer import BOS, EOS, SEP, TokenSeq, decode, encode_text

GENERATION_ORDER = "generation_order"
MARGINAL = "marginal"


@dataclass(frozen=True)
class Beam:
    """One finished decode: generated tokens and their summed log-probability.

    ``truncated`` marks beams cut off at the length limit and closed with an
    implicit EOS rather than an emitted one.
    """

    tokens: TokenSeq
    log_prob: float
    truncated: bool = False


@dataclass
class Prediction:
    instance_id: str
    ranked: list[tuple[str, float]]
    ranking_mode: str = GENERATION_ORDER
    beams: list[Beam] = field(default_factory=list)

    def labels(self) -> list[str]:
        return [label for label, _ in self.ranked]


def _masked_log_probs(logits: np.ndarray, allowed: np.ndarray | None) -> np.ndarray:
    """Log-softmax of one logit row, renormalized over the allowed ids if given."""
    z = logits.astype(np.float64)
    if allowed is not None:
        masked = np.full_like(z, -np.inf)
        masked[allowed] = z[allowed]
        z = masked
    m = z.max()
    logsumexp = m + np.log(np.exp(z - m).sum())
    return z - logsumexp


def _allowed_array(allowed_tokens: set[int] | None) -> np.ndarray | None:
    if allowed_tokens is None:
        return None
    if not allowed_tokens:
        raise ValueError("allowed_tokens must be non-empty when given")
    return np.asarray(sorted(allowed_tokens), dtype=np.int64)


def greedy_decode(
    model: Model,
    input_ids: TokenSeq,
    max_len: int,
    allowed_tokens: set[int] | None = None,
) -> TokenSeq:
    """Append the argmax token until EOS or ``max_len``; ties go to the lowest id."""
    allowed = _allowed_array(allowed_tokens)
    enc_out = encode_source(model, input_ids)
    prefix: list[int] = [BOS]
    out: list[int] = []
    while len(out) < max_len:
        row = decoder_logits(model, enc_out, tuple(prefix))[-1]
        if allowed is not None:
            token = int(allowed[np.argmax(row[allowed])])
        else:
            token = int(np.argmax(row))
        out.append(token)
        if token == EOS:
            break
        prefix.append(token)
    return tuple(out)


def split_labels(tokens: TokenSeq) -> list[str]:
    """Cut at EOS, split on SEP, decode segments, drop empties, dedup.

    Non-byte tokens other than SEP/EOS (PAD, BOS) have no surface form and
    are skipped; an untrained model can emit them.
    """
    segments: list[list[int]] = [[]]
    for t in tokens:
        if t == EOS:
            break
        if t == SEP:
            segments.append([])
        elif t <= 255:
            segments[-1].append(t)
    labels: list[str] = []
    seen: set[str] = set()
    for seg in segments:
        if not seg:
            continue
        label = decode(tuple(seg))
        if label and label not in seen:
            seen.add(label)
            labels.append(label)
    return labels


def beam_search(
    model: Model,
    input_ids: TokenSeq,
    beam_size: int,
    max_len: int,
    allowed_tokens: set[int] | None = None,
) -> list[Beam]:
    """Length-unnormalized beam search over log-probabilities.

    Beams that emit EOS retire; anything still active at ``max_len`` is
    retired as truncated.  Returns up to ``beam_size`` finished beams sorted
    by log-probability, descending.  With ``beam_size=1`` the surviving beam
    follows exactly the greedy path (same lowest-id tie-break).
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    allowed = _allowed_array(allowed_tokens)
    enc_out = encode_source(model, input_ids)
    active: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[Beam] = []
    for _ in range(max_len):
        if not active:
            break
        candidates: list[tuple[float, int, int]] = []  # (score, beam_idx, token)
        for beam_idx, (toks, score) in enumerate(active):
            row = decoder_logits(model, enc_out, (BOS, *toks))[-1]
            log_probs = _masked_log_probs(row, allowed)
            token_ids = allowed if allowed is not None else range(len(log_probs))
            for token in token_ids:
                lp = log_probs[token]
                if np.isfinite(lp):
                    candidates.append((score + float(lp), beam_idx, int(token)))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        next_active: list[tuple[list[int], float]] = []
        for score, beam_idx, token in candidates[:beam_size]:
            toks = active[beam_idx][0] + [token]
            if token == EOS:
                finished.append(Beam(tokens=tuple(toks), log_prob=score))
            else:
                next_active.append((toks, score))
        active = next_active
    for toks, score in active:
        finished.append(Beam(tokens=tuple(toks), log_prob=score, truncated=True))
    finished.sort(key=lambda b: -b.log_prob)
    return finished[:beam_size]


def marginal_scores(beams: list[Beam], normalize: bool = False) -> list[tuple[str, float]]:
    """Per-label scores: summed probability of the beams containing the label.

    Raw sums by default (not normalized by the returned beams' total mass);
    ``normalize=True`` divides by that mass.  Sorted by score descending with
    lexicographic tie-break.
    """
    scores: dict[str, float] = {}
    total = 0.0
    for beam in beams:
        prob = float(np.exp(beam.log_prob))
        total += prob
        for label in split_labels(beam.tokens):
            scores[label] = scores.get(label, 0.0) + prob
    if normalize and total > 0.0:
        scores = {label: s / total for label, s in scores.items()}
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def predict(
    model: Model,
    instance: Instance,
    beam_size: int = 15,
    ranking_mode: str = GENERATION_ORDER,
    keep_beams: bool = True,
    normalize_marginals: bool = False,
) -> Prediction:
    """Decode one instance into a ranked label list.

    ``generation_order`` ranks labels as the greedy decode emitted them with
    reciprocal-rank placeholder scores; ``marginal`` ranks by beam-marginal
    probability.
    """
    cfg = model.config
    src = encode_text(instance.text, cfg.max_input_len)
    if ranking_mode == GENERATION_ORDER:
        tokens = greedy_decode(model, src, cfg.max_output_len)
        labels = split_labels(tokens)
        ranked = [(label, 1.0 / (i + 1)) for i, label in enumerate(labels)]
        return Prediction(instance_id=instance.id, ranked=ranked, ranking_mode=ranking_mode)
    if ranking_mode == MARGINAL:
        beams = beam_search(model, src, beam_size, cfg.max_output_len)
        ranked = marginal_scores(beams, normalize=normalize_marginals)
        return Prediction(
            instance_id=instance.id,
            ranked=ranked,
            ranking_mode=ranking_mode,
            beams=beams if keep_beams else [],
        )
    raise ValueError(f"unknown ranking mode {ranking_mode!r}")


def render_beam_text(beam: Beam) -> str:
    """Human-auditable rendering: decoded segments joined by ' | '."""
    return " | ".join(split_labels(beam.tokens))


def prediction_to_record(pred: Prediction, include_beams: bool = False) -> dict:
    record: dict = {
        "id": pred.instance_id,
        "ranking_mode": pred.ranking_mode,
        "predicted": [{"label": label, "score": score} for label, score in pred.ranked],
    }
    if include_beams and pred.beams:
        record["beams"] = [
            {"text": render_beam_text(b), "log_prob": b.log_prob} for b in pred.beams
        ]
    return record


def prediction_from_record(record: dict) -> Prediction:
    return Prediction(
        instance_id=record["id"],
        ranked=[(item["label"], float(item["score"])) for item in record["predicted"]],
        ranking_mode=record.get("ranking_mode", GENERATION_ORDER),
    )


def write_predictions(preds: list[Prediction], path, include_beams: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pred in sorted(preds, key=lambda p: p.instance_id):
            fh.write(json.dumps(prediction_to_record(pred, include_beams), ensure_ascii=False) + "\n")


def read_predictions(path) -> list[Prediction]:
    preds = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                preds.append(prediction_from_record(json.loads(line)))
    return preds
