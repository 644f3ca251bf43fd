"""Evaluation: ranked precision/recall, propensity-scored precision, unseen-label
metrics, pooled novel-label recall, and soft (lexical/semantic) matching.

Matching between a ranked prediction list and a gold set is one-to-one and
greedy in rank order: each prediction consumes the closest not-yet-consumed
gold label that satisfies the active rule.  Exact matches (edit distance 0)
always win the closeness comparison, which is what makes the soft rules
provably dominate the exact rule at every cutoff.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

EXACT = "exact"
LEXICAL = "lexical"
SEMANTIC = "semantic"


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over Unicode scalar values."""
    if a == b:
        return 0
    # Shared affixes never change the distance; stripping them shrinks the DP.
    lo = 0
    hi_a, hi_b = len(a), len(b)
    while lo < hi_a and lo < hi_b and a[lo] == b[lo]:
        lo += 1
    while hi_a > lo and hi_b > lo and a[hi_a - 1] == b[hi_b - 1]:
        hi_a -= 1
        hi_b -= 1
    a, b = a[lo:hi_a], b[lo:hi_b]
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(b) < len(a):
        a, b = b, a
    prev = list(range(len(a) + 1))
    for j, cb in enumerate(b, start=1):
        cur = [j] + [0] * len(a)
        for i, ca in enumerate(a, start=1):
            cur[i] = min(prev[i] + 1, cur[i - 1] + 1, prev[i - 1] + (ca != cb))
        prev = cur
    return prev[-1]


class Embeddings:
    """Label -> vector lookup with cosine similarity and a miss counter."""

    def __init__(self, vectors: dict[str, np.ndarray]):
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        self.misses = 0

    def similarity(self, a: str, b: str) -> float | None:
        va = self.vectors.get(a)
        vb = self.vectors.get(b)
        if va is None or vb is None:
            self.misses += 1
            return None
        denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
        if denom == 0.0:
            return 0.0
        return float(va @ vb / denom)


def load_embeddings(path) -> Embeddings:
    """JSONL {label, vector}; all vectors must have the same length."""
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            vec = np.asarray(record["vector"], dtype=np.float64)
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ValueError(f"{path}: line {lineno}: vector length {vec.size} != {dim}")
            vectors[record["label"]] = vec
    return Embeddings(vectors)


@dataclass(frozen=True)
class MatchRule:
    """How a predicted label may match a gold label.

    exact: string equality.  lexical: edit distance below len(pred)/df + 1.
    semantic: embedding cosine similarity at or above the threshold (identical
    strings always match; labels without embeddings never match and count as
    misses on the provider).
    """

    kind: str
    df: float = 10.0
    threshold: float = 0.94
    embeddings: Embeddings | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in (EXACT, LEXICAL, SEMANTIC):
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.df <= 0:
            raise ValueError("df must be positive")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must be in (0, 1]")
        if self.kind == SEMANTIC and self.embeddings is None:
            raise ValueError("semantic rule requires an embeddings provider")


def exact_rule() -> MatchRule:
    return MatchRule(kind=EXACT)


def lexical_rule(df: float = 10.0) -> MatchRule:
    return MatchRule(kind=LEXICAL, df=df)


def semantic_rule(embeddings: Embeddings, threshold: float = 0.94) -> MatchRule:
    return MatchRule(kind=SEMANTIC, threshold=threshold, embeddings=embeddings)


def soft_match(pred: str, gold: str, rule: MatchRule) -> bool:
    if pred == gold:
        return True
    if rule.kind == EXACT:
        return False
    if rule.kind == LEXICAL:
        return levenshtein(pred, gold) < len(pred) / rule.df + 1
    sim = rule.embeddings.similarity(pred, gold)  # type: ignore[union-attr]
    return sim is not None and sim >= rule.threshold


def match_sets(
    predicted: list[str], gold: set[str] | frozenset[str], rule: MatchRule
) -> list[tuple[int, str, str]]:
    """Greedy one-to-one assignment in rank order.

    Returns (prediction index, predicted label, gold label) triples.  Each
    prediction takes the closest admissible unconsumed gold label, closeness
    being (edit distance, lexicographic).  The result for the first K
    predictions never depends on predictions beyond rank K.
    """
    available = set(gold)
    matches: list[tuple[int, str, str]] = []
    for idx, pred in enumerate(predicted):
        if not available:
            break
        if pred in available:
            chosen = pred  # distance 0 is unbeatable and unique
        else:
            if rule.kind == EXACT:
                continue
            candidates = [g for g in available if soft_match(pred, g, rule)]
            if not candidates:
                continue
            chosen = min(candidates, key=lambda g: (levenshtein(pred, g), g))
        available.discard(chosen)
        matches.append((idx, pred, chosen))
    return matches


def precision_recall_at_k(
    predicted: list[str],
    gold: set[str] | frozenset[str],
    k: int,
    rule: MatchRule,
) -> tuple[float, float | None]:
    """(P@K, R@K); recall is None when the gold set is empty."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = len(match_sets(predicted[:k], gold, rule))
    precision = hits / k
    recall = hits / len(gold) if gold else None
    return precision, recall


@dataclass
class PropensityModel:
    """Per-label annotation propensity following the inverse-sigmoid-in-log-frequency
    convention: C = (ln N - 1)(B + 1)^A, p = 1 / (1 + C (f + B)^(-A)).

    Labels never seen in training get the frequency-0 propensity.
    """

    propensities: dict[str, float]
    a: float
    b_param: float
    c: float
    n_train: int
    floor: float

    def propensity(self, label: str) -> float:
        return self.propensities.get(label, self.floor)


def compute_propensities(
    train_frequency: dict[str, int], n_train: int, a: float = 0.55, b_param: float = 1.5
) -> PropensityModel:
    if n_train < 1:
        raise ValueError("n_train must be >= 1")
    # For N < e the convention's C goes negative and the sigmoid leaves (0, 1];
    # clamping keeps the stated range on degenerate tiny corpora.
    c = max((math.log(n_train) - 1.0) * (b_param + 1.0) ** a, 0.0)

    def prop(freq: int) -> float:
        return 1.0 / (1.0 + c * math.exp(-a * math.log(freq + b_param)))

    return PropensityModel(
        propensities={label: prop(f) for label, f in train_frequency.items()},
        a=a,
        b_param=b_param,
        c=c,
        n_train=n_train,
        floor=prop(0),
    )


def psp_at_k(
    predicted: list[str],
    gold: set[str] | frozenset[str],
    prop: PropensityModel,
    k: int,
) -> float | None:
    """Propensity-scored precision at K, normalized by the best achievable
    top-K numerator (the inverse propensities of the rarest gold labels).
    None when the gold set is empty."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not gold:
        return None
    numerator = sum(
        1.0 / prop.propensity(label) for label in predicted[:k] if label in gold
    )
    rarest = sorted(gold, key=lambda l: prop.propensity(l))[: min(k, len(gold))]
    denominator = sum(1.0 / prop.propensity(label) for label in rarest)
    return numerator / denominator


def unseen_projection(labels, seen: set[str] | frozenset[str]) -> list[str]:
    """Drop seen labels, preserving order for ranked inputs."""
    return [label for label in labels if label not in seen]


def nlsr_at_k(
    ranked_predictions: list[list[str]],
    gold_unseen_union: set[str] | frozenset[str],
    seen: set[str] | frozenset[str],
    k: int,
    intersect: bool = True,
    lexicographic: bool = False,
) -> float:
    """Pooled novel-label recall: each instance contributes its top-K unseen
    predictions; the union is measured against the union of unseen gold labels.

    ``intersect=False`` keeps non-gold novel predictions in the numerator (the
    formula as printed; can exceed 1).  ``lexicographic=True`` sorts each
    instance's unseen predictions alphabetically instead of by ranking.
    """
    if not gold_unseen_union:
        raise ValueError("the union of unseen gold labels is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    pooled: set[str] = set()
    for labels in ranked_predictions:
        novel = unseen_projection(labels, seen)
        if lexicographic:
            novel = sorted(novel)
        pooled.update(novel[:k])
    if intersect:
        pooled &= set(gold_unseen_union)
    return len(pooled) / len(gold_unseen_union)


# ---------------------------------------------------------------------------
# corpus-level aggregation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    ks: list[int]
    overall: dict[str, dict[str, dict[int, float]]]
    psp: dict[int, float]
    unseen: dict[str, dict[str, dict[int, float]]]
    nlsr: dict[int, float] | None
    counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "ks": self.ks,
            "overall": self.overall,
            "psp": self.psp,
            "unseen": self.unseen,
            "nlsr": self.nlsr,
            "counts": self.counts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        """Flat metric table, one line per family/rule/K."""
        lines = []
        for rule_name, families in sorted(self.overall.items()):
            for family, values in sorted(families.items()):
                for k in self.ks:
                    lines.append(f"{family}@{k}[{rule_name}]\t{values[k]:.4f}")
        for k in self.ks:
            lines.append(f"psp@{k}\t{self.psp[k]:.4f}")
        for rule_name, families in sorted(self.unseen.items()):
            for family, values in sorted(families.items()):
                for k in self.ks:
                    lines.append(f"unseen_{family}@{k}[{rule_name}]\t{values[k]:.4f}")
        if self.nlsr is not None:
            for k in self.ks:
                lines.append(f"nlsr@{k}\t{self.nlsr[k]:.4f}")
        for key, value in sorted(self.counts.items()):
            lines.append(f"count[{key}]\t{value}")
        return "\n".join(lines)


def evaluate(
    predictions,
    test_corpus,
    partition,
    prop: PropensityModel,
    ks: tuple[int, ...] = (1, 3, 5),
    rules: tuple[MatchRule, ...] = (MatchRule(kind=EXACT),),
) -> EvalReport:
    """All metric families at each K.  Deterministic; instance order irrelevant.

    Recall averages exclude instances with empty gold sets; both unseen
    families exclude instances with no unseen gold labels.  Every exclusion
    is counted in the report.
    """
    by_id = {inst.id: inst for inst in test_corpus.instances}
    seen = partition.seen
    ks = tuple(sorted(set(ks)))
    if len({rule.kind for rule in rules}) != len(rules):
        raise ValueError("at most one rule per kind")

    def fresh():
        return {rule.kind: {"precision": {k: 0.0 for k in ks}, "recall": {k: 0.0 for k in ks}}
                for rule in rules}

    overall_sum = fresh()
    unseen_sum = fresh()
    psp_sum = {k: 0.0 for k in ks}
    n_total = 0
    n_gold = 0
    n_unseen_gold = 0
    ranked_label_lists: list[list[str]] = []
    gold_unseen_union: set[str] = set()

    for pred in predictions:
        inst = by_id.get(pred.instance_id)
        if inst is None:
            raise ValueError(f"prediction id {pred.instance_id!r} not in test corpus")
        labels = pred.labels()
        ranked_label_lists.append(labels)
        gold = inst.labels
        gold_unseen = gold - seen
        gold_unseen_union |= gold_unseen
        n_total += 1
        if gold:
            n_gold += 1
        if gold_unseen:
            n_unseen_gold += 1
        novel_pred = unseen_projection(labels, seen)
        for rule in rules:
            for k in ks:
                p_k, r_k = precision_recall_at_k(labels, gold, k, rule)
                overall_sum[rule.kind]["precision"][k] += p_k
                if r_k is not None:
                    overall_sum[rule.kind]["recall"][k] += r_k
                if gold_unseen:
                    up_k, ur_k = precision_recall_at_k(novel_pred, gold_unseen, k, rule)
                    unseen_sum[rule.kind]["precision"][k] += up_k
                    unseen_sum[rule.kind]["recall"][k] += ur_k or 0.0
        for k in ks:
            value = psp_at_k(labels, gold, prop, k)
            if value is not None:
                psp_sum[k] += value

    def averaged(sums, precision_n, recall_n):
        return {
            rule: {
                "precision": {k: (v[
                    "precision"][k] / precision_n if precision_n else 0.0) for k in ks},
                "recall": {k: (v["recall"][k] / recall_n if recall_n else 0.0) for k in ks},
            }
            for rule, v in sums.items()
        }

    nlsr: dict[int, float] | None = None
    if gold_unseen_union:
        nlsr = {
            k: nlsr_at_k(ranked_label_lists, gold_unseen_union, seen, k) for k in ks
        }

    embedding_misses = sum(
        rule.embeddings.misses for rule in rules if rule.embeddings is not None
    )
    return EvalReport(
        ks=list(ks),
        overall=averaged(overall_sum, n_total, n_gold),
        psp={k: (psp_sum[k] / n_gold if n_gold else 0.0) for k in ks},
        unseen=averaged(unseen_sum, n_unseen_gold, n_unseen_gold),
        nlsr=nlsr,
        counts={
            "instances": n_total,
            "with_gold": n_gold,
            "with_unseen_gold": n_unseen_gold,
            "skipped_empty_gold": n_total - n_gold,
            "skipped_empty_unseen_gold": n_total - n_unseen_gold,
            "embedding_misses": embedding_misses,
        },
    )
