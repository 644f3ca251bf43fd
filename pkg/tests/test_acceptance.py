"""Acceptance suite: one test per agreed criterion, each printing a PASS/FAIL
line (run with ``pytest tests/test_acceptance.py -v -s`` to see them live).

The end-to-end experiment trains the full-size model and is the slow test in
this repository; everything else finishes in seconds.
"""

import itertools
import json
import random
import threading
import time
import urllib.request

import numpy as np
import pytest

from _synth import COLORS, OBJECTS, make_synthetic_corpora
from groov.corpus import (
    Corpus,
    Instance,
    build_ov_split,
    partition_labels,
    write_corpus,
    write_label_list,
)
from groov.decoding import (
    GENERATION_ORDER,
    Prediction,
    beam_search,
    greedy_decode,
    marginal_scores,
    predict,
    split_labels,
)
from groov.label_trie import GoldTracker
from groov.metrics import (
    Embeddings,
    compute_propensities,
    evaluate,
    exact_rule,
    levenshtein,
    lexical_rule,
    nlsr_at_k,
    precision_recall_at_k,
    psp_at_k,
    semantic_rule,
)
from groov.model import (
    ModelConfig,
    OptimizerState,
    backward,
    decoder_logits,
    encode_source,
    forward_with_cache,
    init_model,
)
from groov.review_service import ReviewService, make_server
from groov.tokenizer import BOS, EOS, SEP, VOCAB_SIZE, encode_label, encode_text
from groov.training import (
    LOSS_CE,
    LOSS_MSM,
    TargetAssembly,
    TrainConfig,
    assemble_target,
    multi_softmax,
    sequence_loss,
    train,
)


def criterion(name: str, ok: bool, detail: str = "") -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip(), flush=True)
    assert ok, f"{name} failed: {detail}"


# ---------------------------------------------------------------------------
# MSM correctness
# ---------------------------------------------------------------------------


def test_msm_correctness():
    start = time.monotonic()
    rng = np.random.default_rng(101)

    # reduction to softmax for singleton numerator sets
    worst_singleton = 0.0
    for _ in range(50):
        z = rng.normal(scale=rng.uniform(0.5, 20), size=VOCAB_SIZE)
        idx = int(rng.integers(VOCAB_SIZE))
        softmax = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
        worst_singleton = max(worst_singleton, abs(multi_softmax(z, {idx}) - softmax[idx]))
    # numerator == denominator when the set is the full vocabulary
    full_ok = all(
        multi_softmax(rng.normal(size=VOCAB_SIZE), set(range(VOCAB_SIZE))) == pytest.approx(1.0, abs=1e-12)
        for _ in range(10)
    )

    # gradient vs central finite differences on 200 random (z, G) draws
    h = 1e-6
    worst_rel = 0.0
    for _ in range(200):
        z = rng.normal(scale=rng.uniform(0.5, 5), size=VOCAB_SIZE)
        g_size = int(rng.integers(1, 40))
        g_ids = rng.choice(VOCAB_SIZE, size=g_size, replace=False)
        target = int(g_ids[0])
        assembly = TargetAssembly(tokens=(target,), admissible_sets=[frozenset(int(i) for i in g_ids)])
        _, grad = sequence_loss(z[None, :], assembly, LOSS_MSM)

        def msm_loss(vec):
            shifted = vec - vec.max()
            e = np.exp(shifted)
            return np.log(e.sum()) - np.log(e[sorted(int(i) for i in g_ids)].sum())

        fd = np.array([
            (msm_loss(z + h * basis) - msm_loss(z - h * basis)) / (2 * h)
            for basis in np.eye(VOCAB_SIZE)
        ])
        rel = np.linalg.norm(grad[0] - fd) / max(np.linalg.norm(fd), 1e-12)
        worst_rel = max(worst_rel, rel)

    elapsed = time.monotonic() - start
    criterion(
        "msm-correctness",
        worst_singleton < 1e-12 and full_ok and worst_rel < 1e-6 and elapsed < 10,
        f"singleton {worst_singleton:.2e}, fd rel {worst_rel:.2e}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# full-network gradient check
# ---------------------------------------------------------------------------


def test_full_network_gradient_check():
    start = time.monotonic()
    cfg = ModelConfig(embed_dim=8, layers=1, heads=2, ffn_dim=16,
                      max_input_len=32, max_output_len=32)
    model = init_model(cfg, seed=1)
    src = encode_text("gradient check input", 32)
    assembly = assemble_target(["ab", "cde"])
    prefix = (BOS,) + assembly.tokens[:-1]
    logits, cache = forward_with_cache(model, src, prefix)
    _, dlogits = sequence_loss(logits, assembly, LOSS_MSM)
    grads = backward(model, cache, dlogits)

    def loss_now():
        out, _ = forward_with_cache(model, src, prefix)
        return sequence_loss(out, assembly, LOSS_MSM)[0]

    rng = np.random.default_rng(2)
    names = sorted(model.params)
    worst = 0.0
    for _ in range(60):
        name = names[int(rng.integers(len(names)))]
        arr = model.params[name]
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        orig = arr[idx].copy()
        h = np.float32(1e-3)
        arr[idx] = orig + h
        model.invalidate()
        up = loss_now()
        arr[idx] = orig - h
        model.invalidate()
        down = loss_now()
        arr[idx] = orig
        model.invalidate()
        numeric = (up - down) / (np.float64(orig + h) - np.float64(orig - h))
        analytic = grads[name][idx]
        worst = max(worst, abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8))
    elapsed = time.monotonic() - start
    criterion(
        "full-network-gradient",
        worst < 1e-3 and elapsed < 120,
        f"worst rel {worst:.2e} over 60 parameters, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# admissible-set soundness
# ---------------------------------------------------------------------------


def brute_force_admissible(remaining, partial):
    tokens = set()
    for label in remaining:
        if label[: len(partial)] == tuple(partial) and len(label) > len(partial):
            tokens.add(label[len(partial)])
    if tuple(partial) in remaining:
        tokens.add(SEP if len(remaining) >= 2 else EOS)
    return frozenset(tokens)


def random_label_set(rnd):
    n = rnd.randint(1, 8)
    labels = set()
    while len(labels) < n:
        length = rnd.randint(1, 12)
        labels.add("".join(rnd.choice("abcdefgh") for _ in range(length)))
    return labels


def test_gset_soundness():
    start = time.monotonic()
    rnd = random.Random(303)

    sound = True
    for _ in range(1000):
        labels = sorted(random_label_set(rnd))
        rnd.shuffle(labels)
        assembly = assemble_target(labels)
        tracker = GoldTracker(frozenset(encode_label(l) for l in labels))
        for token, allowed in zip(assembly.tokens, assembly.admissible_sets):
            if token not in tracker.admissible_tokens() or token not in allowed:
                sound = False
            tracker.advance(token)

    oracle_equal = True
    for _ in range(1000):
        labels = sorted(random_label_set(rnd))
        rnd.shuffle(labels)
        assembly = assemble_target(labels)
        tracker = GoldTracker(frozenset(encode_label(l) for l in labels))
        stop = rnd.randint(0, len(assembly.tokens) - 1)
        for token in assembly.tokens[:stop]:
            tracker.advance(token)
        if tracker.admissible_tokens() != brute_force_admissible(tracker.remaining, tracker.partial):
            oracle_equal = False
    elapsed = time.monotonic() - start
    criterion(
        "gset-soundness",
        sound and oracle_equal and elapsed < 30,
        f"1000 walks + 1000 states, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# decoding oracles
# ---------------------------------------------------------------------------

DECODE_ALLOWED = frozenset({EOS, SEP, 97, 98, 99, 100})
DECODE_MAX_LEN = 4


def enumerate_sequences(model, src):
    enc = encode_source(model, src)
    allowed_sorted = sorted(DECODE_ALLOWED)

    def log_probs(prefix):
        row = decoder_logits(model, enc, (BOS, *prefix))[-1]
        z = np.full(VOCAB_SIZE, -np.inf)
        z[allowed_sorted] = row[allowed_sorted]
        m = z.max()
        return z - (m + np.log(np.exp(z - m).sum()))

    results = []

    def walk(prefix, logp):
        if len(prefix) == DECODE_MAX_LEN:
            results.append((tuple(prefix), logp))
            return
        lps = log_probs(prefix)
        for token in allowed_sorted:
            if token == EOS:
                results.append((tuple(prefix) + (EOS,), logp + lps[token]))
            else:
                walk(list(prefix) + [token], logp + lps[token])

    walk([], 0.0)
    return results


def oracle_split(tokens):
    toks = list(tokens)
    if toks and toks[-1] == EOS:
        toks.pop()
    segments, current = [], []
    for t in toks:
        if t == SEP:
            segments.append(current)
            current = []
        else:
            current.append(t)
    segments.append(current)
    labels = []
    for seg in segments:
        if seg:
            label = bytes(seg).decode("utf-8", "replace")
            if label and label not in labels:
                labels.append(label)
    return labels


def test_decoding_oracles():
    start = time.monotonic()
    model = init_model(ModelConfig(embed_dim=8, layers=1, heads=2, ffn_dim=16,
                                   max_input_len=16, max_output_len=8), seed=0)
    src = encode_text("q", 16)
    seqs = enumerate_sequences(model, src)
    beams = beam_search(model, src, beam_size=len(seqs), max_len=DECODE_MAX_LEN,
                        allowed_tokens=set(DECODE_ALLOWED))
    by_tokens = dict(seqs)
    beams_match = len(beams) == len(seqs) and all(
        b.tokens in by_tokens and abs(b.log_prob - by_tokens[b.tokens]) < 1e-9 for b in beams
    )

    exact_marginal = {}
    for tokens, logp in seqs:
        for label in oracle_split(tokens):
            exact_marginal[label] = exact_marginal.get(label, 0.0) + float(np.exp(logp))
    scores = dict(marginal_scores(beams))
    marginal_match = scores.keys() == exact_marginal.keys() and all(
        abs(scores[l] - exact_marginal[l]) < 1e-9 for l in exact_marginal
    )
    elapsed = time.monotonic() - start
    criterion(
        "decoding-oracles",
        beams_match and marginal_match and elapsed < 60,
        f"{len(seqs)} sequences enumerated, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# metric oracles
# ---------------------------------------------------------------------------


def lev_oracle(a, b):
    m, n = len(a), len(b)
    dist = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        dist[i][0] = i
    for j in range(n + 1):
        dist[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            dist[i][j] = min(dist[i - 1][j] + 1, dist[i][j - 1] + 1,
                             dist[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return dist[m][n]


def test_metric_oracles():
    start = time.monotonic()
    rnd = random.Random(404)
    ok = True

    universe = [f"label-{i}" for i in range(12)]
    for case in range(500):
        freq = {l: rnd.randint(1, 40) for l in universe}
        prop = compute_propensities(freq, n_train=500)
        predicted = rnd.sample(universe, rnd.randint(0, 10))
        gold = set(rnd.sample(universe, rnd.randint(1, 8)))
        seen = set(rnd.sample(universe, 6))
        k = rnd.choice([1, 3, 5])

        hits = len(set(predicted[:k]) & gold)
        p, r = precision_recall_at_k(predicted, gold, k, exact_rule())
        ok &= p == hits / k and r == hits / len(gold)
        ok &= abs(p * k - round(p * k)) < 1e-12

        num = sum(1.0 / prop.propensity(l) for l in predicted[:k] if l in gold)
        inv = sorted((1.0 / prop.propensity(g) for g in gold), reverse=True)
        den = sum(inv[: min(k, len(gold))])
        ok &= abs(psp_at_k(predicted, gold, prop, k) - num / den) < 1e-9

        gold_unseen_union = gold - seen
        if gold_unseen_union:
            pooled = set()
            novel = [l for l in predicted if l not in seen][:k]
            pooled.update(novel)
            expected = len(pooled & gold_unseen_union) / len(gold_unseen_union)
            ok &= abs(nlsr_at_k([predicted], gold_unseen_union, seen, k) - expected) < 1e-9

    lev_ok = True
    for _ in range(1000):
        a = "".join(rnd.choice("abcdé ") for _ in range(rnd.randint(0, 14)))
        b = "".join(rnd.choice("abcdé ") for _ in range(rnd.randint(0, 14)))
        lev_ok &= levenshtein(a, b) == lev_oracle(a, b)
    elapsed = time.monotonic() - start
    criterion(
        "metric-oracles",
        ok and lev_ok and elapsed < 60,
        f"500 metric cases + 1000 edit distances, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# soft-rule dominance
# ---------------------------------------------------------------------------


def test_soft_rule_dominance():
    rnd = random.Random(505)
    vocab = [f"tag {i:02d}" for i in range(20)]

    def typo(label):
        pos = rnd.randrange(len(label))
        return label[:pos] + rnd.choice("xyz") + label[pos + 1:]

    instances, preds = [], []
    for n in range(60):
        gold = frozenset(rnd.sample(vocab, rnd.randint(1, 5)))
        instances.append(Instance(id=f"i{n}", text="t", labels=gold))
        guesses = []
        for label in rnd.sample(vocab, rnd.randint(1, 8)):
            guesses.append(typo(label) if rnd.random() < 0.4 else label)
        deduped = list(dict.fromkeys(guesses))
        preds.append(Prediction(
            instance_id=f"i{n}",
            ranked=[(g, 1.0 / (i + 1)) for i, g in enumerate(deduped)],
        ))
    test_corpus = Corpus.from_instances(instances)
    partition = partition_labels(
        Corpus.from_instances(instances[:40]), test_corpus
    )
    prop = compute_propensities(test_corpus.label_frequency, len(test_corpus))
    emb = Embeddings({v: np.array([1.0, 0.0]) for v in vocab})
    report = evaluate(
        preds, test_corpus, partition, prop, ks=(1, 3, 5),
        rules=(exact_rule(), lexical_rule(df=10), semantic_rule(emb, 0.94)),
    )
    ok = True
    for scope in (report.overall, report.unseen):
        for family in ("precision", "recall"):
            for k in (1, 3, 5):
                ok &= scope["lexical"][family][k] >= scope["exact"][family][k] - 1e-12
                ok &= scope["semantic"][family][k] >= scope["exact"][family][k] - 1e-12
    criterion("soft-rule-dominance", ok, "lexical/semantic >= exact at K in {1,3,5}")


# ---------------------------------------------------------------------------
# OV split integrity
# ---------------------------------------------------------------------------


def test_ov_split_integrity(tmp_path):
    start = time.monotonic()
    train_raw, test_raw = make_synthetic_corpora(2000, seed=77)
    outputs = []
    clean = True
    for run in range(2):
        new_train, new_test, removed = build_ov_split(train_raw, test_raw, 15, seed=123)
        clean &= all(not (inst.labels & removed) for inst in new_train.instances)
        tr = tmp_path / f"train{run}.jsonl"
        te = tmp_path / f"test{run}.jsonl"
        rm = tmp_path / f"removed{run}.txt"
        write_corpus(new_train, tr)
        write_corpus(new_test, te)
        write_label_list(removed, rm)
        outputs.append((tr.read_bytes(), te.read_bytes(), rm.read_bytes()))
    elapsed = time.monotonic() - start
    criterion(
        "ov-split-integrity",
        clean and outputs[0] == outputs[1] and elapsed < 10,
        f"zero leaks, byte-identical reruns, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# review stats fidelity
# ---------------------------------------------------------------------------


def test_review_stats_fidelity(tmp_path):
    # 26 semantically matching novel labels; 25 judged sensible, 10 informative
    instances, preds, vectors = [], [], {}
    for i in range(26):
        gold = f"gold-{i}"
        novel = f"novel-{i}"
        instances.append(Instance(id=f"r{i:02d}", text=f"document {i}", labels=frozenset({gold})))
        preds.append(Prediction(instance_id=f"r{i:02d}", ranked=[(novel, 1.0)]))
        vectors[gold] = np.array([1.0, 0.0])
        vectors[novel] = np.array([1.0, 0.0])
    corpus = Corpus.from_instances(instances)
    service = ReviewService(
        preds, corpus, seen=frozenset({"something-else"}),
        store_path=tmp_path / "store.jsonl", embeddings=Embeddings(vectors),
    )
    server = make_server(service, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        for i in range(26):
            body = {
                "instance_id": f"r{i:02d}",
                "label": f"novel-{i}",
                "sensible": i < 25,
                "informative": i < 10,
                "reviewer": "annotator",
            }
            req = urllib.request.Request(
                f"{base}/api/reviews", data=json.dumps(body).encode(),
                headers={"Content-Type": "application/json"},
            )
            with urllib.request.urlopen(req) as resp:
                assert resp.status == 200
        with urllib.request.urlopen(f"{base}/api/stats") as resp:
            stats = json.loads(resp.read())
    finally:
        server.shutdown()
        server.server_close()
    rows = {row["key"]: row for row in stats["rows"]}
    yes = rows["yes"]
    criterion(
        "review-stats-fidelity",
        yes["n_labels"] == 26 and yes["sensible_pct"] == 96 and yes["informative_pct"] == 38,
        f"yes row: n={yes['n_labels']} sen={yes['sensible_pct']} inf={yes['informative_pct']}",
    )


# ---------------------------------------------------------------------------
# end-to-end synthetic open-vocabulary experiment
# ---------------------------------------------------------------------------

E2E_MODEL = ModelConfig(embed_dim=64, layers=2, heads=4, ffn_dim=128,
                        max_input_len=64, max_output_len=48)


def test_end_to_end_synthetic_ov():
    train_raw, test_raw = make_synthetic_corpora(5000, seed=20240811)
    train_c, test_c, removed = build_ov_split(train_raw, test_raw, 20, seed=7)
    partition = partition_labels(train_c, test_c)

    # the held-out compositional labels must have all their parts still seen
    parts_seen = all(
        any(label.startswith(color + " ") for label in partition.seen) for color in COLORS
    ) and all(
        any(label.endswith(" " + obj) for label in partition.seen) for obj in OBJECTS
    )
    assert parts_seen and removed <= partition.unseen

    model = init_model(E2E_MODEL, seed=0)
    opt = OptimizerState.for_model(model, learning_rate=1e-3)
    t0 = time.monotonic()
    stage1 = TrainConfig(loss_kind=LOSS_MSM, batch_size=8, epochs=20, learning_rate=1e-3,
                         max_input_len=64, max_output_len=48)
    model, _ = train(train_c, model, opt, stage1, random.Random(1))
    opt.learning_rate = 3e-4
    stage2 = TrainConfig(loss_kind=LOSS_MSM, batch_size=8, epochs=4, learning_rate=3e-4,
                         max_input_len=64, max_output_len=48)
    model, _ = train(train_c, model, opt, stage2, random.Random(2))
    train_wall = time.monotonic() - t0

    in_vocab = [i for i in test_c.instances if i.labels <= partition.seen]
    with_unseen = [i for i in test_c.instances if i.labels & partition.unseen]
    hits = 0
    for inst in in_vocab:
        pred = predict(model, inst, ranking_mode=GENERATION_ORDER)
        if set(pred.labels()) == set(inst.labels):
            hits += 1
    set_match = hits / len(in_vocab)

    ranked = []
    gold_unseen_union = set()
    for inst in with_unseen:
        pred = predict(model, inst, ranking_mode=GENERATION_ORDER)
        ranked.append(pred.labels())
        gold_unseen_union |= set(inst.labels) - set(partition.seen)
    nlsr5 = nlsr_at_k(ranked, gold_unseen_union, partition.seen, 5)

    # MSM vs CE on shared seeds, at a scale where five pairs stay cheap
    small_cfg = ModelConfig(embed_dim=32, layers=1, heads=2, ffn_dim=64,
                            max_input_len=64, max_output_len=48)
    comparison_corpus, _ = make_synthetic_corpora(320, seed=555, train_fraction=1.0)
    msm_wins = 0
    for seed in range(5):
        finals = {}
        for kind in (LOSS_MSM, LOSS_CE):
            m = init_model(small_cfg, seed=seed)
            o = OptimizerState.for_model(m, learning_rate=1e-3)
            tc = TrainConfig(loss_kind=kind, batch_size=8, epochs=3, learning_rate=1e-3,
                             max_input_len=64, max_output_len=48)
            _, run_logs = train(comparison_corpus, m, o, tc, random.Random(seed))
            finals[kind] = run_logs[-1].mean_loss
        msm_wins += finals[LOSS_MSM] <= finals[LOSS_CE]

    criterion(
        "e2e-synthetic-ov",
        train_wall < 900 and set_match >= 0.90 and nlsr5 > 0.0 and msm_wins >= 4,
        f"train {train_wall:.0f}s, set-match {set_match:.2%} on {len(in_vocab)} in-vocab, "
        f"NLSR@5 {nlsr5:.3f}, msm wins {msm_wins}/5",
    )
