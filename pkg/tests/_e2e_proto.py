"""Scratch driver for sizing the acceptance e2e run (not a test)."""
import sys, time, random
from collections import Counter

sys.path.insert(0, "tests")
from _synth import make_synthetic_corpora, COLORS, OBJECTS
from groov.corpus import build_ov_split, partition_labels
from groov.model import ModelConfig, init_model, OptimizerState
from groov.training import TrainConfig, train, LOSS_MSM
from groov.decoding import predict, GENERATION_ORDER
from groov.metrics import nlsr_at_k

t_start = time.monotonic()
train_raw, test_raw = make_synthetic_corpora(5000, seed=20240811)
train_c, test_c, removed = build_ov_split(train_raw, test_raw, 20, seed=7)
partition = partition_labels(train_c, test_c)
print(f"train={len(train_c)} test={len(test_c)}", flush=True)

cfg = ModelConfig(embed_dim=64, layers=2, heads=4, ffn_dim=128,
                  max_input_len=64, max_output_len=48)
model = init_model(cfg, seed=0)
opt = OptimizerState.for_model(model, learning_rate=1e-3)

in_vocab = [i for i in test_c.instances if i.labels <= partition.seen]

def diagnose(tag):
    hits = 0
    errors = []
    by_npairs = Counter()
    total_by_npairs = Counter()
    for inst in in_vocab:
        p = predict(model, inst, ranking_mode=GENERATION_ORDER)
        n = len(inst.labels)
        total_by_npairs[n] += 1
        if set(p.labels()) == set(inst.labels):
            hits += 1
        else:
            by_npairs[n] += 1
            if len(errors) < 12:
                errors.append((inst.text, sorted(inst.labels), p.labels()))
    print(f"[{tag}] set match {hits}/{len(in_vocab)} = {hits/len(in_vocab):.2%}", flush=True)
    print(f"[{tag}] errors by n_pairs: {dict(by_npairs)} of totals {dict(total_by_npairs)}", flush=True)
    for text, gold, pred in errors:
        print(f"    text={text!r}\n      gold={gold} pred={pred}", flush=True)

stage1 = TrainConfig(loss_kind=LOSS_MSM, batch_size=8, epochs=20, learning_rate=1e-3,
                     max_input_len=64, max_output_len=48)
model, logs = train(train_c, model, opt, stage1, random.Random(1))
print("stage1 losses:", " ".join(f"{l.mean_loss:.4f}" for l in logs), flush=True)
print(f"stage1 wall: {time.monotonic()-t_start:.0f}s", flush=True)
diagnose("stage1")

opt.learning_rate = 3e-4
stage2 = TrainConfig(loss_kind=LOSS_MSM, batch_size=8, epochs=6, learning_rate=3e-4,
                     max_input_len=64, max_output_len=48)
t2 = time.monotonic()
model, logs2 = train(train_c, model, opt, stage2, random.Random(2))
print("stage2 losses:", " ".join(f"{l.mean_loss:.4f}" for l in logs2), flush=True)
print(f"stage2 wall: {time.monotonic()-t2:.0f}s", flush=True)
diagnose("stage2")

with_unseen = [i for i in test_c.instances if i.labels & partition.unseen]
ranked, gold_unseen_union = [], set()
for inst in with_unseen:
    p = predict(model, inst, ranking_mode=GENERATION_ORDER)
    ranked.append(p.labels())
    gold_unseen_union |= set(inst.labels) - set(partition.seen)
print(f"NLSR@5: {nlsr_at_k(ranked, gold_unseen_union, partition.seen, 5):.4f}", flush=True)
print(f"total wall: {time.monotonic()-t_start:.0f}s", flush=True)
