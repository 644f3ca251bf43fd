"""Command-line entry point: split construction, training, prediction,
evaluation, and the review service, as subcommands of one binary.

Every option can also come from a flat ``key = value`` config file passed
with ``--config``; command-line flags win over the file, the file wins over
built-in defaults, and unknown keys in the file are rejected.  All runtime
errors go to standard error with the prefix ``groov:`` and exit code 1;
usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from . import corpus as corpus_mod
from . import decoding, metrics, model as model_mod, review_service, training

PROG = "groov"


@dataclass(frozen=True)
class Opt:
    name: str  # long flag without leading dashes
    type: Callable[[str], Any]
    default: Any = None
    required: bool = False
    help: str = ""
    choices: tuple[str, ...] | None = None
    is_flag: bool = False

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


def _bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


_COMMON_MODEL_OPTS = [
    Opt("embed-dim", int, 64, help="embedding width"),
    Opt("layers", int, 2, help="encoder/decoder layer count"),
    Opt("heads", int, 2, help="attention heads"),
    Opt("ffn-dim", int, 128, help="feed-forward width"),
    Opt("max-input-len", int, 512, help="max input bytes"),
    Opt("max-output-len", int, 128, help="max output tokens"),
    Opt("dropout", float, 0.0, help="dropout rate"),
]

SUBCOMMANDS: dict[str, tuple[str, list[Opt]]] = {
    "split-ov": (
        "build an open-vocabulary split by holding out labels",
        [
            Opt("train", str, required=True, help="train corpus JSONL"),
            Opt("test", str, required=True, help="test corpus JSONL"),
            Opt("n-labels", int, required=True, help="number of labels to hold out"),
            Opt("seed", int, 0, help="sampling seed"),
            Opt("out", str, required=True, help="output directory"),
        ],
    ),
    "train": (
        "train the tagger on a corpus",
        [
            Opt("train", str, required=True, help="train corpus JSONL"),
            Opt("loss", str, "msm", choices=("ce", "msm"), help="training loss"),
            Opt("epochs", int, 1, help="training epochs"),
            Opt("batch-size", int, 32, help="gradient accumulation size"),
            Opt("lr", float, 1e-4, help="learning rate"),
            Opt("weight-decay", float, 0.01, help="decoupled weight decay"),
            Opt("seed", int, 0, help="init/shuffle/permutation seed"),
            Opt("out", str, required=True, help="checkpoint output path"),
            Opt("log", str, help="epoch log JSONL path (default: stdout)"),
            *_COMMON_MODEL_OPTS,
        ],
    ),
    "predict": (
        "decode label sets for a corpus",
        [
            Opt("ckpt", str, required=True, help="checkpoint path"),
            Opt("input", str, required=True, help="input corpus JSONL"),
            Opt("beam", int, 15, help="beam size for marginal ranking"),
            Opt(
                "ranking",
                str,
                "generation",
                choices=("generation", "marginal"),
                help="label ranking mode",
            ),
            Opt("out", str, required=True, help="predictions JSONL output"),
            Opt("jobs", int, 1, help="parallel decoding threads"),
            Opt("save-beams", _bool, False, is_flag=True, help="include beams in output"),
            Opt(
                "normalize-marginals",
                _bool,
                False,
                is_flag=True,
                help="normalize marginal scores by returned beam mass",
            ),
        ],
    ),
    "eval": (
        "evaluate predictions against a test corpus",
        [
            Opt("pred", str, required=True, help="predictions JSONL"),
            Opt("test", str, required=True, help="test corpus JSONL"),
            Opt("train", str, required=True, help="train corpus JSONL (seen set, propensities)"),
            Opt("k", str, "1,3,5", help="comma-separated cutoffs"),
            Opt(
                "rules",
                str,
                "exact",
                help="comma list: exact, lexical[:DF], semantic[:THRESHOLD]",
            ),
            Opt("embeddings", str, help="embeddings JSONL for the semantic rule"),
            Opt("out", str, help="report JSON output path"),
            Opt("prop-a", float, 0.55, help="propensity parameter A"),
            Opt("prop-b", float, 1.5, help="propensity parameter B"),
            Opt("jobs", int, 1, help="accepted for symmetry; evaluation is cheap"),
            Opt(
                "nlsr-no-intersect",
                _bool,
                False,
                is_flag=True,
                help="keep non-gold novel predictions in the NLSR numerator",
            ),
            Opt(
                "nlsr-lexicographic",
                _bool,
                False,
                is_flag=True,
                help="rank unseen predictions alphabetically in NLSR",
            ),
        ],
    ),
    "review-serve": (
        "serve the novel-label review API and UI",
        [
            Opt("pred", str, required=True, help="predictions JSONL"),
            Opt("test", str, required=True, help="test corpus JSONL"),
            Opt("seen", str, required=True, help="seen labels, one per line"),
            Opt("store", str, required=True, help="append-only review store JSONL"),
            Opt("port", int, 8000, help="listen port"),
            Opt("embeddings", str, help="embeddings JSONL for semantic-match rows"),
            Opt("threshold", float, 0.94, help="semantic match threshold"),
            Opt("static", str, help="directory of built UI assets to serve at /"),
        ],
    ),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description=__doc__)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, (help_text, opts) in SUBCOMMANDS.items():
        sub = subparsers.add_parser(command, help=help_text)
        sub.add_argument("--config", default=None, help="flat key = value config file")
        for opt in opts:
            suffix = " (required)" if opt.required else f" (default: {opt.default})"
            kwargs: dict[str, Any] = {
                "default": None,
                "help": opt.help + suffix,
                "dest": opt.dest,
            }
            if opt.is_flag:
                kwargs["action"] = "store_const"
                kwargs["const"] = True
            else:
                kwargs["type"] = opt.type
                if opt.choices:
                    kwargs["choices"] = opt.choices
            sub.add_argument(f"--{opt.name}", **kwargs)
    return parser


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _merge_options(args: argparse.Namespace, opts: list[Opt], parser_error) -> argparse.Namespace:
    file_values: dict[str, str] = {}
    if args.config:
        try:
            file_values = _read_config_file(args.config)
        except OSError as exc:
            raise RuntimeError(f"cannot read config file: {exc}") from exc
    known = {opt.dest: opt for opt in opts}
    for key in file_values:
        if key not in known:
            parser_error(f"unknown config key {key!r}")
    for opt in opts:
        current = getattr(args, opt.dest)
        if current is None and opt.dest in file_values:
            try:
                current = opt.type(file_values[opt.dest])
            except ValueError as exc:
                parser_error(f"config key {opt.name!r}: {exc}")
            if opt.choices and current not in opt.choices:
                parser_error(f"config key {opt.name!r}: must be one of {opt.choices}")
        if current is None:
            if opt.required:
                parser_error(f"missing required option --{opt.name}")
            current = opt.default
        setattr(args, opt.dest, current)
    return args


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def _cmd_split_ov(args) -> int:
    train = corpus_mod.load_corpus(args.train)
    test = corpus_mod.load_corpus(args.test)
    new_train, new_test, removed = corpus_mod.build_ov_split(train, test, args.n_labels, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus_mod.write_corpus(new_train, out / "train.jsonl")
    corpus_mod.write_corpus(new_test, out / "test.jsonl")
    corpus_mod.write_label_list(removed, out / "removed_labels.txt")
    moved = len(new_test) - len(test)
    print(
        f"held out {len(removed)} labels; moved {moved} instances; "
        f"train={len(new_train)} test={len(new_test)}"
    )
    return 0


def _model_config_from_args(args) -> model_mod.ModelConfig:
    return model_mod.ModelConfig(
        embed_dim=args.embed_dim,
        layers=args.layers,
        heads=args.heads,
        ffn_dim=args.ffn_dim,
        max_input_len=args.max_input_len,
        max_output_len=args.max_output_len,
        dropout_rate=args.dropout,
    )


def _cmd_train(args) -> int:
    corpus = corpus_mod.load_corpus(args.train)
    config = _model_config_from_args(args)
    model = model_mod.init_model(config, args.seed)
    opt = model_mod.OptimizerState.for_model(
        model, learning_rate=args.lr, weight_decay=args.weight_decay
    )
    train_config = training.TrainConfig(
        loss_kind=args.loss,
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        seed=args.seed,
        max_input_len=args.max_input_len,
        max_output_len=args.max_output_len,
    )
    rng = random.Random(args.seed)
    model, logs = training.train(corpus, model, opt, train_config, rng)
    model_mod.save_checkpoint(model, opt, args.out)
    log_lines = "".join(log.to_json() + "\n" for log in logs)
    if args.log:
        Path(args.log).write_text(log_lines, encoding="utf-8")
    else:
        sys.stdout.write(log_lines)
    print(f"saved checkpoint to {args.out} after {model.step_count} updates", file=sys.stderr)
    return 0


def _cmd_predict(args) -> int:
    model, _ = model_mod.load_checkpoint(args.ckpt)
    corpus = corpus_mod.load_corpus(args.input)
    ranking = decoding.GENERATION_ORDER if args.ranking == "generation" else decoding.MARGINAL
    model.p64()  # build the shared float64 mirror before any worker threads start

    def run(inst):
        return decoding.predict(
            model,
            inst,
            beam_size=args.beam,
            ranking_mode=ranking,
            normalize_marginals=args.normalize_marginals,
        )

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            preds = list(pool.map(run, corpus.instances))
    else:
        preds = [run(inst) for inst in corpus.instances]
    decoding.write_predictions(preds, args.out, include_beams=args.save_beams)
    print(f"wrote {len(preds)} predictions to {args.out}")
    return 0


def _parse_rules(spec: str, embeddings_path: str | None) -> tuple[metrics.MatchRule, ...]:
    rules: list[metrics.MatchRule] = []
    embeddings: metrics.Embeddings | None = None
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, param = part.partition(":")
        if name == "exact":
            rules.append(metrics.exact_rule())
        elif name == "lexical":
            rules.append(metrics.lexical_rule(df=float(param) if param else 10.0))
        elif name == "semantic":
            if embeddings_path is None:
                raise ValueError("the semantic rule requires --embeddings")
            if embeddings is None:
                embeddings = metrics.load_embeddings(embeddings_path)
            threshold = float(param) if param else 0.94
            rules.append(metrics.semantic_rule(embeddings, threshold))
        else:
            raise ValueError(f"unknown match rule {name!r}")
    if not rules:
        raise ValueError("no match rules given")
    return tuple(rules)


def _cmd_eval(args) -> int:
    preds = decoding.read_predictions(args.pred)
    test = corpus_mod.load_corpus(args.test)
    train = corpus_mod.load_corpus(args.train)
    partition = corpus_mod.partition_labels(train, test)
    prop = metrics.compute_propensities(
        train.label_frequency, len(train), a=args.prop_a, b_param=args.prop_b
    )
    ks = tuple(int(k) for k in args.k.split(","))
    rules = _parse_rules(args.rules, args.embeddings)
    report = metrics.evaluate(preds, test, partition, prop, ks=ks, rules=rules)
    if report.nlsr is not None and (args.nlsr_no_intersect or args.nlsr_lexicographic):
        seen = partition.seen
        ranked = [p.labels() for p in preds]
        gold_union = set()
        by_id = {inst.id: inst for inst in test.instances}
        for p in preds:
            gold_union |= set(by_id[p.instance_id].labels) - seen
        report.nlsr = {
            k: metrics.nlsr_at_k(
                ranked,
                gold_union,
                seen,
                k,
                intersect=not args.nlsr_no_intersect,
                lexicographic=args.nlsr_lexicographic,
            )
            for k in report.ks
        }
    print(report.table())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def _cmd_review_serve(args) -> int:
    preds = decoding.read_predictions(args.pred)
    test = corpus_mod.load_corpus(args.test)
    seen = corpus_mod.read_label_list(args.seen)
    embeddings = metrics.load_embeddings(args.embeddings) if args.embeddings else None
    service = review_service.ReviewService(
        preds,
        test,
        seen,
        store_path=args.store,
        embeddings=embeddings,
        semantic_threshold=args.threshold,
    )
    review_service.serve_forever(service, args.port, static_dir=args.static)
    return 0


_IMPLEMENTATIONS = {
    "split-ov": _cmd_split_ov,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "review-serve": _cmd_review_serve,
}


def run(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _, opts = SUBCOMMANDS[args.command]
    sub_error = lambda message: parser.error(f"{args.command}: {message}")
    _merge_options(args, opts, sub_error)
    try:
        return _IMPLEMENTATIONS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
