"""Command-line pipeline: corpus synthesis, centralized and federated
training, evaluation, model comparison, and checkpoint quantization.

Configuration precedence is CLI flag > config file > built-in default. The
config file is flat `key = value` text (# starts a comment); every key is a
RunConfig field and unknown keys are rejected, so a saved file is a complete,
diff-able record of an experiment. All randomness descends from the single
`seed` via component-tagged sub-seeds.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass

from . import central, corpus, evaluate, fedavg, ngram
from .cifg import (
    CHECKPOINT_MAGIC,
    QUANTIZED_MAGIC,
    CifgConfig,
    dequantize,
    init_model,
    load_checkpoint,
    load_quantized,
    quantize,
    save_checkpoint,
    save_quantized,
)
from .nn_core import derive_seed


class UsageError(Exception):
    pass


class CliRuntimeError(Exception):
    pass


@dataclass
class RunConfig:
    # model architecture
    vocab_size: int = 10000
    embed_dim: int = 96
    hidden: int = 670
    # centralized training
    lr: float = 1e-3
    batch_size: int = 50
    max_steps: int = 1000
    eval_every: int = 200
    # federated training
    clients: int = 50
    mean_shard: int = 400
    clients_per_round_min: int = 5
    clients_per_round_max: int = 20
    client_lr: float = 0.5
    client_batch_size: int = 50
    client_epochs: int = 1
    rounds: int = 100
    eligibility_prob: float = 1.0
    server_lr: float = 1.0
    server_momentum: float = 0.9
    fed_eval_every: int = 25
    eval_clients: int = 10
    # n-gram baseline
    ngram_order: int = 3
    ngram_discount: float = 0.75
    # corpus synthesis
    sentences: int = 1000
    source_order: int = 3
    source_vocab: int = 500
    # split fractions
    train_frac: float = 0.8
    test_frac: float = 0.1
    eval_frac: float = 0.1
    # paths
    corpus: str = "corpus.txt"
    vocab: str = "vocab.txt"
    checkpoint: str = "model.ckpt"
    metrics: str = "metrics.csv"
    # misc
    seed: int = 0
    threads: int = 0  # 0 = unset; accepted cap on workers (current code is single-process)
    timing: bool = False  # include real wall_ms in metrics CSVs (breaks byte-identical reruns)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELDS[name].type
    try:
        if kind == "bool" or isinstance(getattr(RunConfig, name, None), bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise UsageError(f"bad value for config key {name}: {raw!r}") from exc


def parse_config_file(path: str) -> dict:
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                if "=" not in text:
                    raise UsageError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = (part.strip() for part in text.split("=", 1))
                if key not in _FIELDS:
                    raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = _coerce(key, raw)
    except OSError as exc:
        raise CliRuntimeError(f"cannot read config file {path}: {exc}") from exc
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, value in parse_config_file(args.config).items():
            setattr(cfg, key, value)
    for name in _FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "clients_per_round", None) is not None:
        cfg.clients_per_round_min = args.clients_per_round
        cfg.clients_per_round_max = args.clients_per_round
    if cfg.threads == 0:
        env = os.environ.get("FEDLM_THREADS", "").strip()
        if env:
            try:
                cfg.threads = int(env)
            except ValueError as exc:
                raise UsageError(f"FEDLM_THREADS must be an integer, got {env!r}") from exc
    if cfg.threads < 0:
        raise UsageError("threads must be non-negative")
    return cfg


# ---------------------------------------------------------------------------
# shared pipeline pieces


def _load_raw_corpus(path: str) -> list:
    if not os.path.exists(path):
        raise CliRuntimeError(f"corpus file not found: {path}")
    return corpus.load_corpus(path)


def _tokenized_split(cfg: RunConfig, raw: list) -> tuple:
    vocab = corpus.build_vocab(raw, cfg.vocab_size)
    tokenized = [corpus.tokenize(s, vocab) for s in raw]
    data = corpus.split(tokenized, (cfg.train_frac, cfg.test_frac, cfg.eval_frac), cfg.seed)
    return vocab, data


def _model_config(cfg: RunConfig, V: int) -> CifgConfig:
    return CifgConfig(V=V, D=cfg.embed_dim, H=cfg.hidden)


def _load_model_any(path: str):
    """Load a float checkpoint or a quantized one (dequantized on the fly)."""
    if not os.path.exists(path):
        raise CliRuntimeError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == CHECKPOINT_MAGIC:
        return load_checkpoint(path)
    if magic == QUANTIZED_MAGIC:
        return dequantize(load_quantized(path))
    raise CliRuntimeError(f"{path}: not a model checkpoint (magic {magic!r})")


def _check_dims(model, vocab) -> None:
    if model.config.V != vocab.V:
        raise CliRuntimeError(
            f"checkpoint vocabulary size {model.config.V} does not match vocab file ({vocab.V})"
        )


# ---------------------------------------------------------------------------
# commands


def cmd_gen(cfg: RunConfig) -> int:
    sentences = corpus.synthesize_corpus(cfg.source_order, cfg.source_vocab, cfg.sentences, cfg.seed)
    corpus.save_corpus(cfg.corpus, sentences)
    print(f"wrote {len(sentences)} sentences to {cfg.corpus}")
    return 0


def cmd_train_server(cfg: RunConfig) -> int:
    raw = _load_raw_corpus(cfg.corpus)
    vocab, data = _tokenized_split(cfg, raw)
    model = init_model(_model_config(cfg, vocab.V), derive_seed(cfg.seed, "central-init"))
    train_cfg = central.CentralConfig(
        lr=cfg.lr, batch_size=cfg.batch_size, max_steps=cfg.max_steps,
        eval_every=cfg.eval_every, seed=cfg.seed,
    )
    trained, rows = central.train_centralized(model, data, train_cfg)
    save_checkpoint(cfg.checkpoint, trained)
    corpus.save_vocab(cfg.vocab, vocab)
    evaluate.write_metrics_csv(cfg.metrics, rows, include_timing=cfg.timing)
    last = rows[-1]
    print(
        f"trained {cfg.max_steps} steps on {len(data.train)} sentences; "
        f"final top-1 {last.top1:.4f}, top-3 {last.top3:.4f}"
    )
    print(f"checkpoint: {cfg.checkpoint}  vocab: {cfg.vocab}  metrics: {cfg.metrics}")
    return 0


def cmd_train_federated(cfg: RunConfig) -> int:
    raw = _load_raw_corpus(cfg.corpus)
    vocab, data = _tokenized_split(cfg, raw)
    population = corpus.partition_clients(
        data.train, cfg.clients, cfg.mean_shard, derive_seed(cfg.seed, "train-clients")
    )
    eval_population = None
    if data.eval and cfg.eval_clients > 0:
        eval_population = corpus.partition_clients(
            data.eval,
            min(cfg.eval_clients, len(data.eval)),
            max(1, len(data.eval) // max(1, cfg.eval_clients)),
            derive_seed(cfg.seed, "eval-clients"),
        )
    fed_cfg = fedavg.FedConfig(
        clients_per_round_min=cfg.clients_per_round_min,
        clients_per_round_max=cfg.clients_per_round_max,
        client_lr=cfg.client_lr,
        client_batch_size=cfg.client_batch_size,
        client_epochs=cfg.client_epochs,
        total_rounds=cfg.rounds,
        eligibility_prob=cfg.eligibility_prob,
        seed=cfg.seed,
        server_lr=cfg.server_lr,
        server_momentum=cfg.server_momentum,
        eval_every=cfg.fed_eval_every,
    )
    trained, rows = fedavg.run_federated(
        population, fed_cfg, _model_config(cfg, vocab.V), eval_population=eval_population
    )
    save_checkpoint(cfg.checkpoint, trained)
    corpus.save_vocab(cfg.vocab, vocab)
    evaluate.write_metrics_csv(cfg.metrics, rows, include_timing=cfg.timing)
    last = rows[-1]
    print(
        f"ran {cfg.rounds} rounds over {len(population)} clients; "
        f"final top-1 {last.top1:.4f} ± {last.top1_stderr:.4f}, top-3 {last.top3:.4f}"
    )
    print(f"checkpoint: {cfg.checkpoint}  vocab: {cfg.vocab}  metrics: {cfg.metrics}")
    return 0


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    vocab = _load_vocab_file(cfg.vocab)
    model = _load_model_any(cfg.checkpoint)
    _check_dims(model, vocab)
    raw = _load_raw_corpus(args.data)
    data = [corpus.tokenize(s, vocab) for s in raw]
    if args.fed_eval:
        shards = corpus.partition_clients(
            data,
            min(cfg.eval_clients, len(data)),
            max(1, len(data) // max(1, cfg.eval_clients)),
            derive_seed(cfg.seed, "eval-clients"),
        )
        r1 = fedavg.federated_eval(model, shards, 1)
        r3 = fedavg.federated_eval(model, shards, 3)
        note = " (stderr degenerate: single client)" if r1.degenerate else ""
        print(f"top-1 {r1.recall:.4f} ± {r1.stderr:.4f}{note}")
        print(f"top-3 {r3.recall:.4f} ± {r3.stderr:.4f}")
    else:
        top1 = evaluate.recall_topk(model, data, 1)
        top3 = evaluate.recall_topk(model, data, 3)
        print(f"top-1 {top1:.4f}")
        print(f"top-3 {top3:.4f}")
    return 0


def _load_vocab_file(path: str):
    if not os.path.exists(path):
        raise CliRuntimeError(f"vocabulary file not found: {path}")
    return corpus.load_vocab(path)


def cmd_compare(cfg: RunConfig, args: argparse.Namespace) -> int:
    vocab = _load_vocab_file(cfg.vocab)
    raw_eval = _load_raw_corpus(args.data)
    data = [corpus.tokenize(s, vocab) for s in raw_eval]

    ngram_train = None
    models = []
    for token in args.models.split(","):
        token = token.strip()
        if not token:
            continue
        if token in ("ngram", "unigram"):
            if ngram_train is None:
                raw = _load_raw_corpus(cfg.corpus)
                _, split_data = _tokenized_split(cfg, raw)
                ngram_train = split_data.train
            order = 1 if token == "unigram" else cfg.ngram_order
            table = ngram.train_ngram(ngram_train, order, cfg.ngram_discount, vocab.V)
            models.append((token, table))
        else:
            model = _load_model_any(token)
            _check_dims(model, vocab)
            models.append((os.path.basename(token), model))
    if not models:
        raise UsageError("no models given")
    report = evaluate.compare_report(models, data, ks=(1, 3))
    print(report.as_text(), end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.as_csv())
        print(f"report: {args.out}")
    return 0


def cmd_quantize(cfg: RunConfig, args: argparse.Namespace) -> int:
    if not os.path.exists(cfg.checkpoint):
        raise CliRuntimeError(f"checkpoint not found: {cfg.checkpoint}")
    model = load_checkpoint(cfg.checkpoint)
    q = quantize(model)
    save_quantized(args.out, q)
    orig = os.path.getsize(cfg.checkpoint)
    packed = os.path.getsize(args.out)
    print(f"quantized {cfg.checkpoint} ({orig} bytes) -> {args.out} ({packed} bytes, {packed / 1e6:.3f} MB)")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--threads", type=int, dest="threads", help="worker cap (advisory; env FEDLM_THREADS is the fallback)")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--vocab-size", type=int, dest="vocab_size")
    p.add_argument("--embed-dim", type=int, dest="embed_dim")
    p.add_argument("--hidden", type=int, dest="hidden")


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train-frac", type=float, dest="train_frac")
    p.add_argument("--test-frac", type=float, dest="test_frac")
    p.add_argument("--eval-frac", type=float, dest="eval_frac")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedlm", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="synthesize a corpus file")
    _add_common(p)
    p.add_argument("--sentences", type=int, dest="sentences")
    p.add_argument("--source-order", type=int, dest="source_order")
    p.add_argument("--source-vocab", type=int, dest="source_vocab")
    p.add_argument("-o", "--out", dest="corpus", help="output corpus path")

    p = sub.add_parser("train-server", help="centralized SGD training")
    _add_common(p)
    _add_model_flags(p)
    _add_split_flags(p)
    p.add_argument("--corpus", dest="corpus")
    p.add_argument("--checkpoint", dest="checkpoint")
    p.add_argument("--vocab", dest="vocab")
    p.add_argument("--metrics", dest="metrics")
    p.add_argument("--lr", type=float, dest="lr")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--steps", type=int, dest="max_steps")
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--timing", action="store_const", const=True, dest="timing")

    p = sub.add_parser("train-federated", help="simulated FederatedAveraging training")
    _add_common(p)
    _add_model_flags(p)
    _add_split_flags(p)
    p.add_argument("--corpus", dest="corpus")
    p.add_argument("--checkpoint", dest="checkpoint")
    p.add_argument("--vocab", dest="vocab")
    p.add_argument("--metrics", dest="metrics")
    p.add_argument("--clients", type=int, dest="clients")
    p.add_argument("--mean-shard", type=int, dest="mean_shard")
    p.add_argument("--rounds", type=int, dest="rounds")
    p.add_argument("--clients-per-round", type=int, dest="clients_per_round", help="set min and max together")
    p.add_argument("--clients-per-round-min", type=int, dest="clients_per_round_min")
    p.add_argument("--clients-per-round-max", type=int, dest="clients_per_round_max")
    p.add_argument("--client-lr", type=float, dest="client_lr")
    p.add_argument("--client-batch-size", type=int, dest="client_batch_size")
    p.add_argument("--client-epochs", type=int, dest="client_epochs")
    p.add_argument("--eligibility-prob", type=float, dest="eligibility_prob")
    p.add_argument("--server-lr", type=float, dest="server_lr")
    p.add_argument("--server-momentum", type=float, dest="server_momentum")
    p.add_argument("--fed-eval-every", type=int, dest="fed_eval_every")
    p.add_argument("--eval-clients", type=int, dest="eval_clients")
    p.add_argument("--timing", action="store_const", const=True, dest="timing")

    p = sub.add_parser("eval", help="top-k recall of a checkpoint on a corpus file")
    _add_common(p)
    p.add_argument("--checkpoint", dest="checkpoint")
    p.add_argument("--vocab", dest="vocab")
    p.add_argument("--data", required=True, help="evaluation corpus file")
    p.add_argument("--fed-eval", action="store_true", help="evaluate over client shards with jackknife stderr")
    p.add_argument("--eval-clients", type=int, dest="eval_clients")

    p = sub.add_parser("compare", help="side-by-side recall of checkpoints and n-gram baselines")
    _add_common(p)
    _add_model_flags(p)
    _add_split_flags(p)
    p.add_argument("--models", required=True, help="comma list: checkpoint paths, 'ngram', 'unigram'")
    p.add_argument("--data", required=True, help="evaluation corpus file")
    p.add_argument("--corpus", dest="corpus", help="training corpus (fits n-gram baselines)")
    p.add_argument("--vocab", dest="vocab")
    p.add_argument("--ngram-order", type=int, dest="ngram_order")
    p.add_argument("--ngram-discount", type=float, dest="ngram_discount")
    p.add_argument("--out", help="also write the report as CSV")

    p = sub.add_parser("quantize", help="8-bit quantize a float checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", dest="checkpoint")
    p.add_argument("--out", required=True, help="quantized checkpoint path")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train-server":
            return cmd_train_server(cfg)
        if args.command == "train-federated":
            return cmd_train_federated(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args)
        if args.command == "compare":
            return cmd_compare(cfg, args)
        if args.command == "quantize":
            return cmd_quantize(cfg, args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"fedlm: {exc}", file=sys.stderr)
        return 1
    except (CliRuntimeError, FloatingPointError, ValueError, OSError) as exc:
        print(f"fedlm: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
