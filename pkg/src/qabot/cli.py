"""Command-line entry points: train, evaluate, compare, stats, chat, serve."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import build_model, load_checkpoint
from .decoding import (
    InferenceSession,
    compare,
    evaluate,
    format_compare_table,
)
from .errors import QabotError
from .recurrent import table4_presets
from .service import ChatService, make_server
from .text import (
    DEFAULT_MAX_INPUT_LEN,
    DEFAULT_MAX_OUTPUT_LEN,
    build_vocab,
    load_dataset,
    split,
    stats_report,
)
from .training import TrainConfig, train

DEFAULT_BIND = "127.0.0.1:8080"
BIND_ENV_VAR = "QABOT_BIND"

PRESET_NAMES = [name for name, _ in table4_presets(4, 3, 3)]


def _add_train_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epochs", type=int, default=120)
    parser.add_argument("--batch-size", type=int, default=28)
    parser.add_argument("--lr", type=float, default=0.0014, help="peak learning rate")
    parser.add_argument("--schedule", choices=["constant", "warmup"], default="warmup")
    parser.add_argument("--warmup-steps", type=int, default=4000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--grad-clip", type=float, default=1.0)
    parser.add_argument("--metrics", help="append per-step (step, lr, loss) lines here")


def _train_config(args, checkpoint_path=None, interval=0) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        base_lr=args.lr,
        schedule=args.schedule,
        warmup_steps=args.warmup_steps,
        seed=args.seed,
        grad_clip=args.grad_clip,
        checkpoint_path=checkpoint_path,
        checkpoint_interval=interval,
        metrics_path=args.metrics,
    )


def _add_length_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--max-input-len", type=int, default=DEFAULT_MAX_INPUT_LEN)
    parser.add_argument("--max-output-len", type=int, default=DEFAULT_MAX_OUTPUT_LEN)


def _add_split_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--train-fraction", type=float, default=None,
        help="hold out a test split; default trains on the whole file",
    )
    parser.add_argument("--split-seed", type=int, default=0)


def _load_splits(args):
    dataset = load_dataset(args.data)
    if args.train_fraction is None:
        return dataset, dataset, None
    train_set, test_set = split(dataset, args.train_fraction, args.split_seed)
    return dataset, train_set, test_set


def _progress_printer(quiet: bool, every: int = 50):
    if quiet:
        return None

    def report(step: int, lr: float, loss: float) -> None:
        if step == 1 or step % every == 0:
            print(f"step {step}  lr {lr:.6g}  loss {loss:.6g}", flush=True)

    return report


def cmd_stats(args) -> int:
    dataset = load_dataset(args.data)
    print(stats_report(dataset))
    if dataset.rejected:
        print(f"(rejected {dataset.rejected} pairs empty after normalization)")
    return 0


def cmd_train(args) -> int:
    dataset, train_set, _ = _load_splits(args)
    vocab = build_vocab(dataset, min_count=args.min_count)
    presets = dict(table4_presets(
        vocab.size, args.max_input_len + 2, args.max_output_len + 2
    ))
    model = build_model(presets[args.preset], seed=args.seed)
    config = _train_config(args, checkpoint_path=args.out,
                           interval=args.checkpoint_interval)
    result = train(model, vocab, train_set, config,
                   progress=_progress_printer(args.quiet))
    print(
        f"trained {args.preset} for {len(result.loss_history)} steps; "
        f"final loss {result.loss_history[-1]:.6g}; checkpoint {args.out}"
    )
    return 0


def _pick_eval_set(args, dataset, train_set, test_set):
    if args.split == "train":
        return train_set
    if args.split == "test":
        if test_set is None:
            raise QabotError("--split test requires --train-fraction")
        return test_set
    return dataset


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset, train_set, test_set = _load_splits(args)
    eval_set = _pick_eval_set(args, dataset, train_set, test_set)
    session = InferenceSession(ckpt)
    report = evaluate(session, eval_set)
    print(f"model {session.model_tag}")
    print(f"BLEU {report.score:.2f}  (BP {report.brevity_penalty:.4f}, "
          f"lengths {report.hypothesis_length}/{report.reference_length})")
    for n, p in enumerate(report.precisions, start=1):
        print(f"  p{n} {p:.4f}")
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_json_dict(), indent=2))
        print(f"report written to {args.report}")
    return 0


def cmd_compare(args) -> int:
    dataset, train_set, test_set = _load_splits(args)
    eval_set = _pick_eval_set(args, dataset, train_set, test_set)
    vocab = build_vocab(dataset, min_count=args.min_count)
    all_presets = table4_presets(
        vocab.size, args.max_input_len + 2, args.max_output_len + 2
    )
    if args.presets:
        wanted = [name.strip() for name in args.presets.split(",")]
        unknown = set(wanted) - {name for name, _ in all_presets}
        if unknown:
            raise QabotError(f"unknown presets: {', '.join(sorted(unknown))}")
        all_presets = [(n, c) for n, c in all_presets if n in wanted]
    rows = compare(
        all_presets, train_set, _train_config(args),
        eval_set=eval_set, vocab=vocab, seed=args.seed,
    )
    print(format_compare_table(rows))
    if args.report:
        payload = [row.to_json_dict() for row in rows]
        Path(args.report).write_text(json.dumps(payload, indent=2))
        print(f"report written to {args.report}")
    return 0


def cmd_chat(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    service = ChatService(InferenceSession(ckpt))
    print(f"model {service.session.model_tag}; empty line or Ctrl-D quits")
    while True:
        try:
            question = input("you> ")
        except EOFError:
            break
        if not question.strip():
            break
        reply = service.chat(question, args.max_steps)
        print(f"bot> {reply['answer']}  [{reply['latency_ms']:.0f} ms]")
    return 0


def _parse_bind(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise QabotError(f"bind address must be HOST:PORT, got {value!r}")
    return host, int(port)


def resolve_bind(flag_value=None) -> tuple[str, int]:
    """--bind beats the QABOT_BIND environment variable beats the default."""
    return _parse_bind(flag_value or os.environ.get(BIND_ENV_VAR) or DEFAULT_BIND)


def cmd_serve(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    eval_report = None
    if args.eval_report:
        eval_report = json.loads(Path(args.eval_report).read_text())
    static_dir = args.static_dir
    if static_dir is None and Path("frontend/dist").is_dir():
        static_dir = "frontend/dist"
    service = ChatService(
        InferenceSession(ckpt), static_dir=static_dir, eval_report=eval_report
    )
    host, port = resolve_bind(args.bind)
    server = make_server(service, host, port)
    actual_port = server.server_address[1]
    print(f"serving {service.session.model_tag} on http://{host}:{actual_port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qabot",
        description="Train, evaluate, and serve a neural QA chatbot.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="print dataset properties")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train one model preset")
    p.add_argument("--data", required=True)
    p.add_argument("--preset", choices=PRESET_NAMES, default="transformer")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--checkpoint-interval", type=int, default=0)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--quiet", action="store_true")
    _add_length_args(p)
    _add_split_args(p)
    _add_train_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="corpus BLEU of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default="all")
    p.add_argument("--report", help="write the machine-readable report here")
    _add_split_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="train and score the benchmark presets")
    p.add_argument("--data", required=True)
    p.add_argument("--presets", help="comma-separated subset of presets")
    p.add_argument("--split", choices=["train", "test", "all"], default="all")
    p.add_argument("--report", help="write one JSON record per model row here")
    p.add_argument("--min-count", type=int, default=1)
    _add_length_args(p)
    _add_split_args(p)
    _add_train_config_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("chat", help="interactive terminal chat")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--max-steps", type=int, default=None)
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("serve", help="HTTP JSON chat service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bind", default=None, help=f"HOST:PORT (env {BIND_ENV_VAR})")
    p.add_argument("--static-dir", default=None, help="web UI bundle directory")
    p.add_argument("--eval-report", default=None,
                   help="evaluation report JSON surfaced at /info")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(name)s %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except QabotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
