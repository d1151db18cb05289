"""``musim`` command line: generate, augment, split, train, eval, compare,
serve and play.

Exit status is 0 on success, 1 when an operation fails and 2 on usage errors.
Values from ``--config`` (a flat JSON object keyed by option name) are used as
defaults and explicit flags override them. The seed falls back to
``MUSIM_SEED`` and then to 0.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("musim")


class UsageError(Exception):
    pass


def _ratios(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad ratios {text!r}") from e
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("ratios need three comma-separated values")
    return parts


def _sizes(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad sizes {text!r}") from e
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("sizes need three comma-separated values")
    return parts


def _rule_counts(text: str) -> dict[str, int]:
    out = {}
    for item in filter(None, text.split(",")):
        name, _, value = item.partition("=")
        try:
            out[name.strip()] = int(value)
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"bad rule count {item!r}") from e
    return out


def _addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad address {text!r}, expected host:port") from e


def _add_policy(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--model", help="trained model file")
    g.add_argument("--oracle", action="store_true", help="use the rule-based oracle as ELD (default)")


def _common(top: bool) -> argparse.ArgumentParser:
    # Global options are accepted before and after the command; the
    # subcommand copies must not reset values given before it.
    kw = {} if top else {"default": argparse.SUPPRESS}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (default: $MUSIM_SEED or 0)", **kw)
    common.add_argument("--config", help="JSON file with default option values", **kw)
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="musim", description="Multimodal ELD user simulator.", parents=[_common(top=True)]
    )
    common = _common(top=False)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("generate", parents=[common], help="synthesize a corpus with the oracle as ELD")
    p.add_argument("--noise", type=float, default=0.2, help="per-turn HEL mistake probability")
    p.add_argument("--dialogues", type=int, default=200)
    p.add_argument("--records", type=int, help="stop at exactly this many records")
    p.add_argument("--max-turns", type=int, default=40)
    p.add_argument("--out", help="output corpus file")

    p = sub.add_parser("augment", parents=[common], help="apply the output- and input-state augmentation rules")
    p.add_argument("input", nargs="?")
    p.add_argument("--preset", help="named rule-count preset, e.g. paper-profile")
    p.add_argument("--rule-counts", type=_rule_counts, help="RULE=N,RULE=N,...")
    p.add_argument("--out")

    p = sub.add_parser("split", parents=[common], help="shuffle and split into train/val/test")
    p.add_argument("input", nargs="?")
    p.add_argument("--ratios", type=_ratios, default=(0.8, 0.1, 0.1))
    p.add_argument("--sizes", type=_sizes, help="explicit train,val,test counts instead of ratios")
    p.add_argument("--by-dialogue", action="store_true", help="keep dialogues whole")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--prefix", default="")

    p = sub.add_parser("train", parents=[common], help="train the network")
    p.add_argument("--train", dest="train_path")
    p.add_argument("--val", dest="val_path")
    p.add_argument("--out")
    p.add_argument("--activation", choices=("identity", "tanh", "relu"), default="identity")
    p.add_argument("--hidden", type=lambda s: tuple(int(v) for v in s.split(",")), default=(64, 32))
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--report", help="write the training report (JSON) here")

    p = sub.add_parser("eval", parents=[common], help="accuracy and confusion matrices on a test corpus")
    _add_policy(p)
    p.add_argument("--test", dest="test_path")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--out")
    p.add_argument("--min-accuracy", type=float, help="fail (exit 1) if overall accuracy is below this fraction")

    p = sub.add_parser("compare", parents=[common], help="agreement with the oracle tables on all valid inputs")
    _add_policy(p)
    p.add_argument("--coherent", action="store_true", help="couple the action and DA heads")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out")

    p = sub.add_parser("serve", parents=[common], help="run the environment protocol")
    _add_policy(p)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--stdio", action="store_true", help="one session on standard streams")
    mode.add_argument("--http", action="store_true", help="HTTP service instead of the line protocol")
    p.add_argument("--addr", type=_addr, default=("127.0.0.1", 7878), help="host:port")
    p.add_argument("--max-turns", type=int, default=40)

    p = sub.add_parser("play", parents=[common], help="interactive session on the terminal")
    _add_policy(p)
    p.add_argument("--max-turns", type=int, default=40)
    p.add_argument("--goal", help="object_type,location,object")
    parser.subcommands = sub.choices
    return parser


def _resolve(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("no command given")
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
        if not isinstance(overrides, dict):
            raise UsageError("config must be a flat JSON object")
        sub = parser.subcommands[args.command]
        known = {a.dest for a in sub._actions} | {a.dest for a in parser._actions}
        defaults = {}
        for key, value in overrides.items():
            key = key.replace("-", "_")
            if key not in known or key in ("help", "command", "config"):
                raise UsageError(f"unknown config key {key!r}")
            defaults[key] = tuple(value) if isinstance(value, list) else value
        # Config values become defaults; a second parse lets flags win.
        # Global options go on the top parser so a flag before the command wins too.
        top = {a.dest for a in parser._actions}
        parser.set_defaults(**{k: v for k, v in defaults.items() if k in top})
        sub.set_defaults(**{k: v for k, v in defaults.items() if k not in top})
        args = parser.parse_args(argv)
    if args.seed is None:
        env = os.environ.get("MUSIM_SEED")
        try:
            args.seed = int(env) if env else 0
        except ValueError as e:
            raise UsageError(f"MUSIM_SEED is not an integer: {env!r}") from e
    return args


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        flags = {"train_path": "--train", "val_path": "--val", "test_path": "--test", "input": "INPUT"}
        names = ", ".join(flags.get(m, "--" + m.replace("_", "-")) for m in missing)
        raise UsageError(f"{args.command}: missing {names}")


def _policy(args):
    from .env import make_policy

    return make_policy(getattr(args, "model", None), None)


# -- commands ----------------------------------------------------------------


def cmd_generate(args) -> int:
    from .corpus import save_corpus, synthesize_corpus
    from .oracle import OraclePolicy

    _need(args, "out")
    n = args.dialogues if args.records is None else 10**9
    c = synthesize_corpus(OraclePolicy(), args.noise, n, args.seed, max_records=args.records, max_turns=args.max_turns)
    save_corpus(c, args.out)
    log.info("wrote %d records to %s", len(c), args.out)
    return 0


def cmd_augment(args) -> int:
    from .corpus import AugmentConfig, augment, load_corpus, load_preset, save_corpus

    _need(args, "input", "out")
    counts = {}
    if args.preset:
        counts.update(load_preset(args.preset)["per_rule_counts"])
    if args.rule_counts:
        counts.update(args.rule_counts)
    if not counts:
        raise UsageError("augment: give --preset or --rule-counts")
    try:
        cfg = AugmentConfig(counts, args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from e
    c = load_corpus(args.input)
    out = augment(c, cfg)
    save_corpus(out, args.out)
    log.info("augmented %d -> %d records, wrote %s", len(c), len(out), args.out)
    return 0


def cmd_split(args) -> int:
    from .corpus import load_corpus, save_corpus, split

    _need(args, "input")
    c = load_corpus(args.input)
    try:
        parts = split(c, args.ratios, args.seed, by_dialogue=args.by_dialogue, sizes=args.sizes)
    except ValueError as e:
        raise UsageError(str(e)) from e
    out_dir = Path(args.out_dir)
    for name, part in zip(("train", "val", "test"), parts):
        path = out_dir / f"{args.prefix}{name}.jsonl"
        save_corpus(part, path)
        log.info("%s: %d records -> %s", name, len(part), path)
    return 0


def cmd_train(args) -> int:
    from .corpus import load_corpus
    from .io import atomic_write_text
    from .model import TrainConfig, save_model, train

    _need(args, "train_path", "val_path", "out")
    try:
        cfg = TrainConfig(
            max_epochs=args.epochs,
            patience=args.patience,
            learning_rate=args.lr,
            batch_size=args.batch_size,
            seed=args.seed,
            activation=args.activation,
            hidden_dims=tuple(args.hidden),
            dropout=args.dropout,
        )
    except ValueError as e:
        raise UsageError(str(e)) from e
    model, report = train(load_corpus(args.train_path), load_corpus(args.val_path), cfg)
    save_model(model, args.out)
    log.info("best epoch %d of %d, wrote %s", report.best_epoch, report.stopped_at_epoch, args.out)
    if args.report:
        atomic_write_text(args.report, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def _emit(text: str, out: str | None) -> None:
    from .io import atomic_write_text

    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def cmd_eval(args) -> int:
    from .corpus import load_corpus
    from .evaluation import OracleAsModel, evaluate, render_report
    from .model import load_model

    _need(args, "test_path")
    model = load_model(args.model) if args.model else OracleAsModel()
    report = evaluate(model, load_corpus(args.test_path))
    _emit(render_report(report, args.format), args.out)
    if args.min_accuracy is not None and report.overall_accuracy < args.min_accuracy:
        log.error("overall accuracy %.4f is below %.4f", report.overall_accuracy, args.min_accuracy)
        return 1
    return 0


def cmd_compare(args) -> int:
    from .evaluation import OracleAsModel, compare_to_oracle, render_agreement
    from .model import load_model
    from .oracle import enumerate_valid_inputs

    model = load_model(args.model) if args.model else OracleAsModel()
    report = compare_to_oracle(model, enumerate_valid_inputs(), coherent=args.coherent)
    if args.format == "json":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    else:
        text = render_agreement(report)
    _emit(text, args.out)
    return 0


def cmd_serve(args) -> int:
    from .env import EnvConfig, make_policy
    from .server import serve_stdio, serve_tcp

    cfg = EnvConfig(max_turns=args.max_turns, seed=args.seed)
    model_path = args.model
    if args.stdio:
        serve_stdio(make_policy(model_path), cfg)
        return 0
    host, port = args.addr
    if args.http:
        import uvicorn

        from .api import create_app

        uvicorn.run(create_app(lambda: make_policy(model_path), cfg), host=host, port=port, log_level="warning")
        return 0
    asyncio.run(serve_tcp(lambda: make_policy(model_path), cfg, host, port))
    return 0


PLAY_HELP = """\
Enter a HEL move as:  <DA> <ACTION> [point=T] [ho=HOTYPE@T] [say=T ...]
  DA      one of: {das}
  ACTION  one of: {actions}
  HOTYPE  one of: {hos}
  T       L:<location> | O:<object>:<type> | O::<type>
Other commands: reset, help, quit.  Raw hel_move JSON lines are accepted too.
Example: Check VerifyOT say=O::bowl
"""


def parse_play_move(line: str):
    from .domain import DialogueAct, HapticOstensiveEvent, HelAction, HoType, Move, PointingEvent, TargetRef

    def target(text: str) -> TargetRef:
        kind, _, rest = text.partition(":")
        if kind == "L":
            return TargetRef.location(rest)
        if kind == "O":
            ident, _, otype = rest.partition(":")
            return TargetRef.obj(ident or None, otype)
        raise ValueError(f"bad target {text!r}")

    parts = line.split()
    if len(parts) < 2:
        raise ValueError("need at least a DA and an action")
    da, action = DialogueAct[parts[0]], HelAction[parts[1]]
    pointing = ho = None
    said = []
    for token in parts[2:]:
        key, _, value = token.partition("=")
        if key == "point":
            pointing = PointingEvent(target(value))
        elif key == "ho":
            ho_type, _, t = value.partition("@")
            ho = HapticOstensiveEvent(target(t), HoType[ho_type])
        elif key == "say":
            said.append(target(value))
        else:
            raise ValueError(f"unknown field {key!r}")
    return Move.hel(da, action, pointing, ho, tuple(said))


def cmd_play(args, stdin=None, stdout=None) -> int:
    from .domain import DialogueAct, HelAction, HoType, WorldGoal
    from .env import EnvConfig, MalformedMove, Session, SessionDone
    from .protocol import ProtocolError, parse_request
    from .server import describe_eld

    stdin = stdin or sys.stdin
    out = stdout or sys.stdout
    goal = None
    if args.goal:
        try:
            goal = WorldGoal.make(*args.goal.split(","))
        except (TypeError, ValueError) as e:
            raise UsageError(f"bad --goal {args.goal!r}: {e}") from e
    session = Session(_policy(args), EnvConfig(max_turns=args.max_turns, seed=args.seed))

    def show_reset():
        move = session.reset(goal, args.seed)
        g = session.goal
        out.write(f"goal: {g.target_object.identity} ({g.target_object_type}) in the {g.target_location}\n")
        out.write(f"{describe_eld(int(move.da), int(move.eld_action))}   belief {session.belief}\n")

    help_text = PLAY_HELP.format(
        das=" ".join(d.name for d in DialogueAct),
        actions=" ".join(a.name for a in HelAction),
        hos=" ".join(h.name for h in HoType),
    )
    out.write(help_text)
    show_reset()
    while True:
        out.write("HEL> ")
        out.flush()
        line = stdin.readline()
        if not line:
            break
        line = line.strip()
        if not line:
            continue
        if line in ("quit", "exit"):
            break
        if line == "help":
            out.write(help_text)
            continue
        if line == "reset":
            show_reset()
            continue
        try:
            move = parse_request(line).to_move() if line.startswith("{") else parse_play_move(line)
            r = session.step(move)
        except (ValueError, KeyError, ProtocolError, MalformedMove, SessionDone) as e:
            out.write(f"error: {e}\n")
            continue
        out.write(
            f"{describe_eld(int(r.eld_move.da), int(r.eld_move.eld_action))}   belief {r.belief}"
            f"   reward {r.reward:+.2f}\n"
        )
        if r.done:
            out.write(f"episode over: {r.outcome.value}, total reward {session.total_reward:+.2f}. Type reset or quit.\n")
    session.abort()
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "augment": cmd_augment,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "serve": cmd_serve,
    "play": cmd_play,
}


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _resolve(parser, argv)
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"musim: error: {e}", file=sys.stderr)
        return 2

    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
        force=True,
    )
    resolved = {k: v for k, v in sorted(vars(args).items())}
    log.info("config %s", json.dumps(resolved, default=str, sort_keys=True))
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"musim: error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as e:  # noqa: BLE001 - reported as an operation failure
        log.error("%s failed: %s: %s", args.command, type(e).__name__, e)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
