"""``acx`` command line: synth, quads, embed, train, eval, gradcheck.

Exit codes: 0 success, 1 verification or tolerance failure, 2 configuration
or input error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import commands
from .acx.train import CheckpointError, FrozenEncoderViolation, NonFiniteLossError
from .audio import AudioFormatError
from .config import ConfigError, load
from .encoder import EmbeddingFormatError, EncoderInputError
from .scenario import AssetError, ConfigurationError, SpecError

INPUT_ERRORS = (ConfigError, ConfigurationError, AssetError, SpecError, AudioFormatError,
                EmbeddingFormatError, EncoderInputError, CheckpointError, FileNotFoundError)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--seed", type=int, help="run seed (overrides config)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("--out", help="run directory (overrides paths.out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acx", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write clean corpus, assets, training corpus and the 13 test subsets")
    _common(p)
    p = sub.add_parser("quads", help="write and validate the quadruplet manifest")
    _common(p)
    p = sub.add_parser("embed", help="encode every manifest item with the frozen encoder")
    _common(p)
    p.add_argument("--manifest", help="quadruplet or corpus manifest (default: quads.jsonl)")
    p = sub.add_parser("train", help="train the projection head")
    _common(p)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--embeddings", help="embedding container (default: embeddings.acxe)")
    p = sub.add_parser("eval", help="similarity sweeps for the raw encoder and optionally a trained head")
    _common(p)
    p.add_argument("--checkpoint", help="trained head checkpoint")
    p = sub.add_parser("gradcheck", help="finite-difference check of all loss gradients")
    _common(p)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt", type=float, default=0.0, help=argparse.SUPPRESS)
    return parser


def run(args: argparse.Namespace) -> int:
    if args.command == "gradcheck":
        commands.cmd_gradcheck(args.seeds, args.tol, args.corrupt)
        return 0
    cfg = load(args.config, seed=args.seed, out=args.out)
    if args.command == "synth":
        commands.cmd_synth(cfg, jobs=args.jobs)
    elif args.command == "quads":
        commands.cmd_quads(cfg)
    elif args.command == "embed":
        commands.cmd_embed(cfg, args.manifest, jobs=args.jobs)
    elif args.command == "train":
        commands.cmd_train(cfg, args.resume, args.embeddings)
    elif args.command == "eval":
        commands.cmd_eval(cfg, args.checkpoint, jobs=args.jobs)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except commands.VerificationFailed as exc:
        print(f"acx {args.command}: verification failed: {exc}", file=sys.stderr)
        return 1
    except NonFiniteLossError as exc:
        print(f"acx {args.command}: {exc}; offending batch dumped to {exc.dump_path}", file=sys.stderr)
        return 1
    except FrozenEncoderViolation as exc:
        print(f"acx {args.command}: {exc}", file=sys.stderr)
        return 1
    except INPUT_ERRORS as exc:
        print(f"acx {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
