"""Command-line entry point: one subcommand per stage plus `run` and `explain`.

Exit codes: 0 on success, 1 for usage errors, 2 for data errors.
"""

import argparse
import logging
import sys

from . import __version__
from .errors import DataError
from .pipeline import WORK_DIR_ENV, explain, load_config, run_pipeline, run_stage

logger = logging.getLogger("vulnloc")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="pipeline config file ([pipeline] section, schema_version=1)")
    p.add_argument("--work-dir", help=f"artifact directory (env {WORK_DIR_ENV} also works)")
    p.add_argument("--seed", type=int, help="root seed for every random stream")
    p.add_argument("--model-dir", help="where the test phase finds embedding.txt and model.bin")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="vulnloc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("extract", parents=[common], help="find syntax candidates in C sources")
    p.add_argument("--src")
    p.add_argument("--api-list")
    p.add_argument("--out")

    p = sub.add_parser("ingest-ir", parents=[common], help="index and check .ll modules")
    p.add_argument("--ll")
    p.add_argument("--out")

    p = sub.add_parser("slice", parents=[common], help="build the slice corpus")
    p.add_argument("--candidates")
    p.add_argument("--ir", help="module index written by ingest-ir")
    p.add_argument("--out")

    p = sub.add_parser("label", parents=[common], help="label the corpus from diffs")
    p.add_argument("--corpus")
    p.add_argument("--truth")
    p.add_argument("--out")

    p = sub.add_parser("encode", parents=[common], help="train embeddings and vectorize")
    p.add_argument("--corpus")
    p.add_argument("--dim", type=int)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--phase", choices=("learn", "test"), default="learn")
    p.add_argument("--embedding", help="embedding table to write (learn) or read (test)")
    p.add_argument("--out")

    p = sub.add_parser("train", parents=[common], help="fit the detector")
    p.add_argument("--data")
    p.add_argument("--out")

    p = sub.add_parser("detect", parents=[common], help="score samples and locate lines")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--threshold", type=float)
    p.add_argument("--subset", choices=("test", "train", "all"), default="test")
    p.add_argument("--report")

    p = sub.add_parser("eval", parents=[common], help="compare a report with ground truth")
    p.add_argument("--report")
    p.add_argument("--data")
    p.add_argument("--truth")
    p.add_argument("--program-level", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("run", parents=[common], help="run every stage of a phase")
    p.add_argument("--phase", choices=("learn", "test"), default="learn")

    p = sub.add_parser("explain", parents=[common], help="print the trace of one candidate")
    p.add_argument("candidate_id")
    return parser


def _config(args):
    overrides = {"work_dir": args.work_dir, "seed": args.seed, "model_dir": args.model_dir}
    for key in ("dim", "max_tokens", "threshold"):
        overrides[key] = getattr(args, key, None)
    if getattr(args, "api_list", None):
        overrides["api_names"] = args.api_list
    return load_config(args.config, {k: v for k, v in overrides.items() if v is not None})


def dispatch(args):
    cfg = _config(args)
    cmd = args.command
    logger.info("%s: work dir %s, seed %d", cmd, cfg.work_dir, cfg.seed)
    if cmd == "extract":
        info = run_stage(cmd, cfg, src=args.src, out=args.out)
    elif cmd == "ingest-ir":
        info = run_stage(cmd, cfg, ll_dir=args.ll, out=args.out)
    elif cmd == "slice":
        info = run_stage(cmd, cfg, candidates=args.candidates, index=args.ir, out=args.out)
    elif cmd == "label":
        info = run_stage(cmd, cfg, corpus=args.corpus, truth=args.truth, out=args.out)
    elif cmd == "encode":
        info = run_stage(cmd, cfg, phase=args.phase, corpus=args.corpus, out=args.out, embedding=args.embedding)
    elif cmd == "train":
        info = run_stage(cmd, cfg, data=args.data, out=args.out)
    elif cmd == "detect":
        info = run_stage(cmd, cfg, subset=args.subset, model=args.model, data=args.data, out=args.report)
    elif cmd == "eval":
        info = run_stage(cmd, cfg, program_level=args.program_level, report=args.report,
                         data=args.data, truth=args.truth, out=args.out)
    elif cmd == "run":
        info = run_pipeline(cfg, args.phase)
    else:
        sys.stdout.write(explain(cfg, args.candidate_id))
        return
    for key, value in sorted((info or {}).items()):
        print(f"{key}\t{value}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except DataError as exc:
        print(f"vulnloc: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"vulnloc: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # bad config values surface here
        print(f"vulnloc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
