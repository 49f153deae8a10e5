"""CLI: ``serve`` runs the guidance service; ``eval-rprecision`` scores a
directory of rendered meshes against a prompt list."""

from __future__ import annotations

import argparse
import json
import logging
import sys


def build_parser():
    parser = argparse.ArgumentParser(prog="clip-service")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the guidance service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=7763)
    p_serve.add_argument("--model", default="toy",
                         help='"toy" or a local Hugging Face CLIP checkpoint id')
    p_serve.add_argument("--deterministic", action="store_true")
    p_serve.add_argument("--verbose", action="store_true")

    p_eval = sub.add_parser("eval-rprecision", help="retrieval precision over renders")
    p_eval.add_argument("--renders", required=True, help="directory with one subdir per mesh")
    p_eval.add_argument("--prompts", required=True, help="file of mesh_id<TAB>prompt lines")
    p_eval.add_argument("--model", default="toy")
    p_eval.add_argument("--patch-size", type=int, default=16)
    p_eval.add_argument("--stride", type=int, default=16)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        from .server import serve

        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
        serve(args.host, args.port, args.model, args.deterministic)
        return 0
    from .rprecision import eval_rprecision

    try:
        result = eval_rprecision(args.renders, args.prompts, args.model,
                                 args.patch_size, args.stride)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
