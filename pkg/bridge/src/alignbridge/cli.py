"""Command line for the export bridge.

    alignbridge export-weights    --model-id ID --out DIR
    alignbridge export-embeddings --model-id ID --corpus FILE --layers 0,6 --out DIR
    alignbridge verify            --manifest DIR/manifest.json

Exit codes: 2 usage, 3 data, 4 model/format.
"""

import argparse
import logging
import sys

from . import __version__
from .errors import BridgeError, UsageError
from .export import export_embeddings, export_weights
from .manifest import verify_manifest


def _parse_layers(text):
    if text == "all":
        return "all"
    try:
        return [int(x) for x in text.split(",") if x != ""]
    except ValueError:
        raise UsageError(f"--layers expects comma-separated integers or 'all', "
                         f"got {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(
        prog="alignbridge",
        description="Export pretrained encoders and embeddings for the "
                    "alignment toolkit.",
    )
    p.add_argument("--version", action="version",
                   version=f"alignbridge {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")

    w = sub.add_parser("export-weights", help="dump encoder weights + manifest")
    w.add_argument("--model-id", required=True,
                   help="checkpoint path or hub id")
    w.add_argument("--revision", help="checkpoint revision (hub models)")
    w.add_argument("--out", required=True, help="output directory")
    w.add_argument("--adapter-dim", type=int, default=128,
                   help="bottleneck width of the adapter slots (default 128)")
    w.add_argument("--extract-layer", type=int,
                   help="default alignment layer stored in the model header "
                        "(default: min(6, depth))")
    w.add_argument("--seed", type=int, default=0,
                   help="seed for the adapter down-projection init")

    e = sub.add_parser("export-embeddings",
                       help="dump per-layer hidden states + JSONL corpus")
    e.add_argument("--model-id", required=True)
    e.add_argument("--revision")
    e.add_argument("--corpus", required=True,
                   help="parallel text, one 'src ||| tgt' per line")
    e.add_argument("--layers", default="all",
                   help="comma-separated layer indices, or 'all' (default)")
    e.add_argument("--out", required=True)
    e.add_argument("--lang", help="language-pair label stored per record")
    e.add_argument("--gold", help="gold alignments in Pharaoh format")
    e.add_argument("--gold-index-base", type=int, choices=(0, 1), default=0)
    e.add_argument("--skip-bad", action="store_true",
                   help="drop untokenizable/overlong pairs instead of aborting")
    e.add_argument("--max-pairs", type=int,
                   help="export only the first N pairs")

    v = sub.add_parser("verify", help="re-check a manifest's file checksums")
    v.add_argument("--manifest", required=True, help="path to manifest.json")
    return p


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "export-weights":
            export_weights(args.model_id, args.out,
                           adapter_dim=args.adapter_dim,
                           extract_layer=args.extract_layer,
                           seed=args.seed, revision=args.revision)
        elif args.command == "export-embeddings":
            export_embeddings(args.model_id, args.corpus,
                              _parse_layers(args.layers), args.out,
                              lang=args.lang, gold_path=args.gold,
                              gold_index_base=args.gold_index_base,
                              skip_bad=args.skip_bad,
                              max_pairs=args.max_pairs,
                              revision=args.revision)
        elif args.command == "verify":
            verify_manifest(args.manifest)
            print("manifest ok")
        else:
            parser.print_usage(sys.stderr)
            return 2
    except BridgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
