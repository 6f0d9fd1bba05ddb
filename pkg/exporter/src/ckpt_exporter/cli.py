"""ckpt-exporter command line: export checkpoints, emit series manifests."""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

from .convert import ExportError, ExportJob, build_manifest, export


def _cmd_export(args) -> int:
    job = ExportJob(
        source=args.model,
        out_path=args.out,
        cast_to_f32=args.cast_f32,
        sidecar_path=args.sidecar,
        skip_unsupported=args.skip_unsupported,
    )
    sidecar = export(job)
    print(json.dumps({
        "output": args.out,
        "sidecar": job.sidecar,
        "tensors": len(sidecar["tensors"]),
        "total_params": sidecar["total_params"],
    }, indent=2, sort_keys=True))
    return 0


def _cmd_manifest(args) -> int:
    pairs = []
    for entry in args.entries:
        iteration, _, path = entry.partition("=")
        if not path:
            raise ExportError(f"expected ITERATION=PATH, got {entry!r}")
        pairs.append((int(iteration), path))
    if args.dir:
        pattern = re.compile(args.iter_regex)
        for path in sorted(Path(args.dir).glob(args.glob)):
            match = pattern.search(path.name)
            if match:
                pairs.append((int(match.group(1)), str(path)))
    if not pairs:
        raise ExportError("no manifest entries given")
    doc = build_manifest(pairs)
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    else:
        print(json.dumps(doc, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ckpt-exporter",
        description="Convert pretrained weights into the tensor-container "
                    "format consumed by the sparsity toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="convert one checkpoint")
    p.add_argument("--model", required=True,
                   help="hub model id or local weight file (.pt/.bin/.safetensors)")
    p.add_argument("--out", required=True, help="output container path")
    p.add_argument("--cast-f32", action="store_true",
                   help="widen F16/BF16 payloads to F32")
    p.add_argument("--sidecar", default=None,
                   help="inventory JSON path (default: <out>.json)")
    p.add_argument("--skip-unsupported", action="store_true",
                   help="drop non-float tensors instead of failing")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("manifest", help="emit a checkpoint-series manifest")
    p.add_argument("entries", nargs="*", metavar="ITERATION=PATH")
    p.add_argument("--dir", default=None, help="scan a directory of checkpoints")
    p.add_argument("--glob", default="*.safetensors")
    p.add_argument("--iter-regex", default=r"(\d+)",
                   help="regex whose first group is the iteration number")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_manifest)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ExportError as exc:
        print(f"ckpt-exporter: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ckpt-exporter: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
