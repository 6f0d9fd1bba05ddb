"""Command-line front end.

One subcommand per library operation plus a synthetic-fixture generator:
inspect, prune, nm-prune, apply, similarity, essential, census, report,
synth.  Exit codes: 0 success, 1 usage error, 2 data/format error.
Diagnostics go to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import curves, dynamics, masks, pruning, report, synth
from .container import DType, container_digest, list_tensors, open_container
from .errors import SparsekitError
from .filters import ALL_TENSORS, DEFAULT_PRUNABLE, TensorFilter


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _fraction(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} not in [0, 1]")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} must be >= 1")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not value > 0.0:
        raise argparse.ArgumentTypeError(f"{text} must be > 0")
    return value


def _nonnegative_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not value >= 0.0:
        raise argparse.ArgumentTypeError(f"{text} must be >= 0")
    return value


def _nm_pattern(text: str) -> tuple[int, int]:
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected N:M, got {text!r}")
    try:
        n, m = int(parts[0]), int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers in N:M, got {text!r}")
    if m < 1 or n < 1 or n > m:
        raise argparse.ArgumentTypeError(f"invalid N:M pattern {text!r}")
    return n, m


def _shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(d) for d in text.split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected e.g. 768x768")
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"bad shape {text!r}")
    return dims


def _tensor_spec(text: str) -> tuple[str, tuple[int, ...]]:
    name, sep, shape = text.rpartition(":")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected NAME:SHAPE, got {text!r}")
    return name, _shape(shape)


def _add_filter_flags(p, default_kind):
    p.add_argument("--include", action="append", default=[], metavar="GLOB",
                   help="tensor name pattern to include (repeatable)")
    p.add_argument("--exclude", action="append", default=[], metavar="GLOB",
                   help="tensor name pattern to exclude (repeatable)")
    p.add_argument("--min-ndim", type=int, default=None,
                   help="drop tensors with fewer dimensions")
    p.set_defaults(default_filter=default_kind)


def _filter_from(args) -> TensorFilter:
    if not args.include and not args.exclude and args.min_ndim is None:
        return DEFAULT_PRUNABLE if args.default_filter == "prunable" else ALL_TENSORS
    return TensorFilter(
        include=tuple(args.include) or ("*",),
        exclude=tuple(args.exclude),
        min_ndim=args.min_ndim if args.min_ndim is not None else 0,
    )


def _emit(text: str, out_path) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _cmd_inspect(args) -> int:
    with open_container(args.in_path) as container:
        metas = list_tensors(container, _filter_from(args))
        rows = [
            {
                "name": m.name,
                "dtype": m.dtype.value,
                "shape": list(m.shape),
                "numel": m.numel,
                "bytes": m.nbytes,
            }
            for m in metas
        ]
        doc = {
            "tensors": rows,
            "total_params": sum(m.numel for m in metas),
            "total_bytes": sum(m.nbytes for m in metas),
            "metadata": container.metadata or {},
        }
        if args.digest:
            doc["digest"] = container_digest(container)
    if args.format == "csv":
        lines = ["name,dtype,shape,numel,bytes"]
        lines += [
            f"{r['name']},{r['dtype']},{'x'.join(map(str, r['shape']))},"
            f"{r['numel']},{r['bytes']}"
            for r in rows
        ]
        _emit("\n".join(lines) + "\n", args.out_path)
    else:
        _emit(_json_text(doc), args.out_path)
    return 0


def _cmd_prune(args) -> int:
    spec = pruning.PruneSpec(
        target_sparsity=args.sparsity,
        scope=args.scope,
        prunable_filter=_filter_from(args),
    )
    with open_container(args.in_path) as container:
        if args.scope == "global":
            mask_set = pruning.omp_global(container, spec, threads=args.threads)
        else:
            mask_set = pruning.omp_per_tensor(container, spec, threads=args.threads)
    masks.write_mask(mask_set, args.out_path)
    print(_json_text({
        "mask": str(args.out_path),
        "method": mask_set.provenance.method,
        "target_sparsity": args.sparsity,
        "achieved_sparsity": masks.sparsity(mask_set),
        "pruned": mask_set.total_elements - mask_set.total_nnz,
        "total": mask_set.total_elements,
    }), end="")
    return 0


def _cmd_nm_prune(args) -> int:
    spec = pruning.PruneSpec(
        prunable_filter=_filter_from(args),
        nm=args.nm,
        nm_axis=args.axis,
    )
    with open_container(args.in_path) as container:
        mask_set = pruning.nm_prune(container, spec, threads=args.threads)
    masks.write_mask(mask_set, args.out_path)
    print(_json_text({
        "mask": str(args.out_path),
        "method": mask_set.provenance.method,
        "achieved_sparsity": masks.sparsity(mask_set),
        "pruned": mask_set.total_elements - mask_set.total_nnz,
        "total": mask_set.total_elements,
    }), end="")
    return 0


def _cmd_apply(args) -> int:
    mask_set = masks.read_mask(args.mask)
    with open_container(args.in_path) as container:
        masks.apply_mask_to_path(
            mask_set, container, args.out_path,
            allow_digest_mismatch=args.force,
        )
    print(_json_text({
        "output": str(args.out_path),
        "masked_tensors": len(mask_set.masks),
        "sparsity": masks.sparsity(mask_set) if mask_set.masks else 0.0,
    }), end="")
    return 0


def _cmd_similarity(args) -> int:
    if len(args.masks) < 2:
        raise _UsageError("similarity: error: need at least two mask files")
    sets = [masks.read_mask(p) for p in args.masks]
    if args.per_tensor:
        if len(sets) != 2:
            raise _UsageError("--per-tensor requires exactly two mask files")
        per = masks.cosine_similarity_per_tensor(sets[0], sets[1])
        _emit(_json_text(per), args.out_path)
        return 0
    if len(sets) == 2:
        _emit(f"{masks.cosine_similarity(sets[0], sets[1])!r}\n", args.out_path)
        return 0
    matrix = masks.similarity_matrix(sets)
    if args.format == "csv":
        lines = [",".join(repr(v) for v in row) for row in matrix.tolist()]
        _emit("\n".join(lines) + "\n", args.out_path)
    else:
        _emit(_json_text({"files": list(args.masks), "matrix": matrix.tolist()}), args.out_path)
    return 0


def _cmd_essential(args) -> int:
    curve = curves.read_curve(args.curve)
    mode = {"first": "first-crossing", "sustained": "sustained"}[args.mode]
    result = curves.detect_essential(curve, eps=args.eps, mode=mode)
    if args.format == "json":
        _emit(_json_text({
            "essential_sparsity": result.essential_sparsity,
            "threshold": result.threshold,
            "mode": result.mode,
            "no_crossing": result.no_crossing,
            "dense_below_threshold": result.dense_below_threshold,
        }), args.out_path)
    else:
        value = "none" if result.essential_sparsity is None else repr(result.essential_sparsity)
        _emit(value + "\n", args.out_path)
    return 0


def _cmd_census(args) -> int:
    filt = _filter_from(args)
    if args.manifest is None and args.in_path is None:
        raise _UsageError("census: error: provide --in or --manifest")
    if args.manifest is not None:
        series = dynamics.read_series_manifest(args.manifest)
        rows = dynamics.census_series(series, filt, args.tol, threads=args.threads)
        abrupt = dynamics.detect_abrupt(rows, args.min_jump) if len(rows) >= 2 else None
        if args.format == "json":
            _emit(_json_text({
                "tolerance": args.tol,
                "series": [{"iteration": it, "zero_fraction": f} for it, f in rows],
                "abrupt_iteration": abrupt,
            }), args.out_path)
        else:
            import io

            buf = io.StringIO()
            dynamics.write_census_csv(rows, buf)
            _emit(buf.getvalue(), args.out_path)
            if args.out_path:
                print(_json_text({"abrupt_iteration": abrupt}), end="")
        return 0
    with open_container(args.in_path) as container:
        census = dynamics.zero_census(container, filt, args.tol, threads=args.threads)
    _emit(_json_text({
        "tolerance": census.tolerance,
        "total": census.total,
        "prunable_total": census.prunable_total,
        "zero_fraction": census.zero_fraction,
        "per_tensor": census.per_tensor,
    }), args.out_path)
    return 0


def _cmd_report(args) -> int:
    if args.mask is None and args.in_path is None:
        raise _UsageError("report: error: provide --in (histogram) or --mask (components)")
    if args.mask is not None:
        rules = report.load_component_rules(args.rules) if args.rules else (
            report.packaged_component_rules()
        )
        comp = report.component_report(masks.read_mask(args.mask), rules)
        if args.format == "csv":
            import io

            buf = io.StringIO()
            comp.write_csv(buf)
            _emit(buf.getvalue(), args.out_path)
        else:
            _emit(_json_text(comp.to_json_dict()), args.out_path)
        return 0
    with open_container(args.in_path) as container:
        hist = report.weight_histogram(
            container, _filter_from(args), bins=args.bins,
            normalization=args.normalize, threads=args.threads,
        )
    if args.format == "csv":
        import io

        buf = io.StringIO()
        hist.write_csv(buf)
        _emit(buf.getvalue(), args.out_path)
    else:
        _emit(_json_text(hist.to_json_dict()), args.out_path)
    return 0


def _cmd_synth(args) -> int:
    distribution = args.dist
    spike_p = None
    if ":" in distribution:
        distribution, _, p = distribution.partition(":")
        spike_p = float(p)
    container = synth.synth_container(
        args.out_path,
        dict(args.tensor),
        distribution=distribution,
        spike_p=spike_p,
        seed=args.seed,
        dtype=DType(args.dtype),
    )
    print(_json_text({
        "output": str(args.out_path),
        "tensors": len(container.metas),
        "total_params": container.total_elements,
        "seed": args.seed,
        "distribution": args.dist,
    }), end="")
    container.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="sparsekit",
        description="Magnitude-pruning masks and sparsity analytics over "
                    "tensor-container checkpoints.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("inspect", help="list tensors and parameter totals")
    p.add_argument("--in", dest="in_path", required=True, metavar="FILE")
    p.add_argument("--out", dest="out_path", default=None, metavar="FILE")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--digest", action="store_true", help="include the content digest")
    _add_filter_flags(p, "all")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("prune", help="one-shot magnitude mask at a target sparsity")
    p.add_argument("--in", dest="in_path", required=True, metavar="FILE")
    p.add_argument("--out", dest="out_path", required=True, metavar="FILE")
    p.add_argument("--sparsity", type=_fraction, required=True)
    p.add_argument("--scope", choices=("global", "per-tensor"), default="global")
    p.add_argument("--threads", type=_positive_int, default=1)
    _add_filter_flags(p, "prunable")
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("nm-prune", help="structured N:M mask")
    p.add_argument("--in", dest="in_path", required=True, metavar="FILE")
    p.add_argument("--out", dest="out_path", required=True, metavar="FILE")
    p.add_argument("--nm", type=_nm_pattern, required=True, metavar="N:M")
    p.add_argument("--axis", type=int, default=-1, help="grouping axis (default last)")
    p.add_argument("--threads", type=_positive_int, default=1)
    _add_filter_flags(p, "prunable")
    p.set_defaults(func=_cmd_nm_prune)

    p = sub.add_parser("apply", help="zero masked-out weights in a checkpoint")
    p.add_argument("--in", dest="in_path", required=True, metavar="FILE")
    p.add_argument("--mask", required=True, metavar="FILE")
    p.add_argument("--out", dest="out_path", required=True, metavar="FILE")
    p.add_argument("--force", action="store_true",
                   help="apply even when the container digest does not match")
    p.set_defaults(func=_cmd_apply)

    p = sub.add_parser("similarity", help="cosine similarity between mask files")
    p.add_argument("masks", nargs="+", metavar="MASK")
    p.add_argument("--per-tensor", action="store_true")
    p.add_argument("--out", dest="out_path", default=None, metavar="FILE")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=_cmd_similarity)

    p = sub.add_parser("essential", help="turning point of a sparsity curve")
    p.add_argument("--curve", required=True, metavar="FILE")
    p.add_argument("--eps", type=_positive_float, default=0.01)
    p.add_argument("--mode", choices=("first", "sustained"), default="first")
    p.add_argument("--out", dest="out_path", default=None, metavar="FILE")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=_cmd_essential)

    p = sub.add_parser("census", help="near-zero weight counts")
    p.add_argument("--in", dest="in_path", default=None, metavar="FILE")
    p.add_argument("--manifest", default=None, metavar="FILE",
                   help="checkpoint-series manifest JSON")
    p.add_argument("--tol", type=_nonnegative_float, default=0.0,
                   help="|w| <= tol counts as zero")
    p.add_argument("--min-jump", type=float, default=0.05)
    p.add_argument("--out", dest="out_path", default=None, metavar="FILE")
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.add_argument("--threads", type=_positive_int, default=1)
    _add_filter_flags(p, "all")
    p.set_defaults(func=_cmd_census)

    p = sub.add_parser("report", help="weight histograms or component sparsity")
    p.add_argument("--in", dest="in_path", default=None, metavar="FILE")
    p.add_argument("--mask", default=None, metavar="FILE",
                   help="mask file for a component breakdown")
    p.add_argument("--bins", type=_positive_int, default=50)
    p.add_argument("--normalize", choices=report.NORMALIZATIONS, default="none")
    p.add_argument("--rules", default=None, metavar="FILE",
                   help="component rule file (JSON)")
    p.add_argument("--out", dest="out_path", default=None, metavar="FILE")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--threads", type=_positive_int, default=1)
    _add_filter_flags(p, "prunable")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("synth", help="deterministic synthetic checkpoint")
    p.add_argument("--out", dest="out_path", required=True, metavar="FILE")
    p.add_argument("--tensor", type=_tensor_spec, action="append", required=True,
                   metavar="NAME:SHAPE", help="e.g. layer0.weight:768x768 (repeatable)")
    p.add_argument("--dist", default="normal",
                   help="normal | uniform | spike-at-zero:P")
    p.add_argument("--dtype", choices=[d.value for d in DType], default="F32")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ValueError as exc:
        # argument combinations the flag validators cannot see in isolation
        print(f"sparsekit: error: {exc}", file=sys.stderr)
        return 1
    except SparsekitError as exc:
        print(f"sparsekit: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"sparsekit: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
