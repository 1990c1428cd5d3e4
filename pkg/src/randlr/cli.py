"""Command-line interface: ``randlr {approximate,benchmark,update,check}``.

Exit codes: 0 success, 1 unexpected library error, 2 bad arguments,
3 I/O or container errors, 4 dimension/precondition errors, 5 exactly
singular core in plain GN without fallback.
"""

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import decomp, evaluate, kernels, stability
from . import io as rio
from . import update as upd
from .errors import (
    ContainerError,
    DimensionError,
    MatrixMarketError,
    RandLRError,
    SingularCoreError,
)
from .sketch import SketchKind
from .stability import CorePath, EpsilonPolicy

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_IO, EXIT_DIM, EXIT_SINGULAR = 0, 1, 2, 3, 4, 5
DENSE_ERROR_CAP = 10**7


class UsageError(Exception):
    pass


def _default_seed():
    try:
        return int(os.environ.get("RANDLR_SEED", "0"))
    except ValueError:
        return 0


def parse_gallery(text):
    """``spectrum=geometric:0.9,m=200,n=200,seed=1,psd=0,rank=5`` -> (spec, m, n, seed, psd)."""
    fields = {}
    for item in text.split(","):
        if not item.strip():
            continue
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"gallery item {item!r} is not key=value")
        fields[key.strip().lower()] = value.strip()
    unknown = set(fields) - {"spectrum", "m", "n", "seed", "psd", "rank"}
    if unknown:
        raise UsageError(f"unknown gallery keys: {', '.join(sorted(unknown))}")
    try:
        spec = evaluate.SpectrumSpec.parse(fields.get("spectrum", "geometric:0.9"))
        if "rank" in fields:
            spec = dataclasses.replace(spec, rank=int(fields["rank"]))
        m = int(fields.get("m", fields.get("n", 200)))
        n = int(fields.get("n", m))
        seed = int(fields.get("seed", 0))
        psd = fields.get("psd", "0").lower() in ("1", "true", "yes")
    except ValueError as exc:
        raise UsageError(f"bad gallery spec {text!r}: {exc}") from None
    return spec, m, n, seed, psd


def load_input(args):
    """Returns ``(A, description)`` from ``--input`` or ``--gallery``."""
    if bool(getattr(args, "input", None)) == bool(getattr(args, "gallery", None)):
        raise UsageError("give exactly one of --input or --gallery")
    if args.input:
        return rio.read_matrix_market(args.input), {"input": args.input}
    spec, m, n, seed, psd = parse_gallery(args.gallery)
    A = evaluate.gallery(spec, m, n, seed, psd)
    return A, {"gallery": {"spectrum": spec.label, "m": m, "n": n, "seed": seed, "psd": psd}}


def parse_epsilon(text, path):
    """``rel:C`` (relative coefficient), ``abs:E`` or a bare absolute value."""
    path = CorePath.parse(path)
    if text is None:
        return EpsilonPolicy(path=path)
    mode = "absolute"
    if ":" in text:
        prefix, _, text = text.partition(":")
        mode = {"rel": "relative", "relative": "relative", "abs": "absolute", "absolute": "absolute"}.get(prefix)
        if mode is None:
            raise UsageError(f"epsilon prefix must be rel: or abs:, got {prefix!r}")
    try:
        return EpsilonPolicy(mode, float(text), path)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(obj, args):
    if getattr(args, "pretty", False):
        width = max(len(k) for k in obj) if obj else 0
        for k, v in obj.items():
            print(f"{k:<{width}}  {json.dumps(v) if isinstance(v, (dict, list)) else v}")
    else:
        print(json.dumps(obj, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    return str(o)


def _error_of(A, approx, mode):
    m, n = A.shape
    if mode == "auto":
        mode = "dense" if m * n <= DENSE_ERROR_CAP else "factored"
    if mode == "dense":
        return evaluate.dense_error(A, approx), "dense"
    return evaluate.frobenius_error_factored(A, approx), "factored"


def _core_summary(approx):
    if approx.core is None:
        return {"path": None, "flagged": False, "core_rank": None, "instability": None}
    rep = approx.core.report
    return {
        "path": approx.core.path.value,
        "flagged": bool(rep is not None and rep.flagged),
        "core_rank": approx.core.rank,
        "eps_used": approx.core.eps_used,
        "switched": approx.core.switched,
        "instability": None if rep is None else rep.to_dict(),
    }


def cmd_approximate(args):
    A, source = load_input(args)
    r = args.rank
    method = decomp.Method(args.method)
    ell = args.oversample
    if method in (decomp.Method.GN_PLAIN, decomp.Method.GN_STABILIZED) and ell is None:
        ell = decomp.default_oversampling(r)
    policy = parse_epsilon(args.epsilon, args.sgn_path)
    fallback = args.fallback == "on"
    kind = SketchKind.parse(args.sketch)

    t0 = time.perf_counter()
    if args.updatable:
        if method not in (decomp.Method.GN_PLAIN, decomp.Method.GN_STABILIZED):
            raise UsageError("--updatable needs --method gn or sgn")
        mode = "stabilized" if method is decomp.Method.GN_STABILIZED else ("fallback" if fallback else "plain")
        state = upd.UpdatableState.from_matrix(A, r, ell, args.seed, kind, mode, policy)
        approx = state.approximant()
        stored = state
    else:
        if method is decomp.Method.GN_STABILIZED or (method is decomp.Method.GN_PLAIN and fallback):
            approx = decomp.approximate(A, method.value, r, ell=ell, seed=args.seed, kind=kind,
                                        policy=policy, power=args.power, fallback=fallback)
        else:
            approx = decomp.approximate(A, method.value, r, ell=ell, seed=args.seed, kind=kind,
                                        policy=policy if method.value.startswith("nystrom") else None,
                                        power=args.power)
        stored = approx
    elapsed = time.perf_counter() - t0

    if args.output:
        rio.save_container(stored, args.output)
    summary = {
        "command": "approximate",
        **source,
        "method": method.value,
        "m": A.shape[0], "n": A.shape[1], "r": r, "ell": ell if ell is not None else 0,
        "seed": args.seed, "sketch": kind.value, "fallback": args.fallback,
        "epsilon_policy": policy.to_dict(), "power": approx.power,
        "output": args.output, "updatable": bool(args.updatable),
        "wall_ms": 1e3 * elapsed,
        **_core_summary(approx),
    }
    if args.check_error:
        err, how = _error_of(A, approx, args.check_error)
        summary["error_f"] = err
        summary["error_method"] = how
        summary["relative_error_f"] = err / max(kernels.fro_norm(A), np.finfo(float).tiny)
    _emit(summary, args)
    return EXIT_OK


def _parse_list(text, conv=str):
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if conv is int and "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(conv(part))
    return out


def cmd_benchmark(args):
    try:
        cfg = evaluate.SweepConfig(
            methods=_parse_list(args.methods),
            ranks=_parse_list(args.ranks, int),
            spectra=[evaluate.SpectrumSpec.parse(s) for s in args.spectrum],
            m=args.m, n=args.n,
            seeds=_parse_list(args.seeds, int),
            repetitions=args.repetitions,
            ell_policies=_parse_list(args.ell),
            kind=SketchKind.parse(args.sketch).value,
            matrix_seed=args.matrix_seed, psd=args.psd,
            error=args.error, fallback=args.fallback == "on",
            against_svd=args.against_svd, jobs=args.jobs,
        )
        for meth in cfg.methods:
            decomp.Method(meth)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    reports = evaluate.run_sweep(cfg)
    meta = {"command": "benchmark", "config": dataclasses.asdict(cfg), "cells": len(reports),
            "failures": sum(r.failure is not None for r in reports)}
    meta["config"]["spectra"] = [s.label for s in cfg.spectra]
    if args.output and args.output != "-":
        with open(args.output, "w", newline="") as fh:
            evaluate.write_csv(reports, fh)
        print(json.dumps(meta, sort_keys=True, default=_json_default))
    else:
        evaluate.write_csv(reports, sys.stdout)
        print(json.dumps(meta, sort_keys=True, default=_json_default), file=sys.stderr)
    if args.jsonl:
        with open(args.jsonl, "w") as fh:
            evaluate.write_jsonl(reports, fh)
    return EXIT_OK


def _load_payload(path):
    return rio.read_matrix_market(path)


def cmd_update(args):
    state = rio.load_container(args.container)
    if not isinstance(state, upd.UpdatableState):
        raise UsageError("container holds a plain approximant; create it with 'approximate --updatable'")
    before = state.next_stream
    actions = [a for a in ("append_rows", "append_cols", "additive", "increase_rank")
               if getattr(args, a) is not None]
    if len(actions) != 1:
        raise UsageError("give exactly one of --append-rows, --append-cols, --additive, --increase-rank")
    action = actions[0]
    if action == "append_rows":
        state = upd.append_rows(state, _load_payload(args.append_rows))
    elif action == "append_cols":
        state = upd.append_cols(state, _load_payload(args.append_cols))
    elif action == "additive":
        state = upd.additive_update(state, _load_payload(args.additive))
    else:
        A, _ = load_input(args)
        state = upd.resample_increase_rank(state, A, args.increase_rank)
    out = args.output or args.container
    rio.save_container(state, out)
    approx = state.approximant()
    summary = {
        "command": "update", "action": action, "container": args.container, "output": out,
        "m": state.shape[0], "n": state.shape[1], "r": state.r, "ell": state.ell,
        "seed": state.seed, "sketch": state.kind.value, "mode": state.mode,
        "next_stream_before": before, "next_stream": state.next_stream,
        **_core_summary(approx),
    }
    if args.check_error:
        if not args.reference:
            raise UsageError("--check-error needs --reference with the full updated matrix")
        A = rio.read_matrix_market(args.reference)
        if A.shape != state.shape:
            raise DimensionError(f"reference is {A.shape}, state is {state.shape}")
        err, how = _error_of(A, approx, args.check_error)
        summary.update(error_f=err, error_method=how)
    _emit(summary, args)
    return EXIT_OK


def cmd_check(args):
    if bool(args.container) == bool(args.input or args.gallery):
        raise UsageError("give either --container or a matrix (--input/--gallery)")
    summary = {"command": "check"}
    if args.container:
        obj = rio.load_container(args.container)
        summary["container"] = args.container
        if isinstance(obj, upd.UpdatableState):
            _, R = kernels.thin_qr(obj.core_raw)
            report = stability.detect(R, args.threshold)
            if args.fix and report.flagged:
                obj = dataclasses.replace(obj, mode="stabilized",
                                          policy=dataclasses.replace(obj.policy, path=CorePath.parse(args.sgn_path)))
                rio.save_container(obj, args.output or args.container)
            path = obj.approximant().path.value
        else:
            if obj.core is None:
                raise UsageError("range-finder approximants have no core to check")
            core = obj.core
            if core.path is CorePath.PLAIN_QR:
                report = stability.detect(core.T, args.threshold)
            else:
                report = core.report or stability.detect(kernels.thin_qr(core.T)[1], args.threshold)
            path = core.path.value
            if args.fix and report.flagged and core.path in (CorePath.PLAIN_QR, CorePath.DIAG_PERTURB):
                M = core.Q @ core.T if core.Z is None else (core.Q @ core.T) @ core.Z.T
                policy = obj.policy or EpsilonPolicy(path=CorePath.parse(args.sgn_path))
                policy = dataclasses.replace(policy, path=CorePath.parse(args.sgn_path))
                eps = policy.resolve(report.normR)
                new_core = dataclasses.replace(stability.build_core_truncated(M, eps, policy.path),
                                               report=report, switched=True)
                obj = dataclasses.replace(obj, core=new_core, policy=policy)
                rio.save_container(obj, args.output or args.container)
                path = new_core.path.value
    else:
        A, source = load_input(args)
        summary.update(source)
        ell = args.oversample if args.oversample is not None else decomp.default_oversampling(args.rank)
        _, _, _, _, _, M = decomp._gn_sketches(A, args.rank, ell, args.seed, SketchKind.parse(args.sketch))
        _, R = kernels.thin_qr(M)
        report = stability.detect(R, args.threshold)
        path = CorePath.PLAIN_QR.value
        if args.fix and report.flagged:
            policy = EpsilonPolicy(path=CorePath.parse(args.sgn_path))
            path = stability.build_core_truncated(M, policy.resolve(report.normR), policy.path).path.value
        summary.update(m=A.shape[0], n=A.shape[1], r=args.rank, ell=ell, seed=args.seed, sketch=args.sketch)
    summary.update(report.to_dict())
    summary["path"] = path
    summary["fixed"] = bool(args.fix and report.flagged)
    _emit(summary, args)
    return EXIT_OK


def _add_input(p):
    p.add_argument("--input", help="Matrix Market file")
    p.add_argument("--gallery", help="inline test matrix, e.g. 'spectrum=geometric:0.9,m=200,n=200,seed=1'")


def _add_sketch_args(p):
    p.add_argument("--rank", "-r", type=int, default=None)
    p.add_argument("--oversample", "-l", type=int, default=None, help="ell (default ceil(r/2))")
    p.add_argument("--seed", type=int, default=_default_seed(), help="default: $RANDLR_SEED or 0")
    p.add_argument("--sketch", choices=[k.value for k in SketchKind], default="gaussian")


def build_parser():
    parser = argparse.ArgumentParser(prog="randlr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("approximate", help="compute a low-rank approximation")
    _add_input(p)
    _add_sketch_args(p)
    p.add_argument("--method", choices=[m.value for m in decomp.Method], default="gn")
    p.add_argument("--power", type=int, default=None, help="power iterations for hmt/subspace")
    p.add_argument("--epsilon", help="rel:C, abs:E or an absolute value (default rel:10u)")
    p.add_argument("--sgn-path", default="rrqr", choices=["rrqr", "svd", "diag"])
    p.add_argument("--fallback", choices=["on", "off"], default="off")
    p.add_argument("--output", "-o", help="factor container to write")
    p.add_argument("--updatable", action="store_true", help="store an updatable state (gn/sgn)")
    p.add_argument("--check-error", nargs="?", const="auto", choices=["auto", "dense", "factored"])
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_approximate)

    p = sub.add_parser("benchmark", help="run a sweep and emit CSV")
    p.add_argument("--methods", default="gn,hmt")
    p.add_argument("--ranks", required=True, help="comma list, e.g. 50,100,200")
    p.add_argument("--spectrum", action="append", required=True, help="repeatable, e.g. algebraic:1")
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seeds", default="0", help="comma list or range, e.g. 0-9")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--ell", default="half", help="comma list of half, fixed:K, ratio:C")
    p.add_argument("--sketch", choices=[k.value for k in SketchKind], default="gaussian")
    p.add_argument("--matrix-seed", type=int, default=0)
    p.add_argument("--psd", action="store_true")
    p.add_argument("--error", choices=["auto", "dense", "factored"], default="auto")
    p.add_argument("--fallback", choices=["on", "off"], default="off")
    p.add_argument("--against-svd", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output", "-o", help="CSV path (default stdout)")
    p.add_argument("--jsonl", help="also write JSON lines here")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("update", help="update a stored state with new data")
    p.add_argument("--container", required=True)
    p.add_argument("--append-rows")
    p.add_argument("--append-cols")
    p.add_argument("--additive")
    p.add_argument("--increase-rank", type=int)
    _add_input(p)
    p.add_argument("--output", "-o")
    p.add_argument("--check-error", nargs="?", const="auto", choices=["auto", "dense", "factored"])
    p.add_argument("--reference", help="full updated matrix for --check-error")
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("check", help="instability check of a core, optionally fixed")
    p.add_argument("--container")
    _add_input(p)
    _add_sketch_args(p)
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--fix", action="store_true")
    p.add_argument("--sgn-path", default="rrqr", choices=["rrqr", "svd", "diag"])
    p.add_argument("--output", "-o")
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in ("approximate",) and args.rank is None:
            raise UsageError("--rank is required")
        if args.command == "check" and not args.container and args.rank is None:
            raise UsageError("--rank is required when checking a matrix")
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
    except SingularCoreError as exc:
        print(f"randlr: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except DimensionError as exc:
        print(f"randlr: {exc}", file=sys.stderr)
        return EXIT_DIM
    except (ContainerError, MatrixMarketError, OSError) as exc:
        print(f"randlr: {exc}", file=sys.stderr)
        return EXIT_IO
    except RandLRError as exc:
        print(f"randlr: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
