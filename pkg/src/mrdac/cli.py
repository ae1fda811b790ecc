"""Command-line entry points.

Every flag can also come from a TOML file given with ``--config``: keys are
flag names (``kp_variance`` or ``kp-variance``), either at the top level or
inside a table named after the subcommand. Explicit flags win over the
file. ``MRDAC_SEED`` overrides ``--seed``.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 I/O failure. On
failure one JSON line ``{"error": ..., "message": ..., "exit_code": ...}``
is written to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bitstream as bs
from .contrastive import ContrastiveConfig
from .errors import MrdacError
from .experiments import (ABLATION_COLUMNS, BENCHMARK_PARAMS, MacConfig, ablate_strategies,
                          mac_profile)
from .metrics import ms_ssim, psnr
from .pipeline import CodecParams, build_header, decode_stream, encode_keypoints
from .scheduler import GopConfig, Strategy, plan, validate_plan
from .seqio import FORMATS, read_frames, read_keypoints, read_meta, write_sequence_dir
from .synth import SynthConfig, synth_sequence
from .tensor import PaddingMode

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_RUNTIME, EXIT_USAGE, EXIT_IO = 1, 2, 3
CSV_COLUMNS = ("frame_index", "psnr_db", "ms_ssim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# flag groups


def _synth_flags(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--max-rotation-deg", type=float, default=30.0)
    p.add_argument("--max-translation", type=float, default=0.1)
    p.add_argument("--max-scale-delta", type=float, default=0.1)
    p.add_argument("--octaves", type=int, default=3)
    p.add_argument("--grid-k", type=int, default=3)
    p.add_argument("--no-jacobians", action="store_true")


def _gop_flags(p, max_refs=1):
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default="RRB")
    p.add_argument("--gop", type=int, default=8, help="reference spacing for RRB and BIDIR")
    p.add_argument("--rp-interval", type=int, default=8, help="reference spacing for RP and RP_RRB")
    p.add_argument("--max-refs", type=int, default=max_refs)
    p.add_argument("--max-delay-s", type=float, default=2.0)


def _codec_flags(p, defaults: CodecParams = CodecParams()):
    p.add_argument("--quant-log2", type=int, default=defaults.quant_log2)
    p.add_argument("--ref-cost-bits", type=int, default=defaults.ref_cost_bits)
    p.add_argument("--agg-sigma", type=float, default=defaults.agg_sigma)
    p.add_argument("--kp-variance", type=float, default=defaults.kp_variance)
    p.add_argument("--beta", type=float, default=defaults.beta)
    p.add_argument("--w-bg", type=float, default=defaults.w_bg)
    p.add_argument("--padding", choices=[m.value for m in PaddingMode], default=defaults.padding.value)


def _contrastive_flags(p):
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--contrastive-sym", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrdac", description="Multi-reference animation codec simulator.")
    parser.add_argument("--config", help="TOML file with flag values")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic sequence directory")
    _synth_flags(p)
    p.add_argument("--format", choices=FORMATS, default="png")
    p.add_argument("--out", required=True)

    p = sub.add_parser("encode", help="encode a sequence directory's keypoints to a container")
    p.add_argument("--input", required=True, help="sequence directory with keypoints.json")
    p.add_argument("--out", required=True, help="container file to write")
    _gop_flags(p)
    _codec_flags(p)

    p = sub.add_parser("decode", help="reconstruct frames from a container and reference frames")
    p.add_argument("--stream", required=True)
    p.add_argument("--refs", required=True, help="sequence directory holding the reference frames")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=FORMATS, default=None, help="default: same as --refs")

    p = sub.add_parser("eval", help="per-frame PSNR / MS-SSIM as CSV")
    p.add_argument("--truth", required=True)
    p.add_argument("--recon", required=True)
    p.add_argument("--stream", help="only score the ANIMATED frames of this container")
    p.add_argument("--csv", required=True)
    p.add_argument("--dat", help="also write a whitespace-separated table for plotting")

    p = sub.add_parser("ablate", help="strategy comparison at matched bits")
    p.add_argument("--seeds", type=int, default=10, help="number of seeds, starting at --seed")
    p.add_argument("--seed", type=int, default=0)
    for flag in ("--frames", "--width", "--height"):
        p.add_argument(flag, type=int, default=64)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--max-rotation-deg", type=float, default=30.0)
    p.add_argument("--grid-k", type=int, default=3)
    _gop_flags(p, max_refs=2)
    _codec_flags(p, BENCHMARK_PARAMS)
    p.add_argument("--csv", required=True)
    p.add_argument("--dat")
    p.add_argument("--strict", action="store_true", help="exit 1 if the ordering is violated")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-composite", action="store_true")

    p = sub.add_parser("macprofile", help="analytic MAC counts per reference count")
    p.add_argument("--refs", type=int, nargs="+", default=[1, 2, 4])
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--grid-k", type=int, default=3)
    p.add_argument("--channels", type=int, default=3)

    p = sub.add_parser("train", help="toy gradient descent on kp_variance, beta, sigma")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--w-bg", type=float, default=CodecParams().w_bg)
    _contrastive_flags(p)
    return parser


# ---------------------------------------------------------------------------
# config handling


def _load_config(path: str):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config {path}: {exc}") from None

    def norm(d):
        return {k.replace("-", "_"): v for k, v in d.items()}

    shared = norm({k: v for k, v in data.items() if not isinstance(v, dict)})
    tables = {k: norm(v) for k, v in data.items() if isinstance(v, dict)}
    return shared, tables


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        shared, tables = _load_config(args.config)
        choices = parser._subparsers._group_actions[0].choices
        dests = {name: {a.dest for a in sp._actions} for name, sp in choices.items()}
        everywhere = set().union(*dests.values())
        stray = sorted(set(shared) - everywhere - {"config"})
        bad_tables = sorted(set(tables) - set(choices))
        if stray or bad_tables:
            raise UsageError(f"config {args.config}: unknown keys {stray + bad_tables}")
        own = tables.get(args.command, {})
        unknown = sorted(set(own) - dests[args.command])
        if unknown:
            raise UsageError(f"config {args.config}: unknown keys for {args.command}: {unknown}")
        values = {k: v for k, v in shared.items() if k in dests[args.command]}
        values.update(own)
        choices[args.command].set_defaults(**values)
        args = parser.parse_args(argv)
    if "seed" in vars(args) and os.environ.get("MRDAC_SEED"):
        try:
            args.seed = int(os.environ["MRDAC_SEED"])
        except ValueError:
            raise UsageError(f"MRDAC_SEED must be an integer, got {os.environ['MRDAC_SEED']!r}")
    return args


def _gop(args, fps) -> GopConfig:
    return GopConfig(strategy=Strategy(args.strategy), gop_size=args.gop, rp_interval=args.rp_interval,
                     max_refs=args.max_refs, max_future_delay_s=args.max_delay_s, fps=fps)


def _params(args) -> CodecParams:
    return CodecParams(kp_variance=args.kp_variance, beta=args.beta, w_bg=args.w_bg,
                       agg_sigma=args.agg_sigma, padding=PaddingMode(args.padding),
                       quant_log2=args.quant_log2, ref_cost_bits=args.ref_cost_bits)


def _write_dat(path, columns, rows):
    with open(path, "w") as fh:
        fh.write("# " + " ".join(columns) + "\n")
        for row in rows:
            fh.write(" ".join(str(row[c]) for c in columns) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    cfg = SynthConfig(width=args.width, height=args.height, num_frames=args.frames, fps=args.fps,
                      seed=args.seed, max_rotation_deg=args.max_rotation_deg,
                      max_translation=args.max_translation, max_scale_delta=args.max_scale_delta,
                      octaves=args.octaves, grid_k=args.grid_k, with_jacobians=not args.no_jacobians)
    seq = synth_sequence(cfg)
    write_sequence_dir(args.out, dict(enumerate(seq.frames)), seq.fps, args.format,
                       list(seq.gt_keypoints))
    print(json.dumps({"out": args.out, "frames": seq.num_frames}))


def cmd_encode(args):
    meta = read_meta(args.input)
    keypoints = read_keypoints(args.input)
    gop = _gop(args, meta["fps"])
    params = _params(args)
    if params.quant_log2 is None:
        raise UsageError("encode needs --quant-log2")
    schedule = plan(len(keypoints), gop)
    problems = validate_plan(schedule, gop)
    if problems:
        raise MrdacError(f"invalid plan: {problems}")
    header = build_header((meta["height"], meta["width"]), meta["fps"], keypoints[0].num_keypoints,
                          keypoints[0].jacobians is not None, gop, params)
    records, _ = encode_keypoints(keypoints, schedule, header)
    data = bs.serialize(header, records)
    Path(args.out).write_bytes(data)
    report = bs.bitrate_report(data, bs.CostModel(params.ref_cost_bits))
    print(json.dumps({"out": args.out, "bytes": len(data), "kbps": report["kbps"],
                      "references": schedule.reference_frames}))


def cmd_decode(args):
    data = Path(args.stream).read_bytes()
    stream = bs.parse(data)
    ref_ids = [r.frame_index for r in stream.records if r.kind is bs.FrameKind.REFERENCE]
    refs = read_frames(args.refs, ref_ids)
    decoded = decode_stream(data, refs)
    fmt = args.format or read_meta(args.refs)["format"]
    write_sequence_dir(args.out, decoded.frames, stream.header.fps, fmt)
    print(json.dumps({"out": args.out, "frames": len(decoded.frames)}))


def cmd_eval(args):
    truth_meta, recon_meta = read_meta(args.truth), read_meta(args.recon)
    indices = sorted(set(truth_meta["frames"]) & set(recon_meta["frames"]))
    if args.stream:
        stream = bs.parse(Path(args.stream).read_bytes())
        animated = {r.frame_index for r in stream.records if r.kind is bs.FrameKind.ANIMATED}
        indices = [t for t in indices if t in animated]
    truth = read_frames(args.truth, indices)
    recon = read_frames(args.recon, indices)
    rows = [{"frame_index": t, "psnr_db": repr(psnr(recon[t], truth[t])),
             "ms_ssim": repr(ms_ssim(recon[t], truth[t]))} for t in indices]
    with open(args.csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    if args.dat:
        _write_dat(args.dat, CSV_COLUMNS, rows)
    mean = float(np.mean([float(r["psnr_db"]) for r in rows])) if rows else float("nan")
    print(json.dumps({"csv": args.csv, "frames": len(rows), "mean_psnr_db": mean}))


def cmd_ablate(args):
    synth = SynthConfig(width=args.width, height=args.height, num_frames=args.frames, fps=args.fps,
                        max_rotation_deg=args.max_rotation_deg, grid_k=args.grid_k)
    result = ablate_strategies(range(args.seed, args.seed + args.seeds), _gop(args, args.fps),
                               _params(args), synth)
    Path(args.csv).write_text(result.to_csv(), encoding="utf-8")
    if args.dat:
        _write_dat(args.dat, ABLATION_COLUMNS, result.rows)
    print(json.dumps({"summary": result.summary, "ordering_ok": result.ordering_ok}))
    if args.strict and not result.ordering_ok:
        raise MrdacError("strategy ordering RP_RRB >= RP >= RRB violated")


def cmd_gradcheck(args):
    from .gradsuite import default_checks, run_suite
    results = run_suite(args.trials, args.seed, checks=default_checks(not args.skip_composite))
    for r in results:
        print(json.dumps({"op": r.name, "trials": r.trials, "max_rel_error": r.max_rel_error,
                          "tolerance": r.tolerance, "passed": r.passed}))
    worst = max(r.max_rel_error for r in results)
    print(json.dumps({"max_rel_error": worst, "all_passed": all(r.passed for r in results)}))
    if not all(r.passed for r in results):
        raise MrdacError("gradient check failed")


def cmd_macprofile(args):
    cfg = MacConfig(width=args.width, height=args.height, channels=args.channels,
                    num_keypoints=args.grid_k ** 2)
    for n in args.refs:
        prof = mac_profile(cfg, n)
        print(json.dumps({"num_refs": n, "total_macs": prof["total_macs"],
                          "kmacs_per_pixel": prof["macs_per_pixel"] / 1000.0}))


def cmd_train(args):
    from .training import ToyBenchmark, ToyObjective, train_toy
    objective = ToyObjective(tuple(ToyBenchmark().build()), w_bg=args.w_bg,
                             contrastive=ContrastiveConfig(tau=args.tau, symmetric=args.contrastive_sym))
    result = train_toy(objective, args.steps, args.lr, optimizer=args.optimizer)
    print(json.dumps({"losses": result.losses, "params": result.params}))


COMMANDS = {
    "synth": cmd_synth, "encode": cmd_encode, "decode": cmd_decode, "eval": cmd_eval,
    "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "macprofile": cmd_macprofile,
    "train": cmd_train,
}


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    except OSError as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_IO)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_IO)
    except (MrdacError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_RUNTIME)
    return 0


if __name__ == "__main__":
    sys.exit(main())
