"""Command-line entry point.

Subcommands: synth, extract, align, train, gradcheck, evaluate, det. Flags
are long-form only and every path is explicit. The environment variable
TASIGN_SEED overrides --seed when set. Exit codes: 0 success, 2 usage,
3 parse, 4 numeric, 5 I/O.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import ingest, network, protocol, report
from .errors import ConfigurationError, NumericError, ParseError, TasignError
from .features import (
    channels_tsv,
    extract_time_functions,
    normalize,
    parse_channel_names,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_NUMERIC = 4
EXIT_IO = 5

GRADCHECK_TOLERANCE = 1e-4


def _seed_value(args) -> int:
    env = os.environ.get("TASIGN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"TASIGN_SEED is not an integer: {env!r}") from None
    return args.seed


def _entry_for_file(path: Path, manifest_path: str | None) -> ingest.ManifestEntry:
    if manifest_path:
        manifest = ingest.load_manifest(manifest_path)
        for e in manifest.entries:
            if manifest.resolve(e.file_path) == path or e.file_path == str(path):
                return e
        raise ConfigurationError(f"{path} not listed in manifest {manifest_path}")
    return ingest.ManifestEntry(
        file_path=path.name, user_id="unknown", session=1,
        device="unknown", input_kind="stylus", label="genuine",
    )


def _load_timefns(path_str: str, manifest_path: str | None, normalized: bool):
    path = Path(path_str)
    entry = _entry_for_file(path, manifest_path)
    sig = ingest.parse_signature(path.read_text(encoding="utf-8"), entry)
    tf = extract_time_functions(sig)
    return normalize(tf) if normalized else tf


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_synth(args) -> int:
    config = ingest.SynthConfig(
        n_users=args.users,
        genuine_per_session=args.genuine_per_session,
        sessions=args.sessions,
        forgeries_per_user=args.forgeries,
        seed=_seed_value(args),
    )
    manifest = ingest.synth_dataset(config, args.out)
    print(f"wrote {len(manifest.entries)} signatures to {args.out}")
    print(f"manifest: {Path(args.out) / 'manifest.tsv'}")
    return EXIT_OK


def cmd_extract(args) -> int:
    tf = _load_timefns(args.input, args.manifest, args.normalize)
    _emit(channels_tsv(tf), args.out)
    return EXIT_OK


def cmd_align(args) -> int:
    from .dtw import apply_path, dtw_path
    from .features import ChannelId

    channels = parse_channel_names(args.cost_channels)
    tf_a = _load_timefns(args.first, args.manifest, normalized=True)
    tf_b = _load_timefns(args.second, args.manifest, normalized=True)
    distance, path = dtw_path(tf_a, tf_b, channels)
    pair = apply_path(tf_a, tf_b, path)

    names = [c.name for c in ChannelId]
    header = ["k", "i", "j"] + [f"a_{n}" for n in names] + [f"b_{n}" for n in names]
    lines = [f"# dtw_distance\t{format(distance, '.17g')}", "\t".join(header)]
    for k in range(path.length):
        i, j = path.pairs[k]
        row = [str(k), str(i), str(j)]
        row += [format(v, ".17g") for v in pair.a[:, k]]
        row += [format(v, ".17g") for v in pair.b[:, k]]
        lines.append("\t".join(row))
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    config = network.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        max_len=args.max_len,
        seed=_seed_value(args),
        genuine_impostor_balance=args.balance,
        validation_fraction=args.validation_fraction,
        cost_channels=parse_channel_names(args.cost_channels),
    )
    manifest = ingest.load_manifest(args.manifest)
    params, history = network.train(manifest, config)
    for stats in history:
        val = f"{stats.val_loss:.6f}" if stats.val_loss is not None else "-"
        print(f"epoch\t{stats.epoch}\ttrain_loss\t{stats.train_loss:.6f}\tval_loss\t{val}")
    network.save_checkpoint(args.out, params, config.to_dict())
    print(f"checkpoint: {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(_seed_value(args))
    params = network.init_params(_seed_value(args))
    a = rng.standard_normal((network.BRANCH_INPUT, args.len))
    b = rng.standard_normal((network.BRANCH_INPUT, args.len))
    worst = network.finite_difference_check(
        params, a, b, label=args.label,
        n_samples=args.samples, eps=args.eps, seed=_seed_value(args),
    )
    print(f"max relative error: {worst:.6e} over {args.samples} parameters")
    if worst < GRADCHECK_TOLERANCE:
        print(f"gradcheck passed (tolerance {GRADCHECK_TOLERANCE:g})")
        return EXIT_OK
    print(f"gradcheck FAILED (tolerance {GRADCHECK_TOLERANCE:g})")
    return EXIT_NUMERIC


def cmd_evaluate(args) -> int:
    manifest = ingest.load_manifest(args.manifest)
    impostors = ("skilled", "random") if args.impostors == "both" else (args.impostors,)
    config = protocol.ProtocolConfig(
        train_signatures=4 if args.protocol == "4vs1" else 1,
        impostor_kinds=impostors,
        input_kind=None if args.input == "any" else args.input,
        device=args.device,
        scorer="tarnn" if args.scorer == "tarnn" else "dtw_baseline",
        checkpoint=args.checkpoint,
        cost_channels=parse_channel_names(args.cost_channels),
    )
    comparisons = None
    if args.comparisons:
        comparisons = ingest.load_comparisons(args.comparisons, manifest)
    result = protocol.evaluate(manifest, config, comparisons=comparisons, jobs=args.jobs)
    sys.stdout.write(report.render_report(result))
    if args.out:
        written = report.write_report_files(result, args.out)
        print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


def cmd_det(args) -> int:
    records = _read_scores_tsv(Path(args.scores))
    kinds = tuple(
        k for k in protocol.IMPOSTOR_KINDS if any(s.kind == k for s, _ in records)
    )
    sections = protocol.sections_from_records(records, kinds)
    result = protocol.EvaluationReport(
        config_echo={"source": str(args.scores)},
        records=records,
        sections=sections,
    )
    sys.stdout.write(report.render_report(result))
    if args.out:
        written = report.write_report_files(result, args.out)
        print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


def _read_scores_tsv(path: Path):
    records = []
    lines = path.read_text(encoding="utf-8").split("\n")
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.startswith("#"):
            continue
        if lineno == 1 and line.startswith("enrolment\t"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ParseError(f"expected 4 tab-separated fields, got {len(fields)}", lineno)
        enrolment, test, kind, score = fields
        if kind not in ("genuine", *protocol.IMPOSTOR_KINDS):
            raise ParseError(f"unknown kind {kind!r}", lineno)
        try:
            value = float(score)
        except ValueError:
            raise ParseError(f"bad score {score!r}", lineno) from None
        spec = ingest.ComparisonSpec(tuple(enrolment.split(",")), test, kind)
        records.append((spec, value))
    if not records:
        raise ParseError(f"{path}: no score records")
    return records


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tasign",
        description="On-line signature verification: synthesis, features, "
        "DTW alignment, scorer training, and EER/DET benchmarking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic dataset")
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--sessions", type=int, default=2)
    p.add_argument("--genuine-per-session", type=int, default=4)
    p.add_argument("--forgeries", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="dump the 23 time functions as TSV")
    p.add_argument("--input", required=True, help="signature file")
    p.add_argument("--manifest", help="manifest supplying metadata for the file")
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("align", help="DTW-align two signatures and dump the result")
    p.add_argument("--first", required=True, help="signature file (reference)")
    p.add_argument("--second", required=True, help="signature file (query)")
    p.add_argument("--manifest", help="manifest supplying metadata")
    p.add_argument("--cost-channels", default="dX,dY")
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("train", help="train the scorer from scratch")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-len", type=int, default=network.DEFAULT_MAX_LEN)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--validation-fraction", type=float, default=0.1)
    p.add_argument("--balance", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--cost-channels", default="dX,dY")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--len", type=int, default=20, help="aligned pair length")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--label", type=int, choices=(0, 1), default=1)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("evaluate", help="run the benchmark protocol and report EER/DET")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scorer", choices=("dtw", "tarnn"), default="dtw")
    p.add_argument("--checkpoint", help="checkpoint for the tarnn scorer")
    p.add_argument("--protocol", choices=("1vs1", "4vs1"), default="1vs1")
    p.add_argument("--impostors", choices=("skilled", "random", "both"), default="both")
    p.add_argument("--input", choices=("stylus", "finger", "any"), default="any")
    p.add_argument("--device", help="restrict to one device")
    p.add_argument("--comparisons", help="explicit comparison file")
    p.add_argument("--cost-channels", default="dX,dY")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="directory for report files and the DET figure")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("det", help="recompute EER/DET from a scores.tsv dump")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", help="directory for report files and the DET figure")
    p.set_defaults(func=cmd_det)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help and usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TasignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
