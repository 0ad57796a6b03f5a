"""Batch command-line interface.

Subcommands: aggregate, rank, flip, fold, eval. Users run commands and read
the emitted files; there is no interactive mode. Numbers in output files are
written with 12 significant digits so repeated runs are byte identical. The
DPMI_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from dataclasses import dataclass, field

from .aggregate import accumulate, build_probability_tables, release_aggregate_table
from .dp import BudgetAccountant, prepare_records
from .evaluation import (
    DEFAULT_EPSILONS,
    epsilon_sweep,
    fmt_sig,
    head_tail_stability,
    runtime_compare,
    synth_generate,
    write_runtime_tsv,
    write_stability_tsv,
    write_sweep_tsv,
)
from .mi import FoldSpec, MiParams, flip, nfold, rank, rank_records
from .model import AggregateTable, PrivacyConfig, Record, Rejection, validate_record

logger = logging.getLogger(__name__)

DEFAULT_COLUMNS = ("id", "feature", "partition", "observation")


@dataclass
class RunConfig:
    """Everything one subcommand invocation needs, parsed and validated."""

    inputs: list[str]
    input_format: str  # "delimited" | "jsonl"
    columns: tuple[str, str, str, str]
    privacy: PrivacyConfig
    params: MiParams
    output: str
    output_format: str  # "tsv" | "jsonl"
    threads: int = 1
    top_k: int | None = None
    swap: bool = False
    threshold_override: float | None = None
    options: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# ingestion


def _detect_delimiter(header: str) -> str:
    return "\t" if "\t" in header else ","


def read_records(path: str, input_format: str, columns) -> tuple[list[Record], Counter, int]:
    """Read and validate one input file.

    Returns (records, rejection counts by reason, rows read). A missing
    mapped column is a hard error naming the column.
    """
    records: list[Record] = []
    rejects: Counter = Counter()
    rows_read = 0
    with open(path, "r", encoding="utf-8") as fh:
        if input_format == "jsonl":
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                rows_read += 1
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError:
                    rejects["parse"] += 1
                    continue
                try:
                    row = [obj[c] for c in columns]
                except (KeyError, TypeError):
                    rejects["fields"] += 1
                    continue
                parsed = validate_record(row)
                if isinstance(parsed, Rejection):
                    rejects[parsed.reason] += 1
                else:
                    records.append(parsed)
        else:
            header_line = fh.readline().rstrip("\r\n")
            if not header_line:
                raise ValueError(f"{path}: empty input, expected a header line")
            delim = _detect_delimiter(header_line)
            header = header_line.split(delim)
            indices = []
            for name in columns:
                if name not in header:
                    raise ValueError(f"{path}: column {name!r} not found in header {header}")
                indices.append(header.index(name))
            for line in fh:
                line = line.rstrip("\r\n")
                if not line:
                    continue
                rows_read += 1
                fields = line.split(delim)
                if max(indices) >= len(fields):
                    rejects["fields"] += 1
                    continue
                parsed = validate_record([fields[i] for i in indices])
                if isinstance(parsed, Rejection):
                    rejects[parsed.reason] += 1
                else:
                    records.append(parsed)
    return records, rejects, rows_read


# ---------------------------------------------------------------------------
# output


def write_results(results, path: str, output_format: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if output_format == "jsonl":
            for r in results:
                fh.write(
                    json.dumps(
                        {
                            "partition": r.partition,
                            "feature": r.feature,
                            "mi": float(fmt_sig(r.mi)),
                            "direction": r.direction.value,
                            "rank": r.rank,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
        else:
            fh.write("partition\tfeature\tmi\tdirection\trank\n")
            for r in results:
                fh.write(
                    f"{r.partition}\t{r.feature}\t{fmt_sig(r.mi)}\t{r.direction.value}\t{r.rank}\n"
                )


def write_manifest(path: str, events) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")


def write_aggregate_file(table: AggregateTable, path: str) -> None:
    """Persist a released table as JSON lines with full float precision."""
    with open(path, "w", encoding="utf-8") as fh:
        for (f, p), v in sorted(table.joint.items()):
            fh.write(json.dumps({"table": "joint", "feature": f, "partition": p, "value": v}) + "\n")
        for f, v in sorted(table.feature_marginals.items()):
            fh.write(json.dumps({"table": "feature_marginal", "feature": f, "value": v}) + "\n")
        for p, v in sorted(table.partition_marginals.items()):
            fh.write(json.dumps({"table": "partition_marginal", "partition": p, "value": v}) + "\n")
        fh.write(json.dumps({"table": "total", "value": table.total}) + "\n")
        fh.write(json.dumps({"table": "meta", "epsilon_spent": table.epsilon_spent}) + "\n")


def read_aggregate_file(path: str) -> AggregateTable:
    joint: dict = {}
    feats: dict = {}
    parts: dict = {}
    total = 0.0
    spent = 0.0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            kind = obj.get("table")
            if kind == "joint":
                joint[(obj["feature"], obj["partition"])] = obj["value"]
            elif kind == "feature_marginal":
                feats[obj["feature"]] = obj["value"]
            elif kind == "partition_marginal":
                parts[obj["partition"]] = obj["value"]
            elif kind == "total":
                total = obj["value"]
            elif kind == "meta":
                spent = obj.get("epsilon_spent", 0.0)
            else:
                raise ValueError(f"{path}: unknown table row {obj!r}")
    return AggregateTable(joint, feats, parts, total, spent)


# ---------------------------------------------------------------------------
# argument parsing


def _parse_pair(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected lo,hi got {text!r}")
    return float(parts[0]), float(parts[1])


def _parse_triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three weights, got {text!r}")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def _parse_floats(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p]


def _parse_columns(text: str) -> tuple[str, str, str, str]:
    parts = tuple(p.strip() for p in text.split(","))
    if len(parts) != 4 or not all(parts):
        raise argparse.ArgumentTypeError(
            f"expected four column names (id,feature,partition,observation roles), got {text!r}"
        )
    return parts  # type: ignore[return-value]


def _parse_kv(text: str) -> dict:
    out = {}
    for chunk in text.split(","):
        if not chunk:
            continue
        if "=" not in chunk:
            raise argparse.ArgumentTypeError(f"expected key=value, got {chunk!r}")
        key, value = chunk.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", action="append", default=[], help="input file (repeatable for fold)")
    common.add_argument("--format", choices=("delimited", "jsonl"), default="delimited")
    common.add_argument("--columns", type=_parse_columns, default=DEFAULT_COLUMNS,
                        metavar="ID,FEATURE,PARTITION,OBSERVATION")
    common.add_argument("--epsilon", type=float, default=1.0, help="total privacy budget")
    common.add_argument("--delta", type=float, default=1e-6, help="censoring failure probability")
    common.add_argument("--clamp", type=_parse_pair, default=(0.0, 1.0), metavar="LO,HI")
    common.add_argument("--contribution-limit", type=int, default=1)
    common.add_argument("--budget-split", type=_parse_triple, default=(0.5, 0.25, 0.25),
                        metavar="JOINT,FEATURE,PARTITION")
    common.add_argument("--threshold", type=float, default=None,
                        help="override the derived censoring threshold")
    common.add_argument("--other-bucket", action="store_true",
                        help="pool censored dimensions into an __other__ category")
    common.add_argument("--no-dp", action="store_true", help="disable the privacy mechanisms")
    common.add_argument("--tol", type=float, default=1e-16, help="probability floor for MI cells")
    common.add_argument("--top-k", type=int, default=None)
    common.add_argument("--seed", type=int, default=None, help="required unless --no-dp")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--output", required=True)
    common.add_argument("--output-format", choices=("tsv", "jsonl"), default="tsv")

    parser = argparse.ArgumentParser(
        prog="dpmi",
        description="Differentially private one-vs-all mutual information ranking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_agg = sub.add_parser("aggregate", parents=[common],
                           help="release the joint and marginal sum tables plus a manifest")
    p_agg.set_defaults(func=cmd_aggregate)

    p_rank = sub.add_parser("rank", parents=[common], help="rank features per partition by MI")
    p_rank.add_argument("--aggregate", default=None,
                        help="read a previously released aggregate file instead of raw records")
    p_rank.add_argument("--swap", action="store_true",
                        help="swap feature and partition roles (rank partitions per feature)")
    p_rank.set_defaults(func=cmd_rank)

    p_flip = sub.add_parser("flip", parents=[common],
                            help="alias for rank --swap: rank partitions per feature")
    p_flip.add_argument("--aggregate", default=None)
    p_flip.set_defaults(func=cmd_rank, swap_forced=True)

    p_fold = sub.add_parser("fold", parents=[common],
                            help="cascaded rankings where each stage seeds the next")
    p_fold.add_argument("--fold-epsilons", type=_parse_floats, required=False, default=None,
                        metavar="E1,E2,...", help="per-stage budget shares, one per --input")
    p_fold.add_argument("--seeds", default=None, help="comma-separated seed features for stage 1")
    p_fold.add_argument("--fold-top-k", type=int, default=10,
                        help="how many Presence features feed the next stage")
    p_fold.set_defaults(func=cmd_fold)

    p_eval = sub.add_parser("eval", parents=[common],
                            help="emit sweep/stability data files, or runtime with --runtime")
    p_eval.add_argument("--synth", type=_parse_kv, default=None,
                        metavar="users=N,features=N,partitions=N[,strength=S][,zipf=A]")
    p_eval.add_argument("--epsilons", type=_parse_floats, default=list(DEFAULT_EPSILONS))
    p_eval.add_argument("--trials", type=int, default=5)
    p_eval.add_argument("--stability-epsilon", type=float, default=1.0)
    p_eval.add_argument("--runtime", action="store_true",
                        help="time batched vs sequential one-vs-all runs instead of sweeping")
    p_eval.add_argument("--partitions", type=int, default=None,
                        help="override the synthetic partition count")
    p_eval.set_defaults(func=cmd_eval)

    return parser


def _config_from_args(args) -> RunConfig:
    dp_enabled = not args.no_dp
    if dp_enabled and args.seed is None:
        raise ValueError("--seed is required when privacy is enabled (pass --no-dp to opt out)")
    privacy = PrivacyConfig(
        epsilon=args.epsilon,
        delta=args.delta,
        clamp_lo=args.clamp[0],
        clamp_hi=args.clamp[1],
        contribution_limit=args.contribution_limit,
        budget_split=args.budget_split,
        seed=args.seed if args.seed is not None else 0,
        other_bucket=args.other_bucket,
        dp_enabled=dp_enabled,
    )
    return RunConfig(
        inputs=list(args.input),
        input_format=args.format,
        columns=args.columns,
        privacy=privacy,
        params=MiParams(tol=args.tol),
        output=args.output,
        output_format=args.output_format,
        threads=max(1, args.threads),
        top_k=args.top_k,
        swap=bool(getattr(args, "swap", False) or getattr(args, "swap_forced", False)),
        threshold_override=args.threshold,
    )


def _read_single_input(config: RunConfig):
    if len(config.inputs) != 1:
        raise ValueError(f"expected exactly one --input, got {len(config.inputs)}")
    return read_records(config.inputs[0], config.input_format, config.columns)


# ---------------------------------------------------------------------------
# subcommands


def cmd_aggregate(args) -> int:
    config = _config_from_args(args)
    records, rejects, rows_read = _read_single_input(config)
    prepared = prepare_records(records, config.privacy)
    acc = accumulate(prepared, shards=config.threads, threads=config.threads)
    accountant = BudgetAccountant(config.privacy.epsilon) if config.privacy.dp_enabled else None
    release_events: list = []
    table = release_aggregate_table(
        acc,
        config.privacy,
        accountant,
        threshold_override=config.threshold_override,
        manifest=release_events,
    )
    write_aggregate_file(table, config.output)
    events = [
        {
            "event": "ingest",
            "rows_read": rows_read,
            "rows_rejected": dict(sorted(rejects.items())),
            "rows_after_bounding": len(prepared),
        }
    ]
    events += [{"event": "release", **entry} for entry in release_events]
    events.append(
        {
            "event": "summary",
            "epsilon_spent": table.epsilon_spent,
            "total": table.total,
            "joint_cells": len(table.joint),
            "features": len(table.feature_marginals),
            "partitions": len(table.partition_marginals),
        }
    )
    write_manifest(config.output + ".manifest.jsonl", events)
    logger.info("aggregate written to %s (%d joint cells)", config.output, len(table.joint))
    return 0


def cmd_rank(args) -> int:
    config = _config_from_args(args)
    aggregate_path = getattr(args, "aggregate", None)
    if aggregate_path:
        table = read_aggregate_file(aggregate_path)
        tables = build_probability_tables(table)
        results = flip(tables, config.params) if config.swap else rank(tables, config.params)
        if config.top_k is not None:
            results = results[: config.top_k]
    else:
        records, rejects, _ = _read_single_input(config)
        if rejects:
            logger.info("rejected rows by reason: %s", dict(sorted(rejects.items())))
        results = rank_records(
            records,
            config.privacy,
            config.params,
            swap=config.swap,
            top_k=config.top_k,
            threads=config.threads,
            threshold_override=config.threshold_override,
        )
    write_results(results, config.output, config.output_format)
    logger.info("%d ranked pairs written to %s", len(results), config.output)
    return 0


def cmd_fold(args) -> int:
    config = _config_from_args(args)
    if not config.inputs:
        raise ValueError("fold needs at least one --input")
    fold_epsilons = args.fold_epsilons
    if fold_epsilons is None:
        fold_epsilons = [config.privacy.epsilon / len(config.inputs)] * len(config.inputs)
    if len(fold_epsilons) != len(config.inputs):
        raise ValueError(
            f"got {len(fold_epsilons)} fold epsilons for {len(config.inputs)} inputs"
        )
    if not args.seeds:
        raise ValueError("--seeds is required for the first fold")
    seeds = tuple(s for s in args.seeds.split(",") if s)
    folds = []
    for i, path in enumerate(config.inputs):
        records, _, _ = read_records(path, config.input_format, config.columns)
        folds.append(
            FoldSpec(
                records=records,
                epsilon=fold_epsilons[i],
                seeds=seeds if i == 0 else None,
                top_k=args.fold_top_k,
            )
        )
    accountant = BudgetAccountant(config.privacy.epsilon) if config.privacy.dp_enabled else None
    fold_results = nfold(folds, config.privacy, config.params, accountant, threads=config.threads)
    events = []
    for fr in fold_results:
        suffix = "tsv" if config.output_format == "tsv" else "jsonl"
        out_path = f"{config.output}.fold{fr.index}.{suffix}"
        results = fr.results[: config.top_k] if config.top_k is not None else fr.results
        write_results(results, out_path, config.output_format)
        events.append(
            {
                "event": "fold",
                "index": fr.index,
                "epsilon": fr.epsilon,
                "cohort_size": fr.cohort_size,
                "rest_size": fr.rest_size,
                "seeds": list(fr.seeds),
                "next_seeds": list(fr.next_seeds),
                "output": out_path,
            }
        )
    events.append(
        {
            "event": "summary",
            "epsilon_total": config.privacy.epsilon,
            "epsilon_spent": accountant.spent_epsilon if accountant else 0.0,
            "folds": len(fold_results),
        }
    )
    write_manifest(config.output + ".manifest.jsonl", events)
    return 0


def _build_synth_records(kv: dict, seed: int, partitions_override: int | None) -> list[Record]:
    users = int(kv.get("users", 10000))
    features = int(kv.get("features", 500))
    partitions = int(kv.get("partitions", 10))
    strength = float(kv.get("strength", 0.9))
    zipf = float(kv.get("zipf", 1.3))
    if partitions_override is not None:
        partitions = partitions_override
    return synth_generate(users, features, partitions, strength, seed, zipf_exponent=zipf)


def cmd_eval(args) -> int:
    config = _config_from_args(args)
    if args.synth is not None:
        records = _build_synth_records(args.synth, config.privacy.seed, args.partitions)
    else:
        records, _, _ = _read_single_input(config)
    os.makedirs(config.output, exist_ok=True)
    if args.runtime:
        rt = runtime_compare(records, config.params, threads=config.threads)
        write_runtime_tsv(rt, os.path.join(config.output, "runtime.tsv"))
        logger.info("runtime ratio %.2f over %d partitions", rt.ratio, rt.partitions)
        return 0
    top_k = config.top_k if config.top_k is not None else 10000
    sweep_rows = epsilon_sweep(
        records,
        config.privacy,
        config.params,
        epsilons=args.epsilons,
        trials=args.trials,
        top_k=top_k,
        threads=config.threads,
        threshold_override=config.threshold_override,
    )
    write_sweep_tsv(sweep_rows, os.path.join(config.output, "sweep.tsv"))
    stability_rows = head_tail_stability(
        records,
        config.privacy,
        config.params,
        epsilon=args.stability_epsilon,
        trials=args.trials,
        top_k=min(top_k, 100),
        threads=config.threads,
        threshold_override=config.threshold_override,
    )
    write_stability_tsv(stability_rows, os.path.join(config.output, "stability.tsv"))
    return 0


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    level = os.environ.get("DPMI_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single-line machine-parsable failure
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
