"""In-process sharded group-by engine.

The map phase routes records to shard accumulators by a stable hash of the
grouping key. Accumulators keep per-key value multisets rather than running
sums; the final sums come from math.fsum, whose exactly-rounded result makes
merged tables bit-identical for any shard or thread count.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

from .dp import (
    OTHER_KEY,
    BudgetAccountant,
    CellRng,
    CensoringMode,
    CensoringPolicy,
    censor_threshold,
    release_sums,
)
from .model import AggregateTable, PrivacyConfig, ProbabilityTriple, Record

QUERY_JOINT = "joint"
QUERY_FEATURE = "feature_marginal"
QUERY_PARTITION = "partition_marginal"

# Noise can leave a joint sum above one of its marginals; repaired joints are
# pulled this far below the smaller marginal probability.
CONTAINMENT_MARGIN = 1e-12


@dataclass
class ShardAccumulator:
    """Per-shard grouped observations at the three aggregation levels.

    merge() concatenates the underlying multisets, so it is associative and
    commutative up to the finalized sums regardless of how records were
    split across shards.
    """

    partial_joint: dict[tuple[str, str], list[float]] = field(default_factory=dict)
    partial_feature: dict[str, list[float]] = field(default_factory=dict)
    partial_partition: dict[str, list[float]] = field(default_factory=dict)
    row_count: int = 0

    def add(self, record: Record) -> None:
        obs = record.observation
        self.partial_joint.setdefault((record.feature, record.partition), []).append(obs)
        self.partial_feature.setdefault(record.feature, []).append(obs)
        self.partial_partition.setdefault(record.partition, []).append(obs)
        self.row_count += 1

    def merge(self, other: "ShardAccumulator") -> "ShardAccumulator":
        """Combine two accumulators into a new one; neither input is mutated."""
        merged = ShardAccumulator(row_count=0)
        merged._absorb(self)
        merged._absorb(other)
        return merged

    def _absorb(self, other: "ShardAccumulator") -> None:
        for mine, theirs in (
            (self.partial_joint, other.partial_joint),
            (self.partial_feature, other.partial_feature),
            (self.partial_partition, other.partial_partition),
        ):
            for key, values in theirs.items():
                mine.setdefault(key, []).extend(values)
        self.row_count += other.row_count

    def joint_sums(self) -> dict[tuple[str, str], float]:
        return {key: math.fsum(vals) for key, vals in sorted(self.partial_joint.items())}

    def feature_sums(self) -> dict[str, float]:
        return {key: math.fsum(vals) for key, vals in sorted(self.partial_feature.items())}

    def partition_sums(self) -> dict[str, float]:
        return {key: math.fsum(vals) for key, vals in sorted(self.partial_partition.items())}


def _shard_of(feature: str, partition: str, shards: int) -> int:
    return zlib.crc32(f"{feature}\x1f{partition}".encode("utf-8")) % shards


def accumulate(records: Iterable[Record], shards: int = 1, threads: int = 1) -> ShardAccumulator:
    """Group records into ``shards`` accumulators by key hash, then merge.

    Records must already be contribution-bounded and clamped. The merged
    result is identical for every shards/threads combination.
    """
    if shards < 1:
        raise ValueError(f"shards must be >= 1, got {shards}")
    buckets: list[list[Record]] = [[] for _ in range(shards)]
    if shards == 1:
        buckets[0] = list(records)
    else:
        for rec in records:
            buckets[_shard_of(rec.feature, rec.partition, shards)].append(rec)

    def _fill(batch: list[Record]) -> ShardAccumulator:
        acc = ShardAccumulator()
        for rec in batch:
            acc.add(rec)
        return acc

    if threads > 1 and shards > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            shard_accs = list(pool.map(_fill, buckets))
    else:
        shard_accs = [_fill(batch) for batch in buckets]
    merged = ShardAccumulator()
    for acc in shard_accs:
        merged._absorb(acc)
    return merged


def release_aggregate_table(
    acc: ShardAccumulator,
    privacy: PrivacyConfig,
    accountant: BudgetAccountant | None = None,
    *,
    threshold_override: float | None = None,
    label_prefix: str = "",
    manifest: list | None = None,
) -> AggregateTable:
    """Run the three releases (joint, feature, partition) and assemble the table.

    Each query is charged its budget_split share before release and gets its
    own censoring threshold. The grand total is derived from the released
    partition marginals, so it consumes no extra budget. Joint cells whose
    feature or partition marginal did not survive are removed here, keeping
    the table internally consistent. When ``manifest`` is given, one dict per
    query is appended describing epsilon, threshold, and censoring counts.
    """
    joint = acc.joint_sums()
    feats = acc.feature_sums()
    parts = acc.partition_sums()

    if not privacy.dp_enabled:
        tables = []
        for label, exact in ((QUERY_JOINT, joint), (QUERY_FEATURE, feats), (QUERY_PARTITION, parts)):
            released = {key: value for key, value in exact.items() if value > 0}
            tables.append(released)
            if manifest is not None:
                manifest.append(
                    {
                        "query": label_prefix + label,
                        "epsilon": 0.0,
                        "threshold": None,
                        "cells_exact": len(exact),
                        "cells_released": len(released),
                        "cells_censored": len(exact) - len(released),
                    }
                )
        released_joint, released_feats, released_parts = tables
        spent = 0.0
    else:
        sens = privacy.sensitivity
        mode = CensoringMode.OTHER_BUCKET if privacy.other_bucket else CensoringMode.DROP
        shares = [w * privacy.epsilon for w in privacy.budget_split]
        queries = (
            (QUERY_JOINT, joint, shares[0], lambda key: (OTHER_KEY, key[1])),
            (QUERY_FEATURE, feats, shares[1], None),
            (QUERY_PARTITION, parts, shares[2], None),
        )
        if accountant is not None:
            for label, _, eps_q, _ in queries:
                accountant.charge(label_prefix + label, eps_q)
        tables = []
        for label, exact, eps_q, bucket in queries:
            tau = (
                threshold_override
                if threshold_override is not None
                else censor_threshold(eps_q, privacy.delta, sens)
            )
            policy = CensoringPolicy(threshold=tau, mode=mode)
            rng = CellRng(privacy.seed, label_prefix + label)
            released = release_sums(exact, sens, eps_q, policy, rng, bucket_key=bucket)
            tables.append(released)
            if manifest is not None:
                survivors = sum(1 for key in exact if key in released)
                manifest.append(
                    {
                        "query": label_prefix + label,
                        "epsilon": eps_q,
                        "threshold": tau,
                        "cells_exact": len(exact),
                        "cells_released": len(released),
                        "cells_censored": len(exact) - survivors,
                    }
                )
        released_joint, released_feats, released_parts = tables
        spent = math.fsum(shares)

    released_joint = {
        (f, p): value
        for (f, p), value in released_joint.items()
        if f in released_feats and p in released_parts
    }
    total = math.fsum(released_parts[key] for key in sorted(released_parts))
    if not total > 0:
        raise ValueError("no partitions survived the release; total is not positive")
    return AggregateTable(
        joint=released_joint,
        feature_marginals=released_feats,
        partition_marginals=released_parts,
        total=total,
        epsilon_spent=spent,
    )


def build_probability_tables(
    table: AggregateTable,
) -> dict[tuple[str, str], ProbabilityTriple]:
    """Normalize released sums into per-pair probability triples.

    All three probability families share the released grand total as their
    denominator. Pairs whose feature or partition marginal was censored are
    dropped. Noise can leave p_xy above min(p_x, p_y); such triples are
    repaired by pulling p_xy just below the smaller marginal.
    """
    if not table.total > 0:
        raise ValueError(f"released total must be > 0, got {table.total}")
    total = table.total
    out: dict[tuple[str, str], ProbabilityTriple] = {}
    for feature, partition in sorted(table.joint):
        if feature not in table.feature_marginals or partition not in table.partition_marginals:
            continue
        p_x = min(table.feature_marginals[feature] / total, 1.0)
        p_y = min(table.partition_marginals[partition] / total, 1.0)
        p_xy = table.joint[(feature, partition)] / total
        cap = min(p_x, p_y)
        if p_xy > cap:
            p_xy = cap * (1.0 - CONTAINMENT_MARGIN)
        out[(feature, partition)] = ProbabilityTriple(p_x=p_x, p_y=p_y, p_xy=p_xy)
    return out
