"""Planted two-stage synthetic data for the cascaded-ranking tests.

Stage 1 links entity ids to keyword features: planted entities express seed
and planted keywords, background entities express background keywords (with a
little planted leakage). Stage 2 links the same ids to organization features,
with planted entities concentrated in a small set of organizations that the
cascade should recover.
"""

from __future__ import annotations

import random

from dpmi.model import Record


def two_stage_dataset(
    seed: int,
    n_planted_entities: int = 1200,
    n_background_entities: int = 2400,
    n_seed_keywords: int = 3,
    n_planted_keywords: int = 17,
    n_background_keywords: int = 150,
    n_planted_orgs: int = 10,
    n_background_orgs: int = 100,
):
    """Returns (stage1_records, stage2_records, seed_keywords, planted_orgs)."""
    rng = random.Random(seed)
    keyword_pool = [f"kw{i:03d}" for i in range(n_seed_keywords + n_planted_keywords)]
    seeds = tuple(keyword_pool[:n_seed_keywords])
    planted_keywords = keyword_pool[n_seed_keywords:]
    background_keywords = [f"bg{i:03d}" for i in range(n_background_keywords)]
    orgs = [f"org{i:02d}" for i in range(n_planted_orgs)]
    background_orgs = [f"xorg{i:03d}" for i in range(n_background_orgs)]

    stage1: list[Record] = []
    stage2: list[Record] = []
    for i in range(n_planted_entities):
        uid = f"e{i:05d}"
        for s in seeds:
            if rng.random() < 0.5:
                stage1.append(Record(uid, s, "all", 1.0))
        for kw in rng.sample(planted_keywords, 4):
            stage1.append(Record(uid, kw, "all", 1.0))
        stage2.append(Record(uid, orgs[i % n_planted_orgs], "all", 1.0))
    for j in range(n_background_entities):
        uid = f"b{j:05d}"
        for kw in rng.sample(background_keywords, 5):
            stage1.append(Record(uid, kw, "all", 1.0))
        if rng.random() < 0.05:
            stage1.append(Record(uid, rng.choice(planted_keywords), "all", 1.0))
        stage2.append(Record(uid, background_orgs[j % n_background_orgs], "all", 1.0))
    return stage1, stage2, seeds, set(orgs)
