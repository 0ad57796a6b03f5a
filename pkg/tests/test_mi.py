"""MI core: single-cell and 2x2 scores, direction, ranking, flip, cascade."""

import math
import random

import pytest

from dpmi.dp import BudgetAccountant, BudgetExceededError
from dpmi.mi import (
    COHORT_LABEL,
    FoldSpec,
    binary_rank,
    calc_mi,
    calc_single_mi,
    direction,
    flip,
    nfold,
    rank,
    rank_records,
    transpose_tables,
)
from dpmi.model import Direction, PrivacyConfig, ProbabilityTriple, Record

from oracles import mi_2x2, random_valid_triple

NO_DP = PrivacyConfig(epsilon=1.0, seed=0, dp_enabled=False)


class TestCalcSingleMi:
    def test_zero_joint_is_zero(self):
        assert calc_single_mi(0.5, 0.5, 0.0) == 0.0

    def test_independence_is_zero(self):
        assert calc_single_mi(0.5, 0.5, 0.25) == pytest.approx(0.0, abs=1e-15)

    def test_perfect_overlap(self):
        assert calc_single_mi(0.5, 0.5, 0.5) == pytest.approx(0.5 * math.log(2.0), abs=1e-12)

    def test_tol_floor_on_marginal_product(self):
        # product under tol is floored, keeping the log finite
        val = calc_single_mi(1e-12, 1e-12, 0.5, tol=1e-16)
        assert val == pytest.approx(0.5 * math.log(0.5 / 1e-16), abs=1e-9)

    def test_continuous_at_tol_boundary(self):
        tol = 1e-16
        below = calc_single_mi(0.5, 0.5, tol * 0.999, tol)
        at = calc_single_mi(0.5, 0.5, tol, tol)
        assert below == 0.0
        assert abs(at) < 1e-12


class TestCalcMi:
    def test_perfect_association(self):
        assert calc_mi(0.5, 0.5, 0.5) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_independence(self):
        assert calc_mi(0.3, 0.2, 0.06) == pytest.approx(0.0, abs=1e-12)

    def test_matches_direct_2x2_oracle_on_grid(self):
        rng = random.Random(2024)
        for _ in range(1000):
            p_x, p_y, p_xy = random_valid_triple(rng)
            assert calc_mi(p_x, p_y, p_xy) == pytest.approx(
                mi_2x2(p_x, p_y, p_xy), abs=1e-12
            ), (p_x, p_y, p_xy)

    def test_symmetry_in_arguments(self):
        rng = random.Random(77)
        for _ in range(500):
            p_x, p_y, p_xy = random_valid_triple(rng)
            assert calc_mi(p_x, p_y, p_xy) == pytest.approx(calc_mi(p_y, p_x, p_xy), abs=1e-15)

    def test_nonnegative_for_consistent_triples(self):
        rng = random.Random(99)
        for _ in range(500):
            p_x, p_y, p_xy = random_valid_triple(rng)
            assert calc_mi(p_x, p_y, p_xy) >= -1e-12

    def test_negative_complements_floored(self):
        # inconsistent inputs (possible under noise) still give a finite score
        val = calc_mi(0.9, 0.9, 0.5)
        assert math.isfinite(val)


class TestDirection:
    def test_presence(self):
        assert direction(0.3, 0.2, 0.15) is Direction.PRESENCE

    def test_absence(self):
        assert direction(0.3, 0.2, 0.03) is Direction.ABSENCE

    def test_tie_resolves_to_absence(self):
        # independence: both odds equal, strict comparison fails
        assert direction(0.5, 0.5, 0.25) is Direction.ABSENCE

    def test_degenerate_partition_raises(self):
        with pytest.raises(ValueError, match="p_y"):
            direction(0.5, 1.0, 0.5)


def _triple(p_x, p_y, p_xy):
    return ProbabilityTriple(p_x=p_x, p_y=p_y, p_xy=p_xy)


class TestRank:
    def test_empty_input(self):
        assert rank({}) == []

    def test_single_pair_rank_one(self):
        results = rank({("f", "p"): _triple(0.5, 0.5, 0.4)})
        assert len(results) == 1
        assert results[0].rank == 1

    def test_order_forced_by_mi(self):
        tables = {
            ("weak", "p"): _triple(0.5, 0.5, 0.26),
            ("strong", "p"): _triple(0.5, 0.5, 0.49),
        }
        results = rank(tables)
        assert [r.feature for r in results] == ["strong", "weak"]
        assert [r.rank for r in results] == [1, 2]

    def test_tie_break_is_lexicographic(self):
        tables = {
            ("b", "z"): _triple(0.5, 0.5, 0.4),
            ("a", "z"): _triple(0.5, 0.5, 0.4),
            ("a", "y"): _triple(0.5, 0.5, 0.4),
        }
        results = rank(tables)
        assert [(r.partition, r.feature) for r in results] == [("y", "a"), ("z", "a"), ("z", "b")]

    def test_warns_when_both_sides_huge(self, monkeypatch, caplog):
        import dpmi.mi as mi_module

        monkeypatch.setattr(mi_module, "CARDINALITY_WARNING", 1)
        tables = {
            (f"f{i}", f"p{j}"): _triple(0.4, 0.4, 0.3) for i in range(3) for j in range(3)
        }
        with caplog.at_level("WARNING", logger="dpmi.mi"):
            rank(tables)
        assert any("degrades" in rec.message for rec in caplog.records)

    def test_ranks_are_permutation(self):
        rng = random.Random(5)
        tables = {}
        for i in range(50):
            p_x, p_y, p_xy = random_valid_triple(rng, lo=0.05, hi=0.6)
            tables[(f"f{i}", f"p{i % 4}")] = _triple(p_x, p_y, p_xy)
        results = rank(tables)
        assert sorted(r.rank for r in results) == list(range(1, 51))
        assert all(
            results[i].mi >= results[i + 1].mi for i in range(len(results) - 1)
        )


class TestFlip:
    def test_symmetric_table_flip_equals_original(self):
        tables = {
            ("f1", "p1"): _triple(0.5, 0.5, 0.4),
            ("f2", "p2"): _triple(0.5, 0.5, 0.1),
        }
        original = rank(tables)
        flipped = flip(tables)
        assert sorted(r.mi for r in original) == pytest.approx(sorted(r.mi for r in flipped))

    def test_flip_mi_multiset_matches_swapped_records(self):
        rng = random.Random(31)
        for trial in range(10):
            records = [
                Record(f"u{i}", f"f{rng.randrange(6)}", f"p{rng.randrange(3)}", rng.random() * 4)
                for i in range(rng.randrange(30, 80))
            ]
            swapped = [Record(r.id, r.partition, r.feature, r.observation) for r in records]
            direct = rank_records(swapped, NO_DP)
            via_flip = rank_records(records, NO_DP, swap=True)
            assert len(direct) == len(via_flip)
            for a, b in zip(direct, via_flip):
                assert a == b

    def test_transpose_swaps_roles(self):
        tables = {("f", "p"): _triple(0.3, 0.6, 0.2)}
        t = transpose_tables(tables)[("p", "f")]
        assert (t.p_x, t.p_y, t.p_xy) == (0.6, 0.3, 0.2)

    def test_one_feature_appears_once_per_partition_in_flip(self):
        # a shared tool distinguishing several segments shows up once per segment
        records = []
        uid = 0
        for seg in ("alpha", "beta", "gamma"):
            for _ in range(30):
                records.append(Record(f"u{uid}", "shared_tool", seg, 1.0))
                uid += 1
            for _ in range(10):
                records.append(Record(f"u{uid}", f"{seg}_only", seg, 1.0))
                uid += 1
        flipped = rank_records(records, NO_DP, swap=True)
        tool_rows = [r for r in flipped if r.partition == "shared_tool"]
        assert {r.feature for r in tool_rows} == {"alpha", "beta", "gamma"}


class TestBatchedVsBinary:
    def test_small_equivalence(self):
        rng = random.Random(17)
        records = [
            Record(f"u{i}", f"f{rng.randrange(12)}", f"p{rng.randrange(4)}", 1.0)
            for i in range(2000)
        ]
        batched = rank_records(records, NO_DP)
        batched_mi = {(r.partition, r.feature): r.mi for r in batched}
        partitions = sorted({r.partition for r in records})
        for p in partitions:
            solo = binary_rank(records, p, NO_DP)
            for r in solo:
                if r.partition != p:
                    continue
                assert r.mi == pytest.approx(batched_mi[(p, r.feature)], abs=1e-12)


def _two_stage_records():
    # stage 1: ids expressing seed or planted features; stage 2: ids grouped by org
    rng = random.Random(404)
    stage1, stage2 = [], []
    for i in range(300):
        uid = f"e{i:03d}"
        iot = i < 100
        if iot:
            stage1.append(Record(uid, "seed_kw", "all", 1.0))
            stage1.append(Record(uid, f"plant_kw{rng.randrange(5)}", "all", 1.0))
            stage2.append(Record(uid, f"org{i % 4}", "all", 1.0))
        else:
            stage1.append(Record(uid, f"bg_kw{rng.randrange(40)}", "all", 1.0))
            stage2.append(Record(uid, f"bgorg{i % 25}", "all", 1.0))
    return stage1, stage2


class TestNfold:
    def test_single_fold_matches_manual_binary_rank(self):
        stage1, _ = _two_stage_records()
        folds = [FoldSpec(records=stage1, epsilon=1.0, seeds=("seed_kw",), top_k=5)]
        result = nfold(folds, NO_DP)[0]
        cohort = {r.id for r in stage1 if r.feature == "seed_kw" and r.observation > 0}
        relabeled = [
            Record(r.id, r.feature, COHORT_LABEL if r.id in cohort else "__rest__", r.observation)
            for r in stage1
        ]
        manual = rank_records(relabeled, NO_DP)
        assert result.results == manual

    def test_budget_composed_across_folds(self):
        stage1, stage2 = _two_stage_records()
        privacy = PrivacyConfig(epsilon=1.0, delta=1e-2, contribution_limit=2, seed=3)
        accountant = BudgetAccountant(1.0)
        folds = [
            FoldSpec(records=stage1, epsilon=0.5, seeds=("seed_kw",), top_k=6),
            FoldSpec(records=stage2, epsilon=0.5, seeds=None, top_k=4),
        ]
        results = nfold(folds, privacy, accountant=accountant)
        assert len(results) == 2
        assert accountant.spent_epsilon == pytest.approx(1.0)

    def test_budget_overflow_fails_before_any_fold(self):
        stage1, stage2 = _two_stage_records()
        privacy = PrivacyConfig(epsilon=1.0, delta=1e-2, contribution_limit=2, seed=3)
        accountant = BudgetAccountant(1.0)
        folds = [
            FoldSpec(records=stage1, epsilon=0.7, seeds=("seed_kw",)),
            FoldSpec(records=stage2, epsilon=0.7, seeds=None),
        ]
        with pytest.raises(BudgetExceededError):
            nfold(folds, privacy, accountant=accountant)
        assert accountant.spent_epsilon == 0.0

    def test_first_fold_needs_seeds(self):
        stage1, _ = _two_stage_records()
        with pytest.raises(ValueError, match="seeds"):
            nfold([FoldSpec(records=stage1, epsilon=1.0, seeds=None)], NO_DP)

    def test_unmatched_seeds_raise(self):
        stage1, _ = _two_stage_records()
        with pytest.raises(ValueError, match="matched"):
            nfold([FoldSpec(records=stage1, epsilon=1.0, seeds=("nope",))], NO_DP)

    def test_chained_cohort_flows_through_stage_records(self):
        stage1, stage2 = _two_stage_records()
        folds = [
            FoldSpec(records=stage1, epsilon=0.5, seeds=("seed_kw",), top_k=6),
            FoldSpec(records=stage2, epsilon=0.5, seeds=None, top_k=4),
        ]
        results = nfold(folds, NO_DP)
        # planted keywords dominate fold 1, planted orgs dominate fold 2
        assert any(s.startswith("plant_kw") or s == "seed_kw" for s in results[0].next_seeds)
        assert all(s.startswith("org") for s in results[1].next_seeds)
