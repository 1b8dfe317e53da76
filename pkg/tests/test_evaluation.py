import itertools
import json

import numpy as np
import pytest

from mcn.errors import ArityError
from mcn.evaluation import (
    MomentPriorRanker,
    aggregate,
    baseline_chance,
    baseline_moment_prior,
    baseline_upper_bound,
    evaluate,
    filter_by_tag,
    format_table,
    report_json,
    score_prediction,
    write_report,
)
from mcn.moments import Span, enumerate_candidates
from mcn.schemas import AnnotationRecord


def record(annotation_id, times, num_segments=6, tags=()):
    return AnnotationRecord(
        annotation_id=annotation_id, video_id=f"vid{annotation_id}", description="x",
        times=times, num_segments=num_segments, tags=list(tags),
    )


class FixedRanker:
    name = "fixed"

    def __init__(self, ranking):
        self.ranking = ranking

    def rank(self, rec):
        return self.ranking


class TestScorePrediction:

    def test_best_triple(self):
        a, b, c = Span(0, 0), Span(1, 1), Span(2, 3)
        assert score_prediction([a], [a, a, b, c], "r1") == pytest.approx(2 / 3)
        assert score_prediction([b, c, a], [a, a, b, c], "r5") == 1.0

    def test_miou(self):
        annotations = [Span(0, 1)] * 3 + [Span(5, 5)]
        assert score_prediction([Span(0, 0)], annotations, "miou") == pytest.approx(0.5)

    def test_arity(self):
        with pytest.raises(ArityError):
            score_prediction([Span(0, 0)], [Span(0, 0)] * 3, "r1")

    def test_unknown_metric(self):
        with pytest.raises(ValueError, match="метрика"):
            score_prediction([Span(0, 0)], [Span(0, 0)] * 4, "r10")


class TestBaselines:

    def test_upper_bound_with_disagreement(self):
        rec = record("1", [(0, 0), (0, 0), (1, 1), (2, 2)])
        metrics = baseline_upper_bound([rec]).metrics
        assert metrics.r1 == pytest.approx(2 / 3)
        assert metrics.r5 == 1.0
        assert metrics.miou == pytest.approx(2 / 3)

    def test_chance_matches_candidate_count(self):
        rec = record("1", [(2, 3)] * 4)
        metrics = baseline_chance([rec], seed=0, trials=100_000).metrics
        assert metrics.r1 == pytest.approx(1 / 21, abs=3e-3)
        assert metrics.r5 == pytest.approx(5 / 21, abs=6e-3)

    def test_chance_deterministic(self):
        recs = [record("1", [(0, 1)] * 4), record("2", [(3, 5), (3, 4), (3, 5), (0, 0)])]
        first = baseline_chance(recs, seed=4, trials=500)
        second = baseline_chance(recs, seed=4, trials=500)
        assert first.metrics == second.metrics

    def test_prior_orders_by_frequency(self):
        train = [record("1", [(1, 2)] * 4), record("2", [(1, 2), (1, 2), (4, 4), (4, 4)])]
        ranking = MomentPriorRanker(train).ranking(6)
        assert ranking[:2] == [Span(1, 2), Span(4, 4)]
        assert ranking[2:] == [s for s in enumerate_candidates(6) if s not in (Span(1, 2), Span(4, 4))]

    def test_prior_counts_only_original_annotators(self):
        padded = record("1", [(3, 3)])
        assert MomentPriorRanker([padded]).counts[Span(3, 3)] == 1

    def test_prior_report(self):
        train = [record("1", [(0, 0)] * 4)]
        evaluation = [record("2", [(0, 0)] * 4), record("3", [(5, 5)] * 4)]
        metrics = baseline_moment_prior(train, evaluation).metrics
        assert metrics.r1 == pytest.approx(0.5)


class TestEvaluate:

    def test_thread_count_does_not_change_result(self):
        recs = [record(str(i), [(i % 6, i % 6)] * 4) for i in range(30)]
        source = FixedRanker(list(enumerate_candidates(6)))
        assert evaluate(source, recs, jobs=1) == evaluate(source, recs, jobs=4)

    def test_empty(self):
        assert aggregate("x", []).metrics.r1 == 0.0

    def test_tag_filter(self):
        recs = [record("1", [(0, 0)], tags=["position"]), record("2", [(0, 0)])]
        assert [r.annotation_id for r in filter_by_tag(recs, "position")] == ["1"]


class TestReports:

    def test_json_and_table(self, tmp_path):
        report = baseline_upper_bound([record("1", [(0, 0)] * 4)], config={"seed": 0})
        payload = json.loads(report_json(report))
        assert set(payload) == {"metrics", "per_query", "config"}
        assert payload["per_query"][0]["annotation_id"] == "1"

        write_report(report, tmp_path / "r.json", tmp_path / "r.txt")
        table = (tmp_path / "r.txt").read_text(encoding="utf-8")
        assert "upper_bound" in table and "100.00" in table

    def test_table_columns(self):
        reports = [aggregate("a", []), aggregate("longer_name", [])]
        lines = format_table(reports).splitlines()
        assert lines[0].split() == ["Method", "R@1", "R@5", "mIoU"]
        assert len({len(line) for line in lines}) == 1


def random_span(rng, n):
    start = int(rng.integers(n))
    return Span(start, int(rng.integers(start, n)))


def explicit_score(ranking, annotations, metric):
    """Определение метрики напрямую: среднее по каждой тройке аннотаторов, затем максимум."""
    def one(a):
        if metric == "r1":
            return 1.0 if ranking[0] == a else 0.0
        if metric == "r5":
            return 1.0 if any(s == a for s in ranking[:5]) else 0.0
        top = set(range(ranking[0].start, ranking[0].end + 1))
        truth = set(range(a.start, a.end + 1))
        return len(top & truth) / len(top | truth)

    best = 0.0
    for triple in itertools.combinations(annotations, 3):
        best = max(best, sum(one(a) for a in triple) / 3)
    return best


class TestScoreOracle:

    def test_random_instances_match_definition(self):
        rng = np.random.default_rng(2024)
        for _ in range(10_000):
            n = int(rng.integers(1, 9))
            candidates = list(enumerate_candidates(n))
            ranking = [candidates[i] for i in rng.permutation(len(candidates))]
            annotations = [random_span(rng, n) for _ in range(4)]
            for metric in ("r1", "r5", "miou"):
                assert score_prediction(ranking, annotations, metric) == pytest.approx(
                    explicit_score(ranking, annotations, metric)
                )
