"""
Протокол оценки: R@1, R@5 и mIoU по правилу 4-choose-3 и базовые линии на одних аннотациях
(верхняя граница, случайное ранжирование, частотный приор моментов).

Оценка запроса — максимум по четырём тройкам аннотаций среднего по тройке значения метрики.
Совпадение аннотации с предсказанием — точное равенство концов интервала.
"""

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from pathlib import Path
from typing import Protocol

import numpy as np

from mcn.errors import ArityError
from mcn.moments import NUM_ANNOTATIONS, Span, enumerate_candidates, temporal_iou
from mcn.schemas import AnnotationRecord, EvalMetrics, EvalReport, QueryScore

logger = logging.getLogger(__name__)

METRICS = ("r1", "r5", "miou")
_TOP_K = {"r1": 1, "r5": 5}


# ── Оценка одного запроса ────────────────────────────────────────────

def _per_annotation(ranking: list[Span], annotation: Span, metric: str) -> float:
    if metric == "miou":
        return temporal_iou(ranking[0], annotation)
    if metric in _TOP_K:
        return 1.0 if annotation in ranking[:_TOP_K[metric]] else 0.0
    raise ValueError(f"Неизвестная метрика '{metric}', ожидается одна из {METRICS}")


def score_prediction(ranking: list[Span], annotations: list[Span], metric: str) -> float:
    """
    max по тройкам A′ ⊂ A (|A′| = 3) от (1/3)·Σ_{a ∈ A′} M(ranking, a).

    Args:
        ranking: Полное ранжирование кандидатов, лучший первым.
        annotations: Ровно 4 интервала аннотаторов.
        metric: "r1", "r5" или "miou".
    """
    if len(annotations) != NUM_ANNOTATIONS:
        raise ArityError(f"Ожидается {NUM_ANNOTATIONS} аннотации, получено {len(annotations)}")
    if not ranking:
        raise ValueError("Пустое ранжирование")
    values = [_per_annotation(ranking, a, metric) for a in annotations]
    return max(sum(triple) / 3.0 for triple in combinations(values, 3))


def score_query(ranking: list[Span], record: AnnotationRecord) -> QueryScore:
    annotations = record.spans
    scores = {metric: score_prediction(ranking, annotations, metric) for metric in METRICS}
    return QueryScore(
        annotation_id=record.annotation_id,
        video_id=record.video_id,
        top1=ranking[0].as_pair(),
        **scores,
    )


# ── Источники ранжирований ───────────────────────────────────────────

class RankingSource(Protocol):
    name: str

    def rank(self, record: AnnotationRecord) -> list[Span]: ...


class ModelRanker:
    """Ранжирования обученной модели: localize по признакам видео из корпуса."""

    name = "mcn"

    def __init__(self, model, corpus):
        self.model = model
        self.corpus = corpus

    def prepare(self, records: list[AnnotationRecord]) -> None:
        self.corpus.require_features(records, self.model.weights)

    def rank(self, record: AnnotationRecord) -> list[Span]:
        video = self.corpus.video(record.video_id, record.num_segments, modalities=tuple(self.model.weights))
        tokens = self.model.encoder.token_ids(record.description)
        return [moment.span for moment in self.model.localize(tokens, video)]


class MomentPriorRanker:
    """
    Частотный приор: кандидаты по убыванию частоты точного интервала среди всех
    интервалов аннотаторов обучающего сплита; при равенстве — по (start, end).
    """

    name = "prior"

    def __init__(self, train_records: list[AnnotationRecord]):
        self.counts = Counter(
            Span(start, end) for record in train_records for start, end in record.original_times
        )
        self._rankings: dict[int, list[Span]] = {}

    def ranking(self, num_segments: int) -> list[Span]:
        if num_segments not in self._rankings:
            self._rankings[num_segments] = sorted(
                enumerate_candidates(num_segments),
                key=lambda span: (-self.counts[span], span),
            )
        return self._rankings[num_segments]

    def rank(self, record: AnnotationRecord) -> list[Span]:
        return self.ranking(record.num_segments)


# ── Прогон оценки ────────────────────────────────────────────────────

def aggregate(name: str, scores: list[QueryScore], config: dict | None = None) -> EvalReport:
    """Средние по запросам в фиксированном порядке суммирования."""
    if not scores:
        logger.warning(f"{name}: нет запросов для оценки, метрики равны нулю")
        metrics = EvalMetrics(r1=0.0, r5=0.0, miou=0.0)
    else:
        metrics = EvalMetrics(**{
            metric: float(sum(getattr(s, metric) for s in scores) / len(scores))
            for metric in METRICS
        })
    return EvalReport(name=name, metrics=metrics, per_query=scores, config=config or {})


def evaluate(
    source: RankingSource,
    records: list[AnnotationRecord],
    jobs: int = 1,
    config: dict | None = None,
) -> EvalReport:
    """
    Средние score_prediction по запросам.

    При jobs > 1 запросы ранжируются в пуле потоков; порядок результатов и сумма
    не зависят от числа потоков.
    """
    prepare = getattr(source, "prepare", None)
    if prepare is not None:
        prepare(records)

    def one(record: AnnotationRecord) -> QueryScore:
        return score_query(source.rank(record), record)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(one, records))
    else:
        scores = [one(record) for record in records]
    return aggregate(source.name, scores, config)


# ── Базовые линии ────────────────────────────────────────────────────

def _upper_bound_query(record: AnnotationRecord) -> QueryScore:
    annotations = record.spans
    candidates = enumerate_candidates(record.num_segments)

    best_r1 = max(candidates, key=lambda s: score_prediction([s], annotations, "r1"))
    best_iou = max(candidates, key=lambda s: score_prediction([s], annotations, "miou"))

    # Для R@5 аннотированные интервалы (их не больше 4) ставятся первыми по частоте
    counts = Counter(annotations)
    head = sorted(counts, key=lambda span: (-counts[span], span))
    ranking_r5 = head + [s for s in candidates if s not in counts]

    return QueryScore(
        annotation_id=record.annotation_id,
        video_id=record.video_id,
        r1=score_prediction([best_r1], annotations, "r1"),
        r5=score_prediction(ranking_r5, annotations, "r5"),
        miou=score_prediction([best_iou], annotations, "miou"),
        top1=best_r1.as_pair(),
    )


def baseline_upper_bound(records: list[AnnotationRecord], config: dict | None = None) -> EvalReport:
    """Лучшие достижимые значения метрик при данном разногласии аннотаторов."""
    return aggregate("upper_bound", [_upper_bound_query(r) for r in records], config)


def _chance_query(record: AnnotationRecord, rng: np.random.Generator, trials: int) -> QueryScore:
    candidates = enumerate_candidates(record.num_segments)
    annotations = record.spans
    ann_idx = np.array([candidates.index(a) for a in annotations])
    iou = np.array([[temporal_iou(c, a) for a in annotations] for c in candidates])

    order = np.argsort(rng.random((trials, len(candidates))), axis=1)
    position = np.argsort(order, axis=1)
    top1 = order[:, 0]

    def best_triple(values: np.ndarray) -> float:
        # max по тройкам из четырёх = (сумма − минимум) / 3
        return float(np.mean((values.sum(axis=1) - values.min(axis=1)) / 3.0))

    ann_positions = position[:, ann_idx]
    return QueryScore(
        annotation_id=record.annotation_id,
        video_id=record.video_id,
        r1=best_triple((ann_positions < 1).astype(np.float64)),
        r5=best_triple((ann_positions < 5).astype(np.float64)),
        miou=best_triple(iou[top1]),
    )


def baseline_chance(
    records: list[AnnotationRecord],
    seed: int = 0,
    trials: int = 10_000,
    config: dict | None = None,
) -> EvalReport:
    """Монте-Карло: равномерно случайное ранжирование, метрики усреднены по испытаниям."""
    if trials < 1:
        raise ValueError(f"trials должно быть ≥ 1, получено {trials}")
    rng = np.random.default_rng(seed)
    scores = [_chance_query(record, rng, trials) for record in records]
    return aggregate("chance", scores, config)


def baseline_moment_prior(
    train_records: list[AnnotationRecord],
    eval_records: list[AnnotationRecord],
    config: dict | None = None,
) -> EvalReport:
    """Частотный приор моментов, обученный на train_records."""
    return evaluate(MomentPriorRanker(train_records), eval_records, config=config)


def filter_by_tag(records: list[AnnotationRecord], tag: str) -> list[AnnotationRecord]:
    return [r for r in records if tag in r.tags]


# ── Отчёты ───────────────────────────────────────────────────────────

def report_json(report: EvalReport) -> str:
    payload = {
        "metrics": report.metrics.model_dump(),
        "per_query": [s.model_dump(mode="json") for s in report.per_query],
        "config": report.config,
    }
    return json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=False)


def format_table(reports: list[EvalReport]) -> str:
    """Таблица «метод | R@1 | R@5 | mIoU» в процентах с выравниванием колонок."""
    width = max([len("Method")] + [len(r.name) for r in reports])
    lines = [f"{'Method':<{width}}  {'R@1':>6}  {'R@5':>6}  {'mIoU':>6}"]
    lines.append("-" * len(lines[0]))
    for r in reports:
        m = r.metrics
        lines.append(
            f"{r.name:<{width}}  {100 * m.r1:>6.2f}  {100 * m.r5:>6.2f}  {100 * m.miou:>6.2f}"
        )
    return "\n".join(lines)


def write_report(report: EvalReport, json_path: str | Path, table_path: str | Path | None = None) -> None:
    """Пишет JSON-отчёт и (опционально) текстовую таблицу."""
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(report_json(report) + "\n", encoding="utf-8")
    if table_path:
        Path(table_path).write_text(format_table([report]) + "\n", encoding="utf-8")


BASELINES = ("upper_bound", "chance", "prior")
