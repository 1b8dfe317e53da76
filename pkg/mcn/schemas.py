"""
Pydantic-модели файлов: аннотации, спецификация синтетического корпуса, отчёт оценки.
"""

from collections import Counter

from pydantic import BaseModel, Field, field_validator, model_validator

from mcn.moments import NUM_ANNOTATIONS, Span


# ── Аннотации ────────────────────────────────────────────────────────

class AnnotationRecord(BaseModel):
    """
    Описание момента и интервалы аннотаторов.

    times всегда содержит 4 интервала: недостающие дополняются модальным интервалом
    (padded = True), исходное число хранится в num_annotators.
    """
    annotation_id: str
    video_id: str
    description: str
    times: list[tuple[int, int]] = Field(min_length=1)
    num_segments: int = Field(ge=1)
    num_annotators: int = Field(default=0, ge=0, le=NUM_ANNOTATIONS)
    padded: bool = False
    tags: list[str] = Field(default_factory=list)

    @field_validator("annotation_id", "video_id", mode="before")
    @classmethod
    def coerce_id(cls, v):
        """В выпусках DiDeMo annotation_id бывает числом."""
        return str(v) if isinstance(v, int) else v

    @model_validator(mode="after")
    def pad_times(self) -> "AnnotationRecord":
        for start, end in self.times:
            Span(start, end).validate(self.num_segments)
        if self.num_annotators == 0:
            self.num_annotators = len(self.times)
        if len(self.times) < NUM_ANNOTATIONS:
            counts = Counter(self.times)
            best = max(counts.values())
            modal = min(span for span, count in counts.items() if count == best)
            self.times = self.times + [modal] * (NUM_ANNOTATIONS - len(self.times))
            self.padded = True
        return self

    @property
    def spans(self) -> list[Span]:
        return [Span(start, end) for start, end in self.times]

    @property
    def original_times(self) -> list[tuple[int, int]]:
        return self.times[:self.num_annotators]


# ── Синтетический корпус ─────────────────────────────────────────────

class SyntheticSpec(BaseModel):
    """Параметры генератора синтетического корпуса с заложенными ответами."""
    seed: int = Field(default=0, ge=0)
    num_videos: int = Field(default=250, ge=1)
    segments: list[int] = Field(default=[5, 6], min_length=1)
    feature_dim: int = Field(default=16, ge=1)
    concept_vocab: int = Field(default=24, ge=1)
    sigma: float = Field(default=0.1, ge=0)
    positional_rate: float = Field(default=0.2, ge=0, le=1)
    frames_per_segment: int = Field(default=3, ge=1)
    queries_per_video: int = Field(default=2, ge=1)
    embedding_dim: int = Field(default=16, ge=1)
    unique_concepts: bool = True
    val_fraction: float = Field(default=0.2, ge=0, lt=1)
    test_fraction: float = Field(default=0.0, ge=0, lt=1)

    @field_validator("segments")
    @classmethod
    def check_segments(cls, v: list[int]) -> list[int]:
        if any(n not in (5, 6) for n in v):
            raise ValueError(f"Допустимо 5 или 6 сегментов на видео, получено {v}")
        return sorted(set(v))

    @model_validator(mode="after")
    def check_fractions(self) -> "SyntheticSpec":
        if self.val_fraction + self.test_fraction >= 1:
            raise ValueError("val_fraction + test_fraction должны быть < 1")
        return self


# ── Отчёт оценки ─────────────────────────────────────────────────────

class QueryScore(BaseModel):
    """Оценки одного запроса по правилу 4-choose-3."""
    annotation_id: str
    video_id: str
    r1: float
    r5: float
    miou: float
    top1: tuple[int, int] | None = None


class EvalMetrics(BaseModel):
    """Средние по запросам, доли в [0, 1]."""
    r1: float = Field(ge=0, le=1)
    r5: float = Field(ge=0, le=1)
    miou: float = Field(ge=0, le=1)


class EvalReport(BaseModel):
    """Итог оценки: агрегаты, разбивка по запросам и эхо конфигурации."""
    name: str
    metrics: EvalMetrics
    per_query: list[QueryScore] = Field(default_factory=list)
    config: dict = Field(default_factory=dict)

    @property
    def num_queries(self) -> int:
        return len(self.per_query)
