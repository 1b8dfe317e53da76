"""
Алгебра интервалов: перебор кандидатов Γ, временной IoU, temporal endpoint features
и правило согласия аннотаторов.

Интервал (Span) — включительный диапазон индексов 5-секундных сегментов.
"""

from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

from mcn.errors import ArityError, EmptyVideoError, InvalidSpanError

NUM_ANNOTATIONS = 4


@dataclass(frozen=True, order=True)
class Span:
    """Включительный интервал сегментов [start, end]; порядок сортировки — (start, end)."""
    start: int
    end: int

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise InvalidSpanError(f"Некорректный интервал [{self.start}, {self.end}]")

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def fits(self, num_segments: int) -> bool:
        return self.end < num_segments

    def validate(self, num_segments: int) -> "Span":
        if not self.fits(num_segments):
            raise InvalidSpanError(
                f"Интервал [{self.start}, {self.end}] вне видео из {num_segments} сегментов"
            )
        return self

    def as_pair(self) -> tuple[int, int]:
        return (self.start, self.end)

    def __str__(self) -> str:
        return f"[{self.start},{self.end}]"


CandidateSet = tuple[Span, ...]


@lru_cache(maxsize=128)
def enumerate_candidates(num_segments: int) -> CandidateSet:
    """
    Все непрерывные интервалы видео, отсортированные по (start, end).

    Для n сегментов их n(n+1)/2: 30-секундное видео из 6 сегментов даёт 21 момент.
    """
    if num_segments < 1:
        raise EmptyVideoError("Видео без сегментов: кандидатов нет")
    return tuple(
        Span(start, end)
        for start in range(num_segments)
        for end in range(start, num_segments)
    )


def candidate_index(span: Span, num_segments: int) -> int:
    """Позиция интервала в enumerate_candidates(num_segments)."""
    span.validate(num_segments)
    before = span.start * num_segments - span.start * (span.start - 1) // 2
    return before + (span.end - span.start)


def temporal_iou(a: Span, b: Span) -> float:
    """IoU в целых сегментах: |пересечение| / |объединение|."""
    inter = max(0, min(a.end, b.end) - max(a.start, b.start) + 1)
    union = a.length + b.length - inter
    return inter / union


def temporal_endpoint_feature(span: Span, num_segments: int) -> tuple[float, float]:
    """
    Нормированные в [0, 1] начало и конец интервала: (start/n, (end+1)/n).

    Всё видео переходит в (0, 1), одиночный сегмент имеет ширину 1/n.
    """
    span.validate(num_segments)
    return span.start / num_segments, (span.end + 1) / num_segments


def spans_agree(a: Span, b: Span) -> bool:
    """Два интервала согласны, если оба конца отличаются не более чем на один сегмент."""
    return abs(a.start - b.start) <= 1 and abs(a.end - b.end) <= 1


def check_agreement(annotations: list[Span]) -> bool:
    """
    Правило приёма описания: хотя бы трое из четырёх аннотаторов попарно согласны.
    """
    if len(annotations) != NUM_ANNOTATIONS:
        raise ArityError(f"Ожидается {NUM_ANNOTATIONS} аннотации, получено {len(annotations)}")
    return any(
        all(spans_agree(a, b) for a, b in combinations(triple, 2))
        for triple in combinations(annotations, 3)
    )


def consensus_span(spans: list[Span]) -> Span:
    """Самый частый точный интервал; при равенстве — самый ранний по (start, end)."""
    if not spans:
        raise ArityError("Нет аннотаций для выбора консенсуса")
    counts = Counter(spans)
    best = max(counts.values())
    return min(span for span, count in counts.items() if count == best)
