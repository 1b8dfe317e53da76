"""
Визуальные признаки временного контекста.

Из покадровых признаков видео собираем вход визуальной ветки: локальное среднее по
интервалу, глобальное среднее по всему видео и temporal endpoint features (tef).
Отключённые части заполняются нулями (layout="zero_fill"), чтобы форма сети не зависела
от абляции, либо выбрасываются (layout="compact").
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from mcn.errors import DataError, DegenerateSpanError, EmptyVideoError, MissingFeaturesError
from mcn.moments import Span, temporal_endpoint_feature


class Modality(str, Enum):
    RGB = "rgb"
    FLOW = "flow"

    @property
    def code(self) -> int:
        return 0 if self is Modality.RGB else 1

    @classmethod
    def from_code(cls, code: int) -> "Modality":
        return {0: cls.RGB, 1: cls.FLOW}[code]


@dataclass
class VideoFeatures:
    """
    Матрица покадровых признаков одного видео (T × D) одной модальности.

    Кадры делятся на сегменты равномерно по frames_per_segment; последний сегмент
    забирает остаток кадров.
    """
    video_id: str
    modality: Modality
    frames: np.ndarray
    frames_per_segment: int
    num_segments: int = 0  # 0 — вывести из T и frames_per_segment

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.modality = Modality(self.modality)
        if self.frames.ndim != 2 or self.frames.shape[0] == 0:
            raise EmptyVideoError(f"Видео {self.video_id}: пустая матрица признаков {self.frames.shape}")
        if self.frames_per_segment < 1:
            raise DataError(f"Видео {self.video_id}: frames_per_segment < 1")
        if not np.all(np.isfinite(self.frames)):
            row, col = np.argwhere(~np.isfinite(self.frames))[0]
            raise DataError(f"Видео {self.video_id}: нечисловое значение в кадре {row}, признак {col}")

        if self.num_segments == 0:
            self.num_segments = max(1, self.num_frames // self.frames_per_segment)
        if (self.num_segments - 1) * self.frames_per_segment >= self.num_frames:
            raise DataError(
                f"Видео {self.video_id}: {self.num_frames} кадров не хватает на "
                f"{self.num_segments} сегментов по {self.frames_per_segment}"
            )

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def span_frames(self, span: Span) -> slice:
        """Кадры, принадлежащие сегментам интервала."""
        span.validate(self.num_segments)
        start = span.start * self.frames_per_segment
        if span.end == self.num_segments - 1:
            stop = self.num_frames
        else:
            stop = (span.end + 1) * self.frames_per_segment
        return slice(start, stop)

    def with_segments(self, num_segments: int) -> "VideoFeatures":
        """Пересегментирует видео на num_segments равных частей."""
        if num_segments == self.num_segments:
            return self
        if num_segments > self.num_frames:
            raise DataError(
                f"Видео {self.video_id}: {self.num_frames} кадров нельзя разбить на {num_segments} сегментов"
            )
        return VideoFeatures(
            video_id=self.video_id,
            modality=self.modality,
            frames=self.frames,
            frames_per_segment=self.num_frames // num_segments,
            num_segments=num_segments,
        )


@dataclass
class Video:
    """Признаки одного видео по модальностям; отсутствующая модальность — None."""
    video_id: str
    rgb: VideoFeatures | None = None
    flow: VideoFeatures | None = None

    def __post_init__(self):
        present = [vf for vf in (self.rgb, self.flow) if vf is not None]
        if not present:
            raise EmptyVideoError(f"Видео {self.video_id}: нет ни одной модальности")
        if len({vf.num_segments for vf in present}) > 1:
            raise DataError(
                f"Видео {self.video_id}: у rgb и flow разное число сегментов "
                f"({self.rgb.num_segments} и {self.flow.num_segments})"
            )

    @property
    def num_segments(self) -> int:
        return (self.rgb or self.flow).num_segments

    def features(self, modality: Modality) -> VideoFeatures:
        vf = self.rgb if Modality(modality) is Modality.RGB else self.flow
        if vf is None:
            raise MissingFeaturesError([self.video_id])
        return vf


@dataclass(frozen=True)
class FeatureFlags:
    use_global: bool = True
    use_tef: bool = True
    layout: str = "zero_fill"  # или "compact"


@dataclass
class TemporalContextInput:
    """Части входа визуальной ветки; vector — их конкатенация."""
    local: np.ndarray
    global_: np.ndarray
    tef: tuple[float, float]
    flags: FeatureFlags

    @property
    def vector(self) -> np.ndarray:
        parts = [self.local]
        dim = self.local.shape[0]
        if self.flags.use_global:
            parts.append(self.global_)
        elif self.flags.layout == "zero_fill":
            parts.append(np.zeros(dim))
        if self.flags.use_tef:
            parts.append(np.asarray(self.tef, dtype=np.float64))
        elif self.flags.layout == "zero_fill":
            parts.append(np.zeros(2))
        return np.concatenate(parts)


def context_input_width(dim: int, flags: FeatureFlags) -> int:
    """Длина вектора build_context_input для признаков ширины dim."""
    if flags.layout == "zero_fill":
        return 2 * dim + 2
    return dim + (dim if flags.use_global else 0) + (2 if flags.use_tef else 0)


def pool_local(vf: VideoFeatures, span: Span) -> np.ndarray:
    """Среднее признаков всех кадров интервала."""
    rows = vf.frames[vf.span_frames(span)]
    if rows.shape[0] == 0:
        raise DegenerateSpanError(f"Видео {vf.video_id}: интервалу {span} не соответствует ни одного кадра")
    return rows.mean(axis=0)


def pool_global(vf: VideoFeatures) -> np.ndarray:
    """Среднее по всем кадрам видео."""
    if vf.frames.shape[0] == 0:
        raise EmptyVideoError(f"Видео {vf.video_id} без кадров")
    return vf.frames.mean(axis=0)


def build_context_input(
    vf: VideoFeatures,
    span: Span,
    flags: FeatureFlags = FeatureFlags(),
) -> TemporalContextInput:
    """Локальные + глобальные признаки + tef для одного интервала."""
    tef = temporal_endpoint_feature(span, vf.num_segments)
    return TemporalContextInput(
        local=pool_local(vf, span),
        global_=pool_global(vf),
        tef=tef,
        flags=flags,
    )


def candidate_inputs(
    vf: VideoFeatures,
    spans: list[Span] | tuple[Span, ...],
    flags: FeatureFlags = FeatureFlags(),
) -> np.ndarray:
    """Входы визуальной ветки для набора интервалов, по строке на интервал."""
    return np.stack([build_context_input(vf, span, flags).vector for span in spans])


@dataclass
class Window:
    """Окно скользящей оценки: кадры [start_frame, end_frame)."""
    start_frame: int
    end_frame: int
    local: np.ndarray
    tef: tuple[float, float]


def sliding_windows(vf: VideoFeatures, window_frames: int, stride_frames: int) -> list[Window]:
    """
    Окна по кадрам для детальной локализации.

    Окна начинаются в 0, stride, 2·stride, ... пока помещаются в видео;
    их floor((T − window)/stride) + 1. Окно длиннее видео даёт одно окно на всё видео.
    """
    if window_frames < 1 or stride_frames < 1:
        raise ValueError(f"window и stride должны быть ≥ 1, получено {window_frames}, {stride_frames}")

    total = vf.num_frames
    if window_frames >= total:
        return [Window(0, total, pool_global(vf), (0.0, 1.0))]

    windows = []
    for start in range(0, total - window_frames + 1, stride_frames):
        stop = start + window_frames
        windows.append(Window(
            start_frame=start,
            end_frame=stop,
            local=vf.frames[start:stop].mean(axis=0),
            tef=(start / total, min(stop / total, 1.0)),
        ))
    return windows


def window_inputs(
    vf: VideoFeatures,
    windows: list[Window],
    flags: FeatureFlags = FeatureFlags(),
) -> np.ndarray:
    """Входы визуальной ветки для окон (global — по всему видео)."""
    global_ = pool_global(vf)
    return np.stack([
        TemporalContextInput(local=w.local, global_=global_, tef=w.tef, flags=flags).vector
        for w in windows
    ])
