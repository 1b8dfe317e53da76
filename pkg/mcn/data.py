"""
Данные: аннотации (JSON), файлы признаков MCNF, индекс признаков, сплиты и корпус.

Формат MCNF (little-endian):
    "MCNF" | u32 version=1 | u8 modality (0 rgb, 1 flow) | u32 T | u32 D | u32 frames_per_segment
    затем T·D float32 построчно.
"""

import json
import logging
import math
import re
import struct
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from mcn.config import MAX_SEGMENTS, SEGMENT_SECONDS
from mcn.errors import DataError, FormatError, LengthError, MissingFeaturesError
from mcn.features import Modality, Video, VideoFeatures
from mcn.language import Vocabulary, load_embeddings, tokenize
from mcn.moments import NUM_ANNOTATIONS, check_agreement
from mcn.schemas import AnnotationRecord

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")

MCNF_MAGIC = b"MCNF"
MCNF_VERSION = 1
_MCNF_HEADER = struct.Struct("<4sIBIII")

# Возможные имена ключей в разных выпусках файла аннотаций
DEFAULT_KEY_ALIASES: dict[str, tuple[str, ...]] = {
    "annotation_id": ("annotation_id", "id"),
    "video_id": ("video", "video_id"),
    "description": ("description", "sentence", "query"),
    "times": ("times", "timestamps"),
    "num_segments": ("num_segments",),
    "duration": ("duration", "video_duration"),
    "tags": ("tags",),
}


# ── Аннотации ────────────────────────────────────────────────────────

@dataclass
class IngestionReport:
    """Счётчики разбора файла аннотаций."""
    total: int = 0
    accepted: int = 0
    rejected: int = 0
    padded: int = 0
    truncated: int = 0
    disagreeing: int = 0  # принятые записи без согласия трёх из четырёх аннотаторов
    rejections: list[str] = field(default_factory=list)


def _natural_key(value: str) -> tuple:
    return tuple(
        (0, int(part), "") if part.isdigit() else (1, 0, part)
        for part in re.split(r"(\d+)", value) if part
    )


def _pick(raw: dict, name: str, aliases: dict[str, tuple[str, ...]]):
    for key in aliases.get(name, (name,)):
        if key in raw:
            return raw[key]
    return None


def _segments_for(raw: dict, aliases: dict[str, tuple[str, ...]], index: int) -> int:
    explicit = _pick(raw, "num_segments", aliases)
    if explicit is not None:
        if not isinstance(explicit, int) or isinstance(explicit, bool) or explicit < 1:
            raise FormatError(f"Запись {index}: поле 'num_segments' должно быть целым ≥ 1, получено {explicit!r}")
        return explicit
    duration = _pick(raw, "duration", aliases)
    if duration is not None:
        try:
            seconds = float(duration)
        except (TypeError, ValueError) as e:
            raise FormatError(f"Запись {index}: поле 'duration' не число: {duration!r}") from e
        return min(MAX_SEGMENTS, max(1, math.ceil(seconds / SEGMENT_SECONDS)))
    return MAX_SEGMENTS


def _parse_times(value, index: int) -> list[tuple[int, int]]:
    if not isinstance(value, list) or not value:
        raise FormatError(f"Запись {index}: поле 'times' должно быть непустым списком пар")
    times = []
    for pair in value:
        if (
            not isinstance(pair, (list, tuple))
            or len(pair) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in pair)
        ):
            raise FormatError(f"Запись {index}: поле 'times' содержит не пару целых: {pair!r}")
        times.append((pair[0], pair[1]))
    return times


def parse_annotations(
    raw_records: list,
    aliases: dict[str, tuple[str, ...]] | None = None,
    source: str = "<annotations>",
) -> tuple[list[AnnotationRecord], IngestionReport]:
    """
    Проверяет и нормализует сырые записи аннотаций.

    Некорректная структура записи — FormatError с номером записи и полем.
    Запись с некорректным интервалом отклоняется целиком с предупреждением.
    """
    aliases = aliases or DEFAULT_KEY_ALIASES
    report = IngestionReport(total=len(raw_records))
    records = []

    for index, raw in enumerate(raw_records):
        if not isinstance(raw, dict):
            raise FormatError(f"{source}: запись {index} не объект JSON")

        fields = {}
        for name in ("annotation_id", "video_id", "description"):
            value = _pick(raw, name, aliases)
            if value is None:
                raise FormatError(f"{source}: запись {index}: нет поля '{name}'")
            if name == "description" and not isinstance(value, str):
                raise FormatError(f"{source}: запись {index}: поле 'description' должно быть строкой")
            fields[name] = value if name == "description" else str(value)

        times = _parse_times(_pick(raw, "times", aliases), index)
        num_segments = _segments_for(raw, aliases, index)

        bad = [(s, e) for s, e in times if s < 0 or e < s or e >= num_segments]
        if bad:
            reason = (
                f"{source}: запись {index} ({fields['annotation_id']}) отклонена: "
                f"интервал {list(bad[0])} некорректен для {num_segments} сегментов"
            )
            logger.warning(reason)
            report.rejected += 1
            report.rejections.append(reason)
            continue

        if len(times) > NUM_ANNOTATIONS:
            logger.warning(
                f"{source}: запись {index} ({fields['annotation_id']}): "
                f"{len(times)} интервалов, оставлены первые {NUM_ANNOTATIONS}"
            )
            times = times[:NUM_ANNOTATIONS]
            report.truncated += 1

        tags = _pick(raw, "tags", aliases) or []
        try:
            record = AnnotationRecord(
                **fields,
                times=times,
                num_segments=num_segments,
                tags=[str(t) for t in tags],
            )
        except ValidationError as e:
            first = e.errors()[0]
            field_name = ".".join(str(p) for p in first["loc"]) or "?"
            raise FormatError(f"{source}: запись {index}: поле '{field_name}': {first['msg']}") from e

        if not check_agreement(record.spans):
            report.disagreeing += 1
        if record.padded:
            report.padded += 1
        records.append(record)

    report.accepted = len(records)
    records.sort(key=lambda r: _natural_key(r.annotation_id))
    return records, report


def load_annotations(
    path: str | Path,
    aliases: dict[str, tuple[str, ...]] | None = None,
) -> list[AnnotationRecord]:
    """Загружает файл аннотаций (JSON-массив записей)."""
    records, _ = ingest_annotations(path, aliases)
    return records


def ingest_annotations(
    path: str | Path,
    aliases: dict[str, tuple[str, ...]] | None = None,
) -> tuple[list[AnnotationRecord], IngestionReport]:
    """Как load_annotations, но дополнительно возвращает IngestionReport."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: некорректный JSON: {e}") from e
    if not isinstance(raw, list):
        raise FormatError(f"{path}: ожидается JSON-массив записей")

    records, report = parse_annotations(raw, aliases, source=str(path))
    if not raw:
        logger.warning(f"{path}: файл аннотаций пуст")
    logger.info(
        f"{path.name}: принято {report.accepted} из {report.total} "
        f"(отклонено {report.rejected}, дополнено {report.padded}, обрезано {report.truncated}, "
        f"без согласия аннотаторов {report.disagreeing})"
    )
    return records, report


def write_annotations(path: str | Path, records: list[AnnotationRecord]) -> None:
    """Пишет записи в формате load_annotations (исходные интервалы, без дополнения)."""
    payload = []
    for record in records:
        item = {
            "annotation_id": record.annotation_id,
            "video": record.video_id,
            "description": record.description,
            "times": [list(pair) for pair in record.original_times],
            "num_segments": record.num_segments,
        }
        if record.tags:
            item["tags"] = record.tags
        payload.append(item)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2)


# ── Признаки MCNF ────────────────────────────────────────────────────

def write_features(path: str | Path, vf: VideoFeatures) -> None:
    """Пишет матрицу признаков одного видео одной модальности в MCNF."""
    frames = vf.frames.astype("<f4")
    header = _MCNF_HEADER.pack(
        MCNF_MAGIC, MCNF_VERSION, vf.modality.code,
        frames.shape[0], frames.shape[1], vf.frames_per_segment,
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(frames.tobytes(order="C"))


def load_features(path: str | Path, video_id: str | None = None) -> VideoFeatures:
    """Читает MCNF-файл; video_id по умолчанию — имя файла без расширения."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _MCNF_HEADER.size:
        raise LengthError(f"{path}: файл короче заголовка ({len(blob)} байт)")

    magic, version, code, num_frames, dim, frames_per_segment = _MCNF_HEADER.unpack_from(blob)
    if magic != MCNF_MAGIC:
        raise FormatError(f"{path}: неверная сигнатура {magic!r}, ожидалась {MCNF_MAGIC!r}")
    if version != MCNF_VERSION:
        raise FormatError(f"{path}: версия формата {version} не поддерживается")
    if code not in (0, 1):
        raise FormatError(f"{path}: неизвестный код модальности {code}")

    expected = num_frames * dim * 4
    payload = blob[_MCNF_HEADER.size:]
    if len(payload) != expected:
        raise LengthError(
            f"{path}: в заголовке {num_frames}×{dim} = {num_frames * dim} чисел, "
            f"в файле {len(payload) / 4:g}"
        )

    frames = np.frombuffer(payload, dtype="<f4").reshape(num_frames, dim).astype(np.float64)
    if not np.all(np.isfinite(frames)):
        row, col = np.argwhere(~np.isfinite(frames))[0]
        raise DataError(f"{path}: нечисловое значение в кадре {row}, признак {col}")

    return VideoFeatures(
        video_id=video_id or path.stem,
        modality=Modality.from_code(code),
        frames=frames,
        frames_per_segment=frames_per_segment,
    )


# ── Индекс признаков и сплиты ────────────────────────────────────────

FeatureIndex = dict[str, dict[Modality, Path]]


def load_index(path: str | Path) -> FeatureIndex:
    """
    Читает индекс «video_id<TAB>rgb_path<TAB>flow_path».

    Относительные пути считаются от каталога индекса; "-" — модальности нет.
    """
    path = Path(path)
    index: FeatureIndex = {}
    with open(path, encoding="utf-8") as f:
        for line_num, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{line_num}: ожидается 3 поля через TAB, получено {len(parts)}")
            video_id, rgb, flow = parts
            if video_id in index:
                raise FormatError(f"{path}:{line_num}: видео {video_id} уже есть в индексе")
            entry = {}
            for modality, value in ((Modality.RGB, rgb), (Modality.FLOW, flow)):
                if value and value != "-":
                    entry[modality] = (path.parent / value).resolve()
            index[video_id] = entry
    return index


def write_index(path: str | Path, entries: dict[str, dict[Modality, str]]) -> None:
    """Пишет индекс; пути записываются как есть (обычно относительные)."""
    with open(path, "w", encoding="utf-8") as f:
        for video_id, files in entries.items():
            rgb = files.get(Modality.RGB, "-")
            flow = files.get(Modality.FLOW, "-")
            f.write(f"{video_id}\t{rgb}\t{flow}\n")


def load_splits(path: str | Path) -> dict[str, str]:
    """Читает файл «video_id<TAB>split»."""
    path = Path(path)
    splits = {}
    with open(path, encoding="utf-8") as f:
        for line_num, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1] not in SPLITS:
                raise FormatError(f"{path}:{line_num}: ожидается 'video_id<TAB>{{train|val|test}}'")
            video_id, split = parts
            if splits.get(video_id, split) != split:
                raise DataError(f"{path}:{line_num}: видео {video_id} сразу в {splits[video_id]} и {split}")
            splits[video_id] = split
    return splits


def write_splits(path: str | Path, splits: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for video_id, split in splits.items():
            f.write(f"{video_id}\t{split}\n")


# ── Корпус ───────────────────────────────────────────────────────────

class Corpus:
    """
    Записи по сплитам, индекс признаков и словарь.

    Признаки читаются лениво и кэшируются. Видео пересегментируется под
    num_segments записи, если геометрия файла признаков другая.

    Использование:
        corpus = Corpus.from_files("annotations.json", "splits.tsv", "index.tsv", "embeddings.txt")
        for record in corpus.records("val"):
            video = corpus.video(record.video_id, record.num_segments)
    """

    def __init__(
        self,
        records: dict[str, list[AnnotationRecord]],
        feature_index: FeatureIndex | None = None,
        vocabulary: Vocabulary | None = None,
    ):
        self._records = {split: list(records.get(split, [])) for split in SPLITS}
        self.feature_index = feature_index or {}
        self.vocabulary = vocabulary
        self._cache: dict[tuple[str, Modality, int | None], VideoFeatures] = {}  # None — как в файле
        self._lock = threading.Lock()
        self._check_partition()

    def _check_partition(self) -> None:
        owner: dict[str, str] = {}
        for split, records in self._records.items():
            for record in records:
                seen = owner.setdefault(record.video_id, split)
                if seen != split:
                    raise DataError(f"Видео {record.video_id} встречается в сплитах {seen} и {split}")

    # ── Конструкторы ────────────────────────────────────────────────

    @classmethod
    def from_files(
        cls,
        annotations: str | Path,
        splits: str | Path,
        feature_index: str | Path | None = None,
        embeddings: str | Path | None = None,
    ) -> "Corpus":
        """Один файл аннотаций + файл сплитов по видео."""
        split_of = load_splits(splits)
        by_split: dict[str, list[AnnotationRecord]] = {split: [] for split in SPLITS}
        unassigned = Counter()
        for record in load_annotations(annotations):
            split = split_of.get(record.video_id)
            if split is None:
                unassigned[record.video_id] += 1
                continue
            by_split[split].append(record)
        if unassigned:
            logger.warning(f"{len(unassigned)} видео нет в файле сплитов, их записи пропущены")
        return cls._finish(by_split, feature_index, embeddings)

    @classmethod
    def from_split_files(
        cls,
        files: dict[str, str | Path],
        feature_index: str | Path | None = None,
        embeddings: str | Path | None = None,
    ) -> "Corpus":
        """По файлу аннотаций на сплит (так устроен публичный выпуск DiDeMo)."""
        by_split = {split: [] for split in SPLITS}
        for split, path in files.items():
            if split not in SPLITS:
                raise DataError(f"Неизвестный сплит '{split}'")
            if path is not None:
                by_split[split] = load_annotations(path)
        return cls._finish(by_split, feature_index, embeddings)

    @classmethod
    def _finish(cls, by_split, feature_index, embeddings) -> "Corpus":
        index = load_index(feature_index) if feature_index else None
        corpus = cls(by_split, index)
        if embeddings:
            corpus.vocabulary = load_embeddings(embeddings, restrict_to=corpus.tokens())
            logger.info(f"Словарь: {corpus.vocabulary.size} токенов, E = {corpus.vocabulary.dim}")
        logger.info(
            "Корпус: " + ", ".join(f"{split} {len(corpus._records[split])}" for split in SPLITS)
        )
        return corpus

    # ── Доступ к записям ────────────────────────────────────────────

    def records(self, split: str) -> list[AnnotationRecord]:
        if split not in SPLITS:
            raise DataError(f"Неизвестный сплит '{split}'")
        return self._records[split]

    def all_records(self) -> list[AnnotationRecord]:
        return [r for split in SPLITS for r in self._records[split]]

    def video_ids(self, split: str | None = None) -> list[str]:
        records = self.records(split) if split else self.all_records()
        return sorted({r.video_id for r in records}, key=_natural_key)

    def tokens(self) -> set[str]:
        return {token for r in self.all_records() for token in tokenize(r.description)}

    # ── Признаки ────────────────────────────────────────────────────

    def missing_features(self, video_ids, modalities) -> list[str]:
        missing = []
        for video_id in video_ids:
            entry = self.feature_index.get(video_id, {})
            if any(m not in entry or not entry[m].exists() for m in modalities):
                missing.append(video_id)
        return missing

    def require_features(self, records: list[AnnotationRecord], modalities) -> None:
        """MissingFeaturesError со списком видео, для которых нет файлов признаков."""
        missing = self.missing_features({r.video_id for r in records}, list(modalities))
        if missing:
            raise MissingFeaturesError(missing)

    def _features(self, video_id: str, modality: Modality) -> VideoFeatures:
        key = (video_id, modality, None)
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        entry = self.feature_index.get(video_id, {})
        if modality not in entry or not entry[modality].exists():
            raise MissingFeaturesError([video_id])
        vf = load_features(entry[modality], video_id=video_id)
        if vf.modality is not modality:
            raise DataError(f"{entry[modality]}: в индексе {modality.value}, в файле {vf.modality.value}")
        with self._lock:
            self._cache[key] = vf
        return vf

    def _segmented(self, video_id: str, modality: Modality, num_segments: int | None) -> VideoFeatures:
        vf = self._features(video_id, modality)
        if not num_segments:
            return vf
        key = (video_id, modality, num_segments)
        with self._lock:
            cached = self._cache.get(key)
        if cached is None:
            cached = vf.with_segments(num_segments)
            with self._lock:
                cached = self._cache.setdefault(key, cached)
        return cached

    def video(self, video_id: str, num_segments: int | None = None, modalities=tuple(Modality)) -> Video:
        """Признаки видео по запрошенным модальностям, пересегментированные при необходимости."""
        parts = {}
        for modality in modalities:
            parts[Modality(modality).value] = self._segmented(video_id, Modality(modality), num_segments)
        return Video(video_id=video_id, **parts)
