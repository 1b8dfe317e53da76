"""
Синтетический корпус с заложенными ответами для проверки на настольном масштабе.

Каждому сегменту видео назначается латентный концепт; кадры — вектор концепта плюс
гауссов шум σ. Запрос перечисляет слова концептов интервала («w003 w017»), иногда с
позиционным словом «first»/«last», которое прижимает интервал к началу или концу видео.
Все 4 аннотации запроса совпадают, поэтому верхняя граница метрик — 100%.

Запуск:
    python -m mcn synth --out data/synthetic --seed 7 --videos 250
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mcn.config import (
    CORPUS_ANNOTATIONS,
    CORPUS_EMBEDDINGS,
    CORPUS_FEATURES_DIR,
    CORPUS_INDEX,
    CORPUS_SPLITS,
)
from mcn.data import write_annotations, write_features, write_index, write_splits
from mcn.errors import SpecError
from mcn.features import Modality, VideoFeatures
from mcn.language import UNK_TOKEN, tokenize, write_embeddings
from mcn.moments import NUM_ANNOTATIONS, Span, enumerate_candidates
from mcn.schemas import AnnotationRecord, SyntheticSpec

logger = logging.getLogger(__name__)

SPEC_FILE = "synthetic.json"
POSITION_WORDS = ("first", "last")
POSITION_TAG = "position"


def concept_word(concept: int) -> str:
    return f"w{concept:03d}"


@dataclass
class SyntheticCorpus:
    """Что сгенерировано: пути, концепты видео и таблицы концептов по модальностям."""
    root: Path
    spec: SyntheticSpec
    concepts: dict[Modality, np.ndarray]
    video_concepts: dict[str, list[int]] = field(default_factory=dict)
    splits: dict[str, str] = field(default_factory=dict)
    records: list[AnnotationRecord] = field(default_factory=list)

    @property
    def annotations_path(self) -> Path:
        return self.root / CORPUS_ANNOTATIONS

    @property
    def index_path(self) -> Path:
        return self.root / CORPUS_INDEX

    @property
    def splits_path(self) -> Path:
        return self.root / CORPUS_SPLITS

    @property
    def embeddings_path(self) -> Path:
        return self.root / CORPUS_EMBEDDINGS


def _occurrences(concepts: list[int], words: list[int]) -> list[int]:
    width = len(words)
    return [
        start for start in range(len(concepts) - width + 1)
        if concepts[start:start + width] == words
    ]


def _make_query(
    rng: np.random.Generator,
    concepts: list[int],
    positional_rate: float,
) -> tuple[str, Span, list[str]]:
    n = len(concepts)
    start = int(rng.integers(n))
    end = int(rng.integers(start, n))

    prefix = None
    if rng.random() < positional_rate:
        prefix = POSITION_WORDS[int(rng.integers(2))]
        if prefix == "first":
            start = 0
        else:
            end = n - 1

    span = Span(start, end)
    words = concepts[start:end + 1]
    tags = []
    if prefix and len(_occurrences(concepts, words)) > 1:
        tags.append(POSITION_TAG)

    text = " ".join(concept_word(c) for c in words)
    if prefix:
        text = f"{prefix} {text}"
    return text, span, tags


def _assign_splits(rng: np.random.Generator, video_ids: list[str], spec: SyntheticSpec) -> dict[str, str]:
    order = rng.permutation(len(video_ids))
    n_test = int(round(len(video_ids) * spec.test_fraction))
    n_val = int(round(len(video_ids) * spec.val_fraction))
    splits = {}
    for rank, i in enumerate(order):
        if rank < n_test:
            splits[video_ids[i]] = "test"
        elif rank < n_test + n_val:
            splits[video_ids[i]] = "val"
        else:
            splits[video_ids[i]] = "train"
    return {video_id: splits[video_id] for video_id in video_ids}


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> SyntheticCorpus:
    """
    Генерирует корпус и пишет его на диск.

    Результат — чистая функция spec: повторный запуск с тем же сидом даёт
    побайтно одинаковые файлы.

    Raises:
        SpecError: уникальных концептов меньше, чем сегментов в видео.
    """
    if spec.unique_concepts and spec.concept_vocab < max(spec.segments):
        raise SpecError(
            f"Словарь концептов ({spec.concept_vocab}) меньше числа сегментов "
            f"({max(spec.segments)}) при unique_concepts = true"
        )

    root = Path(out_dir)
    features_dir = root / CORPUS_FEATURES_DIR
    features_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(spec.seed)
    concepts = {
        Modality.RGB: rng.normal(size=(spec.concept_vocab, spec.feature_dim)),
        Modality.FLOW: rng.normal(size=(spec.concept_vocab, spec.feature_dim)),
    }
    corpus = SyntheticCorpus(root=root, spec=spec, concepts=concepts)

    index = {}
    width = len(str(spec.num_videos - 1))
    for v in range(spec.num_videos):
        video_id = f"v{v:0{width}d}"
        n = int(rng.choice(spec.segments))
        if spec.unique_concepts:
            video_concepts = [int(c) for c in rng.choice(spec.concept_vocab, size=n, replace=False)]
        else:
            video_concepts = [int(c) for c in rng.integers(spec.concept_vocab, size=n)]
        corpus.video_concepts[video_id] = video_concepts

        index[video_id] = {}
        for modality, table in concepts.items():
            clean = np.repeat(table[video_concepts], spec.frames_per_segment, axis=0)
            frames = clean + spec.sigma * rng.normal(size=clean.shape)
            vf = VideoFeatures(
                video_id=video_id,
                modality=modality,
                frames=frames.astype(np.float32),
                frames_per_segment=spec.frames_per_segment,
            )
            relative = f"{CORPUS_FEATURES_DIR}/{video_id}_{modality.value}.mcnf"
            write_features(root / relative, vf)
            index[video_id][modality] = relative

        for q in range(spec.queries_per_video):
            text, span, tags = _make_query(rng, video_concepts, spec.positional_rate)
            corpus.records.append(AnnotationRecord(
                annotation_id=f"{video_id}_{q}",
                video_id=video_id,
                description=text,
                times=[span.as_pair()] * NUM_ANNOTATIONS,
                num_segments=n,
                tags=tags,
            ))

    corpus.splits = _assign_splits(rng, list(index), spec)

    vocabulary = [concept_word(c) for c in range(spec.concept_vocab)] + list(POSITION_WORDS)
    table = rng.normal(size=(len(vocabulary), spec.embedding_dim))

    write_annotations(corpus.annotations_path, corpus.records)
    write_index(corpus.index_path, index)
    write_splits(corpus.splits_path, corpus.splits)
    write_embeddings(corpus.embeddings_path, vocabulary, table)
    with open(root / SPEC_FILE, "w", encoding="utf-8") as f:
        json.dump(spec.model_dump(mode="json"), f, ensure_ascii=False, indent=2)

    counts = {split: list(corpus.splits.values()).count(split) for split in ("train", "val", "test")}
    logger.info(
        f"Синтетический корпус: {spec.num_videos} видео, {len(corpus.records)} запросов, "
        f"сплиты {counts} → {root}"
    )
    return corpus


class NearestConceptRanker:
    """
    Оракул для синтетического корпуса: сегмент получает ближайший концепт по среднему
    кадру, интервал со словами запроса ставится первым.

    Ему не нужна обученная модель; при σ = 0 и уникальных концептах он локализует
    каждый запрос точно.
    """

    name = "nearest_concept"

    def __init__(self, corpus: SyntheticCorpus, loader, modality: Modality = Modality.RGB):
        self.table = corpus.concepts[modality]
        self.loader = loader
        self.modality = modality

    def segment_concepts(self, video_id: str, num_segments: int) -> list[int]:
        vf = self.loader(video_id, num_segments).features(self.modality)
        labels = []
        for s in range(num_segments):
            mean = vf.frames[vf.span_frames(Span(s, s))].mean(axis=0)
            labels.append(int(np.argmin(np.sum((self.table - mean) ** 2, axis=1))))
        return labels

    def rank(self, record: AnnotationRecord) -> list[Span]:
        tokens = tokenize(record.description)
        position = tokens[0] if tokens and tokens[0] in POSITION_WORDS else None
        words = [t for t in tokens if t not in POSITION_WORDS and t != UNK_TOKEN]
        wanted = [int(w[1:]) if w[1:].isdigit() else -1 for w in words]

        labels = self.segment_concepts(record.video_id, record.num_segments)
        candidates = enumerate_candidates(record.num_segments)

        def key(span: Span):
            matches = labels[span.start:span.end + 1] == wanted
            on_edge = (
                position is None
                or (position == "first" and span.start == 0)
                or (position == "last" and span.end == record.num_segments - 1)
            )
            return (not (matches and on_edge), not matches, span)

        return sorted(candidates, key=key)
