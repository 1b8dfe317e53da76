"""
Поиск моментов по всему корпусу: ближайшие к запросу интервалы среди всех видео.

Кандидаты всех видео кладутся в in-memory коллекцию Qdrant с евклидовой метрикой.
Вектор момента — конкатенация √w_m·P_m по модальностям, вектор запроса — √w_m·P^L,
так что квадрат евклидова расстояния равен D(s, v, τ).
"""

import logging
from dataclasses import dataclass

import numpy as np
from qdrant_client import QdrantClient
from qdrant_client.models import Distance, PointStruct, VectorParams

from mcn.features import Video
from mcn.model import MomentContextNetwork
from mcn.moments import Span, enumerate_candidates

logger = logging.getLogger(__name__)

COLLECTION_NAME = "moments"
UPSERT_BATCH = 256


@dataclass
class RetrievedMoment:
    """Результат поиска — интервал видео и его расстояние до запроса."""
    video_id: str
    span: Span
    distance: float


class MomentIndex:
    """
    Индекс всех кандидатов набора видео.

    Использование:
        index = MomentIndex(model)
        index.build(videos)
        for hit in index.search("w003 w017", k=5):
            print(hit.video_id, hit.span, hit.distance)
    """

    def __init__(
        self,
        model: MomentContextNetwork,
        client: QdrantClient | None = None,
        collection_name: str = COLLECTION_NAME,
    ):
        self.model = model
        self.client = client or QdrantClient(location=":memory:")
        self.collection_name = collection_name
        self.videos: dict[str, Video] = {}
        self.size = 0
        self._scales = {m: np.sqrt(w) for m, w in model.weights.items()}

    def _moment_vectors(self, video: Video, spans) -> np.ndarray:
        embeddings = self.model.branch_embeddings(video, spans)
        return np.hstack([self._scales[m] * embeddings[m] for m in self.model.weights])

    def _query_vector(self, sentence: np.ndarray) -> np.ndarray:
        return np.concatenate([self._scales[m] * sentence for m in self.model.weights])

    def build(self, videos: list[Video]) -> int:
        """Пересоздаёт коллекцию и загружает все кандидаты видео. Возвращает число точек."""
        if self.client.collection_exists(self.collection_name):
            self.client.delete_collection(self.collection_name)
        self.client.create_collection(
            collection_name=self.collection_name,
            vectors_config=VectorParams(
                size=self.model.config.joint_dim * len(self.model.weights),
                distance=Distance.EUCLID,
            ),
        )

        points = []
        self.videos = {}
        for video in sorted(videos, key=lambda v: v.video_id):
            self.videos[video.video_id] = video
            spans = enumerate_candidates(video.num_segments)
            for span, vector in zip(spans, self._moment_vectors(video, spans)):
                points.append(PointStruct(
                    id=len(points),
                    vector=vector.tolist(),
                    payload={"video_id": video.video_id, "start": span.start, "end": span.end},
                ))

        for i in range(0, len(points), UPSERT_BATCH):
            self.client.upsert(collection_name=self.collection_name, points=points[i:i + UPSERT_BATCH])
        self.size = len(points)
        logger.info(f"Индекс моментов: {len(self.videos)} видео, {self.size} кандидатов")
        return self.size

    def _query(self, vector: np.ndarray, limit: int, threshold: float | None = None):
        return self.client.query_points(
            collection_name=self.collection_name,
            query=vector.tolist(),
            limit=limit,
            score_threshold=threshold,
            with_payload=True,
        ).points

    def search_tokens(self, tokens: list[int], k: int) -> list[RetrievedMoment]:
        """
        Глобальные top-k моментов по D.

        Qdrant хранит float32, поэтому сначала берём всех кандидатов не дальше k-го
        (с небольшим запасом), затем пересчитываем точные расстояния и сортируем
        по (D, video_id, start, end). k больше числа кандидатов — возвращаются все.
        """
        if self.size == 0 or k < 1:
            return []
        k = min(k, self.size)
        sentence = self.model.embed_tokens(tokens)
        vector = self._query_vector(sentence)

        first = self._query(vector, k)
        kth = first[-1].score
        points = self._query(vector, self.size, threshold=kth * (1 + 1e-3) + 1e-6)

        by_video: dict[str, list[Span]] = {}
        for point in points:
            payload = point.payload
            by_video.setdefault(payload["video_id"], []).append(Span(payload["start"], payload["end"]))

        hits = []
        for video_id, spans in by_video.items():
            distances = self.model.score_spans(sentence, self.videos[video_id], spans)
            hits.extend(RetrievedMoment(video_id, span, float(d)) for span, d in zip(spans, distances))
        hits.sort(key=lambda h: (h.distance, h.video_id, h.span))
        return hits[:k]

    def search(self, text: str, k: int = 5) -> list[RetrievedMoment]:
        return self.search_tokens(self.model.encoder.token_ids(text), k)


def retrieve_corpus(
    model: MomentContextNetwork,
    text: str,
    videos: list[Video],
    k: int = 5,
) -> list[RetrievedMoment]:
    """Top-k моментов для запроса по всем видео (эксперимент поиска по корпусу)."""
    index = MomentIndex(model)
    index.build(videos)
    return index.search(text, k)
