"""Общие фикстуры: маленькие конфигурации и синтетический корпус во временном каталоге."""

import numpy as np
import pytest

from mcn.config import RunConfig
from mcn.data import Corpus
from mcn.features import Modality, Video, VideoFeatures
from mcn.language import UNK_TOKEN, Vocabulary
from mcn.schemas import SyntheticSpec
from mcn.synthetic import generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_config():
    return RunConfig(
        joint_dim=6,
        visual_hidden=8,
        lstm_hidden=8,
        embedding_dim=4,
        batch_size=8,
        epochs=2,
        lr=0.05,
        seed=0,
    )


@pytest.fixture
def vocabulary(rng):
    tokens = ["a", "cat", "walks", "dog", "runs", UNK_TOKEN]
    return Vocabulary(tokens=tokens, table=rng.normal(size=(len(tokens), 4)))


@pytest.fixture
def make_video(rng):
    """Фабрика видео со случайными признаками обеих модальностей."""
    def factory(video_id: str, num_segments: int = 6, dim: int = 3, frames_per_segment: int = 2) -> Video:
        parts = {
            modality.value: VideoFeatures(
                video_id=video_id,
                modality=modality,
                frames=rng.normal(size=(num_segments * frames_per_segment, dim)),
                frames_per_segment=frames_per_segment,
            )
            for modality in Modality
        }
        return Video(video_id=video_id, **parts)
    return factory


@pytest.fixture
def small_spec():
    return SyntheticSpec(
        seed=3,
        num_videos=12,
        feature_dim=4,
        concept_vocab=8,
        embedding_dim=4,
        frames_per_segment=2,
        queries_per_video=2,
        val_fraction=0.25,
    )


@pytest.fixture
def synthetic(tmp_path, small_spec):
    return generate_synthetic(small_spec, tmp_path / "corpus")


@pytest.fixture
def corpus(synthetic):
    return Corpus.from_files(
        synthetic.annotations_path,
        synthetic.splits_path,
        synthetic.index_path,
        synthetic.embeddings_path,
    )
