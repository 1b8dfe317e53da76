"""
Обучение MCN: минибатчевый SGD на комбинированном ранжирующем лоссе
с выбором лучшей по validation R@1 эпохи и ранней остановкой.
"""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from mcn.config import RunConfig
from mcn.data import Corpus
from mcn.errors import ConfigurationError, TrainingDivergenceError
from mcn.evaluation import ModelRanker, evaluate
from mcn.language import Query, Vocabulary
from mcn.model import InterNegativeSampler, MomentContextNetwork, TrainingExample, modality_weights
from mcn.moments import consensus_span
from mcn.numerics import sgd_step
from mcn.schemas import AnnotationRecord

logger = logging.getLogger(__name__)


@dataclass
class EpochLog:
    """Строка журнала обучения; лоссы — средние по примерам эпохи."""
    epoch: int
    train_loss: float
    intra_loss: float
    inter_loss: float
    val_r1: float | None


@dataclass
class TrainingResult:
    model: MomentContextNetwork
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    best_val_r1: float | None = None
    stopped_early: bool = False
    sampler_calls: int = 0


def build_examples(
    records: list[AnnotationRecord],
    corpus: Corpus,
    vocabulary: Vocabulary,
    modalities,
    max_tokens: int | None = None,
) -> list[TrainingExample]:
    """Обучающие примеры: позитив — консенсусный интервал четырёх аннотаций."""
    examples = []
    for record in records:
        spans = record.spans
        query = Query.from_text(
            record.description,
            vocabulary,
            video_id=record.video_id,
            annotations=spans,
            annotation_id=record.annotation_id,
            max_tokens=max_tokens,
        )
        video = corpus.video(record.video_id, record.num_segments, modalities=tuple(modalities))
        examples.append(TrainingExample(query=query, positive=consensus_span(spans), video=video))
    return examples


def _check_finite(value: float, epoch: int, batch: int) -> None:
    if not math.isfinite(value):
        raise TrainingDivergenceError(
            f"Нечисловой лосс {value} на эпохе {epoch}, батч {batch}; "
            f"попробуйте уменьшить learning rate"
        )


def train(
    config: RunConfig,
    corpus: Corpus,
    model: MomentContextNetwork | None = None,
) -> TrainingResult:
    """
    Обучает модель на train-сплите корпуса.

    Каждая эпоха: перемешивание, минибатчи batch_size, inter-негативы из того же
    минибатча, шаг SGD по среднему по батчу лоссу. После эпохи — R@1 на val;
    возвращается модель лучшей эпохи. Один сид ⇒ побитово одинаковый результат.

    Raises:
        ConfigurationError: пустой train или нет второго видео для inter-негативов.
        TrainingDivergenceError: нечисловой лосс или градиент.
    """
    train_records = corpus.records("train")
    val_records = corpus.records("val")
    if not train_records:
        raise ConfigurationError("Пустой обучающий сплит")
    if config.lambda_ < 1 and config.inter_negatives > 0 and len({r.video_id for r in train_records}) < 2:
        raise ConfigurationError("Для inter-негативов нужно хотя бы два обучающих видео (или lambda = 1)")

    if model is None:
        if corpus.vocabulary is None:
            raise ConfigurationError("Не задан файл эмбеддингов слов (embeddings)")
        modalities = tuple(modality_weights(config))
        corpus.require_features(train_records, modalities)
        first = corpus.video(train_records[0].video_id, modalities=modalities)
        model = MomentContextNetwork.initialize(
            config,
            corpus.vocabulary,
            rgb_dim=first.rgb.dim if first.rgb else 0,
            flow_dim=first.flow.dim if first.flow else 0,
        )

    modalities = list(model.weights)
    corpus.require_features(train_records + val_records, modalities)
    examples = build_examples(train_records, corpus, model.vocabulary, modalities, config.max_tokens)

    result = TrainingResult(model=model)
    if config.epochs == 0:
        logger.warning("epochs = 0: возвращается начальная модель")
        return result

    shuffle_rng = np.random.default_rng([config.seed, 1])
    sampler = InterNegativeSampler(
        np.random.default_rng([config.seed, 2]),
        num_negatives=config.inter_negatives,
        max_resample=config.max_resample,
    )
    use_inter = config.lambda_ < 1 and config.inter_negatives > 0

    best_model = model
    best_r1: float | None = None
    stale = 0
    params = model.params

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(examples))
        totals = np.zeros(3)
        skipped_before = sampler.skipped

        for b, start in enumerate(range(0, len(examples), config.batch_size)):
            batch = [examples[i] for i in order[start:start + config.batch_size]]
            negatives = sampler.sample_batch(batch) if use_inter else None
            breakdown, grads = model.objective(batch, negatives, params=params)
            _check_finite(breakdown.total, epoch, b)
            totals += (breakdown.total, breakdown.intra, breakdown.inter)

            scale = 1.0 / len(batch)
            params = sgd_step(params, {k: g * scale for k, g in grads.items()}, config.lr)

        current = model.with_params(params)

        if sampler.skipped > skipped_before:
            logger.warning(f"Эпоха {epoch}: пропущено {sampler.skipped - skipped_before} inter-слагаемых")

        val_r1 = None
        if val_records:
            report = evaluate(ModelRanker(current, corpus), val_records, jobs=config.jobs)
            val_r1 = report.metrics.r1

        mean = totals / len(examples)
        row = EpochLog(epoch, float(mean[0]), float(mean[1]), float(mean[2]), val_r1)
        result.log.append(row)
        val_text = f"{val_r1:.4f}" if val_r1 is not None else "—"
        logger.info(f"epoch {epoch}, train_loss {row.train_loss:.6f}, val_r1 {val_text}")

        if val_r1 is None:
            best_model, result.best_epoch = current, epoch
            continue
        if best_r1 is None or val_r1 > best_r1:
            best_r1, best_model, result.best_epoch = val_r1, current, epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(f"Ранняя остановка: {stale} эпох без улучшения val R@1")
                result.stopped_early = True
                break

    result.model = best_model
    result.best_val_r1 = best_r1
    result.sampler_calls = sampler.calls
    return result


def write_training_log(path: str | Path, log: list[EpochLog]) -> None:
    """Журнал обучения в CSV: epoch, train_loss, intra_loss, inter_loss, val_r1."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "train_loss", "intra_loss", "inter_loss", "val_r1"])
        writer.writeheader()
        for row in log:
            data = asdict(row)
            data["val_r1"] = "" if row.val_r1 is None else row.val_r1
            writer.writerow(data)
