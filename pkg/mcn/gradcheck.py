"""
Набор проверок градиентов: каждый слой и полный лосс сверяются с центральными
конечными разностями на случайных экземплярах.

Запуск:
    python -m mcn gradcheck                      # все слои, 100 экземпляров на слой
    python -m mcn gradcheck --corrupt-scale 2    # негативный контроль: должно упасть
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from mcn.config import GRADCHECK_STEP, GRADCHECK_TOLERANCE, RunConfig
from mcn.features import Modality, Video, VideoFeatures
from mcn.language import Query, Vocabulary, encode_batch, encode_batch_backward, init_language_params
from mcn.model import MomentContextNetwork, TrainingExample, init_visual_params, visual_backward, visual_forward
from mcn.moments import Span
from mcn.numerics import (
    GradCheckReport,
    ModelParams,
    grad_check,
    linear_backward,
    linear_forward,
    lstm_backward,
    lstm_forward,
    relu,
    relu_backward,
)

logger = logging.getLogger(__name__)

KINK_EPS = 1e-3  # ReLU-входы ближе к нулю пересэмплируются
LANGUAGE_SCALE = 0.5
LANGUAGE_TENSORS = ("language.lstm.W", "language.proj.W", "language.proj.b")

LossFn = Callable[[ModelParams], tuple[float, dict[str, np.ndarray]]]


@dataclass
class SuiteResult:
    """Сводный отчёт по слою: худшая ошибка по всем экземплярам."""
    layer: str
    instances: int
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed


def _away_from_kink(rng: np.random.Generator, shape) -> np.ndarray:
    x = rng.normal(size=shape)
    while np.any(np.abs(x) < KINK_EPS):
        mask = np.abs(x) < KINK_EPS
        x[mask] = rng.normal(size=int(mask.sum()))
    return x


# ── Экземпляры слоёв ─────────────────────────────────────────────────

def linear_instance(rng: np.random.Generator) -> tuple[ModelParams, LossFn]:
    params = ModelParams({"W": rng.normal(size=(3, 4)), "b": rng.normal(size=3), "x": rng.normal(size=4)})
    upstream = rng.normal(size=3)

    def fn(p: ModelParams):
        out = linear_forward(p["W"], p["b"], p["x"])
        grads = linear_backward(p["W"], p["b"], p["x"], upstream)
        return float(upstream @ out), {"W": grads.params["W"], "b": grads.params["b"], "x": grads.input}
    return params, fn


def relu_instance(rng: np.random.Generator) -> tuple[ModelParams, LossFn]:
    params = ModelParams({"x": _away_from_kink(rng, 6)})
    upstream = rng.normal(size=6)

    def fn(p: ModelParams):
        return float(upstream @ relu(p["x"])), {"x": relu_backward(p["x"], upstream)}
    return params, fn


def lstm_instance(rng: np.random.Generator, steps: int = 4) -> tuple[ModelParams, LossFn]:
    hidden, emb, batch = 3, 2, 2
    params = ModelParams({
        "W": rng.uniform(-0.5, 0.5, size=(4 * hidden, emb + hidden)),
        "b": rng.uniform(-0.5, 0.5, size=4 * hidden),
        "xs": rng.normal(size=(steps, batch, emb)),
    })
    mask = np.ones((steps, batch))
    mask[steps - 1:, 1] = 0.0  # вторая последовательность короче на шаг
    upstream = rng.normal(size=(batch, hidden))

    def fn(p: ModelParams):
        h, cache = lstm_forward(p["W"], p["b"], p["xs"], mask)
        grads = lstm_backward(p["W"], p["b"], cache, upstream)
        return float(np.sum(upstream * h)), {"W": grads.params["W"], "b": grads.params["b"], "xs": grads.input}
    return params, fn


def visual_instance(rng: np.random.Generator) -> tuple[ModelParams, LossFn]:
    input_dim, hidden, joint, rows = 6, 4, 3, 5
    while True:
        tensors = init_visual_params(rng, Modality.RGB, input_dim, hidden, joint, init_scale=0.5)
        tensors["rgb.fc1.b"] = rng.uniform(-0.5, 0.5, size=hidden)
        x = rng.normal(size=(rows, input_dim))
        params = ModelParams(tensors)
        _, cache = visual_forward(params, Modality.RGB, x)
        if np.all(np.abs(cache.pre) > KINK_EPS):
            break
    upstream = rng.normal(size=(rows, joint))

    def fn(p: ModelParams):
        out, cache = visual_forward(p, Modality.RGB, x)
        return float(np.sum(upstream * out)), visual_backward(p, Modality.RGB, cache, upstream)
    return params, fn


def _toy_vocabulary(rng: np.random.Generator, size: int = 6, dim: int = 3) -> Vocabulary:
    tokens = [f"t{i}" for i in range(size)] + ["<unk>"]
    return Vocabulary(tokens=tokens, table=rng.normal(size=(size + 1, dim)))


def language_instance(rng: np.random.Generator) -> tuple[ModelParams, LossFn]:
    vocabulary = _toy_vocabulary(rng)
    params = ModelParams(init_language_params(
        rng, vocabulary, lstm_hidden=4, joint_dim=3, init_scale=0.5, forget_bias=1.0,
    ))
    sentences = [list(rng.integers(vocabulary.size, size=5)), list(rng.integers(vocabulary.size, size=3))]
    upstream = rng.normal(size=(len(sentences), 3))

    def fn(p: ModelParams):
        out, cache = encode_batch(p, sentences)
        return float(np.sum(upstream * out)), encode_batch_backward(p, cache, upstream)
    return params, fn


def toy_model(rng: np.random.Generator, language_free: bool = False) -> MomentContextNetwork:
    """
    Маленькая MCN для проверки полного лосса.

    Положительные смещения первого слоя держат ReLU в активной зоне, а margin много больше
    разброса расстояний делает активными все hinge-слагаемые: лосс гладкий в окрестности точки.
    Видео короткие, чтобы сумма лосса оставалась малой и не съедала точность разностей.
    Веса LSTM и проекции языка крупнее рабочих (±LANGUAGE_SCALE): при ±0.08 их градиенты
    порядка 1e-8 и тонут в шуме разностной производной.
    """
    config = RunConfig(
        joint_dim=3, visual_hidden=4, lstm_hidden=4, embedding_dim=3,
        margin=5.0, lambda_=0.5, eta=2.33, init_scale=0.08,
        finetune_embeddings=True, language_free=language_free, seed=int(rng.integers(2**31)),
    )
    model = MomentContextNetwork.initialize(config, _toy_vocabulary(rng), rgb_dim=2, flow_dim=2)
    for modality in Modality:
        model.params[f"{modality.value}.fc1.b"] = rng.uniform(0.5, 1.0, size=config.visual_hidden)
        model.params[f"{modality.value}.fc2.b"] = rng.uniform(-0.5, 0.5, size=config.joint_dim)
    for name in LANGUAGE_TENSORS:
        if name in model.params:
            shape = model.params[name].shape
            model.params[name] = rng.uniform(-LANGUAGE_SCALE, LANGUAGE_SCALE, size=shape)
    return model


def toy_video(rng: np.random.Generator, video_id: str, num_segments: int = 6, dim: int = 2) -> Video:
    parts = {
        modality.value: VideoFeatures(
            video_id=video_id,
            modality=modality,
            frames=rng.normal(size=(2 * num_segments, dim)),
            frames_per_segment=2,
        )
        for modality in Modality
    }
    return Video(video_id=video_id, **parts)


def full_loss_instance(rng: np.random.Generator) -> tuple[ModelParams, LossFn]:
    """Полный комбинированный лосс на батче из двух видео с inter-негативами друг из друга."""
    model = toy_model(rng)
    videos = [toy_video(rng, "a", num_segments=3), toy_video(rng, "b", num_segments=2)]
    examples = []
    for video in videos:
        tokens = [int(t) for t in rng.integers(model.vocabulary.size, size=4)]
        start = int(rng.integers(video.num_segments))
        span = Span(start, int(rng.integers(start, video.num_segments)))
        query = Query(raw_text="", tokens=tokens, video_id=video.video_id, annotations=[span] * 4)
        examples.append(TrainingExample(query=query, positive=span, video=video))
    negatives = [
        [other for other in videos if other is not ex.video and ex.positive.fits(other.num_segments)]
        for ex in examples
    ]
    return model.params, model.loss_fn(examples, negatives)


LAYERS: dict[str, Callable[[np.random.Generator], tuple[ModelParams, LossFn]]] = {
    "linear": linear_instance,
    "relu": relu_instance,
    "lstm": lstm_instance,
    "visual_branch": visual_instance,
    "sentence_encoder": language_instance,
    "full_loss": full_loss_instance,
}


def _corrupted(fn: LossFn, scale: float) -> LossFn:
    if scale == 1.0:
        return fn

    def wrapped(p: ModelParams):
        loss, grads = fn(p)
        return loss, {k: g * scale for k, g in grads.items()}
    return wrapped


def check_layer(
    name: str,
    instances: int,
    seed: int = 0,
    tolerance: float = GRADCHECK_TOLERANCE,
    corrupt_scale: float = 1.0,
) -> SuiteResult:
    """grad_check на instances случайных экземплярах слоя; отчёт — по худшему."""
    rng = np.random.default_rng(seed)
    per_tensor: dict[str, float] = {}
    worst = []
    checked = 0
    for _ in range(instances):
        params, fn = LAYERS[name](rng)
        report = grad_check(_corrupted(fn, corrupt_scale), params, tolerance=tolerance, step=GRADCHECK_STEP)
        for tensor, err in report.per_tensor.items():
            per_tensor[tensor] = max(per_tensor.get(tensor, 0.0), err)
        worst.extend(report.worst)
        checked += report.checked
    worst.sort(key=lambda e: e.error, reverse=True)
    merged = GradCheckReport(tolerance=tolerance, per_tensor=per_tensor, worst=worst[:5], checked=checked)
    logger.debug(f"{name}: max rel error {merged.max_error:.2e} по {checked} координатам")
    return SuiteResult(layer=name, instances=instances, report=merged)


def run_suite(
    instances: int = 100,
    full_loss_instances: int = 5,
    seed: int = 0,
    tolerance: float = GRADCHECK_TOLERANCE,
    corrupt_scale: float = 1.0,
) -> list[SuiteResult]:
    """Все слои плюс полный лосс."""
    results = []
    for i, name in enumerate(LAYERS):
        count = full_loss_instances if name == "full_loss" else instances
        results.append(check_layer(name, count, seed + i, tolerance, corrupt_scale))
    return results


__all__ = ["LAYERS", "SuiteResult", "check_layer", "run_suite", "toy_model", "toy_video"]
