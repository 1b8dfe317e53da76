"""
Moment Context Network: визуальные ветки P^V и P^F, языковая ветка P^L,
расстояние в общем пространстве, ранжирующие лоссы и сэмплер inter-негативов.

Расстояние между запросом и интервалом:
    D(s, v, τ) = ‖P^V(v, τ) − P^L(s)‖² + η·‖P^F(v, τ) − P^L(s)‖²

Локализация — argmin D по всем кандидатам Γ видео.
"""

import logging
from dataclasses import dataclass

import numpy as np

from mcn.config import RunConfig
from mcn.errors import ConfigurationError, DataError
from mcn.features import (
    FeatureFlags,
    Modality,
    Video,
    build_context_input,
    candidate_inputs,
    context_input_width,
    sliding_windows,
    window_inputs,
)
from mcn.language import (
    EMBEDDINGS,
    Query,
    SentenceEncoder,
    Vocabulary,
    encode_batch,
    encode_batch_backward,
    init_language_params,
)
from mcn.moments import Span, candidate_index, enumerate_candidates
from mcn.numerics import ModelParams, init_uniform, linear_backward, linear_forward, relu, relu_backward

logger = logging.getLogger(__name__)


def modality_weights(config: RunConfig) -> dict[Modality, float]:
    """Вес каждой модальности в расстоянии: fusion — (1, η), одиночная модальность — 1."""
    if config.modalities == "rgb":
        return {Modality.RGB: 1.0}
    if config.modalities == "flow":
        return {Modality.FLOW: 1.0}
    return {Modality.RGB: 1.0, Modality.FLOW: config.eta}


def feature_flags(config: RunConfig) -> FeatureFlags:
    return FeatureFlags(
        use_global=config.use_global,
        use_tef=config.use_tef,
        layout=config.feature_layout,
    )


def language_free_variant(config: RunConfig) -> RunConfig:
    """Конфигурация модели без текста: P^L — один обучаемый вектор на все запросы."""
    return config.updated(language_free=True)


# ── Визуальная ветка ─────────────────────────────────────────────────

def _branch_names(modality: Modality) -> tuple[str, str, str, str]:
    prefix = Modality(modality).value
    return f"{prefix}.fc1.W", f"{prefix}.fc1.b", f"{prefix}.fc2.W", f"{prefix}.fc2.b"


@dataclass
class BranchCache:
    x: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray


def visual_forward(params: ModelParams, modality: Modality, x: np.ndarray) -> tuple[np.ndarray, BranchCache]:
    """linear → ReLU → linear над входами временного контекста (строка на интервал)."""
    w1, b1, w2, b2 = _branch_names(modality)
    pre = linear_forward(params[w1], params[b1], x)
    hidden = relu(pre)
    out = linear_forward(params[w2], params[b2], hidden)
    return out, BranchCache(x=np.asarray(x, dtype=np.float64), pre=pre, hidden=hidden)


def visual_backward(
    params: ModelParams,
    modality: Modality,
    cache: BranchCache,
    grad_out: np.ndarray,
) -> dict[str, np.ndarray]:
    w1, b1, w2, b2 = _branch_names(modality)
    fc2 = linear_backward(params[w2], params[b2], cache.hidden, grad_out)
    fc1 = linear_backward(params[w1], params[b1], cache.x, relu_backward(cache.pre, fc2.input))
    return {
        w1: fc1.params["W"],
        b1: fc1.params["b"],
        w2: fc2.params["W"],
        b2: fc2.params["b"],
    }


def init_visual_params(
    rng: np.random.Generator,
    modality: Modality,
    input_dim: int,
    hidden_dim: int,
    joint_dim: int,
    init_scale: float,
) -> dict[str, np.ndarray]:
    w1, b1, w2, b2 = _branch_names(modality)
    return {
        w1: init_uniform(rng, (hidden_dim, input_dim), init_scale),
        b1: np.zeros(hidden_dim),
        w2: init_uniform(rng, (joint_dim, hidden_dim), init_scale),
        b2: np.zeros(joint_dim),
    }


# ── Лоссы ────────────────────────────────────────────────────────────

def hinge(x: float, y: float, margin: float) -> float:
    """L^R(x, y) = max(0, x − y + b)."""
    return max(0.0, x - y + margin)


def ranking_losses(positive: float, negatives, margin: float) -> float:
    """Σ hinge(positive, n, margin) по всем негативам."""
    return float(sum(hinge(positive, n, margin) for n in negatives))


@dataclass
class TrainingExample:
    """Обучающий пример: запрос, целевой интервал и признаки его видео."""
    query: Query
    positive: Span
    video: Video

    def __post_init__(self):
        self.positive.validate(self.video.num_segments)


@dataclass
class LossBreakdown:
    """Суммы по батчу: intra и inter без весов, total = λ·intra + (1 − λ)·inter."""
    total: float = 0.0
    intra: float = 0.0
    inter: float = 0.0
    examples: int = 0
    inter_terms: int = 0


@dataclass
class RankedMoment:
    span: Span
    distance: float


@dataclass
class TracePoint:
    """Точка детальной трассы: окно кадров [start_frame, end_frame) и его расстояние."""
    start_frame: int
    end_frame: int
    distance: float


class InterNegativeSampler:
    """
    Сэмплер inter-негативов внутри минибатча.

    Для примера берёт другие видео батча; видео подходит, если в нём есть позитивный
    интервал (≥ τ.end + 1 сегментов). После max_resample неудачных попыток слагаемое
    пропускается.
    """

    def __init__(self, rng: np.random.Generator, num_negatives: int = 1, max_resample: int = 10):
        self.rng = rng
        self.num_negatives = num_negatives
        self.max_resample = max_resample
        self.calls = 0
        self.skipped = 0

    def sample(self, example: TrainingExample, pool: list[Video]) -> list[Video]:
        self.calls += 1
        others = [v for v in pool if v.video_id != example.video.video_id]
        if not others:
            return []

        chosen = []
        for _ in range(self.num_negatives):
            for _ in range(self.max_resample):
                video = others[int(self.rng.integers(len(others)))]
                if example.positive.fits(video.num_segments):
                    chosen.append(video)
                    break
            else:
                self.skipped += 1
                logger.debug(
                    f"Для {example.query.annotation_id or example.video.video_id} не нашлось "
                    f"видео с интервалом {example.positive}, inter-слагаемое пропущено"
                )
        return chosen

    def sample_batch(self, batch: list[TrainingExample]) -> list[list[Video]]:
        pool = list({ex.video.video_id: ex.video for ex in batch}.values())
        return [self.sample(ex, pool) for ex in batch]


# ── Модель ───────────────────────────────────────────────────────────

class MomentContextNetwork:
    """
    MCN: параметры, конфигурация и словарь вместе.

    Использование:
        model = MomentContextNetwork.initialize(config, vocabulary, rgb_dim=16, flow_dim=16)
        ranked = model.localize(query.tokens, video)
        print(ranked[0].span, ranked[0].distance)
    """

    def __init__(
        self,
        config: RunConfig,
        vocabulary: Vocabulary,
        params: ModelParams,
        rgb_dim: int,
        flow_dim: int,
    ):
        self.config = config
        self.vocabulary = vocabulary
        self.params = params
        self.rgb_dim = rgb_dim
        self.flow_dim = flow_dim
        self.weights = modality_weights(config)
        self.flags = feature_flags(config)
        self.encoder = SentenceEncoder(vocabulary, params, config.max_tokens)

    @classmethod
    def initialize(
        cls,
        config: RunConfig,
        vocabulary: Vocabulary,
        rgb_dim: int,
        flow_dim: int,
    ) -> "MomentContextNetwork":
        """Начальные веса из сида конфигурации."""
        if not config.language_free and vocabulary.dim != config.embedding_dim:
            logger.info(
                f"Ширина эмбеддингов берётся из словаря: {vocabulary.dim} "
                f"(в конфигурации {config.embedding_dim})"
            )
        rng = np.random.default_rng(config.seed)
        flags = feature_flags(config)
        tensors: dict[str, np.ndarray] = {}
        dims = {Modality.RGB: rgb_dim, Modality.FLOW: flow_dim}
        for modality in modality_weights(config):
            if dims[modality] < 1:
                raise ConfigurationError(f"Не задана размерность признаков {modality.value}")
            tensors.update(init_visual_params(
                rng,
                modality,
                input_dim=context_input_width(dims[modality], flags),
                hidden_dim=config.visual_hidden,
                joint_dim=config.joint_dim,
                init_scale=config.init_scale,
            ))
        tensors.update(init_language_params(
            rng,
            vocabulary,
            lstm_hidden=config.lstm_hidden,
            joint_dim=config.joint_dim,
            init_scale=config.init_scale,
            forget_bias=config.forget_bias,
            language_free=config.language_free,
        ))
        frozen = set() if config.finetune_embeddings else {EMBEDDINGS}
        params = ModelParams(tensors, frozen=frozen & set(tensors))
        logger.info(
            f"Инициализирована модель: {params.num_parameters():,} параметров, "
            f"модальности {config.modalities}, без текста: {config.language_free}"
        )
        return cls(config, vocabulary, params, rgb_dim, flow_dim)

    def with_params(self, params: ModelParams) -> "MomentContextNetwork":
        return MomentContextNetwork(self.config, self.vocabulary, params, self.rgb_dim, self.flow_dim)

    # ── Прямой проход ────────────────────────────────────────────────

    def embed_text(self, text: str) -> np.ndarray:
        return self.encoder.embed(text)

    def embed_tokens(self, tokens: list[int]) -> np.ndarray:
        out, _ = encode_batch(self.params, [list(tokens)])
        return out[0]

    def embed_visual(self, video: Video, span: Span, modality: Modality) -> np.ndarray:
        """P^V или P^F для одного интервала."""
        x = build_context_input(video.features(modality), span, self.flags).vector
        out, _ = visual_forward(self.params, modality, x)
        return out

    def _weighted_distances(self, sentence: np.ndarray, inputs: dict[Modality, np.ndarray]) -> np.ndarray:
        total = None
        for modality, weight in self.weights.items():
            out, _ = visual_forward(self.params, modality, inputs[modality])
            term = weight * np.sum((out - sentence) ** 2, axis=-1)
            total = term if total is None else total + term
        return total

    def score_spans(self, sentence: np.ndarray, video: Video, spans) -> np.ndarray:
        """Расстояния D для набора интервалов одного видео (в порядке spans)."""
        inputs = {
            modality: candidate_inputs(video.features(modality), spans, self.flags)
            for modality in self.weights
        }
        return self._weighted_distances(sentence, inputs)

    def distance(self, sentence: np.ndarray, video: Video, span: Span) -> float:
        return float(self.score_spans(sentence, video, [span])[0])

    def branch_embeddings(self, video: Video, spans) -> dict[Modality, np.ndarray]:
        """Визуальные эмбеддинги интервалов по модальностям (строка на интервал)."""
        out = {}
        for modality in self.weights:
            x = candidate_inputs(video.features(modality), spans, self.flags)
            out[modality], _ = visual_forward(self.params, modality, x)
        return out

    def localize(self, tokens: list[int], video: Video) -> list[RankedMoment]:
        """
        Ранжирует все кандидаты видео по возрастанию D; при равенстве — по (start, end).

        Первый элемент — argmin D по Γ.
        """
        spans = enumerate_candidates(video.num_segments)
        distances = self.score_spans(self.embed_tokens(tokens), video, spans)
        ranked = sorted(zip(distances, spans), key=lambda item: (item[0], item[1]))
        return [RankedMoment(span=span, distance=float(d)) for d, span in ranked]

    def fine_grained_trace(
        self,
        tokens: list[int],
        video: Video,
        window_frames: int,
        stride_frames: int,
    ) -> list[TracePoint]:
        """Расстояние для каждого скользящего окна кадров (детальная локализация)."""
        sentence = self.embed_tokens(tokens)
        frame_counts = {video.features(m).num_frames for m in self.weights}
        if len(frame_counts) > 1:
            raise DataError(
                f"Видео {video.video_id}: у модальностей разное число кадров, окна не совпадут"
            )

        inputs = {}
        windows = []
        for modality in self.weights:
            vf = video.features(modality)
            windows = sliding_windows(vf, window_frames, stride_frames)
            inputs[modality] = window_inputs(vf, windows, self.flags)
        distances = self._weighted_distances(sentence, inputs)
        return [
            TracePoint(start_frame=w.start_frame, end_frame=w.end_frame, distance=float(d))
            for w, d in zip(windows, distances)
        ]

    # ── Лосс и градиенты ────────────────────────────────────────────

    def objective(
        self,
        examples: list[TrainingExample],
        negatives: list[list[Video]] | None = None,
        params: ModelParams | None = None,
        with_grads: bool = True,
    ) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
        """
        Комбинированный лосс батча и его градиент по всем параметрам.

        intra: для каждого примера Σ по n ∈ Γ \\ {τ} hinge(D(τ), D(n), b).
        inter: Σ по сэмплированным видео j hinge(D(s, v_i, τ), D(s, v_j, τ), b).
        total = λ·Σ intra + (1 − λ)·Σ inter (сумма, не среднее).

        Args:
            examples: Батч примеров.
            negatives: Inter-негативы для каждого примера (по видео на негатив).
            params: Точка вычисления (по умолчанию — текущие параметры модели).
            with_grads: False — только значение лосса.

        Returns:
            (LossBreakdown, градиенты имя → массив).
        """
        if params is None:
            params = self.params
        if negatives is None:
            negatives = [[] for _ in examples]
        if not examples:
            return LossBreakdown(), {}

        lam = self.config.lambda_
        margin = self.config.margin
        sentences, sentence_cache = encode_batch(params, [ex.query.tokens for ex in examples])

        rows: dict[Modality, list[np.ndarray]] = {m: [] for m in self.weights}
        owner: list[int] = []
        blocks: list[tuple[int, np.ndarray, np.ndarray]] = []
        cursor = 0
        for i, (ex, others) in enumerate(zip(examples, negatives)):
            spans = enumerate_candidates(ex.video.num_segments)
            for modality in self.weights:
                rows[modality].append(candidate_inputs(ex.video.features(modality), spans, self.flags))
            positive = cursor + candidate_index(ex.positive, ex.video.num_segments)
            intra = np.arange(cursor, cursor + len(spans))
            cursor += len(spans)

            for other in others:
                if other.video_id == ex.video.video_id:
                    raise DataError(f"Inter-негатив из того же видео {other.video_id}")
                for modality in self.weights:
                    vector = build_context_input(other.features(modality), ex.positive, self.flags).vector
                    rows[modality].append(vector[None, :])
            inter = np.arange(cursor, cursor + len(others))
            cursor += len(others)

            owner.extend([i] * (len(spans) + len(others)))
            blocks.append((positive, intra[intra != positive], inter))
        owner_idx = np.asarray(owner)

        distances = np.zeros(cursor)
        diffs: dict[Modality, np.ndarray] = {}
        caches = {}
        for modality, weight in self.weights.items():
            out, caches[modality] = visual_forward(params, modality, np.vstack(rows[modality]))
            diffs[modality] = out - sentences[owner_idx]
            distances += weight * np.sum(diffs[modality] ** 2, axis=1)

        breakdown = LossBreakdown(examples=len(examples))
        grad_d = np.zeros(cursor)
        for positive, intra, inter in blocks:
            for negs, weight, kind in ((intra, lam, "intra"), (inter, 1.0 - lam, "inter")):
                if negs.size == 0:
                    continue
                h = np.maximum(0.0, distances[positive] - distances[negs] + margin)
                if kind == "intra":
                    breakdown.intra += float(h.sum())
                else:
                    breakdown.inter += float(h.sum())
                    breakdown.inter_terms += negs.size
                active = weight * (h > 0)
                grad_d[positive] += active.sum()
                grad_d[negs] -= active
        breakdown.total = lam * breakdown.intra + (1.0 - lam) * breakdown.inter

        if not with_grads:
            return breakdown, {}

        grads: dict[str, np.ndarray] = {}
        grad_sentences = np.zeros_like(sentences)
        for modality, weight in self.weights.items():
            grad_out = 2.0 * weight * grad_d[:, None] * diffs[modality]
            grads.update(visual_backward(params, modality, caches[modality], grad_out))
            np.add.at(grad_sentences, owner_idx, -grad_out)
        grads.update(encode_batch_backward(params, sentence_cache, grad_sentences))
        return breakdown, grads

    def loss_fn(self, examples: list[TrainingExample], negatives: list[list[Video]] | None = None):
        """Замыкание params → (loss, grads) для grad_check."""
        def fn(params: ModelParams):
            breakdown, grads = self.objective(examples, negatives, params=params)
            return breakdown.total, grads
        return fn


def intra_loss(model: MomentContextNetwork, example: TrainingExample) -> float:
    """Σ по n ∈ Γ \\ {τ} hinge(D(s, v, τ), D(s, v, n), b) для одного примера."""
    breakdown, _ = model.objective([example], with_grads=False)
    return breakdown.intra


def inter_loss(model: MomentContextNetwork, example: TrainingExample, others: list[Video]) -> float:
    """Σ по видео j hinge(D(s, v_i, τ), D(s, v_j, τ), b) с тем же интервалом τ."""
    breakdown, _ = model.objective([example], [others], with_grads=False)
    return breakdown.inter


def combined_loss(
    model: MomentContextNetwork,
    batch: list[TrainingExample],
    negatives: list[list[Video]] | None = None,
) -> float:
    """λ·Σ intra + (1 − λ)·Σ inter по батчу."""
    breakdown, _ = model.objective(batch, negatives, with_grads=False)
    return breakdown.total

