"""
Численное ядро MCN: слои с явными forward/backward, LSTM, SGD и проверка градиентов.

Все тензоры — numpy float64. Линейный слой, ReLU и шаг LSTM принимают либо один вектор,
либо батч строк (N × in); семантика для каждой строки одинаковая.
"""

import logging
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field

import numpy as np

from mcn.errors import ConfigurationError, DimensionError, TrainingDivergenceError

logger = logging.getLogger(__name__)


@dataclass
class LayerGrads:
    """Градиенты слоя: по параметрам (имя → массив той же формы) и по входу."""
    params: dict[str, np.ndarray]
    input: np.ndarray | None = None


class ModelParams:
    """
    Все обучаемые веса модели (θ): упорядоченное отображение имя → float64-массив.

    Имена из `frozen` не обновляются в sgd_step (например, замороженная таблица GloVe).
    """

    def __init__(
        self,
        tensors: dict[str, np.ndarray] | None = None,
        frozen: set[str] | frozenset[str] = frozenset(),
    ):
        self.tensors: dict[str, np.ndarray] = {}
        for name, value in (tensors or {}).items():
            self.tensors[name] = np.asarray(value, dtype=np.float64)
        self.frozen = set(frozen)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def trainable(self) -> list[str]:
        return [name for name in self.tensors if name not in self.frozen]

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, self.frozen)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def equals(self, other: "ModelParams") -> bool:
        """Побитовое совпадение всех тензоров."""
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[k], other[k]) for k in self.tensors)


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], scale: float) -> np.ndarray:
    """Инициализация uniform(-scale, scale)."""
    return rng.uniform(-scale, scale, size=shape)


# ── Линейный слой ───────────────────────────────────────────────────

def _check_linear(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> None:
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise DimensionError(
            f"Линейный слой: W {W.shape}, b {b.shape} несовместимы со входом x {x.shape}"
        )


def linear_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """W·x + b для вектора x или для каждой строки батча."""
    x = np.asarray(x, dtype=np.float64)
    _check_linear(W, b, x)
    return x @ W.T + b


def linear_backward(
    W: np.ndarray,
    b: np.ndarray,
    x: np.ndarray,
    upstream: np.ndarray,
) -> LayerGrads:
    """
    Обратный проход линейного слоя.

    ∂/∂W = upstream·xᵀ (суммируется по батчу), ∂/∂b = upstream, ∂/∂x = Wᵀ·upstream.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    _check_linear(W, b, x)
    if upstream.shape != x.shape[:-1] + (W.shape[0],):
        raise DimensionError(
            f"Линейный слой: градиент {upstream.shape} не совпадает с выходом "
            f"{x.shape[:-1] + (W.shape[0],)}"
        )

    if x.ndim == 1:
        grad_W = np.outer(upstream, x)
        grad_b = upstream.copy()
    else:
        grad_W = upstream.T @ x
        grad_b = upstream.sum(axis=0)
    return LayerGrads(params={"W": grad_W, "b": grad_b}, input=upstream @ W)


# ── ReLU ─────────────────────────────────────────────────────────────

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Пропускает градиент там, где x > 0 (в нуле — ноль)."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != upstream.shape:
        raise DimensionError(f"ReLU: вход {x.shape} и градиент {upstream.shape}")
    return upstream * (x > 0)


# ── LSTM ─────────────────────────────────────────────────────────────

def sigmoid(x: np.ndarray) -> np.ndarray:
    # Через tanh — без переполнения exp при больших |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LSTMStepCache:
    """Всё, что нужно для обратного прохода одного шага."""
    xh: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    tanh_c: np.ndarray
    input_dim: int


def lstm_step(
    W: np.ndarray,
    b: np.ndarray,
    x_t: np.ndarray,
    h_prev: np.ndarray,
    c_prev: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, LSTMStepCache]:
    """
    Один шаг классической LSTM-ячейки (без peephole).

    W имеет форму (4H × (E + H)), строки гейтов в порядке i, f, o, g;
    c = f⊙c_prev + i⊙g, h = o⊙tanh(c).

    Returns:
        (h, c, cache) — cache передаётся в lstm_step_backward.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    hidden = W.shape[0] // 4
    if (
        W.shape[0] != 4 * hidden
        or h_prev.shape[-1] != hidden
        or c_prev.shape != h_prev.shape
        or x_t.shape[:-1] != h_prev.shape[:-1]
        or W.shape[1] != x_t.shape[-1] + hidden
    ):
        raise DimensionError(
            f"LSTM: W {W.shape}, x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape}"
        )

    xh = np.concatenate([x_t, h_prev], axis=-1)
    z = linear_forward(W, b, xh)
    zi, zf, zo, zg = np.split(z, 4, axis=-1)
    i, f, o, g = sigmoid(zi), sigmoid(zf), sigmoid(zo), np.tanh(zg)

    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    cache = LSTMStepCache(xh=xh, c_prev=c_prev, i=i, f=f, o=o, g=g, tanh_c=tanh_c,
                          input_dim=x_t.shape[-1])
    return h, c, cache


def lstm_step_backward(
    W: np.ndarray,
    b: np.ndarray,
    cache: LSTMStepCache,
    dh: np.ndarray,
    dc: np.ndarray,
) -> tuple[LayerGrads, np.ndarray, np.ndarray]:
    """
    Обратный проход одного шага.

    Args:
        dh, dc: Градиенты по выходам h и c этого шага.

    Returns:
        (градиенты W, b и входа x_t, dh_prev, dc_prev).
    """
    dc_total = dc + dh * cache.o * (1.0 - cache.tanh_c ** 2)
    d_o = dh * cache.tanh_c
    d_i = dc_total * cache.g
    d_g = dc_total * cache.i
    d_f = dc_total * cache.c_prev
    dc_prev = dc_total * cache.f

    dz = np.concatenate([
        d_i * cache.i * (1.0 - cache.i),
        d_f * cache.f * (1.0 - cache.f),
        d_o * cache.o * (1.0 - cache.o),
        d_g * (1.0 - cache.g ** 2),
    ], axis=-1)

    grads = linear_backward(W, b, cache.xh, dz)
    d_xh = grads.input
    grads.input = d_xh[..., :cache.input_dim]
    dh_prev = d_xh[..., cache.input_dim:]
    return grads, dh_prev, dc_prev


@dataclass
class LSTMSequenceCache:
    steps: list[LSTMStepCache] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)


def lstm_forward(
    W: np.ndarray,
    b: np.ndarray,
    xs: np.ndarray,
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, LSTMSequenceCache]:
    """
    Разворачивает LSTM по времени с нулевого состояния.

    Args:
        xs: Входы формы (T, B, E).
        mask: (T, B), 1 — настоящий токен, 0 — паддинг справа. На паддинге состояние
              не меняется, поэтому итог — скрытое состояние последнего настоящего шага.

    Returns:
        (h последнего шага (B, H), cache для lstm_backward).
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 3:
        raise DimensionError(f"LSTM: ожидается вход (T, B, E), получено {xs.shape}")
    steps, batch = xs.shape[:2]
    if mask is None:
        mask = np.ones((steps, batch))
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (steps, batch):
        raise DimensionError(f"LSTM: маска {mask.shape} не совпадает со входом {xs.shape[:2]}")

    hidden = W.shape[0] // 4
    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    cache = LSTMSequenceCache()
    for t in range(steps):
        h_new, c_new, step_cache = lstm_step(W, b, xs[t], h, c)
        m = mask[t][:, None]
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
        cache.steps.append(step_cache)
        cache.masks.append(m)
    return h, cache


def lstm_backward(
    W: np.ndarray,
    b: np.ndarray,
    cache: LSTMSequenceCache,
    dh_final: np.ndarray,
) -> LayerGrads:
    """Backprop through time от градиента по последнему скрытому состоянию."""
    grad_W = np.zeros_like(W)
    grad_b = np.zeros_like(b)
    dh = np.asarray(dh_final, dtype=np.float64)
    dc = np.zeros_like(dh)
    dxs = []

    for step_cache, m in zip(reversed(cache.steps), reversed(cache.masks)):
        grads, dh_prev, dc_prev = lstm_step_backward(W, b, step_cache, m * dh, m * dc)
        grad_W += grads.params["W"]
        grad_b += grads.params["b"]
        dxs.append(grads.input)
        dh = dh_prev + (1.0 - m) * dh
        dc = dc_prev + (1.0 - m) * dc

    dxs.reverse()
    inputs = np.stack(dxs) if dxs else None
    return LayerGrads(params={"W": grad_W, "b": grad_b}, input=inputs)


# ── SGD ──────────────────────────────────────────────────────────────

def sgd_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    learning_rate: float,
) -> ModelParams:
    """
    Один шаг SGD: p ← p − lr·g для всех незамороженных тензоров.

    Возвращает новый ModelParams; исходный не меняется.
    """
    if learning_rate < 0:
        raise ConfigurationError(f"learning_rate должен быть ≥ 0, получено {learning_rate}")

    updated = params.copy()
    for name, grad in grads.items():
        if name not in params:
            raise DimensionError(f"Градиент для неизвестного параметра '{name}'")
        if grad.shape != params[name].shape:
            raise DimensionError(
                f"Градиент '{name}' {grad.shape} не совпадает с параметром {params[name].shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise TrainingDivergenceError(f"Нечисловой градиент в параметре '{name}'")
        if name in params.frozen:
            continue
        updated[name] = params[name] - learning_rate * grad
    return updated


# ── Проверка градиентов ──────────────────────────────────────────────

LossFn = Callable[[ModelParams], "float | tuple[float, dict[str, np.ndarray]]"]

# Порог шума округления разностной производной: ROUNDOFF_FACTOR · ε · |L| / step
ROUNDOFF_FACTOR = 100.0


@dataclass
class CoordinateError:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    error: float


@dataclass
class GradCheckReport:
    """Итог проверки: максимальная относительная ошибка по каждому тензору и худшие координаты."""
    tolerance: float
    per_tensor: dict[str, float]
    worst: list[CoordinateError]
    checked: int

    @property
    def max_error(self) -> float:
        return max(self.per_tensor.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    """|a − n| / (|a| + |n|); координаты с |a| + |n| < floor считаются совпавшими."""
    scale = abs(analytic) + abs(numeric)
    if scale < floor:
        return 0.0
    return abs(analytic - numeric) / scale


def _loss_value(loss_fn: LossFn, params: ModelParams) -> float:
    out = loss_fn(params)
    return float(out[0] if isinstance(out, tuple) else out)


def grad_check(
    loss_fn: LossFn,
    params: ModelParams,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    num_samples: int | None = None,
    seed: int = 0,
    worst_k: int = 5,
) -> GradCheckReport:
    """
    Сравнивает аналитический градиент с центральной конечной разностью.

    Координата совпала, если |a − n| не больше шума округления разности
    (ROUNDOFF_FACTOR · ε · max(1, |L|) / step), иначе считается относительная ошибка.

    Args:
        loss_fn: params → (loss, grads). Для числовой производной используется только loss.
        params: Точка проверки (не изменяется).
        tolerance: Порог относительной ошибки.
        step: Шаг конечной разности.
        num_samples: Сколько координат проверять в каждом тензоре (None — все).
        seed: Сид выбора координат.

    Returns:
        GradCheckReport; провал не бросает исключение, а отражается в отчёте.
    """
    _, analytic = loss_fn(params)
    rng = np.random.default_rng(seed)
    work = params.copy()

    per_tensor: dict[str, float] = {}
    errors: list[CoordinateError] = []
    checked = 0

    for name in work.trainable():
        if name not in analytic:
            continue
        tensor = work[name]
        if num_samples is None or tensor.size <= num_samples:
            coords = np.arange(tensor.size)
        else:
            coords = np.sort(rng.choice(tensor.size, size=num_samples, replace=False))

        worst_here = 0.0
        for flat in coords:
            original = tensor.flat[flat]
            tensor.flat[flat] = original + step
            plus = _loss_value(loss_fn, work)
            tensor.flat[flat] = original - step
            minus = _loss_value(loss_fn, work)
            tensor.flat[flat] = original

            numeric = (plus - minus) / (2.0 * step)
            value = float(analytic[name].flat[flat])
            noise = ROUNDOFF_FACTOR * np.finfo(np.float64).eps * max(1.0, abs(plus), abs(minus)) / step
            err = 0.0 if abs(value - numeric) <= noise else relative_error(value, numeric)
            worst_here = max(worst_here, err)
            errors.append(CoordinateError(
                name=name,
                index=tuple(int(i) for i in np.unravel_index(flat, tensor.shape)),
                analytic=value,
                numeric=numeric,
                error=err,
            ))
            checked += 1
        per_tensor[name] = worst_here

    errors.sort(key=lambda e: e.error, reverse=True)
    return GradCheckReport(
        tolerance=tolerance,
        per_tensor=per_tensor,
        worst=errors[:worst_k],
        checked=checked,
    )
