"""
Языковая ветка: токенизация, словарь с плотными эмбеддингами слов (GloVe),
LSTM-кодировщик и проекция последнего скрытого состояния в общее пространство (P^L).
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mcn.errors import FormatError, VocabularyError
from mcn.moments import Span
from mcn.numerics import (
    LSTMSequenceCache,
    ModelParams,
    linear_backward,
    linear_forward,
    lstm_backward,
    lstm_forward,
)

logger = logging.getLogger(__name__)

UNK_TOKEN = "<unk>"

# Имена параметров языковой ветки в ModelParams
EMBEDDINGS = "language.embeddings"
LSTM_W = "language.lstm.W"
LSTM_B = "language.lstm.b"
PROJ_W = "language.proj.W"
PROJ_B = "language.proj.b"
CONSTANT = "language.constant"  # вариант без текста

_NON_WORD = re.compile(r"[^\w']+")
_EDGE_APOSTROPHES = re.compile(r"^'+|'+$")


def tokenize(text: str) -> list[str]:
    """
    Lowercase, разбиение по пробелам, удаление пунктуации (кроме апострофов внутри слова).

    Пустой результат превращается в единственный UNK-токен.
    """
    tokens = []
    for raw in text.lower().split():
        token = _EDGE_APOSTROPHES.sub("", _NON_WORD.sub("", raw))
        if token:
            tokens.append(token)
    return tokens or [UNK_TOKEN]


@dataclass
class Vocabulary:
    """
    Словарь токен → индекс и таблица эмбеддингов (|V| × E).

    UNK всегда присутствует; если его нет в файле, это последняя строка (среднее всех строк).
    """
    tokens: list[str]
    table: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 2 or self.table.shape[0] != len(self.tokens):
            raise VocabularyError(
                f"Таблица эмбеддингов {self.table.shape} не совпадает со словарём из {len(self.tokens)} токенов"
            )
        if not np.all(np.isfinite(self.table)):
            raise VocabularyError("В таблице эмбеддингов есть нечисловые значения")
        self.index = {token: i for i, token in enumerate(self.tokens)}
        if UNK_TOKEN not in self.index:
            raise VocabularyError(f"В словаре нет токена {UNK_TOKEN}")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def unk_index(self) -> int:
        return self.index[UNK_TOKEN]

    def lookup(self, token: str) -> int:
        return self.index.get(token, self.unk_index)

    def encode(self, tokens: list[str], max_tokens: int | None = None) -> list[int]:
        """Токены → индексы (OOV → UNK) с обрезкой до max_tokens."""
        ids = [self.lookup(t) for t in tokens] or [self.unk_index]
        if max_tokens is not None and len(ids) > max_tokens:
            logger.warning(f"Предложение из {len(ids)} токенов обрезано до {max_tokens}")
            ids = ids[:max_tokens]
        return ids

    @classmethod
    def from_rows(cls, rows: dict[str, np.ndarray]) -> "Vocabulary":
        """Словарь из упорядоченных строк; UNK добавляется как среднее, если его нет."""
        tokens = list(rows)
        table = np.stack([rows[t] for t in tokens]) if tokens else np.zeros((0, 0))
        if UNK_TOKEN not in rows:
            tokens.append(UNK_TOKEN)
            table = np.vstack([table, table.mean(axis=0, keepdims=True)])
        return cls(tokens=tokens, table=table)


def load_embeddings(path: str | Path, restrict_to: set[str] | None = None) -> Vocabulary:
    """
    Загружает текстовый файл векторов слов (формат GloVe: «токен v1 ... vE» на строку).

    Размерность берётся из первой строки; заголовок word2vec «count dim» пропускается.
    При повторе токена побеждает первое вхождение.

    Args:
        path: Путь к файлу.
        restrict_to: Если задано — оставляем только эти токены (порядок файла сохраняется).
            UNK считается по всем строкам файла.

    Returns:
        Vocabulary с UNK.
    """
    rows: dict[str, np.ndarray] = {}
    seen: set[str] = set()
    total = None
    dim = None

    with open(path, encoding="utf-8") as f:
        for line_num, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if line_num == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue  # заголовок word2vec
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise FormatError(f"{path}:{line_num}: у токена '{token}' нет вектора")
                total = np.zeros(dim)
            if len(values) != dim:
                raise FormatError(
                    f"{path}:{line_num}: ожидалось {dim} чисел, получено {len(values)}"
                )
            try:
                vector = np.array([float(v) for v in values])
            except ValueError as e:
                raise FormatError(f"{path}:{line_num}: не число в векторе '{token}'") from e

            if token in seen:
                logger.warning(f"{path}:{line_num}: повтор токена '{token}', оставлено первое вхождение")
                continue
            seen.add(token)
            total += vector
            if restrict_to is None or token in restrict_to or token == UNK_TOKEN:
                rows[token] = vector

    if not seen:
        raise FormatError(f"{path}: файл векторов пуст")

    if UNK_TOKEN not in rows:
        rows[UNK_TOKEN] = total / len(seen)
    tokens = list(rows)
    return Vocabulary(tokens=tokens, table=np.stack([rows[t] for t in tokens]))


def write_embeddings(path: str | Path, tokens: list[str], table: np.ndarray) -> None:
    """Пишет векторы в текстовом формате GloVe."""
    with open(path, "w", encoding="utf-8") as f:
        for token, row in zip(tokens, table):
            f.write(token + " " + " ".join(f"{v:.6f}" for v in row) + "\n")


@dataclass
class Query:
    """Описание момента: исходный текст, индексы токенов, видео и аннотации."""
    raw_text: str
    tokens: list[int]
    video_id: str
    annotations: list[Span]
    annotation_id: str = ""

    @classmethod
    def from_text(
        cls,
        text: str,
        vocabulary: Vocabulary,
        video_id: str = "",
        annotations: list[Span] | None = None,
        annotation_id: str = "",
        max_tokens: int | None = None,
    ) -> "Query":
        return cls(
            raw_text=text,
            tokens=vocabulary.encode(tokenize(text), max_tokens),
            video_id=video_id,
            annotations=list(annotations or []),
            annotation_id=annotation_id,
        )


# ── Кодировщик предложений ──────────────────────────────────────────

@dataclass
class SentenceCache:
    token_ids: list[list[int]]
    lstm: LSTMSequenceCache | None
    hidden: np.ndarray | None


def encode_batch(params: ModelParams, token_ids: list[list[int]]) -> tuple[np.ndarray, SentenceCache]:
    """
    Кодирует батч предложений: эмбеддинги слов → LSTM с нулевого состояния →
    последнее скрытое состояние → полносвязный слой.

    Вариант без текста (в params есть language.constant) возвращает один обучаемый
    вектор для всех запросов.

    Returns:
        (матрица B × J, cache для encode_batch_backward).
    """
    if any(len(ids) == 0 for ids in token_ids):
        raise VocabularyError("Пустая последовательность токенов")

    if CONSTANT in params:
        out = np.tile(params[CONSTANT], (len(token_ids), 1))
        return out, SentenceCache(token_ids=token_ids, lstm=None, hidden=None)

    table = params[EMBEDDINGS]
    for ids in token_ids:
        bad = [i for i in ids if not 0 <= i < table.shape[0]]
        if bad:
            raise VocabularyError(f"Индекс токена {bad[0]} вне словаря размера {table.shape[0]}")

    steps = max(len(ids) for ids in token_ids)
    batch = len(token_ids)
    xs = np.zeros((steps, batch, table.shape[1]))
    mask = np.zeros((steps, batch))
    for b, ids in enumerate(token_ids):
        xs[:len(ids), b] = table[ids]
        mask[:len(ids), b] = 1.0

    hidden, lstm_cache = lstm_forward(params[LSTM_W], params[LSTM_B], xs, mask)
    out = linear_forward(params[PROJ_W], params[PROJ_B], hidden)
    return out, SentenceCache(token_ids=token_ids, lstm=lstm_cache, hidden=hidden)


def encode_batch_backward(
    params: ModelParams,
    cache: SentenceCache,
    grad_out: np.ndarray,
) -> dict[str, np.ndarray]:
    """Градиенты языковых параметров по градиенту выхода (B × J)."""
    if cache.lstm is None:
        return {CONSTANT: grad_out.sum(axis=0)}

    proj = linear_backward(params[PROJ_W], params[PROJ_B], cache.hidden, grad_out)
    lstm = lstm_backward(params[LSTM_W], params[LSTM_B], cache.lstm, proj.input)
    grads = {
        PROJ_W: proj.params["W"],
        PROJ_B: proj.params["b"],
        LSTM_W: lstm.params["W"],
        LSTM_B: lstm.params["b"],
    }
    if EMBEDDINGS not in params.frozen:
        grad_table = np.zeros_like(params[EMBEDDINGS])
        for b, ids in enumerate(cache.token_ids):
            np.add.at(grad_table, ids, lstm.input[:len(ids), b])
        grads[EMBEDDINGS] = grad_table
    return grads


def encode_sentence(params: ModelParams, tokens: list[int]) -> np.ndarray:
    """Эмбеддинг одного предложения в общем пространстве."""
    out, _ = encode_batch(params, [list(tokens)])
    return out[0]


def init_language_params(
    rng: np.random.Generator,
    vocabulary: Vocabulary,
    lstm_hidden: int,
    joint_dim: int,
    init_scale: float,
    forget_bias: float,
    language_free: bool = False,
) -> dict[str, np.ndarray]:
    """Начальные веса языковой ветки: uniform для матриц, нулевые смещения, +forget_bias."""
    if language_free:
        return {CONSTANT: rng.uniform(-init_scale, init_scale, size=joint_dim)}

    emb = vocabulary.dim
    lstm_b = np.zeros(4 * lstm_hidden)
    lstm_b[lstm_hidden:2 * lstm_hidden] = forget_bias
    return {
        EMBEDDINGS: vocabulary.table.copy(),
        LSTM_W: rng.uniform(-init_scale, init_scale, size=(4 * lstm_hidden, emb + lstm_hidden)),
        LSTM_B: lstm_b,
        PROJ_W: rng.uniform(-init_scale, init_scale, size=(joint_dim, lstm_hidden)),
        PROJ_B: np.zeros(joint_dim),
    }


class SentenceEncoder:
    """
    Обёртка над языковой веткой модели.

    Использование:
        encoder = SentenceEncoder(vocabulary, params)
        vector = encoder.embed("a cat walks")            # один вектор
        vectors = encoder.embed_batch(["t1", "t2"])      # батч
    """

    def __init__(self, vocabulary: Vocabulary, params: ModelParams, max_tokens: int | None = None):
        self.vocabulary = vocabulary
        self.params = params
        self.max_tokens = max_tokens

    def token_ids(self, text: str) -> list[int]:
        return self.vocabulary.encode(tokenize(text), self.max_tokens)

    def embed(self, text: str) -> np.ndarray:
        return encode_sentence(self.params, self.token_ids(text))

    def embed_batch(self, texts: list[str]) -> np.ndarray:
        out, _ = encode_batch(self.params, [self.token_ids(t) for t in texts])
        return out
