"""
Конфигурация MCN.
Все настройки в одном месте — гиперпараметры модели, обучения, оценки и пути к данным.

Значения по умолчанию — рабочие для DiDeMo (батч 120, margin 0.1, эмбеддинг 100,
LSTM 1000, η = 2.33); выбор остальных описан в DESIGN.md.
"""

import os
from pathlib import Path
from typing import Any, Literal

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from mcn.errors import ConfigurationError

load_dotenv(Path(__file__).resolve().parent.parent / ".env")

# ── Пути ─────────────────────────────────────────────────────────────
PROJECT_ROOT = Path(__file__).resolve().parent.parent
DATA_DIR = Path(os.getenv("MCN_DATA_DIR", str(PROJECT_ROOT / "data")))
LOG_LEVEL = os.getenv("MCN_LOG_LEVEL", "INFO")

# Раскладка каталога корпуса (так его пишет `mcn synth`)
CORPUS_ANNOTATIONS = "annotations.json"
CORPUS_INDEX = "index.tsv"
CORPUS_SPLITS = "splits.tsv"
CORPUS_EMBEDDINGS = "embeddings.txt"
CORPUS_FEATURES_DIR = "features"

# ── Модель ───────────────────────────────────────────────────────────
JOINT_DIM = 100  # размер общего пространства видео–язык
LSTM_HIDDEN = 1000
VISUAL_HIDDEN = 500
EMBEDDING_DIM = 300  # размерность GloVe по умолчанию, принимается любая
ETA = 2.33  # вес flow-ветки в расстоянии (late fusion)
MARGIN = 0.1
LAMBDA = 0.5  # доля intra-лосса

# ── Обучение ─────────────────────────────────────────────────────────
BATCH_SIZE = 120
LEARNING_RATE = 0.05
EPOCHS = 20
PATIENCE = 5  # эпох без роста val R@1 до остановки
INIT_SCALE = 0.08  # uniform(-0.08, 0.08) для всех матриц
FORGET_BIAS = 1.0
INTER_NEGATIVES = 1  # inter-негативов на пример
MAX_RESAMPLE = 10
MAX_TOKENS = 50

# ── Оценка ───────────────────────────────────────────────────────────
CHANCE_TRIALS = 10_000
SEGMENT_SECONDS = 5
MAX_SEGMENTS = 6
NUM_ANNOTATORS = 4
GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_STEP = 1e-5


class RunConfig(BaseModel):
    """
    Полная конфигурация запуска: пути, гиперпараметры и флаги признаков.

    Собирается из значений по умолчанию, файла `key = value` и флагов командной строки
    (см. load_run_config). Диапазоны проверяет pydantic.
    """

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    # Пути
    annotations: Path | None = None
    splits: Path | None = None
    feature_index: Path | None = None
    embeddings: Path | None = None
    checkpoint: Path | None = None
    train_annotations: Path | None = None
    val_annotations: Path | None = None
    test_annotations: Path | None = None

    # Гиперпараметры
    eta: float = Field(default=ETA, ge=0)
    lambda_: float = Field(default=LAMBDA, ge=0, le=1, alias="lambda")
    margin: float = Field(default=MARGIN, gt=0)
    lr: float = Field(default=LEARNING_RATE, ge=0)
    batch_size: int = Field(default=BATCH_SIZE, ge=1)
    joint_dim: int = Field(default=JOINT_DIM, ge=1)
    visual_hidden: int = Field(default=VISUAL_HIDDEN, ge=1)
    lstm_hidden: int = Field(default=LSTM_HIDDEN, ge=1)
    embedding_dim: int = Field(default=EMBEDDING_DIM, ge=1)
    epochs: int = Field(default=EPOCHS, ge=0)
    patience: int = Field(default=PATIENCE, ge=1)
    seed: int = Field(default=0, ge=0)
    inter_negatives: int = Field(default=INTER_NEGATIVES, ge=0)
    max_resample: int = Field(default=MAX_RESAMPLE, ge=1)
    max_tokens: int = Field(default=MAX_TOKENS, ge=1)
    init_scale: float = Field(default=INIT_SCALE, gt=0)
    forget_bias: float = FORGET_BIAS
    finetune_embeddings: bool = False

    # Признаки и варианты модели
    use_global: bool = True
    use_tef: bool = True
    modalities: Literal["fusion", "rgb", "flow"] = "fusion"
    language_free: bool = False
    feature_layout: Literal["zero_fill", "compact"] = "zero_fill"

    # Оценка
    jobs: int = Field(default=1, ge=1)
    chance_trials: int = Field(default=CHANCE_TRIALS, ge=1)

    def updated(self, **changes: Any) -> "RunConfig":
        """Копия с изменёнными полями (с повторной валидацией)."""
        data = self.model_dump()
        data.update(changes)
        return _validate(data)

    def model_echo(self) -> dict:
        """Всё, кроме путей — то, что сохраняется в чекпоинт."""
        data = self.model_dump(mode="json", by_alias=True)
        for name in _PATH_FIELDS:
            data.pop(name, None)
        return data

    def require_paths(self, *names: str) -> None:
        """Проверяет, что перечисленные пути заданы и существуют."""
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigurationError(f"Не задан путь '{name}'")
            if not Path(value).exists():
                raise ConfigurationError(f"Файл '{name}' не найден: {value}")


_PATH_FIELDS = [
    name for name, info in RunConfig.model_fields.items()
    if "Path" in str(info.annotation)
]

# Допустимые ключи конфиг-файла: имена полей и их алиасы
KNOWN_KEYS = set(RunConfig.model_fields) | {
    info.alias for info in RunConfig.model_fields.values() if info.alias
}


def _validate(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigurationError(f"Некорректная конфигурация: {problems}") from e


def _normalize_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def read_config_file(path: str | Path) -> dict[str, str]:
    """
    Читает конфиг в формате `key = value` (комментарии через #).

    Формат совпадает с .env, поэтому разбор делает python-dotenv.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Конфиг не найден: {path}")

    values = {}
    for key, value in dotenv_values(path, encoding="utf-8").items():
        name = _normalize_key(key)
        if name not in KNOWN_KEYS:
            raise ConfigurationError(f"Неизвестный ключ конфигурации '{key}' в {path}")
        if value is None or value == "":
            continue
        values[name] = value
    return values


def load_run_config(
    path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    """
    Собирает RunConfig: значения по умолчанию < файл конфигурации < флаги.

    Args:
        path: Путь к файлу `key = value` (опционально).
        overrides: Значения из командной строки; None означает «флаг не задан».

    Returns:
        Провалидированный RunConfig.
    """
    data: dict[str, Any] = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        name = _normalize_key(key)
        if name not in KNOWN_KEYS:
            raise ConfigurationError(f"Неизвестный параметр '{key}'")
        # Флаг и файл могут назвать λ по-разному — флаг побеждает
        if name in ("lambda", "lambda_"):
            data.pop("lambda", None)
            data.pop("lambda_", None)
        data[name] = value
    return _validate(data)
