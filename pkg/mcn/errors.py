"""
Исключения MCN.

Всё, что бросает пакет, наследуется от MCNError — CLI переводит классы в коды выхода.
"""


class MCNError(Exception):
    """Базовое исключение пакета."""


class DimensionError(MCNError, ValueError):
    """Несовпадение размерностей тензоров."""


class EmptyVideoError(MCNError, ValueError):
    """Видео без сегментов или без кадров."""


class InvalidSpanError(MCNError, ValueError):
    """Интервал вне границ видео или start > end."""


class DegenerateSpanError(MCNError, ValueError):
    """Интервалу не соответствует ни одного кадра."""


class ArityError(MCNError, ValueError):
    """Неверное число аннотаций (ожидается ровно 4)."""


class VocabularyError(MCNError, ValueError):
    """Индекс токена вне словаря или пустое предложение."""


class FormatError(MCNError, ValueError):
    """Файл не соответствует ожидаемому формату."""


class LengthError(FormatError):
    """Полезная нагрузка файла короче или длиннее заявленной в заголовке."""


class DataError(MCNError, ValueError):
    """Некорректные значения в данных (NaN, inf, пересечение сплитов)."""


class ConfigurationError(MCNError, ValueError):
    """Некорректная конфигурация запуска."""


class SpecError(ConfigurationError):
    """Невыполнимая спецификация синтетического корпуса."""


class MissingFeaturesError(MCNError, LookupError):
    """Для части видео нет файлов признаков."""

    def __init__(self, video_ids: list[str]):
        self.video_ids = sorted(video_ids)
        preview = ", ".join(self.video_ids[:10])
        more = f" и ещё {len(self.video_ids) - 10}" if len(self.video_ids) > 10 else ""
        super().__init__(f"Нет признаков для видео: {preview}{more}")


class TrainingDivergenceError(MCNError, RuntimeError):
    """Нечисловое значение лосса или градиента во время обучения."""
