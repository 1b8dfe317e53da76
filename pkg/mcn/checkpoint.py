"""
Чекпоинт модели в бинарном формате MCNP (little-endian):

    "MCNP" | u32 version | u32 len | JSON (конфигурация, размерности, словарь, формы)
    | u32 число тензоров
    | для каждого: u32 len | имя UTF-8 | u32 rows | u32 cols | rows·cols float64

Одномерные тензоры пишутся как 1 × n; исходная форма восстанавливается из JSON.
"""

import json
import logging
import struct
from pathlib import Path

import numpy as np

from mcn.config import RunConfig
from mcn.errors import ConfigurationError, FormatError, LengthError
from mcn.language import EMBEDDINGS, Vocabulary
from mcn.model import MomentContextNetwork
from mcn.numerics import ModelParams

logger = logging.getLogger(__name__)

MCNP_MAGIC = b"MCNP"
MCNP_VERSION = 1
_U32 = struct.Struct("<I")


def save_checkpoint(path: str | Path, model: MomentContextNetwork) -> None:
    """Сохраняет параметры и всё, что нужно для восстановления модели."""
    header = {
        "config": model.config.model_echo(),
        "rgb_dim": model.rgb_dim,
        "flow_dim": model.flow_dim,
        "vocabulary": model.vocabulary.tokens,
        "frozen": sorted(model.params.frozen),
        "shapes": {name: list(t.shape) for name, t in model.params.items()},
    }
    echo = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")

    chunks = [MCNP_MAGIC, _U32.pack(MCNP_VERSION), _U32.pack(len(echo)), echo, _U32.pack(len(model.params))]
    for name, tensor in model.params.items():
        matrix = tensor.reshape(1, -1) if tensor.ndim == 1 else tensor
        encoded = name.encode("utf-8")
        chunks += [
            _U32.pack(len(encoded)), encoded,
            _U32.pack(matrix.shape[0]), _U32.pack(matrix.shape[1]),
            np.ascontiguousarray(matrix, dtype="<f8").tobytes(),
        ]

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    logger.info(f"Чекпоинт сохранён: {path} ({len(model.params)} тензоров)")


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.blob):
            raise LengthError(f"{self.path}: файл обрывается на поле '{what}' (смещение {self.offset})")
        chunk = self.blob[self.offset:end]
        self.offset = end
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def load_checkpoint(path: str | Path) -> MomentContextNetwork:
    """Восстанавливает модель из MCNP-файла."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Чекпоинт не найден: {path}")
    reader = _Reader(path.read_bytes(), path)

    magic = reader.take(4, "magic")
    if magic != MCNP_MAGIC:
        raise FormatError(f"{path}: неверная сигнатура {magic!r}, ожидалась {MCNP_MAGIC!r}")
    version = reader.u32("version")
    if version != MCNP_VERSION:
        raise FormatError(f"{path}: версия чекпоинта {version} не поддерживается")

    try:
        header = json.loads(reader.take(reader.u32("config length"), "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: повреждено описание конфигурации") from e

    tensors = {}
    for _ in range(reader.u32("tensor count")):
        name = reader.take(reader.u32("name length"), "name").decode("utf-8")
        rows, cols = reader.u32(f"{name}.rows"), reader.u32(f"{name}.cols")
        data = np.frombuffer(reader.take(rows * cols * 8, name), dtype="<f8").astype(np.float64)
        shape = header["shapes"].get(name, [rows, cols])
        tensors[name] = data.reshape(shape)
    if reader.offset != len(reader.blob):
        raise LengthError(f"{path}: {len(reader.blob) - reader.offset} лишних байт в конце файла")

    config = RunConfig.model_validate(header["config"])
    tokens = header["vocabulary"]
    table = tensors[EMBEDDINGS] if EMBEDDINGS in tensors else np.zeros((len(tokens), 1))
    vocabulary = Vocabulary(tokens=tokens, table=table)
    params = ModelParams(tensors, frozen=set(header["frozen"]))
    return MomentContextNetwork(config, vocabulary, params, header["rgb_dim"], header["flow_dim"])
