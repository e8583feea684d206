"""Binary checkpoint format for EMT

    magic "EMTC" | u32 version | u32 tensor count
    tensor: u16 name length | UTF-8 name | u8 dtype | u8 rank | rank x u32 extents | payload
    u64 CRC-64/XZ of every preceding byte

모든 정수와 payload는 little-endian. dtype 코드 0=f32, 1=f64, 2=u8.
설정과 반복 횟수는 key = value 텍스트를 담은 u8 텐서 "meta.config"에 들어간다.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Optional

import numpy as np

from ..core.config import ModelConfig, TrainConfig
from ..core.config_file import MODEL_KEYS, TRAINING_KEYS, build_model_config, build_train_config
from ..core.errors import CheckpointError, ConfigError, ShapeError
from ..core.model import EmtModel, EmtParameters, parameter_shapes
from .optimizer import OptimizerState

logger = logging.getLogger(__name__)

MAGIC = b"EMTC"
VERSION = 1
META_NAME = "meta.config"
PARAM_PREFIX = "param."
ADAM_M_PREFIX = "adam.m."
ADAM_V_PREFIX = "adam.v."

DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_CODE_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}

# CRC-64/XZ: 반사 다항식, init/xorout 모두 1
_CRC64_POLY = 0xC96C5795D7870F42
_CRC64_MASK = 0xFFFFFFFFFFFFFFFF
# 이 크기 단위로 나눠 numpy로 한꺼번에 계산
_CRC64_CHUNK = 4096


def _crc64_table() -> np.ndarray:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ _CRC64_POLY if crc & 1 else crc >> 1
        table.append(crc)
    return np.array(table, dtype=np.uint64)


_CRC64_TABLE = _crc64_table()
_CRC64_TABLE_LIST: list[int] = _CRC64_TABLE.tolist()


def _crc64_rows(rows: np.ndarray, reg: np.ndarray) -> np.ndarray:
    """(N, L) 바이트 각 행을 레지스터 reg[i]에서 시작해 처리"""
    table, low, eight = _CRC64_TABLE, np.uint64(0xFF), np.uint64(8)
    for column in rows.T:
        reg = table[(reg ^ column) & low] ^ (reg >> eight)
    return reg


@lru_cache(maxsize=4)
def _zero_shift(length: int) -> np.ndarray:
    """0 바이트 length개 처리의 선형 사상, 입력 비트 k의 결과가 k번째 값"""
    basis = np.uint64(1) << np.arange(64, dtype=np.uint64)
    return _crc64_rows(np.zeros((64, length), dtype=np.uint8), basis)


def _apply_shift(shift: np.ndarray, reg: int) -> int:
    bits = np.unpackbits(np.array([reg], dtype="<u8").view(np.uint8), bitorder="little")
    return int(np.bitwise_xor.reduce(shift[bits.astype(bool)]))


def crc64(data: bytes, crc: int = 0) -> int:
    """CRC-64/XZ ("123456789" -> 0x995DC9BBDF1939FA)

    레지스터 갱신이 선형이므로 청크별 CRC를 0에서 따로 구한 뒤
    앞 레지스터를 청크 길이만큼 밀어 XOR로 잇는다.
    """
    buf = np.frombuffer(data, dtype=np.uint8)
    reg = crc ^ _CRC64_MASK
    whole = len(buf) // _CRC64_CHUNK * _CRC64_CHUNK
    if whole:
        rows = buf[:whole].reshape(-1, _CRC64_CHUNK)
        partial = _crc64_rows(rows, np.zeros(len(rows), dtype=np.uint64))
        shift = _zero_shift(_CRC64_CHUNK)
        for value in partial.tolist():
            reg = _apply_shift(shift, reg) ^ value
    table = _CRC64_TABLE_LIST
    for byte in buf[whole:].tolist():
        reg = table[(reg ^ byte) & 0xFF] ^ (reg >> 8)
    return reg ^ _CRC64_MASK


@dataclass
class Checkpoint:
    """체크포인트 한 개의 내용"""
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    params: dict[str, np.ndarray]
    optimizer: Optional[OptimizerState] = None
    iteration: int = 0

    def build_model(self) -> EmtModel:
        return EmtModel(self.model_cfg, EmtParameters.from_arrays(self.params))


def _config_text(model_cfg: ModelConfig, train_cfg: TrainConfig, iteration: int, step: int) -> str:
    lines = ["[model]"]
    lines += [f"{k} = {v}" for k, v in model_cfg.to_dict().items()]
    lines.append("[training]")
    lines += [f"{k} = {v}" for k, v in train_cfg.to_dict().items()]
    lines.append("[checkpoint]")
    lines.append(f"iteration = {iteration}")
    lines.append(f"adam_step = {step}")
    return "\n".join(lines) + "\n"


def _parse_config_text(text: str) -> tuple[ModelConfig, TrainConfig, int, int]:
    parsers: dict[str, dict[str, Any]] = {
        "model": MODEL_KEYS,
        "training": TRAINING_KEYS,
        "checkpoint": {"iteration": int, "adam_step": int},
    }
    values: dict[str, dict[str, Any]] = {name: {} for name in parsers}
    section = None
    try:
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1]
                if section not in parsers:
                    raise CheckpointError(f"embedded config has unknown section [{section}]")
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if section is None or key not in parsers[section]:
                raise CheckpointError(f"embedded config has unexpected key {key!r}")
            values[section][key] = parsers[section][key](value)
        model_cfg = build_model_config(values["model"])
        train_cfg = build_train_config(values["training"])
        meta = values["checkpoint"]
        return model_cfg, train_cfg, meta.get("iteration", 0), meta.get("adam_step", 0)
    except (ValueError, ConfigError) as e:
        raise CheckpointError(f"embedded config is invalid: {e}") from None


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    code = _CODE_OF.get(arr.dtype)
    if code is None:
        raise CheckpointError(f"tensor {name}: unsupported dtype {arr.dtype}")
    if not 1 <= arr.ndim <= 255:
        raise CheckpointError(f"tensor {name}: unsupported rank {arr.ndim}")
    encoded = name.encode("utf-8")
    head = struct.pack("<H", len(encoded)) + encoded + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes()


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = []
    step = ckpt.optimizer.t if ckpt.optimizer is not None else 0
    text = _config_text(ckpt.model_cfg, ckpt.train_cfg, ckpt.iteration, step)
    tensors.append((META_NAME, np.frombuffer(text.encode("utf-8"), dtype=np.uint8)))
    for name, arr in ckpt.params.items():
        tensors.append((PARAM_PREFIX + name, arr))
    if ckpt.optimizer is not None:
        for name in ckpt.params:
            tensors.append((ADAM_M_PREFIX + name, ckpt.optimizer.m[name]))
            tensors.append((ADAM_V_PREFIX + name, ckpt.optimizer.v[name]))

    body = bytearray(MAGIC + struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors:
        body += _pack_tensor(name, arr)
    return bytes(body) + struct.pack("<Q", crc64(bytes(body)))


class _Reader:
    """경계 검사를 하는 바이트 커서"""

    def __init__(self, data: bytes, end: int):
        self.data = data
        self.pos = 0
        self.end = end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes, expected: Optional[ModelConfig] = None) -> Checkpoint:
    if len(data) < len(MAGIC) + 8 + 8:
        raise CheckpointError("checkpoint is truncated")
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r} (expected {MAGIC!r})")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (stored_crc,) = struct.unpack_from("<Q", data, len(data) - 8)
    if crc64(data[:-8]) != stored_crc:
        raise CheckpointError("checksum mismatch (file is corrupted or truncated)")

    reader = _Reader(data, len(data) - 8)
    reader.pos = 8
    (count,) = reader.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("tensor name is not valid UTF-8") from None
        code, rank = reader.unpack("<BB")
        if code not in DTYPE_CODES:
            raise CheckpointError(f"tensor {name}: unknown dtype code {code}")
        shape = reader.unpack(f"<{rank}I")
        dtype = DTYPE_CODES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(reader.take(nbytes), dtype=dtype).reshape(shape)
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name}")
        tensors[name] = arr.astype(dtype.newbyteorder("="), copy=True)
    if reader.pos != reader.end:
        raise CheckpointError(f"{reader.end - reader.pos} unexpected bytes after the last tensor")

    if META_NAME not in tensors:
        raise CheckpointError(f"missing {META_NAME} tensor")
    try:
        text = tensors.pop(META_NAME).tobytes().decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointError("embedded config is not valid UTF-8") from None
    model_cfg, train_cfg, iteration, step = _parse_config_text(text)

    def with_prefix(prefix: str) -> dict[str, np.ndarray]:
        return {k[len(prefix):]: arr for k, arr in tensors.items() if k.startswith(prefix)}

    params = with_prefix(PARAM_PREFIX)
    moments_m, moments_v = with_prefix(ADAM_M_PREFIX), with_prefix(ADAM_V_PREFIX)
    optimizer = OptimizerState(m=moments_m, v=moments_v, t=step) if moments_m or moments_v else None

    stored = EmtParameters.from_arrays(params)
    try:
        stored.check_against(model_cfg)
        if optimizer is not None:
            optimizer.check_against(stored)
    except ShapeError as e:
        raise CheckpointError(f"inconsistent with its embedded config: {e}") from None
    # 호출자가 기대하는 설정과 다르면 텐서 이름을 담은 ShapeError
    if expected is not None:
        stored.check_against(expected)

    # 저장 순서를 설정이 정한 순서로 맞춘다
    ordered = {name: params[name] for name in parameter_shapes(model_cfg)}
    return Checkpoint(model_cfg, train_cfg, ordered, optimizer, iteration)


def save_checkpoint(
    path: Path,
    params: EmtParameters,
    optimizer: Optional[OptimizerState],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    iteration: int,
) -> Path:
    """임시 파일에 쓴 뒤 이름을 바꿔 원자적으로 저장"""
    path = Path(path)
    ckpt = Checkpoint(model_cfg, train_cfg, params.arrays(), optimizer, iteration)
    data = encode_checkpoint(ckpt)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"cannot write {path}: {e.strerror}") from None
    logger.info("saved checkpoint %s (iteration %d, %d bytes)", path, iteration, len(data))
    return path


def load_checkpoint(path: Path, expected: Optional[ModelConfig] = None) -> Checkpoint:
    """expected가 주어지면 파라미터 형상을 그 설정과도 대조한다 (불일치 시 ShapeError)"""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e.strerror}") from None
    try:
        return decode_checkpoint(data, expected)
    except CheckpointError as e:
        raise CheckpointError(f"{path}: {e}") from None
