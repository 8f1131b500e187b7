"""PTNS 张量文件：小端头部 + 行优先数据

头部: magic "PTNS" | u16 版本 | u16 类型码 (1=f32, 2=i32) | u32 维数 | u32 各维长度
"""
import struct

import numpy as np

MAGIC = b"PTNS"
VERSION = 1
DTYPE_CODES = {1: np.dtype('<f4'), 2: np.dtype('<i4')}
DTYPE_NAMES = {"f32": 1, "i32": 2}

_header = struct.Struct('<4sHHI')


class TensorFormatError(ValueError):
    """张量文件头或数据长度不合法"""


def write_tensor(array, dtype=None):
    array = np.asarray(array)
    if dtype is None:
        dtype = "i32" if np.issubdtype(array.dtype, np.integer) or array.dtype == np.bool_ else "f32"
    if dtype not in DTYPE_NAMES:
        raise TensorFormatError(f"不支持的张量类型: {dtype}")
    code = DTYPE_NAMES[dtype]
    payload = np.ascontiguousarray(array, dtype=DTYPE_CODES[code])
    header = _header.pack(MAGIC, VERSION, code, payload.ndim)
    dims = struct.pack(f'<{payload.ndim}I', *payload.shape)
    return header + dims + payload.tobytes()


def read_tensor(data):
    if len(data) < _header.size:
        raise TensorFormatError(f"数据长度 {len(data)} 不足以容纳文件头")
    magic, version, code, rank = _header.unpack_from(data, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"文件标识错误: {magic!r}")
    if version != VERSION:
        raise TensorFormatError(f"不支持的版本: {version}")
    if code not in DTYPE_CODES:
        raise TensorFormatError(f"未知的类型码: {code}")
    offset = _header.size + 4 * rank
    if len(data) < offset:
        raise TensorFormatError("维度信息被截断")
    shape = struct.unpack_from(f'<{rank}I', data, _header.size)
    dtype = DTYPE_CODES[code]
    count = int(np.prod(shape, dtype=np.int64))
    if len(data) - offset != count * dtype.itemsize:
        raise TensorFormatError(f"数据长度 {len(data) - offset} 与形状 {shape} 不符")
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape).astype(dtype.newbyteorder('='))


def save_tensor(path, array, dtype=None):
    with open(path, 'wb') as f:
        f.write(write_tensor(array, dtype))


def load_tensor(path):
    with open(path, 'rb') as f:
        return read_tensor(f.read())
