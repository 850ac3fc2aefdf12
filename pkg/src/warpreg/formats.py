"""Binary file formats: PGM/PPM images, raw float images, displacement
fields, and model checkpoints.

All multi-byte integers and floats are little-endian.  Layouts:

* ``IMGF`` raw image: magic ``IMGF`` | u32 width | u32 height | u32
  channels (16-byte header), then float32 samples, channel-major,
  row-major within each channel.
* ``DVF2`` displacement field: magic ``DVF2`` | u32 width | u32 height,
  then row-major float32 pairs (dy, dx) per pixel.
* ``C2WP`` checkpoint: magic | u32 version (1) | the model config block |
  u32 record count | named float32 array records (weights and batchnorm
  running statistics).

Writers are deterministic: identical inputs produce identical bytes (no
timestamps, no comments).  Readers validate magics and sizes and raise
:class:`FormatError` on anything malformed.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .model import Checkpoint, ModelConfig, ModelParams
from .sampling import KernelKind
from .tensor import ShapeError

IMGF_MAGIC = b"IMGF"
DVF2_MAGIC = b"DVF2"
CKPT_MAGIC = b"C2WP"
CKPT_VERSION = 1

_KIND_CODES = {
    KernelKind.NEAREST: 0,
    KernelKind.BILINEAR: 1,
    KernelKind.CATMULL_ROM: 2,
    KernelKind.BSPLINE3: 3,
}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


class FormatError(ValueError):
    """Malformed or mismatched file content."""


def _as_chw(values, channels: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"expected (C, H, W) array, got shape {arr.shape}")
    if channels is not None and arr.shape[0] != channels:
        raise ShapeError(f"expected {channels} channels, got {arr.shape[0]}")
    return arr


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: expected {n} bytes of {what}, got {len(data)}")
    return data


# -- PGM / PPM ---------------------------------------------------------------


def write_pgm(path, values) -> None:
    """8-bit binary PGM (P5); values are clipped to [0, 1] and quantized."""
    arr = _as_chw(values, channels=1)[0]
    q = np.clip(np.rint(np.clip(arr, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        fh.write(q.tobytes())


def _read_pnm_header(fh, magic: bytes):
    got = _read_exact(fh, 2, "magic")
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")

    def token() -> bytes:
        # skip whitespace and '#' comment lines, then read one token
        tok = b""
        while True:
            ch = fh.read(1)
            if ch == b"":
                raise FormatError("truncated header")
            if ch == b"#":
                while ch not in (b"\n", b""):
                    ch = fh.read(1)
                continue
            if ch.isspace():
                if tok:
                    return tok
                continue
            tok += ch

    w, h, maxval = (int(token()) for _ in range(3))
    if w <= 0 or h <= 0:
        raise FormatError(f"bad dimensions {w}x{h}")
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    return w, h


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into a (1, H, W) float64 array scaled to [0, 1]."""
    with open(path, "rb") as fh:
        w, h = _read_pnm_header(fh, b"P5")
        data = _read_exact(fh, w * h, "pixel data")
    return (np.frombuffer(data, dtype=np.uint8).astype(np.float64) / 255.0).reshape(1, h, w)


def write_ppm(path, rgb) -> None:
    """8-bit binary PPM (P6) from a (3, H, W) float array in [0, 1]."""
    arr = _as_chw(rgb, channels=3)
    q = np.clip(np.rint(np.clip(arr, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (arr.shape[2], arr.shape[1]))
        fh.write(q.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        w, h = _read_pnm_header(fh, b"P6")
        data = _read_exact(fh, 3 * w * h, "pixel data")
    arr = np.frombuffer(data, dtype=np.uint8).astype(np.float64) / 255.0
    return arr.reshape(h, w, 3).transpose(2, 0, 1)


# -- IMGF ----------------------------------------------------------------------


def write_imgf(path, values) -> None:
    arr = _as_chw(values)
    c, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(IMGF_MAGIC)
        fh.write(struct.pack("<III", w, h, c))
        fh.write(arr.astype("<f4").tobytes())


def read_imgf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != IMGF_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {IMGF_MAGIC!r}")
        w, h, c = struct.unpack("<III", _read_exact(fh, 12, "header"))
        if w == 0 or h == 0 or c == 0:
            raise FormatError(f"bad dimensions {c}x{h}x{w}")
        data = _read_exact(fh, 4 * c * h * w, "samples")
        if fh.read(1) != b"":
            raise FormatError("trailing bytes after image payload")
    return np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(c, h, w)


# -- DVF2 ----------------------------------------------------------------------


def write_dvf2(path, u) -> None:
    arr = _as_chw(u, channels=2)
    _, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(DVF2_MAGIC)
        fh.write(struct.pack("<II", w, h))
        # interleave per pixel: (dy, dx), row-major
        fh.write(arr.transpose(1, 2, 0).astype("<f4").tobytes())


def read_dvf2(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != DVF2_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {DVF2_MAGIC!r}")
        w, h = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if w == 0 or h == 0:
            raise FormatError(f"bad dimensions {h}x{w}")
        data = _read_exact(fh, 8 * h * w, "samples")
        if fh.read(1) != b"":
            raise FormatError("trailing bytes after field payload")
    arr = np.frombuffer(data, dtype="<f4").astype(np.float64)
    return arr.reshape(h, w, 2).transpose(2, 0, 1)


# -- checkpoint ------------------------------------------------------------------


def _write_record(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_record(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "record name length"))
    name = _read_exact(fh, name_len, "record name").decode("utf-8")
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "record rank"))
    if ndim > 8:
        raise FormatError(f"implausible record rank {ndim}")
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "record shape"))
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    data = _read_exact(fh, 4 * count, f"record {name!r} payload")
    return name, np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(shape)


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    cfg = checkpoint.config
    records = [(n, p.value) for n, p in checkpoint.params.named_params()]
    records += checkpoint.params.named_buffers()
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", CKPT_VERSION))
    buf.write(struct.pack("<II", cfg.levels, cfg.n_layers))
    for c_in, c_out in cfg.channels:
        buf.write(struct.pack("<II", c_in, c_out))
    buf.write(struct.pack("<I", cfg.kernel))
    buf.write(struct.pack("<I", len(cfg.deform_layers)))
    buf.write(struct.pack(f"<{len(cfg.deform_layers)}I", *cfg.deform_layers))
    buf.write(struct.pack("<II", _KIND_CODES[cfg.image_warp_kernel], _KIND_CODES[cfg.dvf_kernel]))
    buf.write(struct.pack("<dd", cfg.bn_eps, cfg.bn_momentum))
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        _write_record(buf, name, arr)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CKPT_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CKPT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        levels, n_layers = struct.unpack("<II", _read_exact(fh, 8, "config"))
        if not 1 <= n_layers <= 64:
            raise FormatError(f"implausible layer count {n_layers}")
        channels = tuple(
            struct.unpack("<II", _read_exact(fh, 8, "channel pair")) for _ in range(n_layers)
        )
        (kernel,) = struct.unpack("<I", _read_exact(fh, 4, "kernel"))
        (n_deform,) = struct.unpack("<I", _read_exact(fh, 4, "deform count"))
        if n_deform > n_layers:
            raise FormatError(f"implausible deformable layer count {n_deform}")
        deform = struct.unpack(f"<{n_deform}I", _read_exact(fh, 4 * n_deform, "deform layers"))
        warp_code, dvf_code = struct.unpack("<II", _read_exact(fh, 8, "kernel flags"))
        if warp_code not in _CODE_KINDS or dvf_code not in _CODE_KINDS:
            raise FormatError(f"unknown kernel codes ({warp_code}, {dvf_code})")
        bn_eps, bn_momentum = struct.unpack("<dd", _read_exact(fh, 16, "batchnorm constants"))
        try:
            config = ModelConfig(
                levels=levels,
                channels=channels,
                kernel=kernel,
                deform_layers=deform,
                image_warp_kernel=_CODE_KINDS[warp_code],
                dvf_kernel=_CODE_KINDS[dvf_code],
                bn_eps=bn_eps,
                bn_momentum=bn_momentum,
            )
        except ShapeError as exc:
            raise FormatError(f"invalid checkpoint config: {exc}") from exc
        (n_records,) = struct.unpack("<I", _read_exact(fh, 4, "record count"))
        loaded: dict[str, np.ndarray] = {}
        for _ in range(n_records):
            name, arr = _read_record(fh)
            if name in loaded:
                raise FormatError(f"duplicate record {name!r}")
            loaded[name] = arr
        if fh.read(1) != b"":
            raise FormatError("trailing bytes after last record")

    params = ModelParams.init(config, rng=0)
    expected = {n: p.value for n, p in params.named_params()}
    expected.update(dict(params.named_buffers()))
    missing = sorted(set(expected) - set(loaded))
    extra = sorted(set(loaded) - set(expected))
    if missing or extra:
        raise FormatError(f"record names do not match model: missing {missing}, extra {extra}")
    for name, arr in loaded.items():
        if expected[name].shape != arr.shape:
            raise FormatError(
                f"record {name!r} has shape {arr.shape}, expected {expected[name].shape}"
            )
        expected[name][...] = arr
    return Checkpoint(config=config, params=params)
