"""Reading PNG/PGM into :class:`GrayImage` and writing 8-bit PNG."""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from scalematch.errors import DecodeError, UnsupportedFormatError
from scalematch.imagecore import GrayImage

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
LUMA = (0.299, 0.587, 0.114)

# colour type -> accepted bit depths
_PNG_DEPTHS = {0: (8, 16), 2: (8,), 3: (1, 2, 4, 8), 4: (8, 16), 6: (8,)}


def _check_png_structure(data: bytes) -> None:
    """Walk the chunk list so truncation and bad headers are reported with their offset."""
    if len(data) < 8 or data[:8] != PNG_SIGNATURE:
        raise DecodeError("missing PNG signature", 0)
    pos = 8
    first = True
    seen_end = False
    while pos < len(data):
        if pos + 8 > len(data):
            raise DecodeError("truncated chunk header", pos)
        length, ctype = struct.unpack(">I4s", data[pos : pos + 8])
        if first:
            if ctype != b"IHDR" or length != 13:
                raise DecodeError("first chunk is not a 13-byte IHDR", pos)
            if pos + 8 + 13 > len(data):
                raise DecodeError("truncated IHDR", pos)
            width, height, depth, colour = struct.unpack(">IIBB", data[pos + 8 : pos + 18])
            if width == 0 or height == 0:
                raise DecodeError("zero image dimension in IHDR", pos + 8)
            if colour not in _PNG_DEPTHS:
                raise DecodeError(f"invalid PNG colour type {colour}", pos + 17)
            if depth not in _PNG_DEPTHS[colour]:
                raise UnsupportedFormatError(
                    f"unsupported PNG bit depth {depth} for colour type {colour}", pos + 16
                )
            first = False
        end = pos + 12 + length
        if end > len(data):
            raise DecodeError(f"chunk {ctype.decode('latin-1')!r} runs past end of data", pos)
        pos = end
        if ctype == b"IEND":
            seen_end = True
            break
    if first:
        raise DecodeError("no IHDR chunk", 8)
    if not seen_end:
        raise DecodeError("missing IEND chunk", pos)


def _decode_png(data: bytes) -> GrayImage:
    _check_png_structure(data)
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            mode = im.mode
            if mode in ("P", "PA"):
                im = im.convert("RGBA" if "transparency" in im.info or mode == "PA" else "RGB")
                mode = im.mode
            arr = np.array(im)
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"corrupt PNG stream: {exc}") from exc

    if mode == "L":
        return GrayImage(arr / 255.0)
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        return GrayImage(arr.astype(np.float64) / 65535.0)
    if mode == "LA":
        return GrayImage(arr[..., 0] / 255.0)
    if mode in ("RGB", "RGBA"):
        rgb = arr[..., :3].astype(np.float64) / 255.0
        return GrayImage(rgb @ np.array(LUMA))
    raise UnsupportedFormatError(f"unsupported PNG pixel mode {mode}")


def _pgm_tokens(data: bytes, count: int, pos: int) -> tuple[list[tuple[int, int]], int]:
    """Read ``count`` whitespace separated integers, skipping ``#`` comments."""
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and (data[pos : pos + 1].isspace() or data[pos : pos + 1] == b"#"):
            if data[pos : pos + 1] == b"#":
                while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        if pos >= n:
            raise DecodeError("unexpected end of PGM header", pos)
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tok = data[start:pos]
        if not tok.isdigit():
            raise DecodeError(f"expected an integer in PGM header, found {tok[:16]!r}", start)
        out.append((int(tok), start))
    return out, pos


def _decode_pgm(data: bytes) -> GrayImage:
    if len(data) < 2 or data[:1] != b"P" or data[1:2] not in (b"2", b"5"):
        raise DecodeError("missing P2/P5 magic number", 0)
    binary = data[1:2] == b"5"
    header, pos = _pgm_tokens(data, 3, 2)
    (w, wo), (h, ho), (maxval, mo) = header
    if w < 1:
        raise DecodeError("PGM width must be positive", wo)
    if h < 1:
        raise DecodeError("PGM height must be positive", ho)
    if not 1 <= maxval <= 65535:
        raise UnsupportedFormatError(f"unsupported PGM maxval {maxval}", mo)
    n = w * h
    if binary:
        if pos >= len(data) or not data[pos : pos + 1].isspace():
            raise DecodeError("expected whitespace after PGM header", pos)
        pos += 1
        bpp = 1 if maxval < 256 else 2
        need = pos + n * bpp
        if len(data) < need:
            raise DecodeError(f"pixel data truncated: need {n * bpp} bytes", len(data))
        dtype = np.uint8 if bpp == 1 else np.dtype(">u2")
        arr = np.frombuffer(data, dtype=dtype, count=n, offset=pos).astype(np.float64)
    else:
        vals, _ = _pgm_tokens(data, n, pos)
        arr = np.array([v for v, _ in vals], dtype=np.float64)
        over = np.nonzero(arr > maxval)[0]
        if len(over):
            raise DecodeError(f"sample {int(arr[over[0]])} exceeds maxval {maxval}", vals[over[0]][1])
    if arr.max(initial=0) > maxval:
        raise DecodeError(f"sample exceeds maxval {maxval}", pos)
    return GrayImage(arr.reshape(h, w) / maxval)


def decode_image(data: bytes, fmt: str | None = None) -> GrayImage:
    """Decode PNG (8/16-bit grey, 8-bit RGB) or PGM (P2/P5) bytes into [0, 1] intensities."""
    if fmt is None:
        fmt = "png" if data[:8] == PNG_SIGNATURE else "pgm"
    fmt = fmt.lower()
    if fmt == "png":
        return _decode_png(data)
    if fmt == "pgm":
        return _decode_pgm(data)
    raise UnsupportedFormatError(f"unknown image format {fmt!r}")


def read_image(path) -> GrayImage:
    path = Path(path)
    data = path.read_bytes()
    suffix = path.suffix.lower()
    fmt = "pgm" if suffix in (".pgm", ".pnm") else ("png" if suffix == ".png" else None)
    try:
        return decode_image(data, fmt)
    except DecodeError as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_png(img) -> bytes:
    """8-bit PNG from a GrayImage / 2-D array in [0, 1], or an RGB uint8 array."""
    arr = img.data if isinstance(img, GrayImage) else np.asarray(img)
    if arr.ndim == 2:
        pil = Image.fromarray(to_uint8(arr))
    elif arr.ndim == 3 and arr.shape[2] == 3:
        rgb = arr if arr.dtype == np.uint8 else to_uint8(arr)
        pil = Image.fromarray(np.ascontiguousarray(rgb))
    else:
        raise ValueError(f"cannot encode array of shape {arr.shape}")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, img) -> None:
    Path(path).write_bytes(encode_png(img))
