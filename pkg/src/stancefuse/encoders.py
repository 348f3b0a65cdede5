"""Toy-width text and vision transformer encoders plus image file IO.

Both encoders are randomly initialised stand-ins with BERT/ViT shape:
learned token/patch embeddings, learned positions, and the post-norm
transformer block from :mod:`stancefuse.jtmo`.

Image formats: binary PPM (``P6``, maxval 255) and ``.rawimg``, which is
three little-endian u32 dims (channels, height, width) followed by float32
pixels in [0, 1].
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import EncoderConfig
from .errors import ContractError, DataError
from .jtmo import init_transformer_layer, transformer_stack
from .params import ParamStore
from .tensor import Tensor
from .text import TokenSeq

# --------------------------------------------------------------------------- images


@dataclass(frozen=True)
class ImageTensor:
    pixels: np.ndarray  # channels x height x width, float64 in [0, 1]
    source_id: str
    digest: str  # sha256 of the file bytes

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape


def _parse_ppm(blob: bytes, name: str) -> np.ndarray:
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{name}: truncated PPM header")
        fields.append(blob[start:pos])
    pos += 1  # single whitespace byte before the raster
    if fields[0] != b"P6":
        raise DataError(f"{name}: unsupported image format (expected binary PPM P6)")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise DataError(f"{name}: malformed PPM header") from None
    if maxval != 255:
        raise DataError(f"{name}: only 8-bit PPM (maxval 255) is supported, got maxval {maxval}")
    raster = blob[pos:]
    if len(raster) != width * height * 3:
        raise DataError(f"{name}: PPM raster has {len(raster)} bytes, expected {width * height * 3}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def _parse_rawimg(blob: bytes, name: str) -> np.ndarray:
    if len(blob) < 12:
        raise DataError(f"{name}: truncated .rawimg header")
    c, h, w = struct.unpack_from("<3I", blob, 0)
    body = blob[12:]
    if len(body) != 4 * c * h * w:
        raise DataError(f"{name}: .rawimg body has {len(body)} bytes, expected {4 * c * h * w}")
    arr = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(c, h, w)
    if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError(f"{name}: .rawimg pixels must be finite and within [0, 1]")
    return arr


def decode_image(blob: bytes, name: str) -> np.ndarray:
    """Decode PPM or .rawimg bytes into a C x H x W float array (no size checks)."""
    if name.lower().endswith(".rawimg"):
        return _parse_rawimg(blob, name)
    if blob[:2] == b"P6":
        return _parse_ppm(blob, name)
    raise DataError(f"{name}: unsupported image format (binary PPM or .rawimg only)")


def read_image_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def load_image(path, cfg: EncoderConfig) -> ImageTensor:
    """Read an image, check patch divisibility and resize (nearest) to ``cfg.image_size``."""
    path = Path(path)
    blob = read_image_bytes(path)
    pixels = decode_image(blob, str(path))
    c, h, w = pixels.shape
    if c != 3:
        raise DataError(f"{path}: expected 3 channels, got {c}")
    if h % cfg.patch_size or w % cfg.patch_size:
        raise DataError(f"{path}: {h}x{w} image is not divisible by patch size {cfg.patch_size}")
    size = cfg.image_size
    if (h, w) != (size, size):
        rows = (np.arange(size) * h) // size
        cols = (np.arange(size) * w) // size
        pixels = pixels[:, rows][:, :, cols]
    return ImageTensor(np.ascontiguousarray(pixels), path.stem, hashlib.sha256(blob).hexdigest())


def image_from_array(pixels, source_id: str = "array") -> ImageTensor:
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DataError(f"image array must be 3 x H x W, got {arr.shape}")
    return ImageTensor(arr, source_id, hashlib.sha256(encode_rawimg(arr)).hexdigest())


def encode_ppm(pixels: np.ndarray) -> bytes:
    arr = np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    c, h, w = arr.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + arr.transpose(1, 2, 0).tobytes()


def encode_rawimg(pixels: np.ndarray) -> bytes:
    arr = np.asarray(pixels, dtype="<f4")
    return struct.pack("<3I", *arr.shape) + arr.tobytes()


# --------------------------------------------------------------------------- encodings


@dataclass(frozen=True)
class TextEncoding:
    H_t: Tensor
    mask: tuple[int, ...]


@dataclass(frozen=True)
class VisionEncoding:
    H_v: Tensor


def init_text_encoder(store: ParamStore, cfg: EncoderConfig, vocab_size: int) -> None:
    store.normal("text.tok_emb", (vocab_size, cfg.text_width))
    store.normal("text.pos_emb", (cfg.max_len, cfg.text_width))
    for j in range(cfg.layers):
        init_transformer_layer(store, f"text.layer{j}", cfg.text_width, cfg.heads, cfg.ffn_multiplier)


def init_vision_encoder(store: ParamStore, cfg: EncoderConfig) -> None:
    store.normal("vision.patch.w", (cfg.patch_dim, cfg.vision_width))
    store.zeros("vision.patch.b", (cfg.vision_width,))
    store.normal("vision.pos_emb", (cfg.num_patches, cfg.vision_width))
    for j in range(cfg.layers):
        init_transformer_layer(store, f"vision.layer{j}", cfg.vision_width, cfg.heads, cfg.ffn_multiplier)


def encode_text(
    seq: TokenSeq,
    store: ParamStore,
    cfg: EncoderConfig,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> TextEncoding:
    n = len(seq)
    if n == 0 or not any(seq.attention_mask):
        raise ContractError("encode_text needs at least one real token")
    pos_table = store["text.pos_emb"]
    if n > pos_table.shape[0]:
        raise ContractError(f"sequence of length {n} exceeds position table of {pos_table.shape[0]}")
    H = T.add(T.take_rows(store["text.tok_emb"], seq.ids), T.take_rows(pos_table, range(n)))
    H = T.dropout(H, cfg.dropout_p, train, rng)
    H = transformer_stack(
        H, store, "text", cfg.layers, cfg.heads, seq.attention_mask,
        activation=cfg.activation, dropout_p=cfg.dropout_p, train=train, rng=rng,
    )
    return TextEncoding(H, tuple(seq.attention_mask))


def patchify(pixels: np.ndarray, patch_size: int) -> np.ndarray:
    """Non-overlapping patches, row-major over the grid, each flattened as C x p x p."""
    c, h, w = pixels.shape
    if h % patch_size or w % patch_size:
        raise ContractError(f"{h}x{w} image is not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    grid = pixels.reshape(c, gh, patch_size, gw, patch_size)
    return grid.transpose(1, 3, 0, 2, 4).reshape(gh * gw, c * patch_size * patch_size)


def patch_embed(img: ImageTensor, store: ParamStore, cfg: EncoderConfig) -> Tensor:
    """Linear patch embedding before positions are added (N x D_v)."""
    patches = patchify(img.pixels, cfg.patch_size)
    w = store["vision.patch.w"]
    if patches.shape[1] != w.shape[0]:
        raise ContractError(f"patch dim {patches.shape[1]} does not match projection {w.shape}")
    return T.add(T.matmul(T.constant(patches), w), store["vision.patch.b"])


def encode_image(
    img: ImageTensor,
    store: ParamStore,
    cfg: EncoderConfig,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> VisionEncoding:
    if img.pixels.ndim != 3 or img.pixels.shape[0] != 3:
        raise ContractError(f"expected a 3 x H x W image, got {img.pixels.shape}")
    E = patch_embed(img, store, cfg)
    pos = store["vision.pos_emb"]
    if E.shape[0] != pos.shape[0]:
        raise ContractError(f"image yields {E.shape[0]} patches but the position table has {pos.shape[0]}")
    H = T.dropout(T.add(E, pos), cfg.dropout_p, train, rng)
    H = transformer_stack(
        H, store, "vision", cfg.layers, cfg.heads, None,
        activation=cfg.activation, dropout_p=cfg.dropout_p, train=train, rng=rng,
    )
    return VisionEncoding(H)
