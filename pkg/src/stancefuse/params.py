"""Named parameter collections and their on-disk checkpoint format.

Checkpoint layout (all integers little-endian)::

    b"SFCK" | u32 format_version | u64 rng_seed | u32 n_params
    repeat n_params (sorted by name):
        u32 name_len | name (utf-8) | u32 ndim | ndim * u32 dims | prod(dims) * f64

The writer is canonical, so equal stores give byte-identical files.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from . import rng
from .errors import ContractError, DataError
from .tensor import Tensor

MAGIC = b"SFCK"
FORMAT_VERSION = 1
INIT_STD = 0.02


class ParamStore:
    """A sorted, uniquely named map of trainable tensors plus the seed they came from."""

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self._params: dict[str, Tensor] = {}

    # construction -------------------------------------------------------

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def normal(self, name: str, shape: tuple[int, ...], std: float = INIT_STD) -> Tensor:
        # Keyed by name: a parameter's init does not depend on which others exist.
        gen = rng.stream(self.rng_seed, "init", name)
        return self.add(name, gen.normal(0.0, std, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.ones(shape))

    # access ---------------------------------------------------------------

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise ContractError(f"no parameter named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in sorted(self._params) if n.startswith(prefix)]

    def items(self) -> list[tuple[str, Tensor]]:
        return [(n, self._params[n]) for n in sorted(self._params)]

    def num_parameters(self) -> int:
        return int(np.sum([t.size for t in self._params.values()]))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {n: t.shape for n, t in self.items()}

    def copy(self) -> ParamStore:
        out = ParamStore(self.rng_seed)
        for name, t in self.items():
            out.add(name, t.data.copy())
        return out

    def equal(self, other: ParamStore) -> bool:
        """Bitwise equality of names, shapes and values."""
        if self.rng_seed != other.rng_seed or list(self) != list(other):
            return False
        return all(
            a.shape == b.shape and a.data.tobytes() == b.data.tobytes()
            for (_, a), (_, b) in zip(self.items(), other.items())
        )

    # serialization ----------------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<IQI", FORMAT_VERSION, self.rng_seed, len(self._params)))
        for name, t in self.items():
            raw = name.encode("utf-8")
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<I", t.data.ndim))
            buf.write(struct.pack(f"<{t.data.ndim}I", *t.shape))
            buf.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes, source: str = "<bytes>") -> ParamStore:
        view = memoryview(blob)
        if bytes(view[:4]) != MAGIC:
            raise DataError(f"{source}: not a stancefuse checkpoint")
        pos = 4

        def take(fmt: str):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(view):
                raise DataError(f"{source}: truncated checkpoint")
            vals = struct.unpack_from(fmt, view, pos)
            pos += size
            return vals

        version, seed, count = take("<IQI")
        if version != FORMAT_VERSION:
            raise DataError(f"{source}: unsupported checkpoint version {version}")
        store = cls(seed)
        for _ in range(count):
            (n,) = take("<I")
            name = bytes(view[pos : pos + n]).decode("utf-8")
            pos += n
            (ndim,) = take("<I")
            dims = take(f"<{ndim}I")
            nbytes = 8 * int(np.prod(dims, dtype=np.int64))
            if pos + nbytes > len(view):
                raise DataError(f"{source}: truncated data for {name!r}")
            arr = np.frombuffer(view[pos : pos + nbytes], dtype="<f8").astype(np.float64).reshape(dims)
            pos += nbytes
            store.add(name, arr)
        if pos != len(view):
            raise DataError(f"{source}: trailing bytes after last parameter")
        return store

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> ParamStore:
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_bytes(blob, source=str(path))

    def check_compatible(self, reference: ParamStore) -> None:
        """Raise ContractError unless names and shapes match ``reference``."""
        mine, theirs = self.shapes(), reference.shapes()
        if mine == theirs:
            return
        missing = sorted(set(theirs) - set(mine))
        extra = sorted(set(mine) - set(theirs))
        wrong = sorted(n for n in set(mine) & set(theirs) if mine[n] != theirs[n])
        parts = []
        if missing:
            parts.append(f"missing {missing[:4]}")
        if extra:
            parts.append(f"unexpected {extra[:4]}")
        if wrong:
            parts.append(", ".join(f"{n}: {mine[n]} vs {theirs[n]}" for n in wrong[:4]))
        raise ContractError("checkpoint does not match config: " + "; ".join(parts))
