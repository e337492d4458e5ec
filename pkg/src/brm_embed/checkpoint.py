"""Little-endian binary checkpoints (magic ``BRME``).

Layout, version 1::

    b"BRME"
    u32  version
    u32  L, then L x u32 layer sizes
    u32  activation (0 = relu, 1 = tanh)
    u32  head classes (0 = no classification head)
    f64  parameters: W0, b0, W1, b1, ..., [head W (D x C), head b (C)]
    u64  Adam step
    f64  base lr, beta1, beta2, eps, gamma
    u32  decay interval (epochs)
    f64  first moments, then second moments (same order as parameters)
    u32  epochs completed
    f64  best validation metric (NaN if none yet)

Matrices are stored row-major.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from .encoder import ACTIVATIONS, AdamState, EncoderParams
from .errors import BadMagic, TruncatedFile

MAGIC = b"BRME"
VERSION = 1


@dataclass
class Checkpoint:
    params: EncoderParams
    adam: AdamState
    epoch: int = 0
    head: tuple | None = None      # (W, b) of the optional softmax head
    best_metric: float = math.nan

    def arrays(self) -> list:
        out = self.params.arrays()
        if self.head is not None:
            out += list(self.head)
        return out


def _shapes(sizes, head_classes):
    shapes = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        shapes += [(a, b), (b,)]
    if head_classes:
        shapes += [(sizes[-1], head_classes), (head_classes,)]
    return shapes


def dumps(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    sizes = ckpt.params.sizes
    head_classes = 0 if ckpt.head is None else ckpt.head[1].shape[0]
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(sizes)))
    buf.write(struct.pack(f"<{len(sizes)}I", *sizes))
    buf.write(struct.pack("<II", ACTIVATIONS.index(ckpt.params.activation), head_classes))
    for arr in ckpt.arrays():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    a = ckpt.adam
    buf.write(struct.pack("<Q5dI", a.step, a.lr, a.beta1, a.beta2, a.eps, a.gamma, a.decay_every))
    for arr in list(a.m) + list(a.v):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    buf.write(struct.pack("<Id", ckpt.epoch, ckpt.best_metric))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"checkpoint ends at byte {len(self.data)}, needed {self.pos + n}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape):
        count = int(np.prod(shape))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def loads(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagic("not a BRME checkpoint")
    version, n_sizes = r.unpack("<II")
    if version != VERSION:
        raise BadMagic(f"unsupported checkpoint version {version}")
    sizes = r.unpack(f"<{n_sizes}I")
    act, head_classes = r.unpack("<II")
    if act >= len(ACTIVATIONS):
        raise BadMagic(f"unknown activation code {act}")
    shapes = _shapes(sizes, head_classes)
    arrays = [r.array(s) for s in shapes]
    step, lr, b1, b2, eps, gamma, every = r.unpack("<Q5dI")
    m = [r.array(s) for s in shapes]
    v = [r.array(s) for s in shapes]
    epoch, best = r.unpack("<Id")
    if r.pos != len(data):
        raise TruncatedFile("trailing bytes after checkpoint")
    n_enc = 2 * (len(sizes) - 1)
    params = EncoderParams(sizes, arrays[0:n_enc:2], arrays[1:n_enc:2], ACTIVATIONS[act])
    head = tuple(arrays[n_enc:]) if head_classes else None
    adam = AdamState(m, v, step, lr, b1, b2, eps, gamma, every)
    return Checkpoint(params, adam, epoch, head, best)


def save(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads(fh.read())
