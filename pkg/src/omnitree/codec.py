"""Bit-exact blobs for trees and leaf data.

Layouts (integers little-endian, payload bits packed MSB-first, zero padded):

``OMNI``  magic, u8 version=1, u16 d, u64 node_count, then d bits per node
          in preorder (b_0 first).
``OMNO``  same header, then 1 bit per node (1 = split in all dimensions).
``OMNG``  magic, u8 version=1, u64 leaf_count, u8 bits_per_leaf, then the
          leaf payloads in Z order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Omnitree, TreeStructureError

VERSION = 1
TREE_MAGIC = b"OMNI"
OCTREE_MAGIC = b"OMNO"
FIELD_MAGIC = b"OMNG"
_TREE_HEADER = struct.Struct("<4sBHQ")
_FIELD_HEADER = struct.Struct("<4sBQB")


class CodecError(ValueError):
    pass


class NotAnOctree(CodecError):
    pass


def _pack(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8), bitorder="big").tobytes()


def _unpack(payload: bytes, nbits: int) -> np.ndarray:
    nbytes = -(-nbits // 8)
    if len(payload) < nbytes:
        raise CodecError(f"premature end of stream: need {nbytes} payload bytes, got {len(payload)}")
    if len(payload) > nbytes:
        raise CodecError(f"{len(payload) - nbytes} trailing bytes after payload")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="big")
    if bits[nbits:].any():
        raise CodecError("nonzero padding bits")
    return bits[:nbits]


def _header(blob: bytes, magic: bytes) -> tuple[int, int]:
    if len(blob) < _TREE_HEADER.size:
        raise CodecError("blob shorter than header")
    got, version, d, count = _TREE_HEADER.unpack_from(blob)
    if got != magic:
        raise CodecError(f"bad magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise CodecError(f"unsupported version {version}")
    if d < 1:
        raise CodecError("dimension must be >= 1")
    return d, count


def _build(d: int, labels: Sequence[int], count: int) -> Omnitree:
    try:
        tree = Omnitree(d, tuple(labels))
    except TreeStructureError as exc:
        raise CodecError(f"invalid tree descriptor: {exc}") from exc
    if tree.node_count != count:
        raise CodecError("node count mismatch")
    return tree


def encode(tree: Omnitree) -> bytes:
    labels = np.asarray(tree.labels, dtype=np.int64)
    bits = (labels[:, None] >> np.arange(tree.d)) & 1
    return _TREE_HEADER.pack(TREE_MAGIC, VERSION, tree.d, tree.node_count) + _pack(bits.ravel())


def decode(blob: bytes) -> Omnitree:
    d, count = _header(blob, TREE_MAGIC)
    bits = _unpack(blob[_TREE_HEADER.size:], d * count).reshape(count, d).astype(np.int64)
    labels = (bits << np.arange(d)).sum(axis=1)
    return _build(d, labels.tolist(), count)


def is_octree(tree: Omnitree) -> bool:
    full = (1 << tree.d) - 1
    return all(b in (0, full) for b in tree.labels)


def encode_octree(tree: Omnitree) -> bytes:
    if not is_octree(tree):
        raise NotAnOctree("tree has labels that split only some dimensions")
    bits = np.asarray(tree.labels, dtype=np.int64) != 0
    return _TREE_HEADER.pack(OCTREE_MAGIC, VERSION, tree.d, tree.node_count) + _pack(bits)


def decode_octree(blob: bytes) -> Omnitree:
    d, count = _header(blob, OCTREE_MAGIC)
    bits = _unpack(blob[_TREE_HEADER.size:], count)
    full = (1 << d) - 1
    return _build(d, (bits.astype(np.int64) * full).tolist(), count)


def payload_bits(blob: bytes) -> int:
    """Number of meaningful payload bits (before padding) of a tree blob."""
    magic = blob[:4]
    d, count = _header(blob, magic)
    return count if magic == OCTREE_MAGIC else d * count


def decode_any(blob: bytes) -> tuple[Omnitree, str]:
    """Decode either tree format; returns the tree and ``"omnitree"``/``"octree"``."""
    magic = bytes(blob[:4])
    if magic == TREE_MAGIC:
        return decode(blob), "omnitree"
    if magic == OCTREE_MAGIC:
        return decode_octree(blob), "octree"
    raise CodecError(f"unknown tree blob magic {magic!r}")


def encode_field(bits) -> bytes:
    bits = np.asarray(bits)
    if bits.ndim != 1:
        raise ValueError("field must be one-dimensional")
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise ValueError("field entries must be 0 or 1")
    return _FIELD_HEADER.pack(FIELD_MAGIC, VERSION, bits.size, 1) + _pack(bits)


def decode_field(blob: bytes) -> np.ndarray:
    if len(blob) < _FIELD_HEADER.size:
        raise CodecError("blob shorter than header")
    magic, version, count, width = _FIELD_HEADER.unpack_from(blob)
    if magic != FIELD_MAGIC:
        raise CodecError(f"bad magic {magic!r}, expected {FIELD_MAGIC!r}")
    if version != VERSION:
        raise CodecError(f"unsupported version {version}")
    if width != 1:
        raise CodecError(f"unsupported payload width {width} (only 1 bit per leaf)")
    return _unpack(blob[_FIELD_HEADER.size:], count).astype(np.uint8)


@dataclass(frozen=True)
class StorageReport:
    tree_bits_omnitree: int
    tree_bits_octree: int | None
    data_bits: int

    @property
    def total(self) -> int:
        """Omnitree tree coding plus data bits."""
        return self.tree_bits_omnitree + self.data_bits


def storage_report(tree: Omnitree, payload_bits_per_leaf: int = 1) -> StorageReport:
    return StorageReport(
        tree_bits_omnitree=tree.d * tree.node_count,
        tree_bits_octree=tree.node_count if is_octree(tree) else None,
        data_bits=tree.leaf_count * payload_bits_per_leaf,
    )
