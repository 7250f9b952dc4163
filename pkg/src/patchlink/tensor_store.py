"""Binary container for named dense tensors (`.t2d` files).

Layout: 8-byte magic ``T2DTNSR1``, u32 record count, then per record a
u32 name length, the UTF-8 name, a u8 dtype code, a u8 rank, one u64 per
dimension, and the raw little-endian payload. Integers are little-endian.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"T2DTNSR1"

# dtype name -> (code, numpy little-endian dtype)
DTYPES = {
    "f32": (0, np.dtype("<f4")),
    "f16": (1, np.dtype("<f2")),
    "u8": (2, np.dtype("|u1")),
    "i32": (3, np.dtype("<i4")),
}
_CODE_TO_NAME = {code: name for name, (code, _) in DTYPES.items()}


class ContainerError(ValueError):
    """Malformed container data or misuse of the writer."""


@dataclass(frozen=True)
class TensorRecord:
    name: str
    dtype: str  # one of DTYPES
    shape: tuple[int, ...]
    payload: bytes

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise ContainerError(f"unsupported dtype {self.dtype!r}")
        expected = int(np.prod(self.shape, dtype=np.int64)) * DTYPES[self.dtype][1].itemsize
        if len(self.payload) != expected:
            raise ContainerError(
                f"record {self.name!r}: payload is {len(self.payload)} bytes, "
                f"expected {expected} for shape {self.shape} dtype {self.dtype}"
            )

    @classmethod
    def from_array(cls, name: str, array: np.ndarray, dtype: str | None = None) -> "TensorRecord":
        if dtype is None:
            dtype = {"float32": "f32", "float16": "f16", "uint8": "u8", "int32": "i32"}.get(
                array.dtype.name, "f32"
            )
        np_dtype = DTYPES[dtype][1]
        data = np.ascontiguousarray(array).astype(np_dtype, copy=False)
        return cls(name=name, dtype=dtype, shape=tuple(array.shape), payload=data.tobytes())

    def to_array(self) -> np.ndarray:
        """Decode the payload. f16 is widened to f32; all math downstream is float."""
        arr = np.frombuffer(self.payload, dtype=DTYPES[self.dtype][1]).reshape(self.shape)
        if self.dtype == "f16":
            return arr.astype(np.float32)
        return arr.copy()

    def text(self) -> str:
        """Decode a u8 record holding UTF-8 text."""
        if self.dtype != "u8":
            raise ContainerError(f"record {self.name!r} is not a text record")
        return self.payload.decode("utf-8")


def text_record(name: str, value: str) -> TensorRecord:
    data = value.encode("utf-8")
    return TensorRecord(name=name, dtype="u8", shape=(len(data),), payload=data)


def write_container(path: str | os.PathLike, records: list[TensorRecord]) -> None:
    names = [r.name for r in records]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise ContainerError(f"duplicate record names: {sorted(dupes)}")

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", len(records))
    for rec in records:
        name = rec.name.encode("utf-8")
        blob += struct.pack("<I", len(name))
        blob += name
        blob += struct.pack("<BB", DTYPES[rec.dtype][0], len(rec.shape))
        for dim in rec.shape:
            blob += struct.pack("<Q", dim)
        blob += rec.payload

    # Atomic: readers never observe a partially written file.
    tmp = f"{os.fspath(path)}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read_container(path: str | os.PathLike) -> list[TensorRecord]:
    with open(path, "rb") as fh:
        blob = fh.read()

    if blob[:8] != MAGIC:
        raise ContainerError(f"unrecognized format: {os.fspath(path)}")
    view = memoryview(blob)
    pos = 8

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise ContainerError(f"corrupt container: {os.fspath(path)}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    records = []
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        code, rank = struct.unpack("<BB", take(2))
        if code not in _CODE_TO_NAME:
            raise ContainerError(f"unsupported dtype code {code} in record {name!r}")
        dtype = _CODE_TO_NAME[code]
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(rank))
        nbytes = int(np.prod(shape, dtype=np.int64)) * DTYPES[dtype][1].itemsize
        payload = bytes(take(nbytes))
        records.append(TensorRecord(name=name, dtype=dtype, shape=shape, payload=payload))
    if pos != len(view):
        raise ContainerError(f"corrupt container: {os.fspath(path)}")
    return records


def read_dict(path: str | os.PathLike) -> dict[str, TensorRecord]:
    records = read_container(path)
    out = {}
    for rec in records:
        if rec.name in out:
            raise ContainerError(f"duplicate record names: [{rec.name!r}]")
        out[rec.name] = rec
    return out


# ---------------------------------------------------------------------------
# Sample containers: one exported image with features, attention and captions.

FEATURES = "features"  # [h_p, w_p, D_v]
ATTN_LOGITS = "attn_logits"  # [N, h_p, w_p] pre-softmax CLS->patch scores
IMAGE_ID = "image_id"
IMAGE_SIZE = "image_size"  # i32 [2], original (H, W) pixels
RESIZED_SIZE = "resized_size"  # i32 [2], size the patch grid was computed at
PATCH_SIZE = "patch_size"  # i32 [1]
CLS_FEATURE = "cls_feature"  # optional [D_v]
MANIFEST = "manifest"  # optional u8 JSON blob from the exporter
_CAPTION_TEXT = "caption/{i}/text"
_CAPTION_EMB = "caption/{i}/embedding"


@dataclass
class SampleRecord:
    image_id: str
    features: np.ndarray  # [h_p, w_p, D_v] float
    attn_logits: np.ndarray  # [N, h_p, w_p] float
    captions: list[tuple[str, np.ndarray]]  # (text, [D_t])
    image_size: tuple[int, int]  # original (H, W) pixels
    resized_size: tuple[int, int]  # (H, W) the grid was extracted at
    patch_size: int
    cls_feature: np.ndarray | None = None
    manifest: dict = field(default_factory=dict)

    def validate(self) -> None:
        h_p, w_p, _ = self.features.shape
        n, ah, aw = self.attn_logits.shape
        if (ah, aw) != (h_p, w_p):
            raise ContainerError(
                f"{self.image_id}: attention grid {ah}x{aw} != feature grid {h_p}x{w_p}"
            )
        rh, rw = self.resized_size
        if h_p != rh // self.patch_size or w_p != rw // self.patch_size:
            raise ContainerError(
                f"{self.image_id}: grid {h_p}x{w_p} inconsistent with resized size "
                f"{rh}x{rw} at patch size {self.patch_size}"
            )
        dts = {emb.shape[0] for _, emb in self.captions}
        if len(dts) > 1:
            raise ContainerError(f"{self.image_id}: caption embeddings disagree on D_t: {dts}")


def write_sample(path: str | os.PathLike, sample: SampleRecord, features_dtype: str = "f32") -> None:
    sample.validate()
    records = [
        TensorRecord.from_array(FEATURES, sample.features.astype(np.float32), features_dtype),
        TensorRecord.from_array(ATTN_LOGITS, sample.attn_logits.astype(np.float32), "f32"),
        text_record(IMAGE_ID, sample.image_id),
        TensorRecord.from_array(IMAGE_SIZE, np.asarray(sample.image_size, dtype=np.int32), "i32"),
        TensorRecord.from_array(RESIZED_SIZE, np.asarray(sample.resized_size, dtype=np.int32), "i32"),
        TensorRecord.from_array(PATCH_SIZE, np.asarray([sample.patch_size], dtype=np.int32), "i32"),
    ]
    for i, (text, emb) in enumerate(sample.captions):
        records.append(text_record(_CAPTION_TEXT.format(i=i), text))
        records.append(TensorRecord.from_array(_CAPTION_EMB.format(i=i), emb.astype(np.float32), "f32"))
    if sample.cls_feature is not None:
        records.append(TensorRecord.from_array(CLS_FEATURE, sample.cls_feature.astype(np.float32), "f32"))
    if sample.manifest:
        records.append(text_record(MANIFEST, json.dumps(sample.manifest, sort_keys=True)))
    write_container(path, records)


def read_sample(path: str | os.PathLike) -> SampleRecord:
    recs = read_dict(path)
    for required in (FEATURES, ATTN_LOGITS, IMAGE_ID, IMAGE_SIZE, RESIZED_SIZE, PATCH_SIZE):
        if required not in recs:
            raise ContainerError(f"{os.fspath(path)}: missing record {required!r}")
    captions = []
    i = 0
    while _CAPTION_TEXT.format(i=i) in recs:
        captions.append(
            (
                recs[_CAPTION_TEXT.format(i=i)].text(),
                recs[_CAPTION_EMB.format(i=i)].to_array().astype(np.float64),
            )
        )
        i += 1
    sample = SampleRecord(
        image_id=recs[IMAGE_ID].text(),
        features=recs[FEATURES].to_array().astype(np.float64),
        attn_logits=recs[ATTN_LOGITS].to_array().astype(np.float64),
        captions=captions,
        image_size=tuple(int(v) for v in recs[IMAGE_SIZE].to_array()),
        resized_size=tuple(int(v) for v in recs[RESIZED_SIZE].to_array()),
        patch_size=int(recs[PATCH_SIZE].to_array()[0]),
        cls_feature=(
            recs[CLS_FEATURE].to_array().astype(np.float64) if CLS_FEATURE in recs else None
        ),
        manifest=json.loads(recs[MANIFEST].text()) if MANIFEST in recs else {},
    )
    sample.validate()
    return sample
