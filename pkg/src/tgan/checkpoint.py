"""Binary checkpoints for fitted :class:`~tgan.estimator.TGAN` models.

Layout (all integers little-endian)::

    b"TGAN"  u32 version  u32 record_count
    record_count x ( u32 name_len | name utf-8 | u64 n | n x float64 )

Two ``meta.*`` records describe the architecture; every other record is a
learnable tensor, flattened row-major.
"""

import struct

import numpy as np

from .estimator import TGAN
from .exceptions import FormatError
from .latent import LATENT_KINDS

MAGIC = b"TGAN"
VERSION = 1

_ARCH_FIELDS = (
    "data_dim", "hidden", "num_classes", "n_components", "latent_dim",
    "attention_hidden", "nu", "latent_kind", "dropout", "alpha", "random_state",
)


def encode_records(records):
    """Serialize ``[(name, float64 array), ...]``."""
    out = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, values in records:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(values, dtype="<f8").ravel()
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<Q", arr.size))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_records(blob):
    if blob[:4] != MAGIC:
        raise FormatError(f"not a checkpoint: magic {blob[:4]!r}")
    if len(blob) < 12:
        raise FormatError("checkpoint header truncated")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise FormatError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    pos = 12
    records = []
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (n,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            if pos + 8 * n > len(blob):
                raise FormatError(f"record {name!r} truncated")
            records.append((name, np.frombuffer(blob, dtype="<f8", count=n, offset=pos).astype(np.float64)))
            pos += 8 * n
    except struct.error as exc:
        raise FormatError(f"checkpoint truncated: {exc}") from None
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after the last record")
    return records


def dumps(estimator):
    model = estimator.model_
    cfg = model.latent.config
    arch = [
        model.data_dim, model.hidden, cfg.num_classes, cfg.n_components, cfg.dim,
        cfg.attention_hidden, cfg.nu, LATENT_KINDS.index(cfg.kind), model.discriminator.dropout,
        estimator.alpha, estimator.random_state,
    ]
    records = [("meta.arch", np.array(arch, dtype=np.float64)), ("meta.classes", estimator.classes_.astype(np.float64))]
    records += [(name, p.data) for name, p in model.named_parameters()]
    return encode_records(records)


def loads(blob):
    records = decode_records(blob)
    if len(records) < 2 or records[0][0] != "meta.arch" or records[1][0] != "meta.classes":
        raise FormatError("checkpoint lacks meta.arch / meta.classes records")
    values = records[0][1]
    if values.size != len(_ARCH_FIELDS):
        raise FormatError(f"meta.arch has {values.size} fields, expected {len(_ARCH_FIELDS)}")
    arch = dict(zip(_ARCH_FIELDS, values.tolist()))
    classes = records[1][1]
    if np.all(classes == np.round(classes)):
        classes = classes.astype(np.int64)

    est = TGAN(
        latent_kind=LATENT_KINDS[int(arch["latent_kind"])],
        n_components=int(arch["n_components"]),
        latent_dim=int(arch["latent_dim"]),
        nu=arch["nu"],
        attention_hidden=int(arch["attention_hidden"]),
        hidden=int(arch["hidden"]),
        alpha=arch["alpha"],
        dropout=arch["dropout"],
        random_state=int(arch["random_state"]),
    )
    est._init_model(int(arch["data_dim"]), classes)
    params = dict(est.model_.named_parameters())
    stored = dict(records[2:])
    if set(stored) != set(params):
        missing = sorted(set(params) - set(stored))
        extra = sorted(set(stored) - set(params))
        raise FormatError(f"checkpoint tensors do not match the architecture (missing {missing}, unexpected {extra})")
    for name, p in params.items():
        if stored[name].size != p.data.size:
            raise FormatError(f"tensor {name!r} has {stored[name].size} elements, expected {p.data.size}")
        p.data[...] = stored[name].reshape(p.data.shape)
    return est


def save(estimator, path):
    with open(path, "wb") as fh:
        fh.write(dumps(estimator))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
