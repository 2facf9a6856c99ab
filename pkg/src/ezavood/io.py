"""On-disk formats: AVF1 feature files, CSV import/export and model checkpoints.

All binary formats are little-endian.  Readers report the byte offset of
the first problem they hit.

AVF1 layout::

    b"AVF1"
    u32 M, u32 D, u32 C, u32 D_t
    u8[C]      seen flag per class
    u8[M]      split flag per sample (0 = train, 1 = test)
    u32[M]     label per sample
    f64[M*D]   features, row-major
    f64[C*D_t] class embeddings, row-major
    C x (u32 byte length, UTF-8 class name)

Checkpoints (AVMLP1, AVALN1, AVOOD1) follow the same conventions: magic,
u32 header fields, f64 payload, then a length-prefixed UTF-8 JSON
provenance record.
"""

import csv
import hashlib
import json
import struct
import warnings
from pathlib import Path

import numpy as np

from .data import TEST, TRAIN, ClassEmbeddingTable, Dataset, check_pair
from .errors import FormatError, EzAvoodError
from .ood import Detector, DetectorConfig, SubspaceModel
from .seen import MlpParams
from .unseen import LAYERS, AlignerParams

AVF_MAGIC = b"AVF1"
MLP_MAGIC = b"AVMLP1"
ALN_MAGIC = b"AVALN1"
OOD_MAGIC = b"AVOOD1"


class _Writer:
    def __init__(self):
        self.parts = []

    def raw(self, b):
        self.parts.append(bytes(b))

    def u8(self, values):
        self.parts.append(np.asarray(values, dtype="<u1").tobytes())

    def u32(self, *values):
        self.parts.append(struct.pack(f"<{len(values)}I", *[int(v) for v in values]))

    def u32_array(self, values):
        self.parts.append(np.asarray(values, dtype="<u4").tobytes())

    def u64(self, value):
        self.parts.append(struct.pack("<Q", int(value) & 0xFFFFFFFFFFFFFFFF))

    def f64(self, *values):
        self.parts.append(struct.pack(f"<{len(values)}d", *[float(v) for v in values]))

    def f64_array(self, a):
        self.parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())

    def text(self, s):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.parts.append(b)

    def getvalue(self):
        return b"".join(self.parts)


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n, what):
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError(
                f"truncated file: need {n} bytes for {what}, {len(self.buf) - self.pos} left",
                self.pos,
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def magic(self, expected):
        got = bytes(self.take(len(expected), "magic"))
        if got != expected:
            raise FormatError(f"bad magic {got!r}, expected {expected!r}", 0)

    def u32(self, count=1, what="u32 field"):
        vals = struct.unpack(f"<{count}I", self.take(4 * count, what))
        return vals[0] if count == 1 else vals

    def u64(self, what="u64 field"):
        return struct.unpack("<Q", self.take(8, what))[0]

    def f64(self, count=1, what="f64 field"):
        vals = struct.unpack(f"<{count}d", self.take(8 * count, what))
        return vals[0] if count == 1 else vals

    def u8_array(self, n, what):
        return np.frombuffer(self.take(n, what), dtype="<u1").copy()

    def u32_array(self, n, what):
        return np.frombuffer(self.take(4 * n, what), dtype="<u4").astype(np.int64)

    def f64_array(self, shape, what):
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n, what), dtype="<f8").astype(np.float64).reshape(shape)

    def text(self, what):
        n = self.u32(what=f"{what} length")
        start = self.pos
        raw = bytes(self.take(n, what))
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{what} is not valid UTF-8", start + exc.start) from None

    def finish(self):
        if self.pos != len(self.buf):
            raise FormatError(
                f"{len(self.buf) - self.pos} trailing bytes after payload (header/payload size mismatch)",
                self.pos,
            )


def _read_bytes(path):
    return Path(path).read_bytes()


def _atomic_write(path, data):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


# --------------------------------------------------------------------- AVF1


def dump_features(dataset, table):
    check_pair(dataset, table)
    w = _Writer()
    w.raw(AVF_MAGIC)
    w.u32(dataset.n_samples, dataset.dim, dataset.n_classes, table.dim)
    w.u8(dataset.seen_mask.astype(np.uint8))
    w.u8(dataset.split)
    w.u32_array(dataset.labels)
    w.f64_array(dataset.features)
    w.f64_array(table.embeddings)
    for name in dataset.class_names:
        w.text(name)
    return w.getvalue()


def parse_features(buf):
    r = _Reader(buf)
    r.magic(AVF_MAGIC)
    m, d, c, dt = r.u32(4, "header")
    seen_pos = r.pos
    seen = r.u8_array(c, "seen flags")
    if np.any(seen > 1):
        raise FormatError("seen flag must be 0 or 1", seen_pos + int(np.argmax(seen > 1)))
    split_pos = r.pos
    split = r.u8_array(m, "split flags")
    if np.any(split > TEST):
        raise FormatError("split flag must be 0 or 1", split_pos + int(np.argmax(split > TEST)))
    label_pos = r.pos
    labels = r.u32_array(m, "labels")
    if m and labels.max() >= c:
        raise FormatError(f"label exceeds class count {c}", label_pos + 4 * int(np.argmax(labels >= c)))
    feats = r.f64_array((m, d), "features")
    emb = r.f64_array((c, dt), "class embeddings")
    names = [r.text(f"class name {i}") for i in range(c)]
    r.finish()
    dataset = Dataset(feats, labels, names, seen.astype(bool), split)
    return dataset, ClassEmbeddingTable(emb)


def save_features(path, dataset, table):
    """Write a dataset and its class embedding table as an AVF1 file."""
    _atomic_write(path, dump_features(dataset, table))


def load_features(path):
    """Read an AVF1 file; raises FormatError (with byte offset) on malformed input."""
    return parse_features(_read_bytes(path))


# ---------------------------------------------------------------------- CSV


def save_csv(path, dataset, table=None, classes_path=None):
    """Write ``label,split,f0..`` rows plus an optional class sidecar.

    The sidecar has columns ``class,seen,t0..`` with one row per class, in
    class-index order.  Floats use ``repr`` so the round trip is exact.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["label", "split"] + [f"f{j}" for j in range(dataset.dim)])
        for y, s, row in zip(dataset.labels, dataset.split, dataset.features):
            out.writerow([int(y), "train" if s == TRAIN else "test"] + [repr(float(v)) for v in row])
    if table is not None:
        check_pair(dataset, table)
        classes_path = Path(classes_path) if classes_path else default_sidecar(path)
        with classes_path.open("w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["class", "seen"] + [f"t{j}" for j in range(table.dim)])
            for name, seen, row in zip(dataset.class_names, dataset.seen_mask, table.embeddings):
                out.writerow([name, int(seen)] + [repr(float(v)) for v in row])


def default_sidecar(path):
    path = Path(path)
    return path.with_name(path.stem + ".classes.csv")


def _parse_split(token, line):
    token = token.strip().lower()
    if token in ("train", "0"):
        return TRAIN
    if token in ("test", "1"):
        return TEST
    raise FormatError(f"line {line}: split must be train/test or 0/1, got {token!r}")


def load_csv(path, classes_path=None):
    """Read a feature CSV and, if present, its class sidecar.

    Without a sidecar, classes are numbered 0..max(label), a class counts as
    seen when it has at least one train sample, and the table is None.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["label", "split"] or any(h != f"f{j}" for j, h in enumerate(header[2:])):
        raise FormatError(f"{path}: header must be label,split,f0..f{{D-1}}")
    d = len(header) - 2
    labels, split, feats = [], [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 2:
            raise FormatError(f"{path} line {line}: expected {d + 2} fields, got {len(row)}")
        try:
            labels.append(int(row[0]))
            feats.append([float(v) for v in row[2:]])
        except ValueError as exc:
            raise FormatError(f"{path} line {line}: {exc}") from None
        split.append(_parse_split(row[1], line))
    labels = np.asarray(labels, dtype=np.int64)
    split = np.asarray(split, dtype=np.uint8)
    feats = np.asarray(feats, dtype=np.float64).reshape(len(labels), d)

    classes_path = Path(classes_path) if classes_path else default_sidecar(path)
    if classes_path.exists():
        with classes_path.open(newline="") as fh:
            crow = list(csv.reader(fh))
        if not crow or [h.strip() for h in crow[0][:2]] != ["class", "seen"]:
            raise FormatError(f"{classes_path}: header must be class,seen,t0..")
        dt = len(crow[0]) - 2
        names, seen, emb = [], [], []
        for line, row in enumerate(crow[1:], start=2):
            if not row:
                continue
            if len(row) != dt + 2:
                raise FormatError(f"{classes_path} line {line}: expected {dt + 2} fields")
            names.append(row[0])
            seen.append(row[1].strip() in ("1", "true", "True"))
            emb.append([float(v) for v in row[2:]])
        table = ClassEmbeddingTable(np.asarray(emb, dtype=np.float64).reshape(len(names), dt))
        dataset = Dataset(feats, labels, names, np.asarray(seen), split)
        return dataset, table
    n_cls = int(labels.max()) + 1 if labels.size else 0
    seen = np.zeros(n_cls, dtype=bool)
    seen[labels[split == TRAIN]] = True
    names = [f"class_{c:03d}" for c in range(n_cls)]
    return Dataset(feats, labels, names, seen, split), None


# -------------------------------------------------------------- checkpoints


def mlp_content_hash(params):
    """SHA-256 over dims, class map and parameter payload (provenance excluded)."""
    h = hashlib.sha256()
    h.update(np.asarray(params.dims, dtype="<u4").tobytes())
    h.update(np.asarray(params.classes, dtype="<u4").tobytes())
    for a in params.arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def dump_mlp(params, seed=0, config=None):
    w = _Writer()
    w.raw(MLP_MAGIC)
    dims = params.dims
    w.u32(len(dims) - 1)
    w.u32(*dims)
    w.u32_array(params.classes)
    for a in params.arrays:
        w.f64_array(a)
    w.u64(seed)
    w.text(json.dumps(config or {}, sort_keys=True))
    return w.getvalue()


def parse_mlp(buf):
    """Returns (MlpParams, provenance dict with 'seed' and 'config')."""
    r = _Reader(buf)
    r.magic(MLP_MAGIC)
    n_layers = r.u32(what="layer count")
    if n_layers < 1:
        raise FormatError("checkpoint declares no layers", r.pos - 4)
    dims = r.u32(n_layers + 1, "layer dims")
    dims = (dims,) if isinstance(dims, int) else dims
    classes = r.u32_array(dims[-1], "class map")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(r.f64_array((fan_in, fan_out), "weights"))
        biases.append(r.f64_array((fan_out,), "biases"))
    seed = r.u64("seed")
    config = _parse_json(r, "config")
    r.finish()
    return MlpParams(weights, biases, classes), {"seed": seed, "config": config}


def _parse_json(r, what):
    pos = r.pos
    text = r.text(what)
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        raise FormatError(f"{what} record is not valid JSON", pos) from None


def save_mlp(path, params, seed=0, config=None):
    _atomic_write(path, dump_mlp(params, seed, config))


def load_mlp(path):
    return parse_mlp(_read_bytes(path))


def dump_aligner(params, seed=0, config=None):
    w = _Writer()
    w.raw(ALN_MAGIC)
    w.u32(*params.dims)
    w.u8([int(params.normalize)])
    for a in params.arrays:
        w.f64_array(a)
    w.u64(seed)
    w.text(json.dumps(config or {}, sort_keys=True))
    return w.getvalue()


def parse_aligner(buf):
    r = _Reader(buf)
    r.magic(ALN_MAGIC)
    d, dt, de, dp = r.u32(4, "dims")
    normalize = bool(r.u8_array(1, "normalize flag")[0])
    shapes = {
        "sample_encoder": (d, de),
        "text_encoder": (dt, de),
        "sample_projector": (de, dp),
        "text_projector": (de, dp),
        "sample_decoder": (dp, de),
        "text_decoder": (dp, de),
    }
    layers = {}
    for name in LAYERS:
        fan_in, fan_out = shapes[name]
        layers[name] = (r.f64_array((fan_in, fan_out), name), r.f64_array((fan_out,), name))
    seed = r.u64("seed")
    config = _parse_json(r, "config")
    r.finish()
    return AlignerParams(layers, normalize), {"seed": seed, "config": config}


def save_aligner(path, params, seed=0, config=None):
    _atomic_write(path, dump_aligner(params, seed, config))


def load_aligner(path):
    return parse_aligner(_read_bytes(path))


def dump_detector(detector):
    sub, cfg = detector.subspace, detector.config
    if cfg.threshold is None:
        raise EzAvoodError("only calibrated detectors can be saved")
    w = _Writer()
    w.raw(OOD_MAGIC)
    w.u32(sub.dim, sub.principal_dim)
    w.f64(cfg.gamma, cfg.threshold, cfg.percentile)
    w.u8([int(sub.mean is not None)])
    w.f64_array(sub.residual_basis)
    w.f64_array(sub.eigenvalues)
    if sub.mean is not None:
        w.f64_array(sub.mean)
    w.text(detector.mlp_hash)
    return w.getvalue()


def parse_detector(buf, expected_mlp_hash=None):
    r = _Reader(buf)
    r.magic(OOD_MAGIC)
    d, n = r.u32(2, "header")
    if not 1 <= n < d:
        raise FormatError(f"principal dim {n} invalid for D={d}", len(OOD_MAGIC) + 4)
    gamma, lam, pct = r.f64(3, "detector config")
    has_mean = bool(r.u8_array(1, "centering flag")[0])
    basis = r.f64_array((d, d - n), "residual basis")
    eigenvalues = r.f64_array((d,), "eigenvalues")
    mean = r.f64_array((d,), "mean") if has_mean else None
    mlp_hash = r.text("checkpoint hash")
    r.finish()
    if expected_mlp_hash is not None and expected_mlp_hash != mlp_hash:
        warnings.warn(
            "detector bundle was calibrated against a different seen-expert checkpoint",
            RuntimeWarning,
            stacklevel=3,
        )
    sub = SubspaceModel(basis, n, eigenvalues, mean)
    return Detector(sub, DetectorConfig(gamma, n, lam, pct), mlp_hash)


def save_detector(path, detector):
    _atomic_write(path, dump_detector(detector))


def load_detector(path, expected_mlp_hash=None):
    return parse_detector(_read_bytes(path), expected_mlp_hash)
