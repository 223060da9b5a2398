"""File formats: tab-separated text records and the versioned binary container.

Binary layout (all little-endian): magic ``b"VIDQ"``, format version
(uint32), artifact kind (uint32), a shape header of uint32 values, then the
parameters as float32 in declaration order. CTR models append their id
vocabularies as length-prefixed UTF-8 strings.
"""
import struct

import numpy as np

from .contrastive import TrainState
from .ctr import ClickRecord, CtrModelParams, EmbeddingTable
from .encoder import MlpEncoderParams
from .quantizer import CodebookSet, QuantizerConfig, VisualId

MAGIC = b"VIDQ"
FORMAT_VERSION = 1

KIND_CODEBOOKS = 1
KIND_ENCODER = 2
KIND_CTR = 3
KIND_QUANTIZER_CKPT = 4
KIND_NAMES = {1: "codebooks", 2: "encoder", 3: "ctr-model", 4: "quantizer-checkpoint"}


class FormatError(ValueError):
    pass


class ParseError(FormatError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


class ShapeMismatchError(FormatError):
    pass


# -- binary primitives ------------------------------------------------------

class _Writer:
    def __init__(self, kind):
        self.parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, kind)]

    def u32(self, *vals):
        self.parts.append(struct.pack(f"<{len(vals)}I", *vals))

    def f32(self, arr):
        self.parts.append(np.asarray(arr, dtype="<f4").tobytes())

    def f64(self, val):
        self.parts.append(struct.pack("<d", val))

    def string(self, s):
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.parts.append(raw)

    def getvalue(self):
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data, path="<bytes>"):
        self.data = data
        self.pos = 0
        self.path = path

    def _take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated file while reading {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, n=1, what="header"):
        vals = struct.unpack(f"<{n}I", self._take(4 * n, what))
        return vals[0] if n == 1 else list(vals)

    def f64(self, what="scalar"):
        return struct.unpack("<d", self._take(8, what))[0]

    def f32(self, shape, what):
        count = int(np.prod(shape))
        if self.pos + 4 * count > len(self.data):
            raise ShapeMismatchError(
                f"{self.path}: shape mismatch: header declares {what} of shape {tuple(shape)} "
                f"but only {(len(self.data) - self.pos) // 4} values remain")
        raw = self._take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)

    def string(self):
        n = self.u32(what="string length")
        return self._take(n, "string").decode("utf-8")

    def done(self):
        if self.pos != len(self.data):
            raise ShapeMismatchError(
                f"{self.path}: shape mismatch: {len(self.data) - self.pos} trailing bytes after declared payload")


def _open(data, path, kind):
    r = _Reader(data, path)
    magic = r._take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version, got = r.u32(2)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}, expected {FORMAT_VERSION}")
    if got != kind:
        raise FormatError(f"{path}: file holds a {KIND_NAMES.get(got, got)}, expected {KIND_NAMES[kind]}")
    return r


# -- payloads ---------------------------------------------------------------

def _put_books(w, books: CodebookSet):
    w.u32(books.d, books.N0, books.K)
    if books.K:
        w.u32(*books.seg_sizes)
    for b in books.arrays():
        w.f32(b)


def _get_books(r):
    d, n0, K = r.u32(3)
    sizes = r.u32(K, "segment sizes") if K else []
    if K == 1:
        sizes = [sizes]
    if K and d % K:
        raise ShapeMismatchError(f"{r.path}: shape mismatch: d={d} not divisible by K={K}")
    coarse = r.f32((n0, d), "coarse codebook")
    segs = [r.f32((n, d // K), f"segment codebook {k}") for k, n in enumerate(sizes)]
    return CodebookSet(coarse, segs)


def _put_encoder(w, enc: MlpEncoderParams):
    w.u32(len(enc.weights))
    w.u32(*enc.dims)
    for a in enc.arrays():
        w.f32(a)


def _get_encoder(r):
    n = r.u32(what="layer count")
    dims = r.u32(n + 1, "layer dims")
    ws, bs = [], []
    for i in range(n):
        ws.append(r.f32((dims[i + 1], dims[i]), f"layer {i} weights"))
        bs.append(r.f32((dims[i + 1],), f"layer {i} bias"))
    return MlpEncoderParams(ws, bs)


def _put_table(w, t: EmbeddingTable):
    w.u32(t.num_entries, t.dim)
    w.f32(t.rows)


def _get_table(r, what):
    n, dim = r.u32(2, what)
    return EmbeddingTable(r.f32((n, dim), what))


# -- public save/load -------------------------------------------------------

def dump_codebooks(books):
    w = _Writer(KIND_CODEBOOKS)
    _put_books(w, books)
    return w.getvalue()


def parse_codebooks(data, path="<bytes>"):
    r = _open(data, path, KIND_CODEBOOKS)
    books = _get_books(r)
    r.done()
    return books


def dump_encoder(enc):
    w = _Writer(KIND_ENCODER)
    _put_encoder(w, enc)
    return w.getvalue()


def parse_encoder(data, path="<bytes>"):
    r = _open(data, path, KIND_ENCODER)
    enc = _get_encoder(r)
    r.done()
    return enc


def dump_ctr_model(p: CtrModelParams):
    w = _Writer(KIND_CTR)
    w.u32(1 if p.use_visual else 0, p.K)
    _put_table(w, p.user_table)
    _put_table(w, p.ad_table)
    if p.use_visual:
        _put_table(w, p.visual0_table)
        for t in p.visual_seg_tables:
            _put_table(w, t)
    _put_encoder(w, p.user_tower)
    _put_encoder(w, p.ad_tower)
    w.u32(len(p.head_w))
    w.f32(p.head_w)
    w.f64(p.head_b)
    for index in (p.user_index, p.ad_index):
        w.u32(len(index))
        for key, row in sorted(index.items(), key=lambda kv: kv[1]):
            w.u32(row)
            w.string(key)
    return w.getvalue()


def parse_ctr_model(data, path="<bytes>"):
    r = _open(data, path, KIND_CTR)
    use_visual, K = r.u32(2)
    user = _get_table(r, "user table")
    ad = _get_table(r, "ad table")
    v0, segs = None, []
    if use_visual:
        v0 = _get_table(r, "visual table 0")
        segs = [_get_table(r, f"visual table {k + 1}") for k in range(K)]
    ut = _get_encoder(r)
    at = _get_encoder(r)
    n = r.u32(what="head size")
    head_w = r.f32((n,), "head weights")
    head_b = r.f64("head bias")
    indices = []
    for _ in range(2):
        count = r.u32(what="vocabulary size")
        idx = {}
        for _ in range(count):
            row = r.u32(what="vocabulary row")
            idx[r.string()] = row
        indices.append(idx)
    r.done()
    try:
        return CtrModelParams(user, ad, v0, segs, ut, at, head_w, head_b, indices[0], indices[1])
    except ValueError as exc:
        raise ShapeMismatchError(f"{path}: shape mismatch: {exc}") from exc


def dump_quantizer_checkpoint(state: TrainState):
    w = _Writer(KIND_QUANTIZER_CKPT)
    cfg = state.cfg
    w.u32(state.epoch, 1 if cfg.use_residual else 0)
    w.f64(cfg.beta_start)
    w.f64(cfg.beta_end)
    _put_books(w, state.books)
    _put_encoder(w, state.img_encoder)
    _put_encoder(w, state.txt_encoder)
    w.u32(len(state.loss_history))
    w.f32(np.asarray(state.loss_history, dtype=np.float64))
    return w.getvalue()


def parse_quantizer_checkpoint(data, path="<bytes>"):
    r = _open(data, path, KIND_QUANTIZER_CKPT)
    epoch, use_residual = r.u32(2)
    beta_start = r.f64()
    beta_end = r.f64()
    books = _get_books(r)
    img = _get_encoder(r)
    txt = _get_encoder(r)
    n = r.u32(what="loss history length")
    hist = r.f32((n,), "loss history").tolist()
    r.done()
    cfg = QuantizerConfig(d=books.d, K=books.K if books.K else 1, N0=books.N0,
                          Nk=books.seg_sizes[0] if books.K else 1, beta_start=beta_start,
                          beta_end=beta_end, use_residual=bool(use_residual and books.K))
    return TrainState(img, txt, books, cfg, epoch, hist)


def _write_bytes(path, data):
    with open(path, "wb") as fh:
        fh.write(data)


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def save_codebooks(path, books):
    _write_bytes(path, dump_codebooks(books))


def load_codebooks(path):
    return parse_codebooks(_read_bytes(path), str(path))


def save_encoder(path, enc):
    _write_bytes(path, dump_encoder(enc))


def load_encoder(path):
    return parse_encoder(_read_bytes(path), str(path))


def save_ctr_model(path, params):
    _write_bytes(path, dump_ctr_model(params))


def load_ctr_model(path):
    return parse_ctr_model(_read_bytes(path), str(path))


def save_quantizer_checkpoint(path, state):
    _write_bytes(path, dump_quantizer_checkpoint(state))


def load_quantizer_checkpoint(path):
    return parse_quantizer_checkpoint(_read_bytes(path), str(path))


# -- text records -----------------------------------------------------------

def fmt_vector(v):
    return ",".join(repr(float(x)) for x in v)


def _records(path, nfields):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != nfields:
                raise ParseError(path, lineno, f"expected {nfields} tab-separated fields, got {len(fields)}")
            yield lineno, fields


def _parse_vector(path, lineno, text, what):
    try:
        v = np.array([float(t) for t in text.split(",")], dtype=np.float64)
    except ValueError:
        raise ParseError(path, lineno, f"malformed {what} vector") from None
    if not np.all(np.isfinite(v)):
        raise ParseError(path, lineno, f"non-finite value in {what} vector")
    return v


def write_pairs(path, pairs):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# pair_id\timage_raw\ttext_raw\n")
        for p in pairs:
            fh.write(f"{p.pair_id}\t{fmt_vector(p.image_raw)}\t{fmt_vector(p.text_raw)}\n")


def read_pairs(path):
    """Returns ``(pair_ids, image_raw, text_raw)`` with the vectors stacked as arrays."""
    ids, imgs, txts = [], [], []
    for lineno, (pid, img, txt) in _records(path, 3):
        imgs.append(_parse_vector(path, lineno, img, "image"))
        txts.append(_parse_vector(path, lineno, txt, "text"))
        if len(imgs[-1]) != len(imgs[0]) or len(txts[-1]) != len(txts[0]):
            raise ParseError(path, lineno, "vector length differs from the first record")
        ids.append(pid)
    if not ids:
        raise FormatError(f"{path}: no pair records")
    return ids, np.array(imgs), np.array(txts)


def write_clusters(path, pairs):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# pair_id\tcluster\n")
        for p in pairs:
            fh.write(f"{p.pair_id}\t{p.cluster}\n")


def read_clusters(path):
    out = {}
    for lineno, (pid, c) in _records(path, 2):
        try:
            out[pid] = int(c)
        except ValueError:
            raise ParseError(path, lineno, f"bad cluster index {c!r}") from None
    return out


def write_clicks(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# user_id\tad_id\tlabel\n")
        for r in records:
            fh.write(f"{r.user_id}\t{r.ad_id}\t{r.label}\n")


def read_clicks(path):
    out = []
    for lineno, (u, a, y) in _records(path, 3):
        if y not in ("0", "1"):
            raise ParseError(path, lineno, f"label must be 0 or 1, got {y!r}")
        out.append(ClickRecord(u, a, int(y)))
    return out


def write_id_list(path, ids):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in sorted(ids):
            fh.write(f"{i}\n")


def read_id_list(path):
    with open(path, encoding="utf-8") as fh:
        return {line.strip() for line in fh if line.strip() and not line.startswith("#")}


def write_visual_map(path, visual_map):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ad_id in sorted(visual_map):
            fh.write(f"{ad_id}\t{visual_map[ad_id]}\n")


def read_visual_map(path):
    out = {}
    for lineno, (ad, ids) in _records(path, 2):
        try:
            out[ad] = VisualId.parse(ids)
        except ValueError:
            raise ParseError(path, lineno, f"malformed visual id {ids!r}") from None
    return out


def fmt_metric(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics(path, metrics):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, val in metrics.items():
            fh.write(f"{key}\t{fmt_metric(val)}\n")


def read_metrics(path):
    out = {}
    for _, (k, v) in _records(path, 2):
        out[k] = v
    return out
