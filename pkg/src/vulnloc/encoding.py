"""IR tokenization, function-name symbolization, skip-gram embeddings and sample encoding."""

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, ShapeError

logger = logging.getLogger(__name__)

EMBEDDING_HEADER = "# vulnloc-embedding"
DATASET_MAGIC = "vulnloc-dataset"

_ATTACHMENT_RE = re.compile(r",\s*![A-Za-z_][\w.]*\s+(?:!\d+|!\{[^}]*\}|!\"[^\"]*\")")
_IR_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<str>c?"[^"]*")
  | (?P<local>%(?:[-a-zA-Z$._][-a-zA-Z$._0-9]*|\d+|"[^"]*"))
  | (?P<at>@)
  | (?P<meta>!(?:[-a-zA-Z$._][-a-zA-Z$._0-9]*|\d+))
  | (?P<attr>\#\d+)
  | (?P<num>-?0x[KLMHR]?[0-9A-Fa-f]+|-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
  | (?P<word>[-a-zA-Z$._][-a-zA-Z$._0-9]*)
  | (?P<ell>\.\.\.)
  | (?P<punct>.)
    """,
    re.VERBOSE,
)


@dataclass
class TokenSequence:
    tokens: List[str]
    line_spans: List[Tuple[int, int]] = field(default_factory=list)

    def __len__(self):
        return len(self.tokens)


def _tokens_of(text):
    text = _ATTACHMENT_RE.sub("", text)
    out = []
    for m in _IR_TOKEN_RE.finditer(text):
        if m.lastgroup != "ws":
            out.append(m.group())
    return out


def tokenize_text(text):
    """Tokens of one rendered IR statement (metadata attachments dropped)."""
    return _tokens_of(text)


def tokenize_ir(candidate) -> TokenSequence:
    """Tokenize every statement of a candidate, recording per-line spans."""
    texts = candidate.texts if hasattr(candidate, "texts") else list(candidate)
    tokens = []
    spans = []
    for text in texts:
        start = len(tokens)
        tokens.extend(_tokens_of(text))
        spans.append((start, len(tokens)))
    return TokenSequence(tokens, spans)


def detokenize(seq: TokenSequence):
    """Lines of space-joined tokens; tokenizing them again gives the same tokens."""
    return [" ".join(seq.tokens[s:e]) for s, e in seq.line_spans]


def build_name_map(seq: TokenSequence, api_names=frozenset(), user_functions=()) -> Dict[str, str]:
    """User-defined function names -> FUNk, numbered by first appearance."""
    user_functions = set(user_functions)
    mapping: Dict[str, str] = {}
    toks = seq.tokens
    for i in range(len(toks) - 1):
        if toks[i] != "@":
            continue
        name = toks[i + 1]
        if name in mapping or name in api_names or name.startswith("llvm."):
            continue
        is_call = i + 2 < len(toks) and toks[i + 2] == "("
        if name in user_functions or is_call:
            mapping[name] = f"FUN{len(mapping) + 1}"
    return mapping


def symbolize(seq: TokenSequence, name_map: Dict[str, str]) -> TokenSequence:
    """Replace user function names that follow an '@' token."""
    toks = list(seq.tokens)
    for i in range(1, len(toks)):
        if toks[i - 1] == "@" and toks[i] in name_map:
            toks[i] = name_map[toks[i]]
    return TokenSequence(toks, list(seq.line_spans))


def candidate_tokens(record, api_names=frozenset()) -> TokenSequence:
    """Tokenize and symbolize a corpus record."""
    seq = tokenize_ir(record)
    fns = getattr(record, "functions", ())
    return symbolize(seq, build_name_map(seq, api_names, fns))


@dataclass
class EmbeddingTable:
    vocabulary: Dict[str, int]
    vectors: np.ndarray
    seed: int = 0

    @property
    def dim(self):
        return self.vectors.shape[1]

    def vector(self, token):
        idx = self.vocabulary.get(token)
        if idx is None:
            return np.zeros(self.dim)
        return self.vectors[idx]

    def save(self, path):
        symbols = sorted(self.vocabulary, key=self.vocabulary.get)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{EMBEDDING_HEADER} d={self.dim} vocab={len(symbols)} seed={self.seed}\n")
            for sym in symbols:
                vals = " ".join(repr(float(v)) for v in self.vectors[self.vocabulary[sym]])
                fh.write(f"{sym}\t{vals}\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            head = fh.readline().rstrip("\n")
            m = re.match(re.escape(EMBEDDING_HEADER) + r" d=(\d+) vocab=(\d+) seed=(-?\d+)$", head)
            if m is None:
                raise DataError(f"{path}: not an embedding table")
            d, n, seed = int(m.group(1)), int(m.group(2)), int(m.group(3))
            vocab = {}
            rows = []
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                sym, _, vals = line.rpartition("\t")
                vec = [float(v) for v in vals.split()]
                if len(vec) != d:
                    raise DataError(f"{path}: row for {sym!r} has {len(vec)} values, expected {d}")
                vocab[sym] = len(rows)
                rows.append(vec)
        if len(rows) != n:
            raise DataError(f"{path}: header says {n} rows, found {len(rows)}")
        return cls(vocab, np.array(rows, dtype=np.float64).reshape(n, d), seed)


_TABLE_SIZE = 1 << 16


def train_embedding(
    streams: Iterable[Sequence[str]],
    d: int = 30,
    window: int = 5,
    epochs: int = 5,
    seed: int = 0,
    negatives: int = 5,
    min_count: int = 1,
    learning_rate: float = 0.025,
    batch_size: int = 512,
    rng: Optional[np.random.Generator] = None,
) -> EmbeddingTable:
    """Skip-gram with negative sampling, trained with minibatch SGD."""
    streams = [list(s) for s in streams]
    counts: Dict[str, int] = {}
    for s in streams:
        for t in s:
            counts[t] = counts.get(t, 0) + 1
    vocab_list = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    if not vocab_list:
        raise DataError("cannot train an embedding on an empty corpus")
    vocab = {t: i for i, t in enumerate(vocab_list)}
    rng = rng if rng is not None else np.random.default_rng(seed)
    V = len(vocab)
    w_in = (rng.random((V, d)) - 0.5) / d
    w_out = np.zeros((V, d))

    centers, contexts = [], []
    for s in streams:
        ids = np.array([vocab[t] for t in s if t in vocab], dtype=np.int64)
        n = len(ids)
        for off in range(1, window + 1):
            if off >= n:
                break
            centers.append(ids[:-off])
            contexts.append(ids[off:])
            centers.append(ids[off:])
            contexts.append(ids[:-off])
    if not centers or V < 2:
        return EmbeddingTable(vocab, w_in, seed)
    centers = np.concatenate(centers)
    contexts = np.concatenate(contexts)

    # negatives come from a unigram^0.75 lookup table, as in word2vec
    freq = np.array([counts[t] for t in vocab_list], dtype=np.float64) ** 0.75
    slots = np.maximum(1, np.round(freq / freq.sum() * _TABLE_SIZE)).astype(np.int64)
    table = np.repeat(np.arange(V), slots)
    n_pairs = len(centers)
    total_steps = epochs * ((n_pairs + batch_size - 1) // batch_size)
    step = 0
    for _ in range(epochs):
        order = rng.permutation(n_pairs)
        for b in range(0, n_pairs, batch_size):
            lr = learning_rate * max(1e-4, 1.0 - step / total_steps)
            step += 1
            idx = order[b:b + batch_size]
            c, o = centers[idx], contexts[idx]
            neg = table[rng.integers(0, len(table), size=(len(idx), negatives))]
            vc = w_in[c]
            vo = w_out[o]
            vn = w_out[neg]
            sp = _sigmoid(np.einsum("bd,bd->b", vc, vo))
            sn = _sigmoid(np.einsum("bd,bkd->bk", vc, vn))
            g_pos = (sp - 1.0)[:, None]
            grad_c = g_pos * vo + np.einsum("bk,bkd->bd", sn, vn)
            out_idx = np.concatenate([o, neg.ravel()])
            out_upd = np.concatenate([g_pos * vc, (sn[:, :, None] * vc[:, None, :]).reshape(-1, d)])
            _scatter_add(w_out, out_idx, -lr * out_upd)
            _scatter_add(w_in, c, -lr * grad_c)
    return EmbeddingTable(vocab, w_in, seed)


def _scatter_add(target, idx, values):
    """target[idx] += values with repeated indices accumulated (np.add.at, but faster)."""
    rows, d = target.shape
    flat = (idx[:, None] * d + np.arange(d)).ravel()
    target += np.bincount(flat, weights=values.ravel(), minlength=rows * d).reshape(rows, d)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class EncodedSample:
    sample_id: str
    matrix: np.ndarray  # (lam, d)
    line_spans: List[Tuple[int, int]]
    label: Tuple[int, ...]
    n_tokens: int
    window_start: int = 0
    mask: Optional[np.ndarray] = None
    lines: List[Optional[str]] = field(default_factory=list)
    program: str = ""

    @property
    def is_vulnerable(self):
        return bool(self.label)


def window_start(n_tokens, anchor, lam):
    """First token of the λ-window kept for a long sequence."""
    if n_tokens <= lam:
        return 0
    return int(min(max(anchor - lam // 2, 0), n_tokens - lam))


def vectorize(seq: TokenSequence, table: EmbeddingTable, lam: int, anchor: int = 0,
              sample_id="", label=()) -> EncodedSample:
    """Embed tokens into a λ×d matrix, centring long sequences on the anchor token."""
    n = len(seq.tokens)
    start = window_start(n, anchor, lam)
    kept = seq.tokens[start:start + lam]
    mat = np.zeros((lam, table.dim))
    for i, tok in enumerate(kept):
        mat[i] = table.vector(tok)
    spans = []
    for s, e in seq.line_spans:
        s2 = min(max(s - start, 0), len(kept))
        e2 = min(max(e - start, 0), len(kept))
        spans.append((s2, max(s2, e2)))
    return EncodedSample(sample_id, mat, spans, tuple(label), len(kept), start)


def build_mask(sample: EncodedSample, label=None) -> np.ndarray:
    """Diagonal location mask: real tokens for label 0, labeled-line tokens otherwise."""
    label = sample.label if label is None else tuple(label)
    lam = sample.matrix.shape[0]
    mask = np.zeros(lam)
    if not label:
        mask[:sample.n_tokens] = 1.0
        return mask
    for x in label:
        if not 1 <= x <= len(sample.line_spans):
            raise ShapeError(f"label index {x} outside 1..{len(sample.line_spans)}")
        s, e = sample.line_spans[x - 1]
        mask[s:e] = 1.0
    if not mask.any():
        logger.debug("sample %s: labeled lines fall outside the token window", sample.sample_id)
    return mask


def anchor_token(seq: TokenSequence, anchor_rows) -> int:
    rows = [r for r in anchor_rows if 0 <= r < len(seq.line_spans)]
    if not rows:
        return 0
    return seq.line_spans[min(rows)][0]


def encode_records(records, table: EmbeddingTable, lam: int, api_names=frozenset(), stats=None) -> List[EncodedSample]:
    """Encode corpus records; vulnerable samples whose mask is empty are dropped."""
    stats = {} if stats is None else stats
    stats.setdefault("mask_empty", [])
    out = []
    for rec in records:
        seq = candidate_tokens(rec, api_names)
        sample = vectorize(seq, table, lam, anchor_token(seq, rec.anchor_rows), rec.candidate_id, rec.label)
        sample.mask = build_mask(sample)
        sample.lines = [s.location for s in rec.statements]
        sample.program = rec.program
        if sample.is_vulnerable and not sample.mask.any():
            stats["mask_empty"].append(rec.candidate_id)
            continue
        out.append(sample)
    if stats["mask_empty"]:
        logger.warning("dropped %d vulnerable samples whose labeled lines fall outside the token window",
                       len(stats["mask_empty"]))
    return out


def save_dataset(samples: Sequence[EncodedSample], path, meta=None):
    """JSON header line followed by the stacked matrices and masks in .npy form."""
    if samples:
        lam, d = samples[0].matrix.shape
    else:
        lam, d = (meta or {}).get("lam", 0), (meta or {}).get("dim", 0)
    header = {
        "format": DATASET_MAGIC,
        "version": 1,
        "lam": lam,
        "dim": d,
        "meta": meta or {},
        "samples": [
            {
                "id": s.sample_id,
                "label": list(s.label),
                "spans": [list(x) for x in s.line_spans],
                "n_tokens": s.n_tokens,
                "window_start": s.window_start,
                "lines": s.lines,
                "program": s.program,
            }
            for s in samples
        ],
    }
    X = np.stack([s.matrix for s in samples]) if samples else np.zeros((0, lam, d))
    M = np.stack([s.mask for s in samples]) if samples else np.zeros((0, lam))
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        np.save(fh, X.astype(np.float64), allow_pickle=False)
        np.save(fh, M.astype(np.float64), allow_pickle=False)


def load_dataset(path):
    """Inverse of save_dataset; returns (samples, meta)."""
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise DataError(f"{path}: not an encoded dataset") from None
        if header.get("format") != DATASET_MAGIC:
            raise DataError(f"{path}: not an encoded dataset")
        X = np.load(fh, allow_pickle=False)
        M = np.load(fh, allow_pickle=False)
    samples = []
    for i, h in enumerate(header["samples"]):
        samples.append(EncodedSample(
            sample_id=h["id"], matrix=X[i], line_spans=[tuple(x) for x in h["spans"]],
            label=tuple(h["label"]), n_tokens=h["n_tokens"], window_start=h["window_start"],
            mask=M[i], lines=h["lines"], program=h.get("program", ""),
        ))
    meta = dict(header.get("meta", {}))
    meta.setdefault("lam", header["lam"])
    meta.setdefault("dim", header["dim"])
    return samples, meta
