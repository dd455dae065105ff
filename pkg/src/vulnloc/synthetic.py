"""Synthetic labeled candidates with a planted out-of-bounds pointer pattern.

Vulnerable samples contain one `getelementptr` with a negative constant
offset, the labeled line. Clean samples carry look-alikes: positive offsets
and negative constants in plain arithmetic.
"""

import logging
import time
from dataclasses import dataclass
from typing import List

import numpy as np

from .corpus import CorpusRecord, CorpusStatement
from .encoding import candidate_tokens, encode_records, train_embedding
from .evaluation import SampleResult, aggregate_report
from .neural.detect import detect_all
from .neural.model import ModelConfig
from .neural.train import TrainConfig, train
from .rng import stream

logger = logging.getLogger(__name__)

SIZES = (16, 32, 64, 100, 128)
OFFSETS = (1, 2, 4, 8, 16)


class _Builder:
    def __init__(self, rng):
        self.rng = rng
        self.next_id = 1
        self.lines = []
        self.arrays = []
        self.ints = []
        self.ptrs = []
        self.vals = []

    def fresh(self):
        n = self.next_id
        self.next_id += 1
        return f"%{n}"

    def pick(self, pool):
        return pool[int(self.rng.integers(len(pool)))]

    def emit(self, text):
        self.lines.append(text)

    def alloca_array(self):
        size = self.pick(SIZES)
        r = self.fresh()
        self.emit(f"{r} = alloca [{size} x i8], align 16")
        self.arrays.append((r, size))

    def alloca_int(self):
        r = self.fresh()
        self.emit(f"{r} = alloca i32, align 4")
        self.ints.append(r)

    def base_ptr(self):
        arr, size = self.pick(self.arrays)
        r = self.fresh()
        self.emit(f"{r} = getelementptr inbounds [{size} x i8], [{size} x i8]* {arr}, i64 0, i64 0")
        self.ptrs.append(r)
        return r

    def filler(self):
        kind = int(self.rng.integers(8))
        if kind == 0 and self.ints:
            self.emit(f"store i32 {int(self.rng.integers(0, 100))}, i32* {self.pick(self.ints)}, align 4")
        elif kind == 1 and self.ints:
            r = self.fresh()
            self.emit(f"{r} = load i32, i32* {self.pick(self.ints)}, align 4")
            self.vals.append(r)
        elif kind == 2 and self.vals:
            r = self.fresh()
            c = int(self.rng.integers(-16, 17))
            self.emit(f"{r} = add nsw i32 {self.pick(self.vals)}, {c}")
            self.vals.append(r)
        elif kind == 3 and self.vals:
            r = self.fresh()
            self.emit(f"{r} = icmp slt i32 {self.pick(self.vals)}, {int(self.rng.integers(0, 100))}")
        elif kind == 4 and self.ptrs:
            self.emit(f"call void @llvm.memset.p0i8.i64(i8* align 16 {self.pick(self.ptrs)}, i8 65, i64 {self.pick(SIZES) - 1}, i1 false)")
        elif kind == 5 and self.ptrs:
            r = self.fresh()
            self.emit(f"{r} = call i64 @strlen(i8* {self.pick(self.ptrs)})")
        elif kind == 6 and self.ptrs:
            self.positive_gep()
        else:
            self.emit(f"call void @helper{int(self.rng.integers(1, 4))}()")

    def positive_gep(self):
        r = self.fresh()
        self.emit(f"{r} = getelementptr inbounds i8, i8* {self.pick(self.ptrs)}, i64 {self.pick(OFFSETS)}")
        self.ptrs.append(r)

    def negative_gep(self):
        r = self.fresh()
        self.emit(f"{r} = getelementptr inbounds i8, i8* {self.pick(self.ptrs)}, i64 -{self.pick(OFFSETS)}")
        return r


def make_record(rng, idx, vulnerable: bool) -> CorpusRecord:
    b = _Builder(rng)
    b.alloca_array()
    b.alloca_int()
    if rng.random() < 0.5:
        b.alloca_array()
    b.base_ptr()
    for _ in range(int(rng.integers(3, 8))):
        b.filler()
    b.positive_gep() if rng.random() < 0.5 else b.filler()
    anchor_row = len(b.lines)
    if vulnerable:
        ptr = b.negative_gep()
    else:
        ptr = b.fresh()
        b.emit(f"{ptr} = getelementptr inbounds i8, i8* {b.pick(b.ptrs)}, i64 {b.pick(OFFSETS)}")
    b.emit(f"call void @llvm.memmove.p0i8.p0i8.i64(i8* align 1 {ptr}, i8* align 16 {b.pick(b.ptrs)}, i64 {b.pick(SIZES)}, i1 false)")
    for _ in range(int(rng.integers(2, 6))):
        b.filler()
    b.emit("ret i32 0")
    file_id = f"synth/p{idx:04d}.c"
    stmts = tuple(CorpusStatement(file_id, 10 + k, text) for k, text in enumerate(b.lines))
    return CorpusRecord(
        candidate_id=f"s{idx:04d}", kind="FC", file=file_id, line=10 + anchor_row + 1,
        statements=stmts, focus="memmove", program=f"p{idx:04d}",
        anchor_rows=(anchor_row,), functions=("helper1", "helper2", "helper3"),
        label=(anchor_row + 1,) if vulnerable else (), labeled=True,
    )


def make_corpus(n=500, seed=0, vulnerable_ratio=0.5) -> List[CorpusRecord]:
    rng = stream(seed, "synthetic")
    flags = np.zeros(n, dtype=bool)
    flags[: int(round(n * vulnerable_ratio))] = True
    rng.shuffle(flags)
    return [make_record(rng, i, bool(flags[i])) for i in range(n)]


def split(records, test_fraction=0.2, seed=0):
    """Stratified held-out split, deterministic under the seed."""
    rng = stream(seed, "split")
    train_set, test_set = [], []
    for cls in (True, False):
        group = [r for r in records if bool(r.label) == cls]
        order = rng.permutation(len(group))
        cut = int(round(len(group) * test_fraction))
        held = set(order[:cut].tolist())
        for i, r in enumerate(group):
            (test_set if i in held else train_set).append(r)
    key = lambda r: r.candidate_id  # noqa: E731
    return sorted(train_set, key=key), sorted(test_set, key=key)


@dataclass(frozen=True)
class BenchmarkConfig:
    n: int = 500
    seed: int = 0
    lam: int = 96
    dim: int = 16
    hidden: int = 32
    dense: int = 32
    layers: int = 2
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 0.005
    dropout: float = 0.2
    kappa: int = 1
    threshold: float = 0.5
    embedding_epochs: int = 5


def truth_lines(rec):
    return frozenset(rec.statements[i - 1].location for i in rec.label)


def run_benchmark(cfg: BenchmarkConfig = BenchmarkConfig()):
    """Generate, encode, train and score the held-out part; returns the summary dict."""
    t0 = time.perf_counter()
    records = make_corpus(cfg.n, cfg.seed)
    tr, te = split(records, 0.2, cfg.seed)
    api = frozenset({"memset", "memmove", "strlen"})
    table = train_embedding(
        [candidate_tokens(r, api).tokens for r in tr], d=cfg.dim, epochs=cfg.embedding_epochs,
        seed=cfg.seed, rng=stream(cfg.seed, "embedding"),
    )
    train_samples = encode_records(tr, table, cfg.lam, api)
    test_samples = encode_records(te, table, cfg.lam, api)
    mcfg = ModelConfig(input_dim=cfg.dim, hidden=cfg.hidden, layers=cfg.layers, dense=cfg.dense,
                       kappa=cfg.kappa, dropout=cfg.dropout)
    tcfg = TrainConfig(batch_size=cfg.batch_size, learning_rate=cfg.learning_rate, epochs=cfg.epochs, seed=cfg.seed)
    history = []
    model = train(train_samples, mcfg, tcfg, history)
    entries = detect_all(model, test_samples, cfg.threshold, cfg.kappa)
    by_id = {r.candidate_id: r for r in te}
    results = [
        SampleResult(e.sample_id, bool(by_id[e.sample_id].label), e.vulnerable,
                     truth_lines(by_id[e.sample_id]), frozenset(e.locations))
        for e in entries
    ]
    summary = aggregate_report(results)
    summary["seconds"] = time.perf_counter() - t0
    summary["loss_history"] = history
    summary["train_size"] = len(train_samples)
    summary["test_size"] = len(test_samples)
    return summary
