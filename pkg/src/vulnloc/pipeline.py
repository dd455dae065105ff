"""Stage orchestration over a work directory, driven by a flat config file."""

import configparser
import dataclasses
import difflib
import hashlib
import json
import logging
import os
import platform
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .corpus import label_corpus, load_ground_truth, read_corpus, record_from_candidate, write_corpus
from .encoding import EmbeddingTable, candidate_tokens, encode_records, load_dataset, save_dataset, train_embedding
from .errors import DataError, StageError
from .evaluation import SampleResult, aggregate_report, format_summary
from .frontend.extract import SyntaxCandidate, extract_ssyvcs, load_api_names
from .frontend.lexer import tokenize_c
from .frontend.parser import parse_c_unit
from .ir.link import group_and_link, same_file
from .ir.parser import parse_ll
from .neural.detect import DetectionEntry, detect_all
from .neural.model import Model, ModelConfig
from .neural.train import TrainConfig, train
from .rng import stream
from .slicing import generate_isevcs

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
WORK_DIR_ENV = "VULNLOC_WORK_DIR"
CANDIDATES_HEADER = "# vulnloc-candidates 1"
REPORT_HEADER = "# vulnloc-report 1"

ARTIFACTS = {
    "extract": ["candidates.tsv"],
    "ingest-ir": ["ir_index.json"],
    "slice": ["corpus.txt"],
    "label": ["labeled.txt"],
    "encode": ["embedding.txt", "dataset.bin"],
    "train": ["model.bin"],
    "detect": ["report.tsv"],
    "eval": ["summary.tsv"],
}
LEARN_STAGES = ["extract", "ingest-ir", "slice", "label", "encode", "train", "detect", "eval"]
TEST_STAGES = ["extract", "ingest-ir", "slice", "encode", "detect"]


@dataclass
class PipelineConfig:
    source_dir: Optional[Path] = None
    ir_dir: Optional[Path] = None
    truth_dir: Optional[Path] = None
    work_dir: Path = Path("work")
    api_names: Optional[Path] = None
    model_dir: Optional[Path] = None  # where the test phase finds embedding.txt and model.bin
    seed: int = 0
    dim: int = 30
    max_tokens: int = 900
    window: int = 5
    negatives: int = 5
    embedding_epochs: int = 5
    min_count: int = 1
    hidden: int = 900
    layers: int = 2
    dense: int = 512
    kappa: int = 1
    cell: str = "gru"
    dropout: float = 0.4
    batch_size: int = 16
    learning_rate: float = 0.002
    epochs: int = 10
    threshold: float = 0.5
    test_fraction: float = 0.2
    label_mapping: str = "all"

    def model_config(self):
        return ModelConfig(input_dim=self.dim, hidden=self.hidden, layers=self.layers, dense=self.dense,
                           kappa=self.kappa, cell=self.cell, dropout=self.dropout)

    def train_config(self):
        return TrainConfig(batch_size=self.batch_size, learning_rate=self.learning_rate,
                           epochs=self.epochs, seed=self.seed)

    def path(self, name):
        return Path(self.work_dir) / name


_PATH_KEYS = {"source_dir", "ir_dir", "truth_dir", "work_dir", "api_names", "model_dir"}


def load_config(path=None, overrides: Optional[dict] = None) -> PipelineConfig:
    """Read a `[pipeline]` key=value file; relative paths resolve against its folder."""
    values = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"config file {path} not found")
        parser = configparser.ConfigParser(interpolation=None)
        parser.read(path)
        if not parser.has_section("pipeline"):
            raise DataError(f"{path}: missing [pipeline] section")
        values = dict(parser.items("pipeline"))
        version = values.pop("schema_version", None)
        if version is None or int(version) != SCHEMA_VERSION:
            raise DataError(f"{path}: schema_version must be {SCHEMA_VERSION}")
        base = path.parent
    # command-line paths are relative to the caller, file paths to the file
    items = [(k, v, base) for k, v in values.items()]
    items += [(k, v, Path.cwd()) for k, v in (overrides or {}).items() if v is not None]
    fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    kwargs = {}
    for key, raw, root in items:
        key = key.replace("-", "_")
        if key not in fields:
            raise DataError(f"unknown config key {key!r}")
        default = fields[key].default
        if key in _PATH_KEYS:
            p = Path(raw)
            kwargs[key] = p if p.is_absolute() else (root / p)
        elif isinstance(default, bool):
            kwargs[key] = str(raw).lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            kwargs[key] = int(raw)
        elif isinstance(default, float):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = str(raw)
    cfg = PipelineConfig(**kwargs)
    env = os.environ.get(WORK_DIR_ENV)
    if env and "work_dir" not in (overrides or {}):
        cfg.work_dir = Path(env)
    return cfg


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def program_of(rel_path: str):
    parts = Path(rel_path).parts
    return parts[0] if len(parts) > 1 else "_root"


def _require(cfg, *names, stage):
    for name in names:
        if not cfg.path(name).is_file():
            producer = next((s for s, outs in ARTIFACTS.items() if name in outs), "?")
            raise StageError(f"stage {stage!r} needs {name}; run the {producer!r} stage first")


def _need_dir(value, what):
    if value is None or not Path(value).is_dir():
        raise StageError(f"{what} directory {value} does not exist")
    return Path(value)


# stages -------------------------------------------------------------------

def stage_extract(cfg: PipelineConfig, src=None, out=None):
    src = _need_dir(src or cfg.source_dir, "source")
    api = load_api_names(cfg.api_names)
    cands = []
    for path in sorted(src.rglob("*.c")):
        rel = path.relative_to(src).as_posix()
        root = parse_c_unit(tokenize_c(path.read_text(encoding="utf-8", errors="replace"), rel))
        cands.extend(extract_ssyvcs(root, api))
    cands.sort(key=SyntaxCandidate.sort_key)
    out = out or cfg.path("candidates.tsv")
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CANDIDATES_HEADER + "\n")
        for c in cands:
            fh.write(c.to_record() + "\n")
    logger.info("extracted %d candidates", len(cands))
    return {"candidates": len(cands)}


def read_candidates(path) -> List[SyntaxCandidate]:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if not lines or lines[0] != CANDIDATES_HEADER:
        raise DataError(f"{path}: not a candidate list")
    return [SyntaxCandidate.from_record(l) for l in lines[1:] if l]


def stage_ingest(cfg: PipelineConfig, ll_dir=None, out=None):
    ir = _need_dir(ll_dir or cfg.ir_dir, "IR")
    modules = []
    for path in sorted(ir.rglob("*.ll")):
        rel = path.relative_to(ir).as_posix()
        mod = parse_ll(path.read_text(encoding="utf-8"), rel)
        modules.append({
            "path": rel,
            "program": program_of(rel),
            "sha256": sha256_file(path),
            "source_file": mod.source_file,
            "functions": [f.name for f in mod.functions],
            "statements": sum(len(f.statements) for f in mod.functions),
        })
    index = {"format": "vulnloc-ir-index", "version": 1, "root": str(ir.resolve()), "modules": modules}
    with open(out or cfg.path("ir_index.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
        fh.write("\n")
    logger.info("indexed %d IR modules", len(modules))
    return {"modules": len(modules)}


def load_programs(index_path):
    """Parse indexed modules and link them per program."""
    try:
        index = json.loads(Path(index_path).read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        raise DataError(f"{index_path}: not an IR index") from None
    if index.get("format") != "vulnloc-ir-index":
        raise DataError(f"{index_path}: not an IR index")
    ir = _need_dir(index["root"], "IR")
    by_prog: Dict[str, list] = {}
    for entry in index["modules"]:
        path = ir / entry["path"]
        if sha256_file(path) != entry["sha256"]:
            raise StageError(f"{entry['path']} changed since ingest-ir; rerun that stage")
        mod = parse_ll(path.read_text(encoding="utf-8"), entry["path"])
        by_prog.setdefault(entry["program"], []).append(mod)
    return {p: group_and_link(mods) for p, mods in sorted(by_prog.items())}


def stage_slice(cfg: PipelineConfig, candidates=None, index=None, out=None):
    if candidates is None or index is None:
        _require(cfg, "candidates.tsv", "ir_index.json", stage="slice")
    cands = read_candidates(candidates or cfg.path("candidates.tsv"))
    linked = load_programs(index or cfg.path("ir_index.json"))
    records = []
    skipped = 0
    by_prog: Dict[str, list] = {}
    for c in cands:
        by_prog.setdefault(program_of(c.file), []).append(c)
    for prog in sorted(by_prog):
        files = sorted({c.file for c in by_prog[prog]})

        def resolve(f, files=files):
            hits = [x for x in files if same_file(x, f)]
            return hits[0] if len(hits) == 1 else f

        stats = {}
        sevcs = generate_isevcs(by_prog[prog], linked.get(prog, []), stats=stats,
                                id_prefix=f"{prog}/", resolve_file=resolve)
        skipped += len(stats["anchor_not_found"])
        records.extend(record_from_candidate(s, prog) for s in sevcs)
    write_corpus(records, out or cfg.path("corpus.txt"))
    logger.info("sliced %d candidates, %d without anchor", len(records), skipped)
    return {"records": len(records), "anchor_not_found": skipped}


def stage_label(cfg: PipelineConfig, corpus=None, truth=None, out=None):
    if corpus is None:
        _require(cfg, "corpus.txt", stage="label")
    records = read_corpus(corpus or cfg.path("corpus.txt"))
    truth_dir = _need_dir(truth or cfg.truth_dir, "truth")
    truths = load_ground_truth(truth_dir, sorted({r.program for r in records}))
    stats = {}
    labeled = label_corpus(records, truths, cfg.label_mapping, stats)
    write_corpus(labeled, out or cfg.path("labeled.txt"))
    logger.info("labeled %d records (%d vulnerable, %d excluded)", len(labeled), stats["vulnerable"], stats["excluded"])
    return {"records": len(labeled), "vulnerable": stats["vulnerable"], "excluded": stats["excluded"]}


def _assign_split(records, fraction, seed):
    """Stratified, seed-determined train/test assignment by record id."""
    rng = stream(seed, "split")
    out = {}
    for cls in (True, False):
        ids = sorted(r.candidate_id for r in records if bool(r.label) == cls)
        order = rng.permutation(len(ids))
        cut = int(round(len(ids) * fraction))
        for rank, i in enumerate(order):
            out[ids[i]] = "test" if rank < cut else "train"
    return out


def stage_encode(cfg: PipelineConfig, phase="learn", corpus=None, out=None, embedding=None):
    """Learn phase trains and writes the embedding; test phase reuses `embedding`."""
    api = load_api_names(cfg.api_names)
    out = Path(out or cfg.path("dataset.bin"))
    table_path = out.parent / "embedding.txt"
    if phase == "learn":
        if corpus is None:
            _require(cfg, "labeled.txt", stage="encode")
        records = read_corpus(corpus or cfg.path("labeled.txt"))
        streams = [candidate_tokens(r, api).tokens for r in records]
        table = train_embedding(streams, d=cfg.dim, window=cfg.window, epochs=cfg.embedding_epochs,
                                seed=cfg.seed, negatives=cfg.negatives, min_count=cfg.min_count,
                                rng=stream(cfg.seed, "embedding"))
        table.save(embedding or table_path)
        splits = _assign_split(records, cfg.test_fraction, cfg.seed)
    else:
        if corpus is None:
            _require(cfg, "corpus.txt", stage="encode")
        records = read_corpus(corpus or cfg.path("corpus.txt"))
        src = Path(embedding or Path(cfg.model_dir or cfg.work_dir) / "embedding.txt")
        if not src.is_file():
            raise StageError(f"test phase needs a trained embedding at {src}; run a learn-phase 'encode' first")
        table = EmbeddingTable.load(src)
        if src.resolve() != table_path.resolve():
            table.save(table_path)
        splits = {r.candidate_id: "test" for r in records}
    stats = {}
    samples = encode_records(records, table, cfg.max_tokens, api, stats)
    meta = {"lam": cfg.max_tokens, "dim": table.dim, "phase": phase,
            "split": {s.sample_id: splits[s.sample_id] for s in samples},
            "mask_empty": stats["mask_empty"]}
    save_dataset(samples, out, meta)
    logger.info("encoded %d samples (%d dropped for empty masks)", len(samples), len(stats["mask_empty"]))
    return {"samples": len(samples), "mask_empty": len(stats["mask_empty"])}


def _subset(samples, meta, which):
    split = meta.get("split", {})
    if which == "all" or not split:
        return list(samples)
    chosen = [s for s in samples if split.get(s.sample_id) == which]
    return chosen


def stage_train(cfg: PipelineConfig, data=None, out=None):
    if data is None:
        _require(cfg, "dataset.bin", stage="train")
    samples, meta = load_dataset(data or cfg.path("dataset.bin"))
    tr = _subset(samples, meta, "train")
    if not tr:
        raise StageError("no training samples in dataset")
    mcfg = cfg.model_config()
    if mcfg.input_dim != meta["dim"]:
        mcfg = dataclasses.replace(mcfg, input_dim=meta["dim"])
    history = []
    model = train(tr, mcfg, cfg.train_config(), history)
    model.save(out or cfg.path("model.bin"), extra={"loss_history": history, "train_samples": len(tr)})
    return {"train_samples": len(tr), "final_loss": history[-1] if history else None}


def format_report(entries: List[DetectionEntry], threshold, kappa):
    lines = [f"{REPORT_HEADER} threshold={threshold!r} kappa={kappa}"]
    lines.append("id\tscore\tdetected\tlocations\tline_scores")
    for e in entries:
        det = ",".join(str(x) for x in e.detected) or "-"
        locs = ",".join(e.locations) or "-"
        scores = ",".join("-" if s is None else repr(s) for s in e.line_scores) or "-"
        lines.append(f"{e.sample_id}\t{e.score!r}\t{det}\t{locs}\t{scores}")
    return "\n".join(lines) + "\n"


def read_report(path) -> List[DetectionEntry]:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if not lines or not lines[0].startswith(REPORT_HEADER):
        raise DataError(f"{path}: not a detection report")
    threshold = float(lines[0].split("threshold=")[1].split()[0])
    out = []
    for line in lines[2:]:
        if not line:
            continue
        sid, score, det, locs, scores = line.split("\t")
        out.append(DetectionEntry(
            sid, float(score),
            [] if scores == "-" else [None if s == "-" else float(s) for s in scores.split(",")],
            [] if det == "-" else [int(x) for x in det.split(",")],
            [] if locs == "-" else locs.split(","),
            threshold,
        ))
    return out


def stage_detect(cfg: PipelineConfig, subset="test", model=None, data=None, out=None):
    if data is None:
        _require(cfg, "dataset.bin", stage="detect")
    model_path = Path(model or Path(cfg.model_dir or cfg.work_dir) / "model.bin")
    if not model_path.is_file():
        raise StageError(f"detect needs {model_path}; run the 'train' stage first")
    model = Model.load(model_path)
    samples, meta = load_dataset(data or cfg.path("dataset.bin"))
    chosen = _subset(samples, meta, subset)
    entries = detect_all(model, chosen, cfg.threshold, cfg.kappa)
    Path(out or cfg.path("report.tsv")).write_text(format_report(entries, cfg.threshold, cfg.kappa), encoding="utf-8")
    flagged = sum(1 for e in entries if e.vulnerable)
    logger.info("scored %d samples, %d flagged", len(entries), flagged)
    return {"scored": len(entries), "flagged": flagged, "located_lines": sum(len(e.locations) for e in entries)}


def stage_eval(cfg: PipelineConfig, program_level=False, report=None, data=None, truth=None, out=None):
    if report is None:
        _require(cfg, "report.tsv", stage="eval")
    if data is None:
        _require(cfg, "dataset.bin", stage="eval")
    entries = read_report(report or cfg.path("report.tsv"))
    samples, _ = load_dataset(data or cfg.path("dataset.bin"))
    by_id = {s.sample_id: s for s in samples}
    truth_dir = _need_dir(truth or cfg.truth_dir, "truth")
    truths = load_ground_truth(truth_dir, sorted({s.program for s in samples}))
    results = []
    for e in entries:
        s = by_id.get(e.sample_id)
        if s is None:
            raise DataError(f"report names unknown sample {e.sample_id}")
        t = truths.get(s.program)
        U = set()
        if t is not None and t.vulnerable and not t.excluded:
            for loc in s.lines:
                if loc == "no-debug-info":
                    continue
                f, _, ln = loc.rpartition(":")
                if any(int(ln) == tl and same_file(tf, f) for tf, tl in t.lines):
                    U.add(loc)
        results.append(SampleResult(e.sample_id, bool(U), e.vulnerable, frozenset(U), frozenset(e.locations), s.program))
    summary = aggregate_report(results, program_level)
    Path(out or cfg.path("summary.tsv")).write_text(format_summary(summary, results), encoding="utf-8")
    return {k: summary[k] for k in ("F1", "IoU")}


STAGES = {
    "extract": stage_extract,
    "ingest-ir": stage_ingest,
    "slice": stage_slice,
    "label": stage_label,
    "encode": stage_encode,
    "train": stage_train,
    "detect": stage_detect,
    "eval": stage_eval,
}


def _load_manifest(cfg):
    path = cfg.path("manifest.json")
    if path.is_file():
        return json.loads(path.read_text(encoding="utf-8"))
    return {"stages": {}}


def run_stage(name: str, cfg: PipelineConfig, **kwargs):
    """Run one stage and record its output hashes in manifest.json."""
    if name not in STAGES:
        raise StageError(f"unknown stage {name!r}")
    Path(cfg.work_dir).mkdir(parents=True, exist_ok=True)
    logger.info("stage %s (seed %d)", name, cfg.seed)
    t0 = time.perf_counter()
    info = STAGES[name](cfg, **kwargs)
    elapsed = time.perf_counter() - t0
    produced = [cfg.path(a) for a in ARTIFACTS[name]]
    if kwargs.get("out") is not None:
        produced = [Path(kwargs["out"])] + ([Path(kwargs["out"]).parent / "embedding.txt"] if name == "encode" else [])
    manifest = _load_manifest(cfg)
    manifest["stages"][name] = {
        "outputs": {str(p.name): sha256_file(p) for p in produced if p.is_file()},
        "info": info,
        "seconds": round(elapsed, 3),
        "seed": cfg.seed,
    }
    manifest["versions"] = {"vulnloc": __version__, "numpy": np.__version__, "python": platform.python_version()}
    with open(cfg.path("manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return info


def run_pipeline(cfg: PipelineConfig, phase="learn"):
    stages = LEARN_STAGES if phase == "learn" else TEST_STAGES
    out = {}
    for name in stages:
        kwargs = {"phase": phase} if name == "encode" else {}
        out[name] = run_stage(name, cfg, **kwargs)
    return out


def explain(cfg: PipelineConfig, candidate_id: str) -> str:
    """Audit trail for one candidate: origin, slice with tokens and scores, located lines."""
    corpus_path = cfg.path("labeled.txt") if cfg.path("labeled.txt").is_file() else cfg.path("corpus.txt")
    if not corpus_path.is_file():
        raise StageError("explain needs corpus.txt; run the 'slice' stage first")
    records = {r.candidate_id: r for r in read_corpus(corpus_path)}
    if candidate_id not in records:
        near = difflib.get_close_matches(candidate_id, list(records), n=5, cutoff=0.3)
        hint = ", ".join(near) if near else ", ".join(sorted(records)[:5])
        raise DataError(f"unknown candidate id {candidate_id!r}; nearest: {hint}")
    rec = records[candidate_id]
    entry = None
    if cfg.path("report.tsv").is_file():
        entry = next((e for e in read_report(cfg.path("report.tsv")) if e.sample_id == candidate_id), None)
    sample = None
    if cfg.path("dataset.bin").is_file():
        samples, _ = load_dataset(cfg.path("dataset.bin"))
        sample = next((s for s in samples if s.sample_id == candidate_id), None)
    api = load_api_names(cfg.api_names)
    seq = candidate_tokens(rec, api)

    head = [f"candidate {rec.candidate_id}: {rec.kind} {rec.focus!r} at {rec.file}:{rec.line}"]
    head.append(f"program {rec.program or '-'}, functions {', '.join(rec.functions) or '-'}, "
                f"label {','.join(map(str, rec.label)) or '0'}")
    if sample is not None:
        head.append(f"tokens {len(seq.tokens)}, window starts at {sample.window_start}")
    body = []
    for i, st in enumerate(rec.statements):
        s, e = seq.line_spans[i]
        score = "-"
        if entry is not None and i < len(entry.line_scores) and entry.line_scores[i] is not None:
            score = f"{entry.line_scores[i]:.4f}"
        mark = "*" if entry is not None and (i + 1) in entry.detected else " "
        body.append(f"{mark}{i + 1:>4}  {st.location:<24} score={score:<7} tokens={e - s:<3} {st.text}")
    tail = []
    if entry is not None:
        verdict = "vulnerable" if entry.vulnerable else "not vulnerable"
        tail.append(f"overall score {entry.score:.4f} ({verdict} at threshold {entry.threshold})")
        tail.append("located: " + (", ".join(entry.locations) or "none"))
    else:
        tail.append("no detection report for this candidate")
    return "\n".join(head + body + tail) + "\n"
