"""Ground truth, diff ingestion, labeling and the candidate corpus file format."""

import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
from urllib.parse import quote, unquote

from .errors import CorpusFormatError, DiffFormatError
from .ir.link import same_file

logger = logging.getLogger(__name__)

CORPUS_HEADER = "# vulnloc-corpus 1"
NO_DEBUG = "no-debug-info"

_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


@dataclass(frozen=True)
class GroundTruth:
    program: str
    lines: frozenset  # of (file-id, line)
    source: str = "direct-annotation"  # or "diff-derived"
    vulnerable: bool = True
    excluded: bool = False

    def __post_init__(self):
        for _, ln in self.lines:
            if ln < 1:
                raise ValueError(f"line numbers start at 1, got {ln}")


@dataclass(frozen=True)
class CorpusStatement:
    file: Optional[str]
    line: Optional[int]
    text: str

    @property
    def location(self):
        if self.file is None or self.line is None:
            return NO_DEBUG
        return f"{self.file}:{self.line}"


@dataclass(frozen=True)
class CorpusRecord:
    """One candidate as stored on disk; `label` is empty for label 0."""
    candidate_id: str
    kind: str
    file: str
    line: int
    statements: Tuple[CorpusStatement, ...]
    column: int = 1
    focus: str = ""
    program: str = ""
    anchor_rows: Tuple[int, ...] = ()
    functions: Tuple[str, ...] = ()
    label: Tuple[int, ...] = ()
    labeled: bool = False

    def __post_init__(self):
        for x in self.label:
            if not 1 <= x <= len(self.statements):
                raise ValueError(f"label index {x} outside 1..{len(self.statements)}")

    @property
    def is_vulnerable(self):
        return bool(self.label)

    @property
    def texts(self):
        return [s.text for s in self.statements]


LabeledCandidate = CorpusRecord


def record_from_candidate(sc, program="") -> CorpusRecord:
    """Convert a slicing result into its corpus form (unlabeled)."""
    return CorpusRecord(
        candidate_id=sc.candidate_id,
        kind=sc.origin.kind.value,
        file=sc.origin.file,
        line=sc.origin.line,
        column=sc.origin.column,
        focus=sc.origin.focus,
        program=program,
        statements=tuple(CorpusStatement(s.file, s.line, s.text) for s in sc.statements),
        anchor_rows=tuple(sc.anchor_rows),
        functions=tuple(sc.functions),
    )


def _strip_prefix(path):
    path = path.split("\t", 1)[0].strip()
    if path.startswith(("a/", "b/")):
        path = path[2:]
    return path


def parse_diff(diff_text: str):
    """Pre-patch (file, line) pairs of every removed line in a unified diff."""
    out = set()
    old_file = None
    lines = diff_text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    i = 0
    n = len(lines)
    while i < n:
        line = lines[i]
        if line.startswith("--- "):
            old_file = _strip_prefix(line[4:])
            i += 1
            continue
        if line.startswith("+++ "):
            if old_file in (None, "/dev/null"):
                old_file = _strip_prefix(line[4:])
            i += 1
            continue
        if line.startswith("@@"):
            m = _HUNK_RE.match(line)
            if m is None:
                raise DiffFormatError(f"malformed hunk header at line {i + 1}: {line!r}")
            old_line = int(m.group(1))
            old_left = int(m.group(2)) if m.group(2) is not None else 1
            new_left = int(m.group(4)) if m.group(4) is not None else 1
            if old_left == 0:
                # "-N,0" names the line before an insertion
                old_line += 1
            i += 1
            while old_left > 0 or new_left > 0:
                if i >= n:
                    raise DiffFormatError(f"hunk ending at line {i} is shorter than its header says")
                body = lines[i]
                tag = body[:1]
                if tag == "\\":
                    i += 1
                    continue
                if tag in (" ", ""):
                    old_left -= 1
                    new_left -= 1
                    old_line += 1
                elif tag == "-":
                    out.add((old_file, old_line))
                    old_left -= 1
                    old_line += 1
                elif tag == "+":
                    new_left -= 1
                else:
                    raise DiffFormatError(f"unexpected hunk line {i + 1}: {body!r}")
                if old_left < 0 or new_left < 0:
                    raise DiffFormatError(f"hunk body at line {i + 1} overruns its header counts")
                i += 1
            continue
        i += 1
    return out


def read_truth_file(path, program):
    lines = set()
    for raw in Path(path).read_text().splitlines():
        raw = raw.split("#", 1)[0].strip()
        if not raw:
            continue
        file_id, _, ln = raw.rpartition(":")
        if not file_id or not ln.isdigit():
            raise CorpusFormatError(f"bad truth entry {raw!r} in {path}")
        lines.add((file_id, int(ln)))
    return GroundTruth(program, frozenset(lines), "direct-annotation", True, False)


def load_ground_truth(truth_dir, programs: Iterable[str]) -> Dict[str, GroundTruth]:
    """Read `<dir>/<program>/truth.txt` and `*.diff` files for each program."""
    truth_dir = Path(truth_dir)
    out = {}
    for prog in programs:
        pdir = truth_dir / prog
        lines = set()
        sources = []
        has_diff = False
        if (pdir / "truth.txt").is_file():
            lines |= read_truth_file(pdir / "truth.txt", prog).lines
            sources.append("direct-annotation")
        for diff in sorted(pdir.glob("*.diff")) if pdir.is_dir() else ():
            has_diff = True
            lines |= parse_diff(diff.read_text())
            sources.append("diff-derived")
        if not sources:
            out[prog] = GroundTruth(prog, frozenset(), "direct-annotation", vulnerable=False)
            continue
        excluded = has_diff and not lines
        if excluded:
            logger.warning("program %s: diff only adds lines; excluded from labeling", prog)
        out[prog] = GroundTruth(prog, frozenset(lines), sources[0], vulnerable=True, excluded=excluded)
    return out


def label_candidate(record: CorpusRecord, truth: Optional[GroundTruth], mapping: str = "all") -> CorpusRecord:
    """Attach 1-based indices of statements that come from a vulnerable line."""
    if truth is None or not truth.vulnerable or not truth.lines:
        return replace(record, label=(), labeled=True)
    hits = []
    seen_lines = set()
    for idx, st in enumerate(record.statements, start=1):
        if st.file is None or st.line is None:
            continue
        for f, ln in truth.lines:
            if ln == st.line and same_file(f, st.file):
                if mapping == "first" and (f, ln) in seen_lines:
                    break
                seen_lines.add((f, ln))
                hits.append(idx)
                break
    return replace(record, label=tuple(hits), labeled=True)


def label_corpus(records: Sequence[CorpusRecord], truths: Dict[str, GroundTruth], mapping="all", stats=None):
    """Label every record; records of excluded programs are dropped."""
    stats = {} if stats is None else stats
    stats.setdefault("excluded", 0)
    stats.setdefault("vulnerable", 0)
    out = []
    for rec in records:
        truth = truths.get(rec.program)
        if truth is not None and truth.excluded:
            stats["excluded"] += 1
            continue
        lab = label_candidate(rec, truth, mapping)
        if lab.label:
            stats["vulnerable"] += 1
        out.append(lab)
    for prog, truth in truths.items():
        if truth.vulnerable and not truth.excluded:
            if not any(r.label for r in out if r.program == prog):
                logger.warning("program %s: no candidate covers its vulnerable lines", prog)
    return out


def _fmt_ints(xs):
    return ",".join(str(x) for x in xs)


def _header(rec: CorpusRecord):
    parts = [f"### {rec.candidate_id} {rec.kind} {rec.file}:{rec.line}"]
    parts.append(f"col={rec.column}")
    if rec.program:
        parts.append(f"program={quote(rec.program, safe='')}")
    parts.append(f"focus={quote(rec.focus, safe='')}")
    parts.append(f"anchor={_fmt_ints(rec.anchor_rows) or '-'}")
    parts.append(f"functions={','.join(rec.functions) or '-'}")
    if rec.labeled:
        parts.append(f"label={_fmt_ints(rec.label) or '0'}")
    return " ".join(parts)


def format_record(rec: CorpusRecord) -> str:
    out = [_header(rec)]
    for idx, st in enumerate(rec.statements, start=1):
        text = st.text.replace("\n", " ").replace("\t", " ")
        out.append(f"{idx}\t{st.location}\t{text}")
    out.append("")
    return "\n".join(out) + "\n"


def write_corpus(records: Sequence[CorpusRecord], path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CORPUS_HEADER + "\n")
        for rec in records:
            fh.write(format_record(rec))


def _parse_location(loc, rec_id):
    if loc == NO_DEBUG:
        return None, None
    f, _, ln = loc.rpartition(":")
    if not f or not ln.isdigit():
        raise CorpusFormatError(f"bad provenance {loc!r}", rec_id)
    return f, int(ln)


def _parse_ints(text, rec_id, zero_is_empty=False):
    if text in ("-", "") or (zero_is_empty and text == "0"):
        return ()
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise CorpusFormatError(f"bad integer list {text!r}", rec_id) from None


def _parse_header(line):
    m = re.match(r"^### (\S+) (\S+) (\S+):(\d+)((?: \S+=\S*)*)$", line)
    if m is None:
        raise CorpusFormatError(f"bad record header {line!r}")
    rec_id = m.group(1)
    fields = dict(kv.split("=", 1) for kv in m.group(5).split())
    kw = dict(candidate_id=rec_id, kind=m.group(2), file=m.group(3), line=int(m.group(4)))
    try:
        kw["column"] = int(fields.get("col", "1"))
    except ValueError:
        raise CorpusFormatError("bad column", rec_id) from None
    kw["program"] = unquote(fields.get("program", ""))
    kw["focus"] = unquote(fields.get("focus", ""))
    kw["anchor_rows"] = _parse_ints(fields.get("anchor", "-"), rec_id)
    fn = fields.get("functions", "-")
    kw["functions"] = () if fn == "-" else tuple(fn.split(","))
    if "label" in fields:
        kw["label"] = _parse_ints(fields["label"], rec_id, zero_is_empty=True)
        kw["labeled"] = True
    return kw


def read_corpus(path) -> List[CorpusRecord]:
    text = Path(path).read_text(encoding="utf-8")
    return parse_corpus(text)


def parse_corpus(text: str) -> List[CorpusRecord]:
    lines = text.split("\n")
    if not lines or lines[0] != CORPUS_HEADER:
        raise CorpusFormatError("missing corpus version header")
    out = []
    i = 1
    n = len(lines)
    while i < n:
        line = lines[i]
        if line == "":
            i += 1
            continue
        if not line.startswith("### "):
            raise CorpusFormatError(f"expected record header at line {i + 1}")
        kw = _parse_header(line)
        rec_id = kw["candidate_id"]
        i += 1
        stmts = []
        while i < n and lines[i] != "":
            parts = lines[i].split("\t", 2)
            if len(parts) != 3 or not parts[0].isdigit():
                raise CorpusFormatError(f"bad statement line {i + 1}", rec_id)
            if int(parts[0]) != len(stmts) + 1:
                raise CorpusFormatError(f"statement numbering broken at line {i + 1}", rec_id)
            f, ln = _parse_location(parts[1], rec_id)
            stmts.append(CorpusStatement(f, ln, parts[2]))
            i += 1
        if i >= n:
            raise CorpusFormatError("record not terminated by a blank line", rec_id)
        try:
            out.append(CorpusRecord(statements=tuple(stmts), **kw))
        except ValueError as exc:
            raise CorpusFormatError(str(exc), rec_id) from None
    return out
