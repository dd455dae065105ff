"""Regenerate tests/fixtures/project from templates.

Writes C sources, compiles them with `clang -S -emit-llvm -g -O0`, and
writes ground truth. Vulnerable programs point `data` before the start of
a stack buffer; clean ones point at or inside it.
"""

import argparse
import random
import subprocess
from pathlib import Path

SINKS = ("memmove(data, source, {n}*sizeof(char));",
         "memcpy(data, source, {n}*sizeof(char));",
         "strncpy(data, source, {n}-1);")


def render(rng, vulnerable):
    size = rng.choice((50, 100, 200))
    off = rng.choice((4, 8, 16))
    glob = rng.random() < 0.5
    lines = ["#include <stdio.h>", "#include <string.h>"]
    decl = "char *data;" if glob else ""
    lines.append(decl)
    lines += ["void printLine(const char *line)", "{", '    printf("%s\\n", line);', "}"]
    lines += ["int main()", "{", f"    char dataBuffer[{size}];", f"    char source[{size}];"]
    if not glob:
        lines.append("    char *data;")
    if rng.random() < 0.5:
        lines += ["    int i;", f"    for (i = 0; i < {size} - 1; i++)", "    {", "        dataBuffer[i] = 'A';", "    }"]
    else:
        lines.append(f"    memset(dataBuffer, 'A', {size}-1);")
    lines.append(f"    dataBuffer[{size}-1] = '\\0';")
    if vulnerable:
        flaw = len(lines) + 1
        lines.append(f"    data = dataBuffer - {off};")
        n = size
    else:
        flaw = None
        if rng.random() < 0.5:
            lines.append("    data = dataBuffer;")
            n = size
        else:
            lines.append(f"    data = dataBuffer + {off};")
            n = size - off
    lines.append(f"    memset(source, 'C', {n}-1);")
    lines.append(f"    source[{n}-1] = '\\0';")
    lines.append("    " + rng.choice(SINKS).format(n=n))
    lines.append("    printLine(data);")
    lines += ["    return 0;", "}"]
    return "\n".join(lines) + "\n", flaw


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="tests/fixtures/project")
    ap.add_argument("--programs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    root = Path(args.out)
    for i in range(args.programs):
        prog = f"prog{i:02d}"
        vulnerable = i % 2 == 0
        text, flaw = render(rng, vulnerable)
        src = root / "src" / prog
        src.mkdir(parents=True, exist_ok=True)
        (src / "main.c").write_text(text)
        ir = root / "ir" / prog
        ir.mkdir(parents=True, exist_ok=True)
        subprocess.run(["clang", "-S", "-emit-llvm", "-g", "-O0", "-fdebug-compilation-dir=.",
                        "main.c", "-o", str((ir / "main.ll").resolve())], cwd=src, check=True)
        truth = root / "truth" / prog
        if not vulnerable:
            continue
        truth.mkdir(parents=True, exist_ok=True)
        if i == 2:
            # patch-derived truth: one deletion plus one addition
            old = text.split("\n")
            bad = old[flaw - 1]
            good = bad.split("=")[0] + "= dataBuffer;"
            diff = ["--- a/main.c", "+++ b/main.c", f"@@ -{flaw - 1},3 +{flaw - 1},3 @@",
                    " " + old[flaw - 2], "-" + bad, "+" + good, " " + old[flaw]]
            (truth / "fix.diff").write_text("\n".join(diff) + "\n")
        else:
            (truth / "truth.txt").write_text(f"{prog}/main.c:{flaw}\n")
    # a vulnerable program whose patch only adds a check: excluded from labeling
    prog = f"prog{args.programs:02d}"
    text, _ = render(rng, False)
    src = root / "src" / prog
    src.mkdir(parents=True, exist_ok=True)
    (src / "main.c").write_text(text)
    ir = root / "ir" / prog
    ir.mkdir(parents=True, exist_ok=True)
    subprocess.run(["clang", "-S", "-emit-llvm", "-g", "-O0", "-fdebug-compilation-dir=.",
                    "main.c", "-o", str((ir / "main.ll").resolve())], cwd=src, check=True)
    old = text.split("\n")
    at = next(k for k, l in enumerate(old, 1) if "source[" in l and "= '\\0'" in l)
    diff = ["--- a/main.c", "+++ b/main.c", f"@@ -{at},1 +{at},2 @@", " " + old[at - 1],
            "+    if (sizeof(source) == 0) return 1;"]
    truth = root / "truth" / prog
    truth.mkdir(parents=True, exist_ok=True)
    (truth / "guard.diff").write_text("\n".join(diff) + "\n")


if __name__ == "__main__":
    main()
