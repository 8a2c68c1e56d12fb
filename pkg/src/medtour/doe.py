"""Two-level fractional factorial design, alias checks and run orchestration."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from medtour.config import FACTORS, LEVELS, ScenarioConfig, decode_run
from medtour.metrics import csv_header, csv_row

BASE_FACTORS = FACTORS[:8]
# added columns I..P as products of base columns; chosen by exhaustive
# search for maximum resolution and minimum aberration among resolution-V sets
GENERATORS: dict[str, str] = {
    "I": "ABCDEH",
    "J": "BDEGH",
    "K": "ADEFGH",
    "L": "ABCDFG",
    "M": "ABCFH",
    "N": "ACDGH",
    "O": "ABEFG",
    "P": "BCEFGH",
}


class DesignError(ValueError):
    """Raised when a design has main effects aliased with each other."""


@dataclass
class DesignMatrix:
    matrix: np.ndarray
    factors: tuple[str, ...] = FACTORS
    generators: dict[str, str] = field(default_factory=dict)

    @property
    def runs(self) -> int:
        return self.matrix.shape[0]

    def row(self, i: int) -> dict[str, int]:
        return {f: int(v) for f, v in zip(self.factors, self.matrix[i])}

    def column(self, name: str) -> np.ndarray:
        return self.matrix[:, self.factors.index(name)]


def generate_design(generators: Mapping[str, str] = GENERATORS) -> DesignMatrix:
    """Unrandomized 2^(16-8) design: A..H in standard order, A fastest."""
    n = 2 ** len(BASE_FACTORS)
    runs = np.arange(n)
    cols = {f: np.where((runs >> j) & 1, 1, -1).astype(np.int8) for j, f in enumerate(BASE_FACTORS)}
    for added, word in generators.items():
        col = np.ones(n, dtype=np.int8)
        for letter in word:
            col = col * cols[letter]
        cols[added] = col
    factors = tuple(BASE_FACTORS) + tuple(generators)
    return DesignMatrix(np.column_stack([cols[f] for f in factors]), factors, dict(generators))


def defining_words(matrix: np.ndarray) -> list[int]:
    """Bitmasks of every column subset whose product is constant.

    Works from the matrix alone: each column becomes a bit-string over the
    runs, and subsets are walked in Gray-code order so that each step is a
    single XOR.
    """
    m = np.asarray(matrix)
    n, k = m.shape
    if k > 24:
        raise ValueError("too many columns for exhaustive enumeration")
    bits = [int("".join("1" if v < 0 else "0" for v in m[:, j]), 2) if n else 0 for j in range(k)]
    all_ones = (1 << n) - 1
    words = []
    acc = 0
    prev_gray = 0
    for i in range(1, 1 << k):
        gray = i ^ (i >> 1)
        changed = (gray ^ prev_gray).bit_length() - 1
        acc ^= bits[changed]
        prev_gray = gray
        if acc == 0 or acc == all_ones:
            words.append(gray)
    return sorted(words, key=lambda w: (bin(w).count("1"), w))


def word_label(mask: int, factors: Sequence[str] = FACTORS) -> str:
    return "".join(f for j, f in enumerate(factors) if mask >> j & 1)


def expand_generators(generators: Mapping[str, str], factors: Sequence[str] = FACTORS) -> list[int]:
    """All words of the defining relation spanned by the generator words."""
    basis = []
    for added, word in generators.items():
        mask = 1 << factors.index(added)
        for letter in word:
            mask ^= 1 << factors.index(letter)
        basis.append(mask)
    words = {0}
    for b in basis:
        words |= {w ^ b for w in words}
    words.discard(0)
    return sorted(words, key=lambda w: (bin(w).count("1"), w))


@dataclass
class DesignReport:
    balanced: bool
    orthogonal: bool
    word_length_pattern: tuple[int, ...]
    resolution: float
    defining_relation: list[str]
    unbalanced_columns: list[str]
    non_orthogonal_pairs: list[tuple[str, str]]

    @property
    def ok(self) -> bool:
        return self.balanced and self.orthogonal and self.resolution >= 3

    def lines(self) -> list[str]:
        res = "inf" if math.isinf(self.resolution) else str(int(self.resolution))
        wlp = " ".join(str(c) for c in self.word_length_pattern)
        return [
            f"balanced: {self.balanced}",
            f"orthogonal: {self.orthogonal}",
            f"resolution: {res}",
            f"word length pattern (length 1..k): {wlp}",
            f"defining words: {len(self.defining_relation)}",
        ]


def verify_design(design: DesignMatrix | np.ndarray, factors: Sequence[str] | None = None) -> DesignReport:
    """Balance, pairwise orthogonality and alias structure of a two-level design.

    Raises :class:`DesignError` when a main effect is aliased with another
    main effect (a defining word of length 1 or 2).
    """
    if isinstance(design, DesignMatrix):
        m, factors = design.matrix, design.factors
    else:
        m = np.asarray(design)
        factors = tuple(factors) if factors is not None else tuple(FACTORS[: m.shape[1]])
    m = m.astype(np.int64)
    k = m.shape[1]
    sums = m.sum(axis=0)
    unbalanced = [factors[j] for j in range(k) if sums[j] != 0 or not np.isin(m[:, j], (-1, 1)).all()]
    gram = m.T @ m
    bad_pairs = [(factors[i], factors[j]) for i in range(k) for j in range(i + 1, k) if gram[i, j] != 0]
    words = defining_words(m)
    pattern = [0] * k
    for w in words:
        pattern[bin(w).count("1") - 1] += 1
    resolution = min((bin(w).count("1") for w in words), default=math.inf)
    report = DesignReport(
        balanced=not unbalanced,
        orthogonal=not bad_pairs,
        word_length_pattern=tuple(pattern),
        resolution=resolution,
        defining_relation=[word_label(w, factors) for w in words],
        unbalanced_columns=unbalanced,
        non_orthogonal_pairs=bad_pairs,
    )
    short = [word_label(w, factors) for w in words if bin(w).count("1") <= 2]
    if short:
        raise DesignError(f"main effects aliased through words {short}")
    return report


def design_csv(design: DesignMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(design.factors)
    for row in design.matrix:
        w.writerow(int(v) for v in row)
    return buf.getvalue()


def generators_text(design: DesignMatrix) -> str:
    lines = ["# 2^(16-8) regular fractional factorial, unrandomized, A varies fastest"]
    lines += [f"{added} = {word}" for added, word in design.generators.items()]
    report = verify_design(design)
    lines += [f"# {line}" for line in report.lines()]
    return "\n".join(lines) + "\n"


def write_design(design: DesignMatrix, directory: str) -> tuple[str, str]:
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, "design.csv")
    side = os.path.join(directory, "design_generators.txt")
    with open(path, "w", newline="") as fh:
        fh.write(design_csv(design))
    with open(side, "w") as fh:
        fh.write(generators_text(design))
    return path, side


def read_design(path: str) -> DesignMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    factors = tuple(rows[0])
    if factors != FACTORS:
        raise DesignError(f"design header must be A..P, got {','.join(factors)}")
    return DesignMatrix(np.array([[int(v) for v in r] for r in rows[1:]], dtype=np.int8), factors)


# ---------------------------------------------------------------------------
# orchestration


class ResumeError(RuntimeError):
    """Raised when an existing results file cannot be resumed safely."""


def derive_seed(master_seed: int, run_id: int) -> int:
    """Per-run master seed; replications are addressed inside the run."""
    state = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(run_id),)).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def _run_one(task):
    from medtour.model import run_replication

    run_id, rep, cfg = task
    rv, _ = run_replication(cfg, rep)
    return run_id, rep, cfg.master_seed, rv


def _read_existing(path: str, header: list[str]) -> list[list[str]]:
    with open(path, newline="") as fh:
        text = fh.read()
    if not text:
        return []
    if not text.endswith("\n"):
        # drop a row cut short by an interruption
        text = text[: text.rfind("\n") + 1]
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return []
    if rows[0] != header:
        raise ResumeError(f"{path}: header does not match the results layout; refusing to resume")
    return [r for r in rows[1:] if len(r) == len(header)]


def orchestrate(
    design: DesignMatrix,
    out_path: str,
    replications: int = 1,
    master_seed: int = 0,
    base: ScenarioConfig | None = None,
    levels: Mapping[str, tuple[float, float]] = LEVELS,
    resume: bool = False,
    runs: Iterable[int] | None = None,
    workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> int:
    """Run every (design row, replication) pair and write results to CSV.

    Rows are written in (run, replication) order.  With ``resume`` set,
    pairs already present in ``out_path`` or its ``.partial`` sibling left
    by an interrupted run are skipped, and the file is
    rewritten in canonical order at the end so an interrupted-and-resumed
    run produces the same bytes as an uninterrupted one.  Returns the
    number of replications actually simulated.
    """
    base = base or ScenarioConfig()
    header = csv_header()
    done: dict[tuple[int, int], list[str]] = {}
    partial = out_path + ".partial"
    existing = [p for p in (out_path, partial) if os.path.exists(p)]
    if existing and not resume:
        raise ResumeError(f"{existing[0]} exists; pass resume to continue it")
    for path in existing:
        for r in _read_existing(path, header):
            done[(int(r[0]), int(r[1]))] = r
    run_ids = list(range(design.runs)) if runs is None else list(runs)
    tasks = []
    for run_id in run_ids:
        cfg = decode_run(design.row(run_id), base, levels)
        cfg = cfg.with_seed(derive_seed(master_seed, run_id))
        for rep in range(replications):
            if (run_id, rep) not in done:
                tasks.append((run_id, rep, cfg))
    d = os.path.dirname(out_path)
    if d:
        os.makedirs(d, exist_ok=True)
    rows = dict(done)
    with open(partial, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in sorted(done):
            w.writerow(done[r])
        fh.flush()
        for i, (run_id, rep, seed, rv) in enumerate(_execute(tasks, workers)):
            coded = {f: v for f, v in design.row(run_id).items()}
            row = csv_row(run_id, rep, seed, coded, rv)
            rows[(run_id, rep)] = row
            w.writerow(row)
            fh.flush()
            if progress:
                progress(i + 1, len(tasks))
    with open(partial, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for key in sorted(rows):
            w.writerow(rows[key])
    os.replace(partial, out_path)
    return len(tasks)


def _execute(tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        for t in tasks:
            yield _run_one(t)
        return
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map keeps submission order, so the appended rows stay deterministic
        yield from pool.map(_run_one, tasks)
