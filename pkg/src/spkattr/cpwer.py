"""Concatenated minimum-permutation word error rate.

Reference and hypothesis speaker streams are padded with empty streams to
equal count, per-pair Levenshtein distances fill a cost matrix, and the
stream assignment minimizing total edits divides by the reference word
count. Small cases search all permutations (reporting the lexicographically
smallest optimum); larger ones use a shortest-augmenting-path assignment
solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path

import numpy as np

from .errors import DataError

EXHAUSTIVE_LIMIT = 8


@dataclass
class EditCounts:
    substitutions: int
    insertions: int
    deletions: int

    @property
    def total(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def word_edit_distance(ref, hyp) -> EditCounts:
    """Minimal unit-cost alignment via dynamic programming.

    When several minimal alignments exist, backtracking prefers
    match/substitution, then deletion, then insertion, so the (S, I, D)
    split is deterministic; the total is always the edit distance.
    """
    ref = list(ref)
    hyp = list(hyp)
    m, n = len(ref), len(hyp)
    dp = np.zeros((m + 1, n + 1), dtype=np.int64)
    dp[:, 0] = np.arange(m + 1)
    dp[0, :] = np.arange(n + 1)
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            same = ref[i - 1] == hyp[j - 1]
            dp[i, j] = min(
                dp[i - 1, j - 1] + (0 if same else 1),
                dp[i - 1, j] + 1,
                dp[i, j - 1] + 1,
            )
    subs = ins = dels = 0
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1):
            if ref[i - 1] != hyp[j - 1]:
                subs += 1
            i -= 1
            j -= 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(subs, ins, dels)


def min_cost_assignment(cost: np.ndarray) -> list[int]:
    """Column index assigned to each row of a square cost matrix, minimizing
    the total (shortest augmenting path, O(n^3))."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise DataError("assignment expects a square cost matrix")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[j] = row assigned to column j (1-based)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = np.inf
            j1 = -1
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    out = [0] * n
    for j in range(1, n + 1):
        out[match[j] - 1] = j - 1
    return out


def _exhaustive_assignment(cost: np.ndarray) -> list[int]:
    """Lexicographically smallest permutation among those of minimal total."""
    n = cost.shape[0]
    best_perm = None
    best_total = np.inf
    for perm in permutations(range(n)):
        total = float(sum(cost[i, perm[i]] for i in range(n)))
        if total < best_total:
            best_total = total
            best_perm = perm
    return list(best_perm)


@dataclass
class CpwerReport:
    cpwer: float
    total_reference_words: int
    substitutions: int
    insertions: int
    deletions: int
    assignment: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "cpwer": self.cpwer,
                "total_reference_words": self.total_reference_words,
                "substitutions": self.substitutions,
                "insertions": self.insertions,
                "deletions": self.deletions,
                "assignment": self.assignment,
            },
            sort_keys=True,
        )


def cpwer(
    ref: dict[str, list], hyp: dict[str, list], force_assignment_solver: bool = False
) -> CpwerReport:
    """Metric over speaker-keyed symbol streams.

    The smaller side is padded with empty streams; pairing a reference with
    an empty hypothesis counts its words as deletions, and an unmatched
    nonempty hypothesis contributes pure insertions.
    """
    if not ref or all(len(v) == 0 for v in ref.values()):
        raise DataError("reference stream set is empty")
    ref_keys = sorted(ref)
    hyp_keys = sorted(hyp)
    total_ref = sum(len(ref[k]) for k in ref_keys)
    size = max(len(ref_keys), len(hyp_keys))
    ref_streams = [list(ref[k]) for k in ref_keys] + [[] for _ in range(size - len(ref_keys))]
    hyp_streams = [list(hyp[k]) for k in hyp_keys] + [[] for _ in range(size - len(hyp_keys))]

    counts = [[word_edit_distance(r, h) for h in hyp_streams] for r in ref_streams]
    cost = np.array([[c.total for c in row] for row in counts], dtype=np.float64)
    if size <= EXHAUSTIVE_LIMIT and not force_assignment_solver:
        perm = _exhaustive_assignment(cost)
    else:
        perm = min_cost_assignment(cost)

    subs = ins = dels = 0
    pairs = []
    for i, j in enumerate(perm):
        c = counts[i][j]
        subs += c.substitutions
        ins += c.insertions
        dels += c.deletions
        pairs.append(
            {
                "reference": ref_keys[i] if i < len(ref_keys) else None,
                "hypothesis": hyp_keys[j] if j < len(hyp_keys) else None,
                "errors": c.total,
            }
        )
    return CpwerReport(
        cpwer=(subs + ins + dels) / total_ref,
        total_reference_words=total_ref,
        substitutions=subs,
        insertions=ins,
        deletions=dels,
        assignment=pairs,
    )


def load_transcript_streams(path: str | Path) -> dict[str, list]:
    """Read {"speakers": {key: [symbols]}} transcript files."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}") from exc
    if not isinstance(obj, dict) or "speakers" not in obj or not isinstance(obj["speakers"], dict):
        raise DataError(f'{path}: expected an object with a "speakers" mapping')
    return {str(k): list(v) for k, v in obj["speakers"].items()}
