"""Texts, scanpaths, and their decomposition into typed saccade events.

A text line is a sequence of word extents in a one-dimensional character
coordinate system.  A scanpath is the ordered list of (position, duration)
fixations one reader produced on one line.  Decomposition turns consecutive
fixation pairs into saccade events, each carrying the saccade type, the
signed amplitude, and the amplitude interval the text structure allows for
that type.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

# Tolerated calibration drift beyond the line extremes, in characters.
POSITION_MARGIN = 2.0

INF = math.inf


class CorpusError(ValueError):
    """Base class for malformed corpus data."""


class MalformedScanpathError(CorpusError):
    """Scanpath violates an invariant or cannot be attributed to words."""


class StructuralInfeasibilityError(CorpusError):
    """Saccade type impossible at this position (e.g. next-word at last word)."""


class SaccadeType(IntEnum):
    REFIXATION = 1
    NEXT_WORD = 2
    FORWARD_SKIP = 3
    REGRESSION = 4


POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class TextLine:
    text_id: str
    words: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.words:
            raise CorpusError(f"text {self.text_id!r}: no words")
        words = tuple((float(l), float(r)) for l, r in self.words)
        object.__setattr__(self, "words", words)
        for i, (l, r) in enumerate(words):
            if not l < r:
                raise CorpusError(
                    f"text {self.text_id!r}: word {i} has left {l} >= right {r}"
                )
            if i + 1 < len(words) and not r < words[i + 1][0]:
                raise CorpusError(
                    f"text {self.text_id!r}: words {i} and {i + 1} overlap or touch"
                )

    @property
    def left(self) -> float:
        return self.words[0][0]

    @property
    def right(self) -> float:
        return self.words[-1][1]


@dataclass(frozen=True)
class Fixation:
    position: float
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise CorpusError(f"fixation duration must be > 0, got {self.duration}")


@dataclass(frozen=True)
class Scanpath:
    reader_id: str
    text_id: str
    fixations: tuple[Fixation, ...]

    def __post_init__(self):
        if not self.fixations:
            raise CorpusError(
                f"scanpath ({self.reader_id!r}, {self.text_id!r}): no fixations"
            )

    def validate_against(self, text: TextLine, margin: float = POSITION_MARGIN):
        lo, hi = text.left - margin, text.right + margin
        for i, fx in enumerate(self.fixations):
            if not lo <= fx.position <= hi:
                raise MalformedScanpathError(
                    f"scanpath ({self.reader_id!r}, {self.text_id!r}): fixation {i} "
                    f"at {fx.position} outside [{lo}, {hi}]"
                )


@dataclass(frozen=True)
class SaccadeEvent:
    type: SaccadeType
    amplitude: float
    duration: float
    trunc_left: float
    trunc_right: float
    sign_branch: Optional[str] = None  # POSITIVE/NEGATIVE, refixations only

    def __post_init__(self):
        if not self.trunc_left < self.trunc_right:
            raise CorpusError(
                f"empty truncation interval [{self.trunc_left}, {self.trunc_right}]"
            )
        if not self.trunc_left <= self.amplitude <= self.trunc_right:
            raise CorpusError(
                f"amplitude {self.amplitude} outside "
                f"[{self.trunc_left}, {self.trunc_right}]"
            )


def word_index(text: TextLine, pos: float) -> int:
    """Index of the word containing pos, else the nearest word by center
    distance (ties to the earlier word)."""
    best, best_dist = 0, INF
    for i, (l, r) in enumerate(text.words):
        if l <= pos <= r:
            return i
        d = abs(pos - 0.5 * (l + r))
        if d < best_dist:
            best, best_dist = i, d
    return best


def classify_saccade(prev_pos: float, new_pos: float, text: TextLine) -> SaccadeType:
    """Classify the saccade from prev_pos to new_pos by the word each
    position is attributed to."""
    c = word_index(text, prev_pos)
    k = word_index(text, new_pos)
    if k == c:
        return SaccadeType.REFIXATION
    if k == c + 1:
        return SaccadeType.NEXT_WORD
    if k > c + 1:
        return SaccadeType.FORWARD_SKIP
    return SaccadeType.REGRESSION


def truncation_interval(
    type: SaccadeType,
    sign_branch: Optional[str],
    prev_pos: float,
    text: TextLine,
) -> tuple[float, float]:
    """Admissible amplitude interval for a saccade of the given type taken
    from prev_pos.  Semi-infinite for forward skips and regressions."""
    c = word_index(text, prev_pos)
    wl, wr = text.words[c]
    l_cur, r_cur = wl - prev_pos, wr - prev_pos
    if type is SaccadeType.REFIXATION:
        if sign_branch == POSITIVE:
            return (0.0, r_cur)
        if sign_branch == NEGATIVE:
            return (l_cur, 0.0)
        raise CorpusError("refixation interval requires a sign branch")
    if type is SaccadeType.REGRESSION:
        return (-INF, l_cur)
    if c + 1 >= len(text.words):
        raise StructuralInfeasibilityError(
            f"{type.name} from word {c} of text {text.text_id!r}: no next word"
        )
    nl, nr = text.words[c + 1]
    l_next, r_next = nl - prev_pos, nr - prev_pos
    if type is SaccadeType.NEXT_WORD:
        return (l_next, r_next)
    return (r_next, INF)  # forward skip


def decompose(
    scanpath: Scanpath, text: TextLine
) -> tuple[tuple[float, float], list[SaccadeEvent]]:
    """Split a scanpath into its initial fixation and a list of saccade
    events with truncation intervals.

    Fixations landing in inter-word gaps are attributed to the nearest
    word; when that puts the amplitude just outside the nominal interval
    of its type, the interval is widened minimally to contain it.
    """
    scanpath.validate_against(text)
    fx = scanpath.fixations
    initial = (fx[0].position, fx[0].duration)
    events = []
    for t in range(1, len(fx)):
        prev, new = fx[t - 1].position, fx[t].position
        a = new - prev
        try:
            u = classify_saccade(prev, new, text)
            branch = None
            if u is SaccadeType.REFIXATION:
                branch = POSITIVE if a > 0 else NEGATIVE
            l, r = truncation_interval(u, branch, prev, text)
        except CorpusError as e:
            raise MalformedScanpathError(
                f"scanpath ({scanpath.reader_id!r}, {scanpath.text_id!r}), "
                f"fixation {t}: {e}"
            ) from e
        l, r = min(l, a), max(r, a)
        if l >= r:
            # Only reachable for a refixation with amplitude exactly 0 and
            # the fixation left of the word itself (gap/margin attribution):
            # the negative-branch interval degenerates to [0, 0].  The
            # positive branch is non-degenerate there, so use it.
            branch = POSITIVE
            l, r = truncation_interval(u, branch, prev, text)
            l, r = min(l, a), max(r, a)
        events.append(
            SaccadeEvent(
                type=u,
                amplitude=a,
                duration=fx[t].duration,
                trunc_left=l,
                trunc_right=r,
                sign_branch=branch,
            )
        )
    return initial, events


# ---------------------------------------------------------------------------
# JSONL corpus files.
# One object per line:
#   {"kind": "text", "text_id": str, "words": [[left, right], ...]}
#   {"kind": "scanpath", "reader_id": str, "text_id": str,
#    "fixations": [[pos, dur], ...]}


def load_corpus(path) -> tuple[list[TextLine], list[Scanpath]]:
    texts: list[TextLine] = []
    scanpaths: list[Scanpath] = []
    text_ids: dict[str, TextLine] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {e}") from e
            try:
                kind = rec.get("kind")
                if kind == "text":
                    text = TextLine(
                        text_id=rec["text_id"],
                        words=tuple((w[0], w[1]) for w in rec["words"]),
                    )
                    texts.append(text)
                    text_ids[text.text_id] = text
                elif kind == "scanpath":
                    sp = Scanpath(
                        reader_id=rec["reader_id"],
                        text_id=rec["text_id"],
                        fixations=tuple(
                            Fixation(position=f[0], duration=f[1])
                            for f in rec["fixations"]
                        ),
                    )
                    if sp.text_id not in text_ids:
                        raise CorpusError(
                            f"scanpath references unknown text_id {sp.text_id!r}"
                        )
                    sp.validate_against(text_ids[sp.text_id])
                    scanpaths.append(sp)
                else:
                    raise CorpusError(f"unknown record kind {kind!r}")
            except (KeyError, IndexError, TypeError) as e:
                raise CorpusError(f"{path}:{lineno}: malformed record: {e}") from e
            except CorpusError as e:
                raise CorpusError(f"{path}:{lineno}: {e}") from e
    return texts, scanpaths


def save_corpus(path, texts: list[TextLine], scanpaths: list[Scanpath]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in texts:
            fh.write(
                json.dumps(
                    {"kind": "text", "text_id": t.text_id,
                     "words": [[l, r] for l, r in t.words]},
                    sort_keys=True,
                )
                + "\n"
            )
        for s in scanpaths:
            fh.write(
                json.dumps(
                    {"kind": "scanpath", "reader_id": s.reader_id,
                     "text_id": s.text_id,
                     "fixations": [[f.position, f.duration] for f in s.fixations]},
                    sort_keys=True,
                )
                + "\n"
            )
