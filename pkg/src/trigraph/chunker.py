"""Paragraph splitting and topic-coherent chunk assembly."""

from __future__ import annotations

import json
import logging
import re
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .providers import ChatProvider, TokenCounter

log = logging.getLogger(__name__)

_NEWLINES = re.compile(r"[\r\n]+")
_SENTENCE_END = re.compile(r"[.!?]+[\"')\]]*\s+")
_VERDICT = re.compile(r"^[\s\"'`*]*(true|false)\b", re.IGNORECASE)


class ChunkingError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    paragraphs: tuple[str, ...]

    @classmethod
    def from_text(
        cls,
        doc_id: str,
        text: str,
        counter: TokenCounter | None = None,
        budget: int | None = None,
    ) -> Document:
        """Split ``text`` into paragraphs, breaking any that exceed ``budget``."""
        paragraphs = split_paragraphs(text)
        if counter is not None:
            limit = budget or counter.budget
            expanded: list[str] = []
            for p in paragraphs:
                if counter.count(p) > limit:
                    pieces = [s.strip() for s in force_split_oversized(p, counter, limit)]
                    expanded.extend(s for s in pieces if s)
                else:
                    expanded.append(p)
            paragraphs = expanded
        return cls(doc_id, text, tuple(paragraphs))


@dataclass(frozen=True)
class Chunk:
    id: str
    document_id: str
    paragraphs: tuple[int, ...]
    token_count: int
    text: str

    def manifest(self) -> dict:
        return {
            "document_id": self.document_id,
            "chunk_id": self.id,
            "paragraph_span": [self.paragraphs[0], self.paragraphs[-1]],
            "token_count": self.token_count,
        }


class WindowState:
    """FIFO of the last ``size`` paragraphs seen."""

    def __init__(self, size: int = 5) -> None:
        if size <= 0:
            raise ValueError("window size must be positive")
        self.size = size
        self._items: deque[str] = deque(maxlen=size)

    def push(self, paragraph: str) -> None:
        self._items.append(paragraph)

    def items(self) -> list[str]:
        return list(self._items)

    def __len__(self) -> int:
        return len(self._items)


def split_paragraphs(text: str) -> list[str]:
    return [p.strip() for p in _NEWLINES.split(text) if p.strip()]


def _longest_prefix(text: str, counter: TokenCounter, budget: int) -> int:
    lo, hi = 1, len(text)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if counter.count(text[:mid]) <= budget:
            lo = mid
        else:
            hi = mid - 1
    return lo


def force_split_oversized(paragraph: str, counter: TokenCounter, budget: int | None = None) -> list[str]:
    """Cut a paragraph into pieces within ``budget`` tokens.

    Sentence boundaries are preferred; a sentence that is itself too long is
    cut at the longest prefix that fits.  ``"".join(pieces) == paragraph``.
    """
    budget = budget or counter.budget
    if counter.count(paragraph) <= budget:
        return [paragraph]
    cuts = [m.end() for m in _SENTENCE_END.finditer(paragraph)]
    bounds = [0, *[c for c in cuts if c < len(paragraph)], len(paragraph)]
    sentences = [paragraph[a:b] for a, b in zip(bounds, bounds[1:])]

    pieces: list[str] = []
    current = ""
    for sentence in sentences:
        if counter.count(current + sentence) <= budget:
            current += sentence
            continue
        if current:
            pieces.append(current)
            current = ""
        while counter.count(sentence) > budget:
            n = _longest_prefix(sentence, counter, budget)
            pieces.append(sentence[:n])
            sentence = sentence[n:]
        current = sentence
    if current:
        pieces.append(current)
    return pieces


def parse_verdict(text: str) -> bool:
    m = _VERDICT.match(text)
    if not m:
        raise ValueError(f"unparseable verdict {text[:80]!r}")
    return m.group(1).lower() == "true"


def _tail(text: str, cut: int) -> str:
    return text[cut:]


def _fit_judge_slots(judge: ChatProvider, slots: dict[str, str], where: str) -> dict[str, str]:
    """Trim slots from the front until the rendered ``sem`` prompt fits."""
    if judge.fits("sem", slots):
        return slots
    for name in ("chunk", "window", "paragraph"):
        text = slots[name]
        trial = dict(slots, **{name: ""})
        if not judge.fits("sem", trial):
            slots = trial
            log.info("%s: dropped slot %r entirely to fit judge budget", where, name)
            continue
        lo, hi = 0, len(text)
        while lo < hi:
            mid = (lo + hi) // 2
            if judge.fits("sem", dict(slots, **{name: _tail(text, mid)})):
                hi = mid
            else:
                lo = mid + 1
        log.info("%s: truncated %d leading chars of %r to fit judge budget", where, lo, name)
        return dict(slots, **{name: _tail(text, lo)})
    raise ChunkingError(f"{where}: judge prompt template alone exceeds the token budget")


def chunk_document(
    doc: Document,
    judge: ChatProvider,
    counter: TokenCounter,
    window: int = 5,
    budget: int | None = None,
    id_prefix: str = "",
) -> list[Chunk]:
    """Left fold over paragraphs.

    ``P_j`` joins the open chunk when the extended chunk stays within
    ``budget`` and the judge answers True for the window ending at ``P_j``;
    otherwise it opens a new chunk.
    """
    budget = budget or counter.budget
    paras = doc.paragraphs
    if not paras:
        return []
    sizes = [counter.count(p) for p in paras]
    for i, n in enumerate(sizes):
        if n > budget:
            raise ChunkingError(f"{doc.id}: paragraph {i} has {n} tokens, over budget {budget}")

    state = WindowState(window)
    state.push(paras[0])
    groups: list[list[int]] = [[0]]
    tokens = sizes[0]
    for j in range(1, len(paras)):
        joined = False
        if tokens + sizes[j] <= budget:
            previous = state.items()[-(window - 1) :] if window > 1 else []
            slots = {
                "chunk": "\n\n".join(paras[i] for i in groups[-1]),
                "window": "\n\n".join(previous),
                "paragraph": paras[j],
            }
            where = f"{doc.id} paragraph {j}"
            reply = judge.chat("sem", _fit_judge_slots(judge, slots, where))
            try:
                joined = parse_verdict(reply)
            except ValueError as exc:
                raise ChunkingError(f"{where}: {exc}") from None
        if joined:
            groups[-1].append(j)
            tokens += sizes[j]
        else:
            groups.append([j])
            tokens = sizes[j]
        state.push(paras[j])

    return [
        Chunk(
            id=f"{id_prefix}{doc.id}#{n:04d}",
            document_id=doc.id,
            paragraphs=tuple(g),
            token_count=sum(sizes[i] for i in g),
            text="\n\n".join(paras[i] for i in g),
        )
        for n, g in enumerate(groups)
    ]


def load_corpus(path: str | Path, counter: TokenCounter | None = None, budget: int | None = None) -> list[Document]:
    """Read documents from a ``.txt`` file, a ``.jsonl`` file of
    ``{"id", "text"}`` records, or a directory of ``.txt`` files."""
    path = Path(path)
    raw: list[tuple[str, str]] = []
    if path.is_dir():
        for f in sorted(path.glob("*.txt")):
            raw.append((f.stem, f.read_text(encoding="utf-8")))
    elif path.suffix == ".jsonl":
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            raw.append((str(rec.get("id", f"{path.stem}-{lineno}")), rec["text"]))
    else:
        raw.append((path.stem, path.read_text(encoding="utf-8")))
    return [Document.from_text(doc_id, text, counter, budget) for doc_id, text in raw]


def write_manifest(chunks: Iterable[Chunk], path: str | Path) -> None:
    lines = [json.dumps(c.manifest(), sort_keys=True) for c in chunks]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
