"""Figure evidence extraction from converted plain-text papers.

Input is the plain text produced by an external PDF converter. The text is
segmented into paragraphs, non-body fragments are stripped, caption headers
are located, and each figure's evidence is assembled as caption plus a
one-paragraph window around every in-text reference.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .errors import DocumentError

logger = logging.getLogger(__name__)

MIN_BODY_TOKENS = 5

# A paragraph equal to one of these (case-insensitive, trailing punctuation
# ignored) ends the body; everything after is dropped.
SECTION_CUTOFFS = ("references", "bibliography", "acknowledgments")

_BLANK_LINE_RE = re.compile(r"\n\s*\n")
_CAPTION_RE = re.compile(
    r"^(?:fig\.|figure)\s*(\d+)\s*(?:\(?\s*([a-z])\s*\)?)?\s*[:.–—-]\s",
    re.IGNORECASE,
)
_FIGURE_ID_RE = re.compile(r"^Figure (\d+)([a-z])?$")
_REF_SCAN_RE = re.compile(
    r"\b(?:fig\.|figure)\s*(\d+)(?:([a-z])|\s*\(\s*([a-z])\s*\))?(?![0-9a-z])",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class DocumentText:
    paper_id: str
    paragraphs: tuple[str, ...]
    provenance: str = ""


@dataclass(frozen=True)
class FigureEvidence:
    """Caption plus expanded local context for one figure."""

    paper_id: str
    figure_id: str
    base_figure_id: str
    caption: str
    context: tuple[str, ...]

    @property
    def assembled_evidence(self) -> str:
        return "\n\n".join([self.caption, *self.context])

    def to_dict(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "figure_id": self.figure_id,
            "base_figure_id": self.base_figure_id,
            "caption": self.caption,
            "context": list(self.context),
        }


def evidence_from_dict(raw: dict) -> FigureEvidence:
    return FigureEvidence(
        paper_id=str(raw["paper_id"]),
        figure_id=str(raw["figure_id"]),
        base_figure_id=str(raw.get("base_figure_id") or base_figure_id(str(raw["figure_id"]))),
        caption=str(raw.get("caption") or ""),
        context=tuple(str(p) for p in raw.get("context") or ()),
    )


def segment_paragraphs(paper_id: str, raw_text: str, provenance: str = "") -> DocumentText:
    """Split on blank-line boundaries, trimming each block."""
    if not raw_text or not raw_text.strip():
        raise DocumentError(f"empty document for {paper_id!r}")
    blocks = [b.strip() for b in _BLANK_LINE_RE.split(raw_text)]
    return DocumentText(
        paper_id=paper_id,
        paragraphs=tuple(b for b in blocks if b),
        provenance=provenance,
    )


def _is_cutoff_header(paragraph: str) -> bool:
    return paragraph.strip().rstrip(":. ").lower() in SECTION_CUTOFFS


def _is_nonbody(paragraph: str) -> bool:
    letters = [c for c in paragraph if c.isalpha()]
    if not letters:
        return True  # bare numbers / page artifacts
    if all(c.isupper() for c in letters):
        return True  # all-caps header
    if len(paragraph.split()) < MIN_BODY_TOKENS:
        return True
    return False


def filter_nonbody(doc: DocumentText) -> DocumentText:
    """Drop non-body fragments and everything after a references header."""
    kept: list[str] = []
    for paragraph in doc.paragraphs:
        if _is_cutoff_header(paragraph):
            break
        if _is_nonbody(paragraph):
            continue
        kept.append(paragraph)
    return DocumentText(paper_id=doc.paper_id, paragraphs=tuple(kept), provenance=doc.provenance)


def canonical_figure_id(number: str, letter: str | None = None) -> str:
    return f"Figure {int(number)}{letter.lower() if letter else ''}"


def base_figure_id(figure_id: str) -> str:
    """Strip a sub-figure letter suffix: 'Figure 3a' -> 'Figure 3'."""
    m = _FIGURE_ID_RE.match(figure_id)
    if not m:
        return figure_id
    return f"Figure {m.group(1)}"


def figure_sort_key(figure_id: str) -> tuple[int, str]:
    """Document-order sort key: numeric part, then sub-figure letter."""
    m = _FIGURE_ID_RE.match(figure_id)
    if not m:
        return (1 << 30, figure_id)
    return (int(m.group(1)), m.group(2) or "")


def _scan_captions(doc: DocumentText) -> list[tuple[int, str, str]]:
    """(position, figure_id, caption) for every caption paragraph; first wins."""
    found: list[tuple[int, str, str]] = []
    seen: set[str] = set()
    for pos, paragraph in enumerate(doc.paragraphs):
        m = _CAPTION_RE.match(paragraph)
        if not m:
            continue
        figure_id = canonical_figure_id(m.group(1), m.group(2))
        if figure_id in seen:
            logger.warning(
                "%s: duplicate caption for %s at paragraph %d; keeping first",
                doc.paper_id, figure_id, pos,
            )
            continue
        seen.add(figure_id)
        found.append((pos, figure_id, paragraph))
    return found


def detect_captions(doc: DocumentText) -> list[tuple[str, str]]:
    """Caption-header paragraphs as (canonical figure_id, full paragraph)."""
    return [(figure_id, caption) for _, figure_id, caption in _scan_captions(doc)]


def _reference_pattern(figure_id: str) -> re.Pattern:
    m = _FIGURE_ID_RE.match(figure_id)
    if not m:
        raise DocumentError(f"not a canonical figure id: {figure_id!r}")
    number, letter = m.group(1), m.group(2)
    if letter:
        body = rf"\b(?:fig\.|figure)\s*{number}\s*\(?\s*{letter}\)?(?![0-9a-z])"
    else:
        # A trailing letter still counts: "Figure 3a" references figure 3.
        body = rf"\b(?:fig\.|figure)\s*{number}(?![0-9])"
    return re.compile(body, re.IGNORECASE)


def extract_evidence(
    doc: DocumentText,
    figure_id: str,
    captions: list[tuple[int, str, str]] | None = None,
) -> FigureEvidence:
    """Caption plus merged one-paragraph windows around each in-text hit.

    Caption paragraphs never count as hits; the figure's own caption is
    also excluded from the context window because it already leads the
    assembled evidence.
    """
    if captions is None:
        captions = _scan_captions(doc)
    caption_by_id = {fid: (pos, text) for pos, fid, text in captions}
    if figure_id not in caption_by_id:
        raise DocumentError(f"{doc.paper_id}: no caption found for {figure_id!r}")
    own_pos, caption = caption_by_id[figure_id]
    caption_positions = {pos for pos, _, _ in captions}

    pattern = _reference_pattern(figure_id)
    hits = [
        pos
        for pos, paragraph in enumerate(doc.paragraphs)
        if pos not in caption_positions and pattern.search(paragraph)
    ]
    window: set[int] = set()
    for hit in hits:
        for pos in (hit - 1, hit, hit + 1):
            if 0 <= pos < len(doc.paragraphs):
                window.add(pos)
    window.discard(own_pos)
    context = tuple(doc.paragraphs[pos] for pos in sorted(window))
    return FigureEvidence(
        paper_id=doc.paper_id,
        figure_id=figure_id,
        base_figure_id=base_figure_id(figure_id),
        caption=caption,
        context=context,
    )


def extract_all_evidence(doc: DocumentText) -> list[FigureEvidence]:
    """Evidence for every captioned figure, in document order.

    Figures referenced in the text but never captioned are skipped and
    logged; they carry no caption to anchor the evidence on.
    """
    captions = _scan_captions(doc)
    captioned = {figure_id for _, figure_id, _ in captions}
    caption_positions = {pos for pos, _, _ in captions}
    referenced: set[str] = set()
    for pos, paragraph in enumerate(doc.paragraphs):
        if pos in caption_positions:
            continue
        for m in _REF_SCAN_RE.finditer(paragraph):
            referenced.add(canonical_figure_id(m.group(1), m.group(2) or m.group(3)))
    for figure_id in sorted(referenced - captioned, key=figure_sort_key):
        if base_figure_id(figure_id) in captioned:
            continue
        logger.info("%s: %s referenced but never captioned; skipped", doc.paper_id, figure_id)
    return [extract_evidence(doc, figure_id, captions) for _, figure_id, _ in captions]
