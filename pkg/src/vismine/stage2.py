"""Figure-level relevance detection with the top-3 representative policy.

For each target paper we retrieve similar coded papers, sample labeled
figure exemplars from them, classify every target figure, and keep at most
three representatives aligned to overview / performance / mechanism roles.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

from . import bm25
from .errors import BackendUnavailable, StageError
from .evidence import FigureEvidence, figure_sort_key
from .gateway import Gateway, PromptRequest, clip_confidence, parse_json_payload, parse_verdict
from .library import CodedPaper
from .prompts import FIGURE_SCHEMA, FIGURE_SYSTEM
from .stage1 import paper_query_tokens

logger = logging.getLogger(__name__)

DEFAULT_K = 5
DEFAULT_MAX_FIGS = 3
ROLES = ("overview", "performance", "mechanism")

EXEMPLARS_PER_CLASS_PER_PAPER = 2
EXEMPLAR_CAP = 8

EvidenceLookup = Callable[[str, str], FigureEvidence | None]


@dataclass(frozen=True)
class RelevanceVerdict:
    paper_id: str
    figure_id: str
    relevant: bool
    confidence: float
    evidence: str
    role: str | None = None
    selected: bool = False

    def to_dict(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "figure_id": self.figure_id,
            "relevant": self.relevant,
            "confidence": self.confidence,
            "evidence": self.evidence,
            "role": self.role,
            "selected": self.selected,
        }


def verdict_from_dict(raw: Mapping) -> RelevanceVerdict:
    return RelevanceVerdict(
        paper_id=str(raw["paper_id"]),
        figure_id=str(raw["figure_id"]),
        relevant=bool(raw.get("relevant")),
        confidence=clip_confidence(raw.get("confidence")),
        evidence=str(raw.get("evidence") or ""),
        role=raw.get("role"),
        selected=bool(raw.get("selected")),
    )


@dataclass(frozen=True)
class FigureExemplarSet:
    positives: tuple[tuple[FigureEvidence, bool], ...] = ()
    negatives: tuple[tuple[FigureEvidence, bool], ...] = ()

    @property
    def exemplar_ids(self) -> tuple[str, ...]:
        return tuple(
            f"{ev.paper_id}::{ev.figure_id}"
            for ev, _ in (*self.positives, *self.negatives)
        )


def library_index(library: Sequence[CodedPaper]) -> bm25.Bm25Index:
    docs = [
        bm25.TokenizedDoc(
            doc_id=p.paper_id, tokens=tuple(paper_query_tokens(p.record))
        )
        for p in library
    ]
    return bm25.build_index(docs)


def retrieve_neighbor_papers(
    target_record,
    library: Sequence[CodedPaper],
    k: int = DEFAULT_K,
    index: bm25.Bm25Index | None = None,
) -> list[str]:
    """Up to k similar coded papers by title+abstract BM25; target excluded."""
    if not library:
        raise StageError("empty coded-paper library")
    if index is None:
        index = library_index(library)
    return bm25.top_k(
        index, paper_query_tokens(target_record), k, exclude={target_record.paper_id}
    )


def sample_exemplars(
    neighbor_ids: Sequence[str],
    library: Sequence[CodedPaper],
    evidence_lookup: EvidenceLookup,
    per_class_per_paper: int = EXEMPLARS_PER_CLASS_PER_PAPER,
    cap: int = EXEMPLAR_CAP,
) -> FigureExemplarSet:
    """Positive and negative figure exemplars drawn from neighbor papers.

    Figures are taken in neighbor rank order, then figure order, up to
    per_class_per_paper each way and cap in total. Figures without an
    explicit relevance flag or without extracted evidence are skipped.
    """
    by_id = {p.paper_id: p for p in library}
    positives: list[tuple[FigureEvidence, bool]] = []
    negatives: list[tuple[FigureEvidence, bool]] = []
    for neighbor_id in neighbor_ids:
        paper = by_id.get(neighbor_id)
        if paper is None:
            continue
        taken = {True: 0, False: 0}
        for figure in sorted(paper.labeled_figures(), key=lambda f: figure_sort_key(f.figure_id)):
            if len(positives) + len(negatives) >= cap:
                break
            if taken[figure.relevant] >= per_class_per_paper:
                continue
            evidence = evidence_lookup(neighbor_id, figure.figure_id)
            if evidence is None:
                logger.warning(
                    "no evidence for library figure %s::%s; skipped as exemplar",
                    neighbor_id, figure.figure_id,
                )
                continue
            taken[figure.relevant] += 1
            (positives if figure.relevant else negatives).append((evidence, figure.relevant))
    return FigureExemplarSet(positives=tuple(positives), negatives=tuple(negatives))


def figure_request(evidence: FigureEvidence, exemplars: FigureExemplarSet) -> PromptRequest:
    pairs = tuple(
        (ev.assembled_evidence, json.dumps({"relevant": label}))
        for ev, label in (*exemplars.positives, *exemplars.negatives)
    )
    return PromptRequest(
        system=FIGURE_SYSTEM,
        exemplars=pairs,
        target=evidence.assembled_evidence,
        schema_id=FIGURE_SCHEMA,
    )


def classify_figure(
    evidence: FigureEvidence,
    exemplars: FigureExemplarSet,
    gateway: Gateway,
    backend_id: str,
) -> RelevanceVerdict:
    """One verdict per figure; malformed responses fall back to negative."""
    if not evidence.assembled_evidence.strip():
        raise StageError(f"empty evidence for {evidence.paper_id}::{evidence.figure_id}")
    request = figure_request(evidence, exemplars)
    raw = gateway.complete(backend_id, request)
    verdict = parse_verdict(raw, backend_id)
    payload = parse_json_payload(raw) or {}
    role = payload.get("role")
    if role not in ROLES:
        role = None
    return RelevanceVerdict(
        paper_id=evidence.paper_id,
        figure_id=evidence.figure_id,
        relevant=verdict.decision,
        confidence=verdict.confidence,
        evidence=verdict.evidence,
        role=role,
    )


def select_representatives(
    verdicts: Sequence[RelevanceVerdict],
    max_figs: int = DEFAULT_MAX_FIGS,
) -> list[RelevanceVerdict]:
    """At most max_figs relevant figures: one per role, then by confidence.

    Ties in confidence break by figure order. Output is in figure order.
    Papers with no relevant figure yield an empty selection.
    """
    papers = {v.paper_id for v in verdicts}
    if len(papers) > 1:
        raise StageError(f"verdicts span multiple papers: {sorted(papers)}")
    relevant = [v for v in verdicts if v.relevant]
    chosen: list[RelevanceVerdict] = []
    for role in ROLES:
        if len(chosen) >= max_figs:
            break
        candidates = [v for v in relevant if v.role == role and v not in chosen]
        if candidates:
            candidates.sort(key=lambda v: (-v.confidence, figure_sort_key(v.figure_id)))
            chosen.append(candidates[0])
    remaining = [v for v in relevant if v not in chosen]
    remaining.sort(key=lambda v: (-v.confidence, figure_sort_key(v.figure_id)))
    chosen.extend(remaining[: max_figs - len(chosen)])
    chosen.sort(key=lambda v: figure_sort_key(v.figure_id))
    return [replace(v, selected=True) for v in chosen]


@dataclass
class Stage2Result:
    verdicts: list[RelevanceVerdict]
    selected: dict[str, list[RelevanceVerdict]]
    retry: list[tuple[str, str]] = field(default_factory=list)
    exemplar_log: dict[str, dict] = field(default_factory=dict)

    def papers_with_selection(self) -> list[str]:
        return sorted(pid for pid, sel in self.selected.items() if sel)


def run_stage2(
    targets: Sequence[tuple[object, Sequence[FigureEvidence]]],
    library: Sequence[CodedPaper],
    evidence_lookup: EvidenceLookup,
    gateway: Gateway,
    backend_id: str,
    k: int = DEFAULT_K,
    max_figs: int = DEFAULT_MAX_FIGS,
    max_workers: int = 1,
) -> Stage2Result:
    """Classify every figure of every target paper and pick representatives.

    Role tags survive only on selected figures; every successfully
    classified figure appears exactly once in the output, and failures go
    to the retry queue instead of being dropped silently.
    """
    index = library_index(library)

    def process(entry) -> tuple[list[RelevanceVerdict], list[tuple[str, str]], dict]:
        record, figures = entry
        neighbors = retrieve_neighbor_papers(record, library, k=k, index=index)
        exemplars = sample_exemplars(neighbors, library, evidence_lookup)
        verdicts: list[RelevanceVerdict] = []
        failed: list[tuple[str, str]] = []
        for evidence in figures:
            try:
                verdicts.append(classify_figure(evidence, exemplars, gateway, backend_id))
            except BackendUnavailable as exc:
                logger.warning("figure %s::%s queued for retry: %s",
                               evidence.paper_id, evidence.figure_id, exc)
                failed.append((evidence.paper_id, evidence.figure_id))
        log = {"neighbors": list(neighbors), "exemplars": list(exemplars.exemplar_ids)}
        return verdicts, failed, log

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool_exec:
            processed = list(pool_exec.map(process, targets))
    else:
        processed = [process(t) for t in targets]

    result = Stage2Result(verdicts=[], selected={})
    for (record, _), (verdicts, failed, log) in zip(targets, processed):
        paper_id = record.paper_id
        selected = select_representatives(verdicts, max_figs=max_figs)
        selected_ids = {v.figure_id for v in selected}
        final = [
            next(s for s in selected if s.figure_id == v.figure_id)
            if v.figure_id in selected_ids
            else replace(v, role=None, selected=False)
            for v in verdicts
        ]
        result.verdicts.extend(final)
        result.selected[paper_id] = selected
        result.retry.extend(failed)
        result.exemplar_log[paper_id] = log
    return result
