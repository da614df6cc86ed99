"""Leave-one-out evaluation harness and score arithmetic.

Counts are aggregated across folds before any ratio is taken, so every
reported score is derivable from its own count row. Undefined denominators
yield 0.0 with a flag instead of failing, letting partially failed runs
still report.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import bm25
from .corpus import LabeledPool, NEGATIVE, POSITIVE
from .errors import EvaluationError, StageError, VismineError
from .gateway import Gateway, consensus, parse_verdict
from .library import CodedPaper
from .stage1 import (
    FewShotContext,
    build_fewshot_context,
    paper_query_tokens,
    pool_index,
    screening_request,
)
from .stage2 import (
    EvidenceLookup,
    classify_figure,
    library_index,
    retrieve_neighbor_papers,
    sample_exemplars,
)
from .stage3 import build_figure_corpus, extract_labels, normalize_labels, retrieve_similar_figures
from .vocab import FIELDS, LabelVocabulary

logger = logging.getLogger(__name__)


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int | None = 0

    def add(self, other: "ConfusionCounts") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        if self.tn is None or other.tn is None:
            self.tn = None
        else:
            self.tn += other.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def precision(counts: ConfusionCounts) -> float:
    denominator = counts.tp + counts.fp
    return counts.tp / denominator if denominator else 0.0


def recall(counts: ConfusionCounts) -> float:
    denominator = counts.tp + counts.fn
    return counts.tp / denominator if denominator else 0.0


def f1(counts: ConfusionCounts) -> float:
    denominator = 2 * counts.tp + counts.fp + counts.fn
    return 2 * counts.tp / denominator if denominator else 0.0


def metric_defined(counts: ConfusionCounts, metric: str) -> bool:
    if metric == "precision":
        return counts.tp + counts.fp > 0
    if metric == "recall":
        return counts.tp + counts.fn > 0
    if metric in ("f1", "micro_f1"):
        return 2 * counts.tp + counts.fp + counts.fn > 0
    raise EvaluationError(f"unknown metric {metric!r}")


def sum_counts(counts_list: Iterable[ConfusionCounts]) -> ConfusionCounts:
    total = ConfusionCounts()
    for counts in counts_list:
        total.add(counts)
    return total


def multilabel_counts(
    truth: Iterable[str],
    predicted: Iterable[str],
    vocabulary: Iterable[str],
) -> ConfusionCounts:
    """Set arithmetic per figure: TP=|Y∩Ŷ|, FP=|Ŷ∖Y|, FN=|Y∖Ŷ|."""
    valid = set(vocabulary)
    truth_set = set(truth)
    predicted_set = set(predicted)
    outside = (truth_set | predicted_set) - valid
    if outside:
        raise EvaluationError(f"values outside vocabulary: {sorted(outside)}")
    return ConfusionCounts(
        tp=len(truth_set & predicted_set),
        fp=len(predicted_set - truth_set),
        fn=len(truth_set - predicted_set),
        tn=None,
    )


def micro_f1(counts_list: Sequence[ConfusionCounts]) -> float:
    """F1 of the summed counts (sum first, divide once)."""
    if not counts_list:
        raise EvaluationError("micro_f1 needs at least one count record")
    return f1(sum_counts(counts_list))


def bm25_majority_baseline(
    target,
    pool: LabeledPool,
    k: int,
    index: bm25.Bm25Index | None = None,
) -> str:
    """Majority label among BM25 top-k neighbors; ties resolve positive."""
    if not pool.records:
        raise EvaluationError("empty pool for baseline")
    if index is None:
        index = pool_index(pool)
    neighbors = bm25.top_k(
        index, paper_query_tokens(target), k, exclude={target.paper_id}
    )
    votes = [pool.label_of(n) for n in neighbors]
    positive_votes = sum(1 for v in votes if v == POSITIVE)
    negative_votes = sum(1 for v in votes if v == NEGATIVE)
    return POSITIVE if positive_votes >= negative_votes else NEGATIVE


@dataclass
class FoldLog:
    stage: str
    method: str
    held_out: str
    neighbors: list[str] = field(default_factory=list)
    exemplars: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "method": self.method,
            "held_out": self.held_out,
            "neighbors": list(self.neighbors),
            "exemplars": list(self.exemplars),
        }


@dataclass
class ReportRow:
    stage: str
    method: str
    model: str
    target: str
    counts: ConfusionCounts
    metric: str

    @property
    def score(self) -> float:
        if self.metric == "precision":
            return precision(self.counts)
        if self.metric in ("f1", "micro_f1"):
            return f1(self.counts)
        raise EvaluationError(f"unknown metric {self.metric!r}")

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "method": self.method,
            "model": self.model,
            "target": self.target,
            **self.counts.to_dict(),
            "metric": self.metric,
            "score": self.score,
            "flagged": not metric_defined(self.counts, self.metric),
        }


@dataclass
class LooReport:
    rows: list[ReportRow] = field(default_factory=list)
    folds: list[FoldLog] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    fold_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "folds": [f.to_dict() for f in self.folds],
            "errors": list(self.errors),
            "fold_counts": dict(self.fold_counts),
        }


def find_leakage(report: LooReport) -> list[str]:
    """Fold-log occurrences of the held-out paper; empty means clean."""
    violations = []
    for fold in report.folds:
        if fold.held_out in fold.neighbors:
            violations.append(
                f"{fold.stage}/{fold.method}: {fold.held_out} in retrieval results"
            )
        for exemplar in fold.exemplars:
            paper_id = exemplar.split("::", 1)[0]
            if paper_id == fold.held_out:
                violations.append(
                    f"{fold.stage}/{fold.method}: {fold.held_out} in exemplar set"
                )
    return violations


def _binary_counts(gold_positive: bool, predicted_positive: bool, track_tn: bool) -> ConfusionCounts:
    counts = ConfusionCounts(tn=0 if track_tn else None)
    if gold_positive and predicted_positive:
        counts.tp = 1
    elif gold_positive:
        counts.fn = 1
    elif predicted_positive:
        counts.fp = 1
    elif track_tn:
        counts.tn = 1
    return counts


def run_stage1_loo(
    pool: LabeledPool,
    gateway: Gateway,
    backend_ids: Sequence[str],
    shots: Sequence[int] = (0, 6),
    baseline_k: int = 6,
    min_pos: int = 2,
    min_neg: int = 2,
    report: LooReport | None = None,
) -> LooReport:
    """One fold per pool paper: baseline plus each shots setting."""
    if len(pool.records) < 2:
        raise EvaluationError("stage 1 LOO needs at least two labeled papers")
    report = report if report is not None else LooReport()
    aggregates: dict[tuple[str, str], ConfusionCounts] = {}

    def bump(method: str, model: str, fold_counts: ConfusionCounts) -> None:
        aggregates.setdefault((method, model), ConfusionCounts()).add(fold_counts)

    folds = 0
    for target in pool.records:
        folds += 1
        rest = pool.without(target.paper_id)
        rest_index = pool_index(rest)
        gold_positive = target.label == POSITIVE

        baseline_pred = bm25_majority_baseline(target, rest, k=baseline_k, index=rest_index)
        bump("majority_vote", "bm25", _binary_counts(gold_positive, baseline_pred == POSITIVE, True))
        report.folds.append(
            FoldLog(
                stage="stage1",
                method="majority_vote",
                held_out=target.paper_id,
                neighbors=bm25.top_k(
                    rest_index, paper_query_tokens(target), baseline_k,
                    exclude={target.paper_id},
                ),
            )
        )

        for shot in shots:
            method = f"{shot}-shot"
            if shot == 0:
                context = FewShotContext(exemplars=())
            else:
                try:
                    context = build_fewshot_context(
                        target, rest, rest_index, k=shot, min_pos=min_pos, min_neg=min_neg
                    )
                except StageError as exc:
                    report.errors.append(f"stage1/{method}/{target.paper_id}: {exc}")
                    continue
            request = screening_request(target, context)
            verdicts = []
            failed = False
            for backend_id in backend_ids:
                try:
                    raw = gateway.complete(backend_id, request)
                except VismineError as exc:
                    report.errors.append(f"stage1/{method}/{target.paper_id}: {exc}")
                    failed = True
                    break
                verdict = parse_verdict(raw, backend_id)
                verdicts.append(verdict)
                bump(method, backend_id, _binary_counts(gold_positive, verdict.decision, True))
            report.folds.append(
                FoldLog(
                    stage="stage1",
                    method=method,
                    held_out=target.paper_id,
                    exemplars=list(context.exemplar_ids),
                )
            )
            if failed or not verdicts:
                continue
            if len(backend_ids) > 1:
                bump(method, "consensus", _binary_counts(gold_positive, consensus(verdicts), True))

    for (method, model), counts in aggregates.items():
        report.rows.append(
            ReportRow(
                stage="stage1",
                method=method,
                model=model,
                target=f"manually classified {len(pool.records)} papers",
                counts=counts,
                metric="precision",
            )
        )
    report.fold_counts["stage1"] = folds
    return report


def run_stage2_loo(
    coded: Sequence[CodedPaper],
    evidence_lookup: EvidenceLookup,
    gateway: Gateway,
    backend_id: str,
    shots: Sequence[int] = (0, 5),
    report: LooReport | None = None,
) -> LooReport:
    """One fold per coded paper; scored on explicitly labeled figures only."""
    if len(coded) < 2:
        raise EvaluationError("stage 2 LOO needs at least two coded papers")
    report = report if report is not None else LooReport()
    aggregates: dict[str, ConfusionCounts] = {}
    folds = 0
    for target in coded:
        labeled = [
            (figure, evidence_lookup(target.paper_id, figure.figure_id))
            for figure in target.labeled_figures()
        ]
        labeled = [(figure, ev) for figure, ev in labeled if ev is not None]
        if not labeled:
            continue
        folds += 1
        rest = [p for p in coded if p.paper_id != target.paper_id]
        rest_index = library_index(rest)
        for shot in shots:
            method = f"{shot}-shot"
            if shot == 0:
                neighbors: list[str] = []
            else:
                neighbors = retrieve_neighbor_papers(
                    target.record, rest, k=shot, index=rest_index
                )
            exemplars = sample_exemplars(neighbors, rest, evidence_lookup)
            report.folds.append(
                FoldLog(
                    stage="stage2",
                    method=method,
                    held_out=target.paper_id,
                    neighbors=list(neighbors),
                    exemplars=list(exemplars.exemplar_ids),
                )
            )
            for figure, evidence in labeled:
                try:
                    verdict = classify_figure(evidence, exemplars, gateway, backend_id)
                except VismineError as exc:
                    report.errors.append(
                        f"stage2/{method}/{target.paper_id}::{figure.figure_id}: {exc}"
                    )
                    continue
                counts = _binary_counts(bool(figure.relevant), verdict.relevant, False)
                aggregates.setdefault(method, ConfusionCounts(tn=None)).add(counts)
    for method, counts in sorted(aggregates.items()):
        report.rows.append(
            ReportRow(
                stage="stage2",
                method=method,
                model=backend_id,
                target=f"{len(coded)} labeled papers",
                counts=counts,
                metric="f1",
            )
        )
    report.fold_counts["stage2"] = folds
    return report


def run_stage3_loo(
    coded: Sequence[CodedPaper],
    evidence_lookup: EvidenceLookup,
    vocab: LabelVocabulary,
    gateway: Gateway,
    backend_id: str,
    shots: Sequence[int] = (0, 10),
    per_paper_cap: int = 3,
    report: LooReport | None = None,
) -> LooReport:
    """One fold per coded paper; scored on figures with available labels."""
    if len(coded) < 2:
        raise EvaluationError("stage 3 LOO needs at least two coded papers")
    report = report if report is not None else LooReport()
    aggregates: dict[tuple[str, str], ConfusionCounts] = {}
    folds = 0
    for target in coded:
        gold_figures = [
            (figure, evidence_lookup(target.paper_id, figure.figure_id))
            for figure in target.coded_figures()
        ]
        gold_figures = [(figure, ev) for figure, ev in gold_figures if ev is not None]
        if not gold_figures:
            continue
        folds += 1
        rest = [p for p in coded if p.paper_id != target.paper_id]
        entries = []
        for paper in rest:
            for figure in paper.coded_figures():
                evidence = evidence_lookup(paper.paper_id, figure.figure_id)
                if evidence is not None:
                    entries.append((evidence, figure.labels))
        corpus = build_figure_corpus(entries)
        for shot in shots:
            method = f"{shot}-shot"
            for figure, evidence in gold_figures:
                if shot == 0:
                    doc_ids: list[str] = []
                else:
                    doc_ids = retrieve_similar_figures(
                        evidence, corpus, k=shot, per_paper_cap=per_paper_cap,
                        exclude_paper=target.paper_id,
                    )
                exemplars = [(corpus.evidence[d], corpus.labels[d]) for d in doc_ids]
                report.folds.append(
                    FoldLog(
                        stage="stage3",
                        method=method,
                        held_out=target.paper_id,
                        exemplars=list(doc_ids),
                    )
                )
                try:
                    payload = extract_labels(evidence, exemplars, gateway, backend_id)
                except VismineError as exc:
                    report.errors.append(
                        f"stage3/{method}/{target.paper_id}::{figure.figure_id}: {exc}"
                    )
                    continue
                predicted = normalize_labels(
                    payload, vocab, evidence.paper_id, evidence.base_figure_id
                )
                for fname in FIELDS:
                    counts = multilabel_counts(
                        figure.labels.field_values(fname),
                        predicted.field_values(fname),
                        vocab.values(fname),
                    )
                    aggregates.setdefault((method, fname), ConfusionCounts(tn=None)).add(counts)
    for (method, fname), counts in sorted(aggregates.items()):
        report.rows.append(
            ReportRow(
                stage="stage3",
                method=method,
                model=backend_id,
                target=fname,
                counts=counts,
                metric="micro_f1",
            )
        )
    report.fold_counts["stage3"] = folds
    return report


def run_loo(
    pool: LabeledPool | None = None,
    coded: Sequence[CodedPaper] | None = None,
    evidence_lookup: EvidenceLookup | None = None,
    vocab: LabelVocabulary | None = None,
    gateway: Gateway | None = None,
    stage1_backends: Sequence[str] = ("primary", "secondary"),
    figure_backend: str = "primary",
    stages: Sequence[int] = (1, 2, 3),
    stage1_shots: Sequence[int] = (0, 6),
    stage2_shots: Sequence[int] = (0, 5),
    stage3_shots: Sequence[int] = (0, 10),
) -> LooReport:
    """Full leave-one-out report across the requested stages."""
    if gateway is None:
        raise EvaluationError("a gateway is required")
    report = LooReport()
    if 1 in stages:
        if pool is None:
            raise EvaluationError("stage 1 LOO requires a labeled pool")
        run_stage1_loo(pool, gateway, stage1_backends, shots=stage1_shots, report=report)
    if 2 in stages:
        if coded is None or evidence_lookup is None:
            raise EvaluationError("stage 2 LOO requires coded papers and evidence")
        run_stage2_loo(
            coded, evidence_lookup, gateway, figure_backend,
            shots=stage2_shots, report=report,
        )
    if 3 in stages:
        if coded is None or evidence_lookup is None or vocab is None:
            raise EvaluationError("stage 3 LOO requires coded papers, evidence, and vocabulary")
        run_stage3_loo(
            coded, evidence_lookup, vocab, gateway, figure_backend,
            shots=stage3_shots, report=report,
        )
    return report
