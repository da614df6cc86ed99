"""Manually coded paper library: figure relevance flags and gold labels.

The library is the exemplar source for figure-level stages and the gold
reference for leave-one-out evaluation. A figure may carry a relevance flag,
four-field labels, both, or neither (unlabeled figures are never sampled as
exemplars).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .corpus import PaperRecord, record_from_dict
from .errors import CorpusError
from .vocab import FrameworkLabels, labels_from_dict


@dataclass(frozen=True)
class CodedFigure:
    figure_id: str
    relevant: bool | None = None
    labels: FrameworkLabels | None = None

    def to_dict(self) -> dict:
        out: dict = {"figure_id": self.figure_id}
        if self.relevant is not None:
            out["relevant"] = self.relevant
        if self.labels is not None:
            payload = self.labels.to_dict()
            payload.pop("paper_id", None)
            out["labels"] = payload
        return out


@dataclass(frozen=True)
class CodedPaper:
    record: PaperRecord
    figures: tuple[CodedFigure, ...] = ()

    @property
    def paper_id(self) -> str:
        return self.record.paper_id

    def labeled_figures(self) -> list[CodedFigure]:
        """Figures with an explicit relevance flag."""
        return [f for f in self.figures if f.relevant is not None]

    def coded_figures(self) -> list[CodedFigure]:
        """Figures carrying four-field labels."""
        return [f for f in self.figures if f.labels is not None]

    def to_dict(self) -> dict:
        out = self.record.to_dict()
        out["figures"] = [f.to_dict() for f in self.figures]
        return out


def coded_paper_from_dict(raw: Mapping) -> CodedPaper:
    record = record_from_dict(raw)
    figures = []
    seen: set[str] = set()
    for fig_raw in raw.get("figures") or ():
        figure_id = str(fig_raw.get("figure_id") or "").strip()
        if not figure_id:
            raise CorpusError(f"library figure without figure_id in {record.paper_id!r}")
        if figure_id in seen:
            raise CorpusError(f"duplicate figure {figure_id!r} in {record.paper_id!r}")
        seen.add(figure_id)
        labels = None
        if fig_raw.get("labels") is not None:
            labels_raw = dict(fig_raw["labels"])
            labels_raw.setdefault("paper_id", record.paper_id)
            labels_raw.setdefault("base_figure_id", figure_id)
            labels = labels_from_dict(labels_raw)
        relevant = fig_raw.get("relevant")
        figures.append(
            CodedFigure(
                figure_id=figure_id,
                relevant=None if relevant is None else bool(relevant),
                labels=labels,
            )
        )
    return CodedPaper(record=record, figures=tuple(figures))


def load_library(raw_records: Iterable[Mapping]) -> list[CodedPaper]:
    papers = [coded_paper_from_dict(raw) for raw in raw_records]
    seen: set[str] = set()
    for paper in papers:
        if paper.paper_id in seen:
            raise CorpusError(f"duplicate paper {paper.paper_id!r} in library")
        seen.add(paper.paper_id)
    return papers
