"""Controlled label vocabulary for the four framework fields.

The canonical category sets ship as package data together with an editable
alias table mapping common lexical variants onto canonical categories.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import VocabularyError

MODEL_LISTENER = "model_listener"
DATA_TYPE = "data_type"
VIS_TYPE = "visualization_type"
VIS_PURPOSE = "visualization_purpose"

FIELDS = (MODEL_LISTENER, DATA_TYPE, VIS_TYPE, VIS_PURPOSE)
MULTI_FIELDS = (MODEL_LISTENER, DATA_TYPE)
SINGLE_FIELDS = (VIS_TYPE, VIS_PURPOSE)

OTHER = "other"

_WS_RE = re.compile(r"\s+")


def _fold(value: str) -> str:
    return _WS_RE.sub(" ", value.strip().lower())


@dataclass(frozen=True)
class LabelVocabulary:
    """Canonical categories per field plus a per-field alias map."""

    categories: Mapping[str, tuple[str, ...]]
    aliases: Mapping[str, Mapping[str, str]] = field(default_factory=dict)

    def __post_init__(self):
        for fname in FIELDS:
            if fname not in self.categories or not self.categories[fname]:
                raise VocabularyError(f"vocabulary missing field {fname!r}")
        for fname, table in self.aliases.items():
            if fname not in FIELDS:
                raise VocabularyError(f"alias table for unknown field {fname!r}")
            valid = {_fold(c) for c in self.categories[fname]}
            for surface, target in table.items():
                if _fold(target) not in valid:
                    raise VocabularyError(
                        f"alias {surface!r} -> {target!r} targets a value "
                        f"outside the {fname} vocabulary"
                    )

    def values(self, fname: str) -> tuple[str, ...]:
        if fname not in FIELDS:
            raise VocabularyError(f"unknown field {fname!r}")
        return tuple(self.categories[fname])

    def has_other(self, fname: str) -> bool:
        return any(_fold(c) == OTHER for c in self.values(fname))

    def canonical(self, fname: str, value: str) -> str | None:
        """Canonical category for a surface form, or None when unmatched.

        Lookup order: exact canonical match (case/whitespace-insensitive),
        then the alias table.
        """
        folded = _fold(str(value))
        if not folded:
            return None
        for category in self.values(fname):
            if _fold(category) == folded:
                return category
        alias = self.aliases.get(fname, {})
        target = {_fold(k): v for k, v in alias.items()}.get(folded)
        if target is not None:
            return self.canonical(fname, target)
        return None

    def sort_values(self, fname: str, values) -> tuple[str, ...]:
        """Stable vocabulary-listing order for multi-label sets."""
        order = {c: i for i, c in enumerate(self.values(fname))}
        unique = sorted(set(values), key=lambda v: (order.get(v, len(order)), v))
        return tuple(unique)


def _read_packaged(name: str) -> dict:
    text = resources.files("vismine").joinpath("data", name).read_text(encoding="utf-8")
    return json.loads(text)


def load_vocabulary(
    vocab_path: str | Path | None = None,
    alias_path: str | Path | None = None,
) -> LabelVocabulary:
    """Load vocabulary and alias files; packaged defaults fill in any gap."""
    if vocab_path is None:
        vocab_raw = _read_packaged("vocabulary.json")
    else:
        vocab_raw = json.loads(Path(vocab_path).read_text(encoding="utf-8"))
    if alias_path is None:
        alias_raw = _read_packaged("aliases.json")
    else:
        alias_raw = json.loads(Path(alias_path).read_text(encoding="utf-8"))
    categories = {fname: tuple(values) for fname, values in vocab_raw.items()}
    aliases = {fname: dict(table) for fname, table in alias_raw.items()}
    return LabelVocabulary(categories=categories, aliases=aliases)


def default_vocabulary() -> LabelVocabulary:
    return load_vocabulary()


@dataclass(frozen=True)
class FrameworkLabels:
    """Four-field annotation for one (base) figure."""

    paper_id: str
    base_figure_id: str
    listeners: tuple[str, ...]
    data_types: tuple[str, ...]
    vis_type: str
    vis_purpose: str
    confidences: Mapping[str, float] = field(default_factory=dict)
    evidence: Mapping[str, str] = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def field_values(self, fname: str) -> tuple[str, ...]:
        if fname == MODEL_LISTENER:
            return self.listeners
        if fname == DATA_TYPE:
            return self.data_types
        if fname == VIS_TYPE:
            return (self.vis_type,)
        if fname == VIS_PURPOSE:
            return (self.vis_purpose,)
        raise VocabularyError(f"unknown field {fname!r}")

    def to_dict(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "base_figure_id": self.base_figure_id,
            MODEL_LISTENER: list(self.listeners),
            DATA_TYPE: list(self.data_types),
            VIS_TYPE: self.vis_type,
            VIS_PURPOSE: self.vis_purpose,
            "confidences": dict(self.confidences),
            "evidence": dict(self.evidence),
            "flags": list(self.flags),
        }

    def as_payload(self) -> dict:
        """Shape matching a raw extraction payload (for re-normalization)."""
        return {
            MODEL_LISTENER: list(self.listeners),
            DATA_TYPE: list(self.data_types),
            VIS_TYPE: self.vis_type,
            VIS_PURPOSE: self.vis_purpose,
            "confidences": dict(self.confidences),
            "evidence": dict(self.evidence),
        }


def labels_from_dict(raw: Mapping) -> FrameworkLabels:
    return FrameworkLabels(
        paper_id=str(raw.get("paper_id") or ""),
        base_figure_id=str(raw.get("base_figure_id") or ""),
        listeners=tuple(raw.get(MODEL_LISTENER) or ()),
        data_types=tuple(raw.get(DATA_TYPE) or ()),
        vis_type=str(raw.get(VIS_TYPE) or OTHER),
        vis_purpose=str(raw.get(VIS_PURPOSE) or OTHER),
        confidences={k: float(v) for k, v in (raw.get("confidences") or {}).items()},
        evidence={k: str(v) for k, v in (raw.get("evidence") or {}).items()},
        flags=tuple(raw.get("flags") or ()),
    )
