"""End-to-end orchestration: ingest -> screen -> evidence -> figures -> labels -> analytics.

Each step reads the previous step's output file, writes its own atomically,
and records input/output hashes in a run manifest. With a warm response
cache a rerun performs zero network calls and reproduces every output file
byte for byte.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import analysis as analysis_mod
from . import corpus as corpus_mod
from . import evidence as evidence_mod
from . import stage1 as stage1_mod
from . import stage2 as stage2_mod
from . import stage3 as stage3_mod
from .config import RunConfig, build_gateway, validate_config
from .errors import ConfigError, PipelineError
from .gateway import Gateway
from .jsonl import atomic_write_text, dumps_stable, file_sha256, read_jsonl, write_json, write_jsonl
from .library import load_library
from .vocab import load_vocabulary

logger = logging.getLogger(__name__)

STAGES = ("ingest", "stage1", "evidence", "stage2", "stage3", "analyze")

UPSTREAM = {
    "stage1": ("ingest",),
    "stage2": ("stage1", "evidence"),
    "stage3": ("stage2", "evidence"),
    "analyze": ("stage3",),
}

__version__ = "0.1.0"


def stage_outputs(out_dir: Path) -> dict[str, list[Path]]:
    return {
        "ingest": [out_dir / "corpus.jsonl", out_dir / "ingest_report.json"],
        "stage1": [out_dir / "stage1_subset.jsonl", out_dir / "stage1_decisions.jsonl"],
        "evidence": [out_dir / "evidence.jsonl"],
        "stage2": [out_dir / "stage2_verdicts.jsonl"],
        "stage3": [out_dir / "stage3_labels.jsonl"],
        "analyze": [
            out_dir / "analysis" / "paths.jsonl",
            out_dir / "analysis" / "sankey.json",
            out_dir / "analysis" / "edge_flows.json",
            out_dir / "analysis" / "trends.csv",
            out_dir / "analysis" / "weights.csv",
        ],
    }


@dataclass
class RunManifest:
    version: str = __version__
    config_hash: str = ""
    stages: dict[str, dict] = field(default_factory=dict)
    gateway: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "config_hash": self.config_hash,
            "stages": self.stages,
            "gateway": self.gateway,
        }


def _config_hash(config: RunConfig) -> str:
    import hashlib

    payload = dumps_stable(
        {
            k: str(v) if isinstance(v, Path) else v
            for k, v in vars(config).items()
            if k != "backends"
        }
        | {"backends": {slot: vars(b) for slot, b in sorted(config.backends.items())}}
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _load_corpus_file(path: Path) -> list[corpus_mod.PaperRecord]:
    return [corpus_mod.record_from_dict(raw) for raw in read_jsonl(path)]


def _load_pool(config: RunConfig, records) -> corpus_mod.LabeledPool:
    pool_path = config.resolve(config.pool_path)
    if pool_path is None:
        raise PipelineError("config has no pool file")
    assignments = [(str(row["paper_id"]), str(row["label"])) for row in read_jsonl(pool_path)]
    return corpus_mod.load_labeled_pool(records, assignments)


def _evidence_lookup_from_file(path: Path):
    table: dict[tuple[str, str], evidence_mod.FigureEvidence] = {}
    for raw in read_jsonl(path):
        ev = evidence_mod.evidence_from_dict(raw)
        table[(ev.paper_id, ev.figure_id)] = ev
    def lookup(paper_id: str, figure_id: str):
        return table.get((paper_id, figure_id))
    lookup.table = table  # type: ignore[attr-defined]
    return lookup


def run_ingest(config: RunConfig, out_dir: Path) -> None:
    corpus_path = config.resolve(config.corpus_path)
    if corpus_path is None:
        raise PipelineError("config has no corpus file")
    records, report = corpus_mod.ingest_metadata(read_jsonl(corpus_path))
    filtered = corpus_mod.keyword_prefilter(records, config.keywords)
    write_jsonl(out_dir / "corpus.jsonl", (r.to_dict() for r in filtered))
    summary = report.to_dict()
    summary["after_keyword_filter"] = len(filtered)
    summary["keywords"] = list(config.keywords)
    write_json(out_dir / "ingest_report.json", summary)
    logger.info("ingest: %d raw, %d ingested, %d after keyword filter",
                report.total, report.ingested, len(filtered))


def run_stage1_step(config: RunConfig, out_dir: Path, gateway: Gateway) -> None:
    candidates = _load_corpus_file(out_dir / "corpus.jsonl")
    pool = _load_pool(config, candidates + _extra_pool_records(config, candidates))
    result = stage1_mod.run_stage1(
        candidates,
        pool,
        gateway,
        config.stage1_backends,
        k=config.stage1_k,
        min_pos=config.stage1_min_pos,
        min_neg=config.stage1_min_neg,
        max_workers=config.max_workers,
    )
    write_jsonl(out_dir / "stage1_subset.jsonl", (r.to_dict() for r in result.subset))
    write_jsonl(out_dir / "stage1_decisions.jsonl", (d.to_dict() for d in result.decisions))


def _extra_pool_records(config: RunConfig, candidates) -> list[corpus_mod.PaperRecord]:
    """Pool assignments may reference papers outside the filtered corpus."""
    pool_path = config.resolve(config.pool_path)
    if pool_path is None:
        return []
    have = {r.paper_id for r in candidates}
    extras = []
    for row in read_jsonl(pool_path):
        if row.get("paper_id") not in have and "title" in row:
            extras.append(corpus_mod.record_from_dict(row))
    return extras


def run_evidence_step(config: RunConfig, out_dir: Path) -> None:
    manifest_path = config.resolve(config.docs_manifest_path)
    docs_dir = config.resolve(config.docs_dir)
    if manifest_path is None or docs_dir is None:
        raise PipelineError("config needs docs_manifest and docs_dir for evidence extraction")
    rows = []
    for entry in read_jsonl(manifest_path):
        paper_id = str(entry["paper_id"])
        doc_path = docs_dir / str(entry["path"])
        raw_text = doc_path.read_text(encoding="utf-8")
        doc = evidence_mod.segment_paragraphs(paper_id, raw_text, provenance=str(entry.get("provenance", "")))
        doc = evidence_mod.filter_nonbody(doc)
        for ev in evidence_mod.extract_all_evidence(doc):
            rows.append(ev.to_dict())
    write_jsonl(out_dir / "evidence.jsonl", rows)


def run_stage2_step(config: RunConfig, out_dir: Path, gateway: Gateway) -> None:
    subset = _load_corpus_file(out_dir / "stage1_subset.jsonl")
    library_path = config.resolve(config.library_path)
    if library_path is None:
        raise PipelineError("config has no library file")
    library = load_library(read_jsonl(library_path))
    library_ids = {p.paper_id for p in library}
    lookup = _evidence_lookup_from_file(out_dir / "evidence.jsonl")
    by_paper: dict[str, list[evidence_mod.FigureEvidence]] = {}
    for ev in lookup.table.values():  # type: ignore[attr-defined]
        by_paper.setdefault(ev.paper_id, []).append(ev)
    for evs in by_paper.values():
        evs.sort(key=lambda e: evidence_mod.figure_sort_key(e.figure_id))
    targets = [
        (record, by_paper.get(record.paper_id, []))
        for record in subset
        if record.paper_id not in library_ids
    ]
    result = stage2_mod.run_stage2(
        targets,
        library,
        lookup,
        gateway,
        config.stage2_backend,
        k=config.stage2_k,
        max_figs=config.stage2_max_figs,
        max_workers=config.max_workers,
    )
    write_jsonl(out_dir / "stage2_verdicts.jsonl", (v.to_dict() for v in result.verdicts))


def run_stage3_step(config: RunConfig, out_dir: Path, gateway: Gateway) -> None:
    library_path = config.resolve(config.library_path)
    if library_path is None:
        raise PipelineError("config has no library file")
    library = load_library(read_jsonl(library_path))
    lookup = _evidence_lookup_from_file(out_dir / "evidence.jsonl")
    vocab = load_vocabulary(config.resolve(config.vocab_path), config.resolve(config.alias_path))
    entries = []
    for paper in library:
        for figure in paper.coded_figures():
            ev = lookup(paper.paper_id, figure.figure_id)
            if ev is not None:
                entries.append((ev, figure.labels))
    corpus = stage3_mod.build_figure_corpus(entries)
    targets = []
    for raw in read_jsonl(out_dir / "stage2_verdicts.jsonl"):
        verdict = stage2_mod.verdict_from_dict(raw)
        if not verdict.selected:
            continue
        ev = lookup(verdict.paper_id, verdict.figure_id)
        if ev is None:
            logger.warning("no evidence for selected figure %s::%s",
                           verdict.paper_id, verdict.figure_id)
            continue
        targets.append(ev)
    result = stage3_mod.run_stage3(
        targets,
        corpus,
        vocab,
        gateway,
        config.stage3_backend,
        k=config.stage3_k,
        per_paper_cap=config.stage3_per_paper_cap,
        exclude_own_paper=True,
        max_workers=config.max_workers,
    )
    write_jsonl(out_dir / "stage3_labels.jsonl", (l.to_dict() for l in result.labels))


def _csv_text(header: list[str], rows: list[list]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def run_analyze_step(config: RunConfig, out_dir: Path) -> None:
    from .vocab import FIELDS, labels_from_dict

    labels = [labels_from_dict(raw) for raw in read_jsonl(out_dir / "stage3_labels.jsonl")]
    papers: dict[str, corpus_mod.PaperRecord] = {}
    corpus_file = out_dir / "corpus.jsonl"
    if corpus_file.exists():
        for record in _load_corpus_file(corpus_file):
            papers[record.paper_id] = record
    library_path = config.resolve(config.library_path)
    if library_path is not None and library_path.exists():
        for paper in load_library(read_jsonl(library_path)):
            papers.setdefault(paper.paper_id, paper.record)
            for figure in paper.coded_figures():
                labels.append(figure.labels)

    analysis_dir = out_dir / "analysis"
    usable = [l for l in labels if not l.flags]
    skipped = len(labels) - len(usable)
    if skipped:
        logger.warning("analyze: %d flagged figure(s) excluded from path expansion", skipped)
    paths = analysis_mod.expand_all(usable)
    write_jsonl(analysis_dir / "paths.jsonl", (p.to_dict() for p in paths))
    write_json(analysis_dir / "sankey.json", analysis_mod.sankey_export(paths))
    write_json(analysis_dir / "edge_flows.json", analysis_mod.edge_flows(usable))

    paper_labels = analysis_mod.paper_level_labels(usable, papers)
    trend_rows = []
    weight_rows = []
    for fname in FIELDS:
        for row in analysis_mod.yearly_proportions(paper_labels, fname):
            trend_rows.append([row["year"], row["field"], row["category"],
                               row["papers"], row["carriers"], f"{row['proportion']:.6f}"])
        for row in analysis_mod.weighted_coverage(
            paper_labels, fname, reference_year=config.reference_year
        ):
            share = "" if row["weighted_share"] is None else f"{row['weighted_share']:.6f}"
            weight_rows.append([row["field"], row["category"],
                                f"{row['prevalence']:.6f}", share])
    atomic_write_text(
        analysis_dir / "trends.csv",
        _csv_text(["year", "field", "category", "papers", "carriers", "proportion"], trend_rows),
    )
    atomic_write_text(
        analysis_dir / "weights.csv",
        _csv_text(["field", "category", "prevalence", "weighted_share"], weight_rows),
    )


def run_pipeline(config: RunConfig, stages: list[str] | None = None) -> RunManifest:
    """Execute the requested stages in order and emit a manifest.

    A downstream stage whose upstream outputs are missing fails fast,
    naming the stage to run first.
    """
    stages = list(stages) if stages is not None else list(STAGES)
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise PipelineError(f"unknown stages: {unknown}")
    stages.sort(key=STAGES.index)
    problems = validate_config(config)
    if problems:
        raise ConfigError("; ".join(problems))

    out_dir = config.resolve(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = stage_outputs(out_dir)
    manifest = RunManifest(config_hash=_config_hash(config))
    needs_gateway = any(s in stages for s in ("stage1", "stage2", "stage3"))
    gateway = build_gateway(config) if needs_gateway else None

    for stage in stages:
        for upstream in UPSTREAM.get(stage, ()):
            if upstream in stages and stages.index(upstream) < stages.index(stage):
                continue
            missing = [p for p in outputs[upstream] if not p.exists()]
            if missing:
                raise PipelineError(
                    f"stage {stage!r} needs outputs of {upstream!r}; run {upstream!r} first "
                    f"(missing {missing[0]})"
                )
        inputs = {
            str(p): file_sha256(p)
            for up in UPSTREAM.get(stage, ())
            for p in outputs[up]
            if p.exists()
        }
        started = time.time()
        if stage == "ingest":
            run_ingest(config, out_dir)
        elif stage == "stage1":
            run_stage1_step(config, out_dir, gateway)
        elif stage == "evidence":
            run_evidence_step(config, out_dir)
        elif stage == "stage2":
            run_stage2_step(config, out_dir, gateway)
        elif stage == "stage3":
            run_stage3_step(config, out_dir, gateway)
        elif stage == "analyze":
            run_analyze_step(config, out_dir)
        manifest.stages[stage] = {
            "inputs": inputs,
            "outputs": {str(p): file_sha256(p) for p in outputs[stage] if p.exists()},
            "started": started,
            "finished": time.time(),
        }
    if gateway is not None:
        manifest.gateway = gateway.stats.to_dict()
    write_json(out_dir / "manifest.json", manifest.to_dict())
    return manifest
