"""Run configuration: loading, batch validation, gateway construction.

The config is a single JSON file; credentials are referenced by env-var
name and never stored in it. Validation collects every violation before
reporting, so one pass fixes everything.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from .errors import ConfigError
from .gateway import Gateway, HttpBackend, KeywordStubBackend, StubRules

DEFAULT_REFERENCE_YEAR = 2026


@dataclass
class BackendConfig:
    slot: str
    kind: str  # "http" | "stub"
    endpoint: str = ""
    model: str = ""
    api_key_env: str = ""
    temperature: float = 0.0
    timeout: float = 60.0
    stub_rules: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    base_dir: Path
    corpus_path: Path | None = None
    pool_path: Path | None = None
    docs_manifest_path: Path | None = None
    docs_dir: Path | None = None
    library_path: Path | None = None
    vocab_path: Path | None = None
    alias_path: Path | None = None
    out_dir: Path = Path("out")
    cache_dir: Path | None = None
    keywords: tuple[str, ...] = ("model", "learning", "analytics", "analysis")
    reference_year: int = DEFAULT_REFERENCE_YEAR
    stage1_k: int = 6
    stage1_min_pos: int = 2
    stage1_min_neg: int = 2
    stage1_backends: tuple[str, ...] = ("primary", "secondary")
    stage2_k: int = 5
    stage2_max_figs: int = 3
    stage2_backend: str = "primary"
    stage3_k: int = 10
    stage3_per_paper_cap: int = 3
    stage3_backend: str = "primary"
    max_workers: int = 1
    max_attempts: int = 3
    backoff_base: float = 0.5
    concurrency: int = 8
    backends: dict[str, BackendConfig] = field(default_factory=dict)

    def resolve(self, path: Path | None) -> Path | None:
        if path is None:
            return None
        return path if path.is_absolute() else self.base_dir / path


def _path_or_none(raw, key: str) -> Path | None:
    value = raw.get(key)
    return Path(value) if value else None


def _max_corpus_year(path: Path) -> int | None:
    years = []
    try:
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                year = json.loads(line).get("year")
                if year is not None:
                    years.append(int(year))
    except (OSError, ValueError):
        return None  # malformed corpora are reported by ingest, not here
    return max(years) if years else None


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    backends = {}
    for slot, spec in (raw.get("backends") or {}).items():
        backends[slot] = BackendConfig(
            slot=slot,
            kind=str(spec.get("kind", "http")),
            endpoint=str(spec.get("endpoint", "")),
            model=str(spec.get("model", "")),
            api_key_env=str(spec.get("api_key_env", "")),
            temperature=float(spec.get("temperature", 0.0)),
            timeout=float(spec.get("timeout", 60.0)),
            stub_rules=dict(spec.get("stub_rules") or {}),
        )
    stage1 = raw.get("stage1") or {}
    stage2 = raw.get("stage2") or {}
    stage3 = raw.get("stage3") or {}
    return RunConfig(
        base_dir=path.parent.resolve(),
        corpus_path=_path_or_none(raw, "corpus"),
        pool_path=_path_or_none(raw, "pool"),
        docs_manifest_path=_path_or_none(raw, "docs_manifest"),
        docs_dir=_path_or_none(raw, "docs_dir"),
        library_path=_path_or_none(raw, "library"),
        vocab_path=_path_or_none(raw, "vocabulary"),
        alias_path=_path_or_none(raw, "aliases"),
        out_dir=Path(raw.get("out_dir", "out")),
        cache_dir=_path_or_none(raw, "cache_dir"),
        keywords=tuple(raw.get("keywords") or ("model", "learning", "analytics", "analysis")),
        reference_year=int(raw.get("reference_year", DEFAULT_REFERENCE_YEAR)),
        stage1_k=int(stage1.get("k", 6)),
        stage1_min_pos=int(stage1.get("min_pos", 2)),
        stage1_min_neg=int(stage1.get("min_neg", 2)),
        stage1_backends=tuple(stage1.get("backends") or ("primary", "secondary")),
        stage2_k=int(stage2.get("k", 5)),
        stage2_max_figs=int(stage2.get("max_figs", 3)),
        stage2_backend=str(stage2.get("backend", "primary")),
        stage3_k=int(stage3.get("k", 10)),
        stage3_per_paper_cap=int(stage3.get("per_paper_cap", 3)),
        stage3_backend=str(stage3.get("backend", "primary")),
        max_workers=int(raw.get("max_workers", 1)),
        max_attempts=int(raw.get("max_attempts", 3)),
        backoff_base=float(raw.get("backoff_base", 0.5)),
        concurrency=int(raw.get("concurrency", 8)),
        backends=backends,
    )


def validate_config(config: RunConfig, require: tuple[str, ...] = ()) -> list[str]:
    """Every violation at once; an empty list means the config is usable."""
    errors: list[str] = []

    def check_file(name: str, path: Path | None, required: bool) -> None:
        if path is None:
            if required:
                errors.append(f"{name}: required path missing from config")
            return
        resolved = config.resolve(path)
        if resolved is None or not resolved.exists():
            errors.append(f"{name}: file not found: {resolved}")

    check_file("corpus", config.corpus_path, "corpus" in require)
    check_file("pool", config.pool_path, "pool" in require)
    check_file("docs_manifest", config.docs_manifest_path, "docs_manifest" in require)
    check_file("library", config.library_path, "library" in require)
    check_file("vocabulary", config.vocab_path, False)
    check_file("aliases", config.alias_path, False)
    if config.docs_dir is not None:
        docs_dir = config.resolve(config.docs_dir)
        if docs_dir is None or not docs_dir.is_dir():
            errors.append(f"docs_dir: directory not found: {docs_dir}")
    elif "docs_manifest" in require:
        errors.append("docs_dir: required path missing from config")

    for name, k in (
        ("stage1.k", config.stage1_k),
        ("stage2.k", config.stage2_k),
        ("stage3.k", config.stage3_k),
    ):
        if k < 1:
            errors.append(f"{name}: k must be >= 1, got {k}")
    if config.stage1_min_pos < 0 or config.stage1_min_neg < 0:
        errors.append("stage1: min_pos/min_neg must be nonnegative")
    if config.stage1_min_pos + config.stage1_min_neg > config.stage1_k:
        errors.append(
            f"stage1: min_pos + min_neg exceeds k "
            f"({config.stage1_min_pos}+{config.stage1_min_neg} > {config.stage1_k})"
        )
    if config.stage2_max_figs < 1:
        errors.append(f"stage2: max_figs must be >= 1, got {config.stage2_max_figs}")
    if config.stage3_per_paper_cap < 1:
        errors.append(f"stage3: per_paper_cap must be >= 1, got {config.stage3_per_paper_cap}")
    if config.max_workers < 1:
        errors.append(f"max_workers must be >= 1, got {config.max_workers}")
    if config.max_attempts < 1:
        errors.append(f"max_attempts must be >= 1, got {config.max_attempts}")
    if config.reference_year < 1990:
        errors.append(f"reference_year is implausible: {config.reference_year}")
    corpus_path = config.resolve(config.corpus_path)
    if corpus_path is not None and corpus_path.exists():
        max_year = _max_corpus_year(corpus_path)
        if max_year is not None and max_year > config.reference_year:
            errors.append(
                f"reference_year {config.reference_year} precedes the newest "
                f"corpus year {max_year}"
            )

    named = set(config.backends)
    used = set(config.stage1_backends) | {config.stage2_backend, config.stage3_backend}
    for backend_id in sorted(used - named):
        errors.append(f"backend {backend_id!r} referenced but not configured")
    for slot, backend in config.backends.items():
        if backend.kind not in ("http", "stub"):
            errors.append(f"backend {slot!r}: unknown kind {backend.kind!r}")
        if backend.kind == "http" and not backend.endpoint:
            errors.append(f"backend {slot!r}: http backend needs an endpoint")
        if backend.kind == "http" and not backend.api_key_env:
            errors.append(f"backend {slot!r}: http backend needs api_key_env")
    return errors


def build_gateway(config: RunConfig) -> Gateway:
    backends = {}
    for slot, spec in config.backends.items():
        if spec.kind == "stub":
            backends[slot] = KeywordStubBackend(slot, StubRules.from_config(spec.stub_rules))
        elif spec.kind == "http":
            backends[slot] = HttpBackend(
                name=slot,
                endpoint=spec.endpoint,
                model=spec.model,
                api_key_env=spec.api_key_env,
                temperature=spec.temperature,
                timeout=spec.timeout,
            )
        else:
            raise ConfigError(f"backend {slot!r}: unknown kind {spec.kind!r}")
    cache_dir = config.resolve(config.cache_dir)
    return Gateway(
        backends,
        cache_dir=cache_dir,
        max_attempts=config.max_attempts,
        backoff_base=config.backoff_base,
        concurrency=config.concurrency,
    )
