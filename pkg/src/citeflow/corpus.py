"""Paper metadata ingestion.

Records arrive as JSONL (one paper per line). Parsing validates every record,
drops citations that cannot be resolved or that point forward in time, and
produces an immutable, id-sorted :class:`Corpus`.
"""

from __future__ import annotations

import bisect
import json
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

UNKNOWN_VENUE = "UNKNOWN"

REQUIRED_FIELDS = {
    "id": str,
    "year": int,
    "venue": str,
    "authors": list,
    "abstract": str,
    "outCitations": list,
}


class CorpusError(ValueError):
    """Raised for malformed or inconsistent input records."""


@dataclass(frozen=True)
class PaperRecord:
    id: str
    year: int
    venue_raw: str
    author_ids: tuple[str, ...]
    abstract: str
    cited_ids: tuple[str, ...]


@dataclass(frozen=True, order=True)
class VenueKey:
    canonical_name: str
    year: int

    def __str__(self) -> str:
        return f"{self.canonical_name} {self.year}"


@dataclass(frozen=True)
class Diagnostics:
    dangling_edges: int = 0
    time_travel_edges: int = 0
    self_citations: int = 0
    duplicate_citations: int = 0


@dataclass(frozen=True)
class Corpus:
    """Validated, id-sorted paper collection.

    ``external_citer_years`` keeps the publication years of citers that were
    removed by :func:`filter_by_venues`, so labels can still be computed
    against the pre-filter corpus.
    """

    papers: Mapping[str, PaperRecord]
    venue_map: Mapping[str, str] = field(default_factory=dict)
    diagnostics: Diagnostics = Diagnostics()
    external_citer_years: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    @property
    def years(self) -> list[int]:
        return sorted({p.year for p in self.papers.values()})

    def __len__(self) -> int:
        return len(self.papers)

    def __iter__(self):
        return iter(self.papers.values())

    def venue_key(self, paper_id: str) -> VenueKey:
        paper = self.papers[paper_id]
        return VenueKey(self.venue_map.get(paper.venue_raw, UNKNOWN_VENUE), paper.year)

    def edge_count(self) -> int:
        return sum(len(p.cited_ids) for p in self.papers.values())


@dataclass(frozen=True)
class SchemaConfig:
    aliases: Mapping[str, str] | None = None
    min_year: int | None = None
    max_year: int | None = None


@dataclass(frozen=True)
class CitationTimeline:
    paper_id: str
    citer_years: tuple[int, ...]  # sorted ascending
    counts_by_year: Mapping[int, int]

    def at(self, year: int) -> int:
        """Cumulative citations with citing-year <= ``year`` (any year, not only corpus years)."""
        return bisect.bisect_right(self.citer_years, year)


def canonicalize_venue(venue_raw: str, year: int, alias_table: Mapping[str, str]) -> VenueKey:
    canonical = alias_table.get(venue_raw)
    if canonical is None:
        canonical = alias_table.get(venue_raw.strip(), UNKNOWN_VENUE)
    return VenueKey(canonical, year)


def load_alias_table(path: str | Path) -> dict[str, str]:
    """Read a two-column ``raw<TAB>canonical`` file. Blank lines and ``#`` comments are skipped."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusError(f"{path}:{lineno}: expected raw<TAB>canonical")
            table[parts[0]] = parts[1].strip()
    return table


def _check_record(obj, lineno: int) -> None:
    if not isinstance(obj, dict):
        raise CorpusError(f"line {lineno}: record is not a JSON object")
    for name, kind in REQUIRED_FIELDS.items():
        if name not in obj or obj[name] is None:
            raise CorpusError(f"line {lineno}: missing required field {name!r}")
        value = obj[name]
        if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
            raise CorpusError(f"line {lineno}: field 'year' must be an integer")
        if not isinstance(value, kind):
            raise CorpusError(f"line {lineno}: field {name!r} must be {kind.__name__}")
    for name in ("authors", "outCitations"):
        if not all(isinstance(x, str) for x in obj[name]):
            raise CorpusError(f"line {lineno}: field {name!r} must contain strings")


def build_corpus(
    records: Iterable[PaperRecord],
    aliases: Mapping[str, str] | None = None,
    external_citer_years: Mapping[str, Iterable[int]] | None = None,
    base: Diagnostics | None = None,
) -> Corpus:
    """Resolve citations among ``records`` and return a canonical corpus.

    Dangling, self, duplicate and time-travel citations are dropped and counted.
    Without an alias table every raw venue label is its own canonical name;
    with one, labels missing from it fall into ``UNKNOWN``.
    """
    by_id: dict[str, PaperRecord] = {}
    for rec in records:
        if rec.id in by_id:
            raise CorpusError(f"duplicate paper id {rec.id!r}")
        by_id[rec.id] = rec

    diag = base or Diagnostics()
    dangling = diag.dangling_edges
    travel = diag.time_travel_edges
    selfc = diag.self_citations
    dup = diag.duplicate_citations
    papers = {}
    for pid in sorted(by_id):
        rec = by_id[pid]
        kept: list[str] = []
        seen = set()
        for cid in rec.cited_ids:
            if cid in seen:
                dup += 1
                continue
            seen.add(cid)
            if cid == pid:
                selfc += 1
            elif cid not in by_id:
                dangling += 1
            elif by_id[cid].year > rec.year:
                travel += 1
            else:
                kept.append(cid)
        papers[pid] = replace(rec, cited_ids=tuple(sorted(kept)))

    venue_map = {}
    for rec in papers.values():
        if aliases is None:
            venue_map[rec.venue_raw] = rec.venue_raw
        else:
            venue_map[rec.venue_raw] = canonicalize_venue(rec.venue_raw, rec.year, aliases).canonical_name

    external = {}
    for pid, years in (external_citer_years or {}).items():
        if pid in papers:
            ys = tuple(sorted(years))
            if ys:
                external[pid] = ys

    return Corpus(
        papers=papers,
        venue_map=dict(sorted(venue_map.items())),
        diagnostics=Diagnostics(dangling, travel, selfc, dup),
        external_citer_years=external,
    )


def parse_corpus(record_stream: Iterable[str], schema_config: SchemaConfig | None = None) -> Corpus:
    """Parse JSONL lines into a validated :class:`Corpus`.

    Raises :class:`CorpusError` naming the offending line for malformed JSON,
    missing or mistyped fields, out-of-range years and duplicate ids.
    """
    cfg = schema_config or SchemaConfig()
    records = []
    seen: dict[str, int] = {}
    external: dict[str, list[int]] = {}
    stored_aliases: dict[str, str] = {}
    for lineno, line in enumerate(record_stream, 1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        _check_record(obj, lineno)
        year = obj["year"]
        if cfg.min_year is not None and year < cfg.min_year or cfg.max_year is not None and year > cfg.max_year:
            raise CorpusError(f"line {lineno}: year {year} outside declared range")
        pid = obj["id"]
        if pid in seen:
            raise CorpusError(f"line {lineno}: duplicate paper id {pid!r} (first on line {seen[pid]})")
        seen[pid] = lineno
        venue_raw = obj["venue"]
        if isinstance(obj.get("venueRaw"), str):
            # corpus files written by write_corpus carry the canonical name in ``venue``
            venue_raw = obj["venueRaw"]
            stored_aliases[venue_raw] = obj["venue"]
        records.append(
            PaperRecord(
                id=pid,
                year=year,
                venue_raw=venue_raw,
                author_ids=tuple(obj["authors"]),
                abstract=obj["abstract"],
                cited_ids=tuple(obj["outCitations"]),
            )
        )
        if obj.get("externalCiterYears"):
            external[pid] = [int(y) for y in obj["externalCiterYears"]]
    aliases = None if cfg.aliases is None and not stored_aliases else {**stored_aliases, **(cfg.aliases or {})}
    return build_corpus(records, aliases, external)


def read_corpus(path: str | Path, schema_config: SchemaConfig | None = None) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh, schema_config)


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the corpus back as JSONL in id order.

    Canonical venue names are stored in ``venue`` (so re-reading needs no alias
    table); the raw label is kept in ``venueRaw``.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for p in corpus:
            obj = {
                "id": p.id,
                "year": p.year,
                "venue": corpus.venue_map.get(p.venue_raw, UNKNOWN_VENUE),
                "venueRaw": p.venue_raw,
                "authors": list(p.author_ids),
                "abstract": p.abstract,
                "outCitations": list(p.cited_ids),
            }
            if p.id in corpus.external_citer_years:
                obj["externalCiterYears"] = list(corpus.external_citer_years[p.id])
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def identity_aliases(corpus: Corpus) -> dict[str, str]:
    return {v: v for v in corpus.venue_map.values()}


def filter_by_venues(corpus: Corpus, canonical_allowlist: Iterable[str]) -> Corpus:
    """Keep papers whose canonical venue is allowed and re-resolve citations.

    Citations into removed papers become dangling edges. Citers that are
    removed are remembered in ``external_citer_years`` of the cited paper.
    """
    allow = set(canonical_allowlist)
    if not allow:
        raise CorpusError("venue allowlist must not be empty")
    keep = {pid for pid in corpus.papers if corpus.venue_map.get(corpus.papers[pid].venue_raw, UNKNOWN_VENUE) in allow}

    external: dict[str, list[int]] = {pid: list(ys) for pid, ys in corpus.external_citer_years.items() if pid in keep}
    dangling = corpus.diagnostics.dangling_edges
    records = []
    for pid, p in corpus.papers.items():
        if pid in keep:
            cited = tuple(c for c in p.cited_ids if c in keep)
            dangling += len(p.cited_ids) - len(cited)
            records.append(replace(p, cited_ids=cited))
        else:
            for c in p.cited_ids:
                if c in keep:
                    external.setdefault(c, []).append(p.year)

    diag = replace(corpus.diagnostics, dangling_edges=dangling)
    venue_map = {raw: canon for raw, canon in corpus.venue_map.items() if canon in allow}
    kept_raw = {r.venue_raw for r in records}
    filtered = build_corpus(records, {r: c for r, c in venue_map.items() if r in kept_raw}, external)
    return replace(filtered, diagnostics=diag)


def cumulative_citation_counts(corpus: Corpus, include_external: bool = True) -> dict[str, CitationTimeline]:
    """Per-paper cumulative in-corpus citation counts for every corpus year.

    With ``include_external`` the citers dropped by venue filtering count too.
    """
    citer_years: dict[str, list[int]] = defaultdict(list)
    for p in corpus:
        for c in p.cited_ids:
            citer_years[c].append(p.year)
    if include_external:
        for pid, ys in corpus.external_citer_years.items():
            citer_years[pid].extend(ys)

    years = corpus.years
    out = {}
    for pid in corpus.papers:
        ys = tuple(sorted(citer_years.get(pid, ())))
        counts = {y: bisect.bisect_right(ys, y) for y in years}
        out[pid] = CitationTimeline(pid, ys, counts)
    return out
