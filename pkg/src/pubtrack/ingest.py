"""Scopus CSV ingestion: parse researcher exports, deduplicate, enrich.

The canonical publication id is the DOI when present, otherwise a hash of
(normalized title, year). Ids are therefore stable across runs and across
input file orderings, which makes deduplication order-independent.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Mapping, Optional, Protocol

from .errors import (
    MalformedMappingFile,
    MissingRequiredColumn,
    ProviderUnavailable,
    RowParseError,
)

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("Title", "Year")

# Scopus writes this placeholder instead of leaving the field empty.
_NO_ABSTRACT = "[no abstract available]"

_WS_RE = re.compile(r"\s+")


class DocType(str, Enum):
    JOURNAL = "Journal"
    CONFERENCE = "Conference"
    OTHER = "Other"


_DOC_TYPE_MAP = {
    "article": DocType.JOURNAL,
    "review": DocType.JOURNAL,
    "conference paper": DocType.CONFERENCE,
}


@dataclass(frozen=True)
class AuthorRef:
    name: str
    author_id: Optional[str] = None
    institution: Optional[str] = None
    country: Optional[str] = None


@dataclass(frozen=True)
class Publication:
    id: str
    doi: Optional[str]
    title: str
    abstract: str
    author_keywords: tuple[str, ...]
    index_keywords: tuple[str, ...]
    year: int
    venue: str
    doc_type: DocType
    authors: tuple[AuthorRef, ...]
    citations: int
    sjr: Optional[float] = None
    snip: Optional[float] = None

    def text(self) -> str:
        """Document text fed to embedding providers: title, abstract, keywords."""
        keywords = " ".join(self.author_keywords + self.index_keywords)
        return f"{self.title} {self.abstract} {keywords}"


@dataclass(frozen=True)
class ResearcherProfile:
    researcher_id: str
    display_name: str
    home_institution: Optional[str]
    home_country: Optional[str]
    publication_ids: frozenset[str]


@dataclass(frozen=True)
class Dataset:
    publications: dict[str, Publication]
    researchers: dict[str, ResearcherProfile]
    provenance: dict
    pipeline_seed: int = 0

    def publication_ids(self) -> list[str]:
        """All publication ids in canonical (sorted) order."""
        return sorted(self.publications)

    def researcher_publications(self, researcher_id: str) -> list[Publication]:
        profile = self.researchers[researcher_id]
        return [self.publications[i] for i in sorted(profile.publication_ids)]


def normalize_title(title: str) -> str:
    return _WS_RE.sub(" ", title.strip().lower())


def canonical_id(doi: Optional[str], title: str, year: int) -> str:
    if doi:
        return doi.strip().lower()
    key = f"{normalize_title(title)}|{year}"
    return "t-" + hashlib.blake2b(key.encode("utf-8"), digest_size=8).hexdigest()


def slugify(name: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-")
    return slug or "researcher"


def _split_multi(value: str, sep: str = ";") -> list[str]:
    return [part.strip() for part in value.split(sep) if part.strip()]


def _parse_author_affiliations(raw: str) -> dict[str, tuple[str, str]]:
    """Parse the 'Authors with affiliations' column.

    Each entry is 'Name, Institution, City, Country'; entries separated by
    semicolons. Returns name -> (institution, country).
    """
    result: dict[str, tuple[str, str]] = {}
    for entry in _split_multi(raw):
        parts = [p.strip() for p in entry.split(",")]
        if len(parts) < 2:
            continue
        name = parts[0]
        institution = parts[1]
        country = parts[-1] if len(parts) >= 3 else ""
        result.setdefault(name, (institution, country))
    return result


def _parse_authors(row: Mapping[str, str]) -> list[AuthorRef]:
    names_raw = (row.get("Authors") or "").strip()
    if ";" in names_raw:
        names = _split_multi(names_raw)
    else:
        names = [n.strip() for n in names_raw.split(", ") if n.strip()]

    ids = _split_multi(row.get("Author(s) ID") or "")
    affiliations = _parse_author_affiliations(row.get("Authors with affiliations") or "")

    refs = []
    for i, name in enumerate(names):
        author_id = ids[i] if i < len(ids) else None
        institution, country = affiliations.get(name, (None, None))
        refs.append(
            AuthorRef(
                name=name,
                author_id=author_id,
                institution=institution or None,
                country=country or None,
            )
        )
    return refs


def parse_scopus_csv(
    data: bytes | str,
    researcher_hint: Optional[str] = None,
) -> list[tuple[Publication, list[AuthorRef]]]:
    """Parse one Scopus-style CSV export.

    Returns one (Publication, authors) pair per well-formed data row.
    Malformed rows are logged and skipped. Raises MissingRequiredColumn
    when the header lacks Title or Year.
    """
    if isinstance(data, bytes):
        text = data.decode("utf-8-sig")
    else:
        text = data
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    for column in REQUIRED_COLUMNS:
        if column not in header:
            raise MissingRequiredColumn(column)

    max_year = datetime.now().year + 1
    results: list[tuple[Publication, list[AuthorRef]]] = []
    for index, row in enumerate(reader):
        try:
            pub, authors = _parse_row(row, max_year)
        except RowParseError as err:
            logger.warning("skipping row %d of %s: %s", index, researcher_hint or "<csv>", err.cause)
            continue
        results.append((pub, authors))
    return results


def _parse_row(row: Mapping[str, str], max_year: int) -> tuple[Publication, list[AuthorRef]]:
    title = (row.get("Title") or "").strip()
    if not title:
        raise RowParseError(0, "empty title")

    year_raw = (row.get("Year") or "").strip()
    try:
        year = int(year_raw)
    except ValueError:
        raise RowParseError(0, f"unparseable year {year_raw!r}")
    if not 1900 <= year <= max_year:
        raise RowParseError(0, f"year {year} outside [1900, {max_year}]")

    cited_raw = (row.get("Cited by") or "").strip()
    try:
        citations = int(cited_raw) if cited_raw else 0
    except ValueError:
        raise RowParseError(0, f"unparseable citation count {cited_raw!r}")
    if citations < 0:
        raise RowParseError(0, f"negative citation count {citations}")

    doi = (row.get("DOI") or "").strip().lower() or None

    abstract = (row.get("Abstract") or "").strip()
    if abstract.lower() == _NO_ABSTRACT:
        abstract = ""

    authors = _parse_authors(row)
    if not authors:
        raise RowParseError(0, "no authors")

    doc_type_raw = (row.get("Document Type") or "").strip().lower()
    doc_type = _DOC_TYPE_MAP.get(doc_type_raw, DocType.OTHER)

    pub = Publication(
        id=canonical_id(doi, title, year),
        doi=doi,
        title=title,
        abstract=abstract,
        author_keywords=tuple(_split_multi(row.get("Author Keywords") or "")),
        index_keywords=tuple(_split_multi(row.get("Index Keywords") or "")),
        year=year,
        venue=(row.get("Source title") or "").strip(),
        doc_type=doc_type,
        authors=tuple(authors),
        citations=citations,
    )
    return pub, authors


def deduplicate(pubs: Iterable[Publication]) -> dict[str, Publication]:
    """Merge records that share a canonical id (DOI, or title+year hash).

    The merged record keeps the first-seen bibliographic fields, the
    maximum citation count, and the union of keywords. Returns id -> merged
    Publication; iteration order is sorted by id so downstream structures
    are independent of input order.
    """
    merged: dict[str, Publication] = {}
    for pub in pubs:
        existing = merged.get(pub.id)
        if existing is None:
            merged[pub.id] = pub
            continue
        if existing.year != pub.year:
            logger.warning(
                "duplicate id %s with conflicting years %d and %d; keeping first",
                pub.id, existing.year, pub.year,
            )
        merged[pub.id] = replace(
            existing,
            citations=max(existing.citations, pub.citations),
            author_keywords=_union(existing.author_keywords, pub.author_keywords),
            index_keywords=_union(existing.index_keywords, pub.index_keywords),
        )
    return {pid: merged[pid] for pid in sorted(merged)}


def _union(first: tuple[str, ...], second: tuple[str, ...]) -> tuple[str, ...]:
    seen = list(first)
    for item in second:
        if item not in seen:
            seen.append(item)
    return tuple(seen)


def _ego_ref(authors: Iterable[AuthorRef], display_name: str, author_id: Optional[str]) -> Optional[AuthorRef]:
    """Locate the researcher in an author list: id match first, then name."""
    folded = normalize_title(display_name)
    for ref in authors:
        if author_id and ref.author_id == author_id:
            return ref
        if normalize_title(ref.name) == folded:
            return ref
    return None


def _home_affiliation(
    pubs: Iterable[Publication], display_name: str, author_id: Optional[str]
) -> tuple[Optional[str], Optional[str]]:
    """Most frequent (institution, country) of the researcher's own entries."""
    counts: dict[tuple[str, str], int] = {}
    for pub in pubs:
        ego = _ego_ref(pub.authors, display_name, author_id)
        if ego is None:
            logger.debug("researcher %r not matched in authors of %s", display_name, pub.id)
            continue
        if ego.institution:
            key = (ego.institution, ego.country or "")
            counts[key] = counts.get(key, 0) + 1
    if not counts:
        return None, None
    best = min(counts, key=lambda k: (-counts[k], k))
    return best[0], best[1] or None


def build_dataset(
    sources: Mapping[str, bytes | str],
    *,
    author_ids: Optional[Mapping[str, str]] = None,
    pipeline_seed: int = 0,
) -> Dataset:
    """Parse researcher CSV exports into a deduplicated Dataset.

    `sources` maps researcher display name -> CSV content. `author_ids`
    optionally maps display name -> Scopus author id, used to locate the
    researcher inside multi-author records.
    """
    author_ids = dict(author_ids or {})
    parsed: dict[str, list[Publication]] = {}
    for display_name in sorted(sources):
        rows = parse_scopus_csv(sources[display_name], researcher_hint=display_name)
        parsed[display_name] = [pub for pub, _ in rows]

    all_pubs = [pub for pubs in parsed.values() for pub in pubs]
    publications = deduplicate(all_pubs)

    researchers: dict[str, ResearcherProfile] = {}
    for display_name, pubs in parsed.items():
        researcher_id = slugify(display_name)
        own_ids = frozenset(pub.id for pub in pubs)
        home_inst, home_country = _home_affiliation(
            (publications[i] for i in sorted(own_ids)), display_name, author_ids.get(display_name)
        )
        researchers[researcher_id] = ResearcherProfile(
            researcher_id=researcher_id,
            display_name=display_name,
            home_institution=home_inst,
            home_country=home_country,
            publication_ids=own_ids,
        )

    provenance = {
        "sources": sorted(sources),
        "ingested_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    return Dataset(
        publications=publications,
        researchers=researchers,
        provenance=provenance,
        pipeline_seed=pipeline_seed,
    )


class EnrichmentProvider(Protocol):
    def impact(self, venue: str, year: int) -> Optional[tuple[float, float]]:
        """Return (sjr, snip) for a venue-year, or None when unknown."""
        ...


class OfflineEnrichment:
    """Venue-impact lookup backed by a CSV file: venue,year,sjr,snip."""

    def __init__(self, table: Mapping[tuple[str, int], tuple[float, float]]):
        self._table = dict(table)

    @classmethod
    def from_csv(cls, data: bytes | str) -> "OfflineEnrichment":
        if isinstance(data, bytes):
            data = data.decode("utf-8-sig")
        reader = csv.DictReader(io.StringIO(data))
        expected = {"venue", "year", "sjr", "snip"}
        if not expected.issubset(set(reader.fieldnames or [])):
            raise MalformedMappingFile(
                f"mapping file needs columns {sorted(expected)}, got {reader.fieldnames}"
            )
        table = {}
        for row in reader:
            try:
                key = (row["venue"].strip().casefold(), int(row["year"]))
                table[key] = (float(row["sjr"]), float(row["snip"]))
            except (ValueError, AttributeError) as err:
                raise MalformedMappingFile(f"bad mapping row {row!r}: {err}") from err
        return cls(table)

    def impact(self, venue: str, year: int) -> Optional[tuple[float, float]]:
        return self._table.get((venue.strip().casefold(), year))


class ScopusEnrichment:
    """Serial-title impact lookup over HTTPS+JSON (replaceable plumbing).

    GET {endpoint}/serial-title?title=<venue>&year=<year> with an API-key
    header; expects a JSON body {"sjr": <float>, "snip": <float>}.
    """

    def __init__(self, endpoint: str, api_key: str = "", timeout: float = 10.0):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout

    def impact(self, venue: str, year: int) -> Optional[tuple[float, float]]:
        import httpx

        headers = {"X-ELS-APIKey": self.api_key} if self.api_key else {}
        try:
            response = httpx.get(
                f"{self.endpoint}/serial-title",
                params={"title": venue, "year": year},
                headers=headers,
                timeout=self.timeout,
            )
        except httpx.HTTPError as err:
            raise ProviderUnavailable(f"enrichment endpoint unreachable: {err}") from err
        if response.status_code == 404:
            return None
        if response.status_code != 200:
            raise ProviderUnavailable(f"enrichment endpoint returned {response.status_code}")
        body = response.json()
        if body.get("sjr") is None or body.get("snip") is None:
            return None
        return float(body["sjr"]), float(body["snip"])


def enrich(dataset: Dataset, provider: EnrichmentProvider) -> Dataset:
    """Fill sjr/snip per (venue, year). Misses leave the fields untouched."""
    publications = {}
    hits = 0
    for pid, pub in dataset.publications.items():
        impact = provider.impact(pub.venue, pub.year) if pub.venue else None
        if impact is not None:
            pub = replace(pub, sjr=impact[0], snip=impact[1])
            hits += 1
        publications[pid] = pub
    logger.info("enriched %d of %d publications", hits, len(publications))
    return replace(dataset, publications=publications)
