"""Resume corpus ingestion, vocabularies, and the title-description table.

File formats (all line-delimited JSON, UTF-8):

  resume file     {"id": str, "label": 0|1, "source": str,
                   "entries": [{"title": str, "company": str,
                                "duration_months": int,
                                "start": str?, "end": str?}]}
  mapping file    {"title": str, "description": str}
  embedding file  {"key": str, "vector": [float, ...]}   (constant dimension)

Start/end dates are carried through serialization untouched; only
duration_months feeds the model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, UsageError

UNK_TOKEN = "<UNK>"


class Vocabulary:
    """Bidirectional string <-> dense index map for one entity kind.

    Index 0 is always the shared UNK entry.  A frozen vocabulary stops
    growing: unseen tokens resolve to the UNK index, which is how unseen
    entities are handled at inference time.
    """

    def __init__(self, kind: str):
        self.kind = kind
        self._index: dict[str, int] = {UNK_TOKEN: 0}
        self._tokens: list[str] = [UNK_TOKEN]
        self._frozen = False

    @property
    def unk_index(self) -> int:
        return 0

    def freeze(self) -> None:
        self._frozen = True

    @property
    def frozen(self) -> bool:
        return self._frozen

    def add(self, token: str) -> int:
        """Return the index for *token*, assigning a new one on first sight."""
        idx = self._index.get(token)
        if idx is not None:
            return idx
        if self._frozen:
            return 0
        idx = len(self._tokens)
        self._index[token] = idx
        self._tokens.append(token)
        return idx

    def index(self, token: str) -> int:
        """Look up *token*, falling back to UNK."""
        return self._index.get(token, 0)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def tokens(self) -> list[str]:
        return list(self._tokens)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index


@dataclass
class VocabSet:
    """The three entity vocabularies used throughout the pipeline."""

    titles: Vocabulary = field(default_factory=lambda: Vocabulary("title"))
    companies: Vocabulary = field(default_factory=lambda: Vocabulary("company"))
    descriptions: Vocabulary = field(default_factory=lambda: Vocabulary("description"))

    def freeze(self) -> None:
        self.titles.freeze()
        self.companies.freeze()
        self.descriptions.freeze()


@dataclass(frozen=True)
class JobEntry:
    """One job: title/company as vocabulary indices plus duration in months."""

    title_id: int
    company_id: int
    duration_months: int
    start: str | None = None
    end: str | None = None


@dataclass(frozen=True)
class Resume:
    """A labeled, chronologically ordered career trajectory (oldest first)."""

    id: str
    label: int  # 0 = human, 1 = synthetic
    source: str
    entries: tuple[JobEntry, ...]

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"resume {self.id!r}: label must be 0 or 1, got {self.label}")
        if not self.entries:
            raise DataError(f"resume {self.id!r}: empty entry list")
        for e in self.entries:
            if e.duration_months < 1:
                raise DataError(
                    f"resume {self.id!r}: duration_months must be >= 1, got {e.duration_months}"
                )


def _parse_entry(raw: dict, vocabs: VocabSet, where: str) -> JobEntry:
    if not isinstance(raw, dict):
        raise DataError(f"{where}: entry is not an object")
    for key in ("title", "company", "duration_months"):
        if key not in raw:
            raise DataError(f"{where}: entry missing {key!r}")
    title = raw["title"]
    company = raw["company"]
    duration = raw["duration_months"]
    if not isinstance(title, str) or not title:
        raise DataError(f"{where}: title must be a non-empty string")
    if not isinstance(company, str) or not company:
        raise DataError(f"{where}: company must be a non-empty string")
    if not isinstance(duration, int) or isinstance(duration, bool) or duration < 1:
        raise DataError(f"{where}: duration_months must be an integer >= 1, got {duration!r}")
    return JobEntry(
        title_id=vocabs.titles.add(title),
        company_id=vocabs.companies.add(company),
        duration_months=duration,
        start=raw.get("start"),
        end=raw.get("end"),
    )


def load_resumes(
    path: str,
    vocabs: VocabSet,
    expected_label: int | None = None,
) -> list[Resume]:
    """Load a line-delimited resume file, growing *vocabs* on first sight.

    When *expected_label* is given it overrides whatever the records carry.
    Raises DataError naming the line/record for any malformed input.
    """
    if expected_label is not None and expected_label not in (0, 1):
        raise UsageError(f"expected_label must be 0 or 1, got {expected_label}")
    resumes: list[Resume] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            resumes.append(_parse_record(record, vocabs, expected_label, f"{path}:{lineno}"))
    return resumes


def _parse_record(
    record: dict, vocabs: VocabSet, expected_label: int | None, where: str
) -> Resume:
    if not isinstance(record, dict):
        raise DataError(f"{where}: record is not an object")
    rid = record.get("id")
    if not isinstance(rid, str) or not rid:
        raise DataError(f"{where}: missing or invalid 'id'")
    where = f"{where} (resume {rid!r})"
    if expected_label is not None:
        label = expected_label
    else:
        label = record.get("label")
        if label not in (0, 1):
            raise DataError(f"{where}: label must be 0 or 1, got {label!r}")
    source = record.get("source", "unknown")
    if not isinstance(source, str):
        raise DataError(f"{where}: source must be a string")
    raw_entries = record.get("entries")
    if not isinstance(raw_entries, list) or not raw_entries:
        raise DataError(f"{where}: empty entry list")
    entries = tuple(_parse_entry(e, vocabs, where) for e in raw_entries)
    return Resume(id=rid, label=label, source=source, entries=entries)


def resume_to_record(resume: Resume, vocabs: VocabSet) -> dict:
    entries = []
    for e in resume.entries:
        rec = {
            "title": vocabs.titles.token(e.title_id),
            "company": vocabs.companies.token(e.company_id),
            "duration_months": e.duration_months,
        }
        if e.start is not None:
            rec["start"] = e.start
        if e.end is not None:
            rec["end"] = e.end
        entries.append(rec)
    return {"id": resume.id, "label": resume.label, "source": resume.source, "entries": entries}


def save_resumes(resumes: Iterable[Resume], path: str, vocabs: VocabSet) -> None:
    """Write resumes in the line-delimited format read by :func:`load_resumes`."""
    with open(path, "w", encoding="utf-8") as fh:
        for resume in resumes:
            fh.write(json.dumps(resume_to_record(resume, vocabs), sort_keys=True))
            fh.write("\n")


def filter_by_company_frequency(
    resumes: Sequence[Resume], min_occurrences: int = 4
) -> list[Resume]:
    """Keep resumes whose every company occurs >= min_occurrences in the corpus.

    One job entry counts as one occurrence.  Counts are taken once over the
    input; the filter is not iterated to a fixpoint.
    """
    if min_occurrences < 1:
        raise UsageError(f"min_occurrences must be >= 1, got {min_occurrences}")
    counts: dict[int, int] = {}
    for resume in resumes:
        for entry in resume.entries:
            counts[entry.company_id] = counts.get(entry.company_id, 0) + 1
    return [
        r for r in resumes if all(counts[e.company_id] >= min_occurrences for e in r.entries)
    ]


# ---------------------------------------------------------------------------
# Description table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DescriptionEntry:
    desc_id: int  # index in the description vocabulary
    text: str
    vector: np.ndarray


class DescriptionTable:
    """Per-title description text and vector, one entry per mapped title."""

    def __init__(self, entries: dict[int, DescriptionEntry], dim: int):
        self._entries = entries
        self.dim = dim

    def __contains__(self, title_id: int) -> bool:
        return title_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, title_id: int) -> DescriptionEntry | None:
        return self._entries.get(title_id)

    def entry(self, title_id: int) -> DescriptionEntry:
        try:
            return self._entries[title_id]
        except KeyError:
            raise DataError(f"no description entry for title id {title_id}") from None

    def items(self):
        return self._entries.items()

    def vector_by_desc_id(self, desc_id: int) -> np.ndarray:
        for entry in self._entries.values():
            if entry.desc_id == desc_id:
                return entry.vector
        raise DataError(f"no description vector for desc id {desc_id}")


def load_description_mapping(path: str) -> dict[str, str]:
    """Read a title->description mapping file. Duplicate titles are an error."""
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            title = record.get("title")
            desc = record.get("description")
            if not isinstance(title, str) or not isinstance(desc, str) or not desc:
                raise DataError(f"{path}:{lineno}: need string 'title' and 'description'")
            if title in mapping:
                raise DataError(f"{path}:{lineno}: duplicate mapping for title {title!r}")
            mapping[title] = desc
    return mapping


def load_embedding_file(path: str) -> dict[str, np.ndarray]:
    """Read a key->vector file; all vectors must share one finite dimension."""
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            key = record.get("key")
            vec = record.get("vector")
            if not isinstance(key, str) or not isinstance(vec, list) or not vec:
                raise DataError(f"{path}:{lineno}: need string 'key' and list 'vector'")
            arr = np.asarray(vec, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{path}:{lineno}: non-finite vector for key {key!r}")
            if dim is None:
                dim = arr.shape[0]
            elif arr.shape[0] != dim:
                raise DataError(
                    f"{path}:{lineno}: vector dimension {arr.shape[0]} != {dim} "
                    f"seen earlier in the file"
                )
            vectors[key] = arr
    if dim is None:
        raise DataError(f"{path}: empty embedding file")
    return vectors


def attach_descriptions(
    vocabs: VocabSet,
    mapping_path: str,
    embedding_path: str | None = None,
    fallback_dim: int = 64,
    default_description: str | None = None,
) -> DescriptionTable:
    """Build the DescriptionTable for every (non-UNK) title in the vocabulary.

    Vectors come from *embedding_path* when given (keyed by title string),
    otherwise from :func:`fallback_embedding` of the description text.  The
    title->description map must be injective; a title absent from the mapping
    uses *default_description* or raises.
    """
    mapping = load_description_mapping(mapping_path)
    vectors = load_embedding_file(embedding_path) if embedding_path else None
    dim = next(iter(vectors.values())).shape[0] if vectors else fallback_dim

    seen_texts: dict[str, str] = {}
    entries: dict[int, DescriptionEntry] = {}
    for title in vocabs.titles.tokens():
        if title == UNK_TOKEN:
            continue
        text = mapping.get(title)
        if text is None:
            if default_description is None:
                raise DataError(f"title {title!r} has no description mapping and no default")
            text = default_description
        elif text in seen_texts:
            raise DataError(
                f"description for title {title!r} duplicates the one for "
                f"{seen_texts[text]!r}; the mapping must be one-to-one"
            )
        else:
            seen_texts[text] = title
        if vectors is not None:
            vec = vectors.get(title)
            if vec is None:
                vec = fallback_embedding(text, dim)
        else:
            vec = fallback_embedding(text, dim)
        if vec.shape[0] != dim:
            raise DataError(
                f"description vector for title {title!r} has dimension "
                f"{vec.shape[0]}, expected {dim}"
            )
        title_id = vocabs.titles.index(title)
        desc_id = vocabs.descriptions.add(text)
        entries[title_id] = DescriptionEntry(desc_id=desc_id, text=text, vector=vec)
    return DescriptionTable(entries, dim)


def stable_text_hash(text: str) -> int:
    """64-bit hash of a string, stable across runs and platforms."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def fallback_embedding(text: str, dim: int) -> np.ndarray:
    """Deterministic unit vector standing in for a pretrained text embedding.

    Seeded by a stable hash of the text and drawn from a counter-based
    generator, so identical text always yields an identical vector.
    """
    if dim < 2:
        raise UsageError(f"embedding dim must be >= 2, got {dim}")
    if not text:
        raise DataError("cannot embed empty text")
    rng = np.random.Generator(np.random.Philox(key=stable_text_hash(text)))
    vec = rng.standard_normal(dim)
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:  # unreachable in practice, keeps the contract airtight
        vec[0] = 1.0
        norm = 1.0
    return vec / norm
