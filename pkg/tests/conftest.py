import json

import pytest

from careergraph.corpus import (
    DescriptionEntry,
    DescriptionTable,
    JobEntry,
    Resume,
    UNK_TOKEN,
    VocabSet,
    fallback_embedding,
)
from careergraph.generators import default_schema


def mk_resume(vocabs, rid, label, jobs, source="test"):
    """Readable resume builder: jobs is [(title, company, months), ...]."""
    entries = tuple(
        JobEntry(
            title_id=vocabs.titles.add(title),
            company_id=vocabs.companies.add(company),
            duration_months=months,
        )
        for title, company, months in jobs
    )
    return Resume(id=rid, label=label, source=source, entries=entries)


def mk_desc_table(vocabs, dim=8, skip=()):
    """Description table covering every title currently in the vocabulary."""
    entries = {}
    for token in vocabs.titles.tokens():
        if token == UNK_TOKEN or token in skip:
            continue
        text = f"handles {token} responsibilities"
        desc_id = vocabs.descriptions.add(text)
        entries[vocabs.titles.index(token)] = DescriptionEntry(
            desc_id=desc_id, text=text, vector=fallback_embedding(text, dim)
        )
    return DescriptionTable(entries, dim)


def write_resume_file(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


@pytest.fixture
def vocabs():
    return VocabSet()


@pytest.fixture
def schema():
    return default_schema()


@pytest.fixture
def schema_desc_files(tmp_path, schema):
    """Mapping + structured-embedding files for the default schema."""
    desc_path = tmp_path / "desc_map.jsonl"
    emb_path = tmp_path / "desc_emb.jsonl"
    descriptions = schema.descriptions()
    with open(desc_path, "w", encoding="utf-8") as fh:
        for title in sorted(descriptions):
            fh.write(json.dumps({"title": title, "description": descriptions[title]}) + "\n")
    vectors = schema.description_vectors(24)
    with open(emb_path, "w", encoding="utf-8") as fh:
        for title in sorted(vectors):
            fh.write(json.dumps({"key": title, "vector": vectors[title].tolist()}) + "\n")
    return str(desc_path), str(emb_path)
