"""Synthetic resume generators and corpus statistics.

Four rule-based fakes (random, popular, swapping, replacing), an ingestion
path for externally generated corpora, and a Markov career model that serves
as the procedural "real" corpus for desk-scale experiments.

Every generator draws each output resume from an independently seeded
substream (seed sequence [master_seed, output_index]), so generation order
does not matter and results are reproducible byte for byte.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import JobEntry, Resume, VocabSet, fallback_embedding, load_resumes
from .errors import DataError, UsageError

logger = logging.getLogger(__name__)

METHODS = ("random", "popular", "swapping", "replacing", "markov_real")


@dataclass
class GeneratorConfig:
    method: str
    count: int
    seed: int
    popular_top_fraction: float = 0.10
    lognormal_mu: float | None = None  # log-months; fitted from corpus when None
    lognormal_sigma: float | None = None
    n_swaps: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise UsageError(f"unknown generator method {self.method!r}")
        if self.count < 1:
            raise UsageError(f"count must be >= 1, got {self.count}")
        if not (0.0 < self.popular_top_fraction <= 1.0):
            raise UsageError(
                f"popular_top_fraction must be in (0, 1], got {self.popular_top_fraction}"
            )
        if self.lognormal_sigma is not None and self.lognormal_sigma <= 0:
            raise UsageError(f"lognormal_sigma must be > 0, got {self.lognormal_sigma}")
        if self.n_swaps < 1:
            raise UsageError(f"n_swaps must be >= 1, got {self.n_swaps}")


@dataclass
class GeneratorWarnings:
    """Counters for soft anomalies during generation."""

    degenerate_swaps: int = 0


def _rng(seed: int, index: int) -> np.random.Generator:
    # Independent substream per output resume; identical to sequential results.
    return np.random.default_rng([seed, index])


def _entity_pools(corpus: list[Resume]):
    titles, companies, durations = [], [], []
    for r in corpus:
        for e in r.entries:
            titles.append(e.title_id)
            companies.append(e.company_id)
            durations.append(e.duration_months)
    return np.array(titles), np.array(companies), np.array(durations)


def gen_random(corpus: list[Resume], cfg: GeneratorConfig) -> list[Resume]:
    """Fakes assembled from independently, uniformly drawn corpus entities."""
    if not corpus:
        raise DataError("cannot generate from an empty corpus")
    titles, companies, durations = _entity_pools(corpus)
    lengths = np.array([len(r.entries) for r in corpus])
    out = []
    for i in range(cfg.count):
        rng = _rng(cfg.seed, i)
        k = int(rng.choice(lengths))
        entries = tuple(
            JobEntry(
                title_id=int(rng.choice(titles)),
                company_id=int(rng.choice(companies)),
                duration_months=int(rng.choice(durations)),
            )
            for _ in range(k)
        )
        out.append(Resume(id=f"random-{cfg.seed}-{i:06d}", label=1, source="random", entries=entries))
    return out


def _top_fraction_pool(ids: np.ndarray, fraction: float) -> np.ndarray:
    """Distinct ids ranked by (count desc, id asc), truncated to the top fraction."""
    uniq, counts = np.unique(ids, return_counts=True)
    order = np.lexsort((uniq, -counts))  # count desc, then index asc
    top_n = int(fraction * len(uniq))
    if top_n < 1:
        raise DataError(
            f"top fraction {fraction} of {len(uniq)} entities yields an empty pool"
        )
    return uniq[order][:top_n]


def fit_log_duration(corpus: list[Resume]) -> tuple[float, float]:
    """Mean/std of log duration over all corpus entries (population std)."""
    logs = np.log([e.duration_months for r in corpus for e in r.entries])
    sigma = float(np.std(logs))
    return float(np.mean(logs)), max(sigma, 1e-9)


def gen_popular(corpus: list[Resume], cfg: GeneratorConfig) -> list[Resume]:
    """Fakes built from the most frequent entities with log-normal durations."""
    if not corpus:
        raise DataError("cannot generate from an empty corpus")
    titles, companies, _ = _entity_pools(corpus)
    title_pool = _top_fraction_pool(titles, cfg.popular_top_fraction)
    company_pool = _top_fraction_pool(companies, cfg.popular_top_fraction)
    fit_mu, fit_sigma = fit_log_duration(corpus)
    mu = cfg.lognormal_mu if cfg.lognormal_mu is not None else fit_mu
    sigma = cfg.lognormal_sigma if cfg.lognormal_sigma is not None else fit_sigma
    lengths = np.array([len(r.entries) for r in corpus])
    out = []
    for i in range(cfg.count):
        rng = _rng(cfg.seed, i)
        k = int(rng.choice(lengths))
        entries = tuple(
            JobEntry(
                title_id=int(rng.choice(title_pool)),
                company_id=int(rng.choice(company_pool)),
                duration_months=_lognormal_months(rng, mu, sigma),
            )
            for _ in range(k)
        )
        out.append(
            Resume(id=f"popular-{cfg.seed}-{i:06d}", label=1, source="popular", entries=entries)
        )
    return out


def gen_swapping(
    corpus: list[Resume],
    cfg: GeneratorConfig,
    warnings: GeneratorWarnings | None = None,
) -> list[Resume]:
    """Fakes made by exchanging the companies of two positions in a real resume.

    Titles and durations are untouched.  If the two drawn positions hold the
    same company the pair is redrawn up to 10 times, after which the resume is
    emitted as-is and the degenerate-swap counter incremented.
    """
    eligible = [r for r in corpus if len(r.entries) >= 2]
    if not eligible:
        raise DataError("no resume with >= 2 entries to swap within")
    warnings = warnings if warnings is not None else GeneratorWarnings()
    out = []
    for i in range(cfg.count):
        rng = _rng(cfg.seed, i)
        src = eligible[int(rng.integers(len(eligible)))]
        entries = list(src.entries)
        for _ in range(cfg.n_swaps):
            a = b = 0
            for _attempt in range(10):
                a, b = (int(x) for x in rng.choice(len(entries), size=2, replace=False))
                if entries[a].company_id != entries[b].company_id:
                    break
            else:
                warnings.degenerate_swaps += 1
            ea, eb = entries[a], entries[b]
            entries[a] = JobEntry(ea.title_id, eb.company_id, ea.duration_months, ea.start, ea.end)
            entries[b] = JobEntry(eb.title_id, ea.company_id, eb.duration_months, eb.start, eb.end)
        out.append(
            Resume(
                id=f"swapping-{cfg.seed}-{i:06d}",
                label=1,
                source="swapping",
                entries=tuple(entries),
            )
        )
    if warnings.degenerate_swaps:
        logger.warning("%d swap(s) had no effect (identical companies)", warnings.degenerate_swaps)
    return out


def gen_replacing(corpus: list[Resume], cfg: GeneratorConfig) -> list[Resume]:
    """Fakes made by substituting one company with one from another resume.

    The replacement is drawn uniformly over the job entries of all *other*
    resumes, excluding entries holding the original company.
    """
    if len(corpus) < 2:
        raise DataError("replacing needs at least 2 resumes")
    out = []
    for i in range(cfg.count):
        rng = _rng(cfg.seed, i)
        src_idx = int(rng.integers(len(corpus)))
        src = corpus[src_idx]
        pos = int(rng.integers(len(src.entries)))
        original = src.entries[pos].company_id
        pool = [
            e.company_id
            for j, r in enumerate(corpus)
            if j != src_idx
            for e in r.entries
            if e.company_id != original
        ]
        if not pool:
            raise DataError(
                f"no alternative company exists outside resume {src.id!r}"
            )
        replacement = int(pool[int(rng.integers(len(pool)))])
        entries = list(src.entries)
        e = entries[pos]
        entries[pos] = JobEntry(e.title_id, replacement, e.duration_months, e.start, e.end)
        out.append(
            Resume(
                id=f"replacing-{cfg.seed}-{i:06d}",
                label=1,
                source="replacing",
                entries=tuple(entries),
            )
        )
    return out


def ingest_external(path: str, source_tag: str, vocabs: VocabSet) -> list[Resume]:
    """Load externally generated resumes, forcing label 1 and the source tag."""
    loaded = load_resumes(path, vocabs, expected_label=1)
    return [
        Resume(id=r.id, label=1, source=source_tag, entries=r.entries) for r in loaded
    ]


# ---------------------------------------------------------------------------
# Markov career model: the procedural "real" corpus
# ---------------------------------------------------------------------------


@dataclass
class CareerSchema:
    """Career ladders, a tiered/industry-tagged company pool, and transition laws.

    tracks maps a track name to its ordered title ladder (junior first).
    companies maps an industry to an ordered company list; list position
    determines the tier band a company belongs to.  level_transitions is a
    row-stochastic matrix over ladder rungs shared by all tracks.
    """

    tracks: dict[str, list[str]]
    companies: dict[str, list[str]]
    level_transitions: list[list[float]]
    duration_log_mu: list[float]  # per rung
    duration_log_sigma: list[float]
    industry_switch_prob: float = 0.08
    company_change_prob: float = 0.85
    tier_affinity: float = 1.0  # prob of picking a company in the matching tier band
    n_tiers: int = 3
    entries_min: int = 5
    entries_max: int = 8

    def __post_init__(self):
        if not self.tracks or not self.companies:
            raise DataError("schema needs at least one track and one industry")
        rungs = {len(ladder) for ladder in self.tracks.values()}
        if len(rungs) != 1:
            raise DataError("all ladders must have the same number of rungs")
        n = rungs.pop()
        if len(self.level_transitions) != n:
            raise DataError("level_transitions must be square over the ladder rungs")
        for i, row in enumerate(self.level_transitions):
            if len(row) != n:
                raise DataError("level_transitions must be square over the ladder rungs")
            total = sum(row)
            if total <= 0:
                raise DataError(f"level_transitions row {i} is all zero (absorbing)")
            if abs(total - 1.0) > 1e-9:
                raise DataError(f"level_transitions row {i} sums to {total}, expected 1")
        if len(self.duration_log_mu) != n or len(self.duration_log_sigma) != n:
            raise DataError("duration parameters must cover every rung")
        if not (1 <= self.entries_min <= self.entries_max):
            raise DataError("entries_min/entries_max out of order")

    @property
    def n_levels(self) -> int:
        return len(next(iter(self.tracks.values())))

    def titles(self) -> list[str]:
        return [t for ladder in self.tracks.values() for t in ladder]

    def tier_of(self, industry: str, company: str) -> int:
        pool = self.companies[industry]
        band = max(1, len(pool) // self.n_tiers)
        return min(self.n_tiers - 1, pool.index(company) // band)

    def target_tier(self, level: int) -> int:
        return min(self.n_tiers - 1, level * self.n_tiers // self.n_levels)

    def descriptions(self) -> dict[str, str]:
        """One injective description per title, derived from track and rung."""
        out = {}
        for track, ladder in self.tracks.items():
            for level, title in enumerate(ladder):
                out[title] = (
                    f"Performs {title} work within the {track} discipline, "
                    f"owning rung-{level} responsibilities from planning through delivery."
                )
        return out

    def description_vectors(self, dim: int, noise: float = 0.05) -> dict[str, np.ndarray]:
        """Structured stand-in vectors: track and seniority are both encoded.

        Each track gets a deterministic anchor direction; a shared seniority
        direction scales with the ladder rung (descriptions of senior roles
        read differently from junior ones); small per-title jitter keeps the
        mapping injective.  Magnitudes keep same-track cosines >= 0.9 and
        cross-track cosines well below it.
        """
        out = {}
        seniority = fallback_embedding("axis:seniority", dim)
        n = self.n_levels
        for track, ladder in self.tracks.items():
            anchor = fallback_embedding(f"track:{track}", dim)
            for level, title in enumerate(ladder):
                jitter = fallback_embedding(f"title:{title}", dim)
                vec = anchor + 0.45 * (level / max(1, n - 1)) * seniority + noise * jitter
                out[title] = vec / np.linalg.norm(vec)
        return out

    def to_json(self) -> dict:
        return {
            "tracks": self.tracks,
            "companies": self.companies,
            "level_transitions": self.level_transitions,
            "duration_log_mu": self.duration_log_mu,
            "duration_log_sigma": self.duration_log_sigma,
            "industry_switch_prob": self.industry_switch_prob,
            "company_change_prob": self.company_change_prob,
            "tier_affinity": self.tier_affinity,
            "n_tiers": self.n_tiers,
            "entries_min": self.entries_min,
            "entries_max": self.entries_max,
        }

    @classmethod
    def from_json(cls, raw: dict) -> "CareerSchema":
        try:
            return cls(**raw)
        except TypeError as exc:
            raise DataError(f"bad schema document: {exc}") from exc

    @classmethod
    def load(cls, path: str) -> "CareerSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def default_schema() -> CareerSchema:
    """A six-rung, six-track, three-industry schema used for desk-scale runs."""
    tracks = {
        "engineering": [
            "junior software engineer", "software engineer", "senior software engineer",
            "staff engineer", "principal engineer", "engineering director",
        ],
        "data": [
            "data analyst", "data scientist", "senior data scientist",
            "machine learning engineer", "principal data scientist", "head of data",
        ],
        "product": [
            "associate product manager", "product manager", "senior product manager",
            "group product manager", "product director", "vp of product",
        ],
        "sales": [
            "sales development rep", "account executive", "senior account executive",
            "sales manager", "regional sales director", "vp of sales",
        ],
        "finance": [
            "financial analyst", "senior financial analyst", "finance manager",
            "finance director", "vp of finance", "chief financial officer",
        ],
        "operations": [
            "operations coordinator", "operations analyst", "operations manager",
            "senior operations manager", "director of operations", "vp of operations",
        ],
    }
    # 234 companies per industry (ordered by tier band: 78 startup, 78 mid,
    # 78 enterprise).  The pool is deliberately much larger than the corpus
    # can cover densely, so a company's tier has to be read from graph
    # context rather than memorized per entity.
    prefixes = [
        "harbor", "oak", "stirling", "crest", "bluewater", "irongate", "falcon",
        "maple", "stern", "pine", "granite", "beacon", "atlas", "crown",
        "silver", "keystone", "vector", "nimbus", "cobalt", "lumen", "orchid",
        "titan", "zenith", "apex", "nova", "summit",
    ]
    styles = ["", "north ", "new "]
    tiers = ["labs", "group", "global"]
    companies = {
        industry: [
            f"{s}{p} {industry} {t}" for t in tiers for s in styles for p in prefixes
        ]
        for industry in ("tech", "finance", "retail")
    }
    # Monotone-biased ladder: mostly promotions, some stays, rare demotions.
    promote, stay, demote = 0.58, 0.35, 0.07
    n = 6
    transitions = []
    for i in range(n):
        row = [0.0] * n
        if i == n - 1:
            row[i] = stay + promote
            row[i - 1] = demote
        elif i == 0:
            row[i] = stay + demote
            row[i + 1] = promote
        else:
            row[i - 1] = demote
            row[i] = stay
            row[i + 1] = promote
        transitions.append(row)
    return CareerSchema(
        tracks=tracks,
        companies=companies,
        level_transitions=transitions,
        duration_log_mu=[2.20 + 0.18 * lvl for lvl in range(n)],  # ~9 to ~22 months
        duration_log_sigma=[0.35] * n,
    )


def _lognormal_months(rng: np.random.Generator, mu: float, sigma: float) -> int:
    return max(1, int(np.rint(math.exp(rng.normal(mu, sigma)))))


def _pick_company(
    schema: CareerSchema, rng: np.random.Generator, industry: str, level: int,
    exclude: int | None = None,
) -> str:
    pool = schema.companies[industry]
    tier = schema.target_tier(level)
    band = max(1, len(pool) // schema.n_tiers)
    lo, hi = tier * band, min(len(pool), (tier + 1) * band)
    if rng.random() < schema.tier_affinity:
        candidates = list(range(lo, hi))
    else:
        candidates = list(range(len(pool)))
    if exclude is not None and len(candidates) > 1:
        candidates = [c for c in candidates if c != exclude] or candidates
    return pool[candidates[int(rng.integers(len(candidates)))]]


def gen_markov_real(
    cfg: GeneratorConfig, schema: CareerSchema, vocabs: VocabSet
) -> list[Resume]:
    """Label-0 oracle corpus from a first-order Markov career process.

    States are (ladder rung, company); rung transitions follow the schema's
    monotone-biased matrix, durations are per-rung log-normal, and company
    choice respects industry stickiness plus a rung-to-tier affinity.  This
    stands in for a verified-genuine corpus in desk-scale experiments only.
    """
    track_names = sorted(schema.tracks)
    industries = sorted(schema.companies)
    out = []
    for i in range(cfg.count):
        rng = _rng(cfg.seed, i)
        track = track_names[int(rng.integers(len(track_names)))]
        ladder = schema.tracks[track]
        industry = industries[int(rng.integers(len(industries)))]
        level = 0
        company = _pick_company(schema, rng, industry, level)
        k = int(rng.integers(schema.entries_min, schema.entries_max + 1))
        entries = []
        for step in range(k):
            months = _lognormal_months(
                rng, schema.duration_log_mu[level], schema.duration_log_sigma[level]
            )
            entries.append(
                JobEntry(
                    title_id=vocabs.titles.add(ladder[level]),
                    company_id=vocabs.companies.add(company),
                    duration_months=months,
                )
            )
            if step == k - 1:
                break
            probs = schema.level_transitions[level]
            new_level = int(rng.choice(len(probs), p=probs))
            switched_industry = rng.random() < schema.industry_switch_prob
            changes_company = rng.random() < schema.company_change_prob
            if switched_industry:
                others = [ind for ind in industries if ind != industry] or industries
                industry = others[int(rng.integers(len(others)))]
            # outgrowing the current company's tier band forces a move
            in_pool = company in schema.companies[industry]
            if not in_pool or schema.tier_of(industry, company) != schema.target_tier(new_level):
                changes_company = True
            if switched_industry or changes_company:
                pool = schema.companies[industry]
                prev = pool.index(company) if company in pool else None
                company = _pick_company(schema, rng, industry, new_level, exclude=prev)
            level = new_level
        out.append(
            Resume(
                id=f"markov-{cfg.seed}-{i:06d}",
                label=0,
                source="markov_real",
                entries=tuple(entries),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Corpus statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusStats:
    job_density: float  # mean entries per resume
    duration_mean: float
    duration_std: float
    title_diversity: float  # distinct / total over all entries
    company_diversity: float
    transition_count: float  # mean distinct company->company changes per resume

    def to_json(self) -> dict:
        return {
            "job_density": self.job_density,
            "duration_mean": self.duration_mean,
            "duration_std": self.duration_std,
            "title_diversity": self.title_diversity,
            "company_diversity": self.company_diversity,
            "transition_count": self.transition_count,
        }


def corpus_stats(resumes: list[Resume]) -> CorpusStats:
    """Structural statistics used to compare generator outputs."""
    if not resumes:
        raise DataError("cannot compute statistics of an empty corpus")
    durations = [e.duration_months for r in resumes for e in r.entries]
    titles = [e.title_id for r in resumes for e in r.entries]
    companies = [e.company_id for r in resumes for e in r.entries]
    transitions = []
    for r in resumes:
        seen = {
            (a.company_id, b.company_id)
            for a, b in zip(r.entries, r.entries[1:])
            if a.company_id != b.company_id
        }
        transitions.append(len(seen))
    return CorpusStats(
        job_density=float(np.mean([len(r.entries) for r in resumes])),
        duration_mean=float(np.mean(durations)),
        duration_std=float(np.std(durations)),
        title_diversity=len(set(titles)) / len(titles),
        company_diversity=len(set(companies)) / len(companies),
        transition_count=float(np.mean(transitions)),
    )


def generate(
    cfg: GeneratorConfig,
    vocabs: VocabSet,
    corpus: list[Resume] | None = None,
    schema: CareerSchema | None = None,
) -> list[Resume]:
    """Dispatch to the generator named by cfg.method."""
    if cfg.method == "markov_real":
        if schema is None:
            raise UsageError("markov_real requires a schema")
        return gen_markov_real(cfg, schema, vocabs)
    if corpus is None:
        raise UsageError(f"{cfg.method} requires a source corpus")
    if cfg.method == "random":
        return gen_random(corpus, cfg)
    if cfg.method == "popular":
        return gen_popular(corpus, cfg)
    if cfg.method == "swapping":
        return gen_swapping(corpus, cfg)
    if cfg.method == "replacing":
        return gen_replacing(corpus, cfg)
    raise UsageError(f"unknown generator method {cfg.method!r}")
