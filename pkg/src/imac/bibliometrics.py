"""Impact metrics for journals and articles, plus metric-rationality analyses.

A journal's two-year impact factor (JIF) is the citation count over the two
preceding years divided by the paper count over the same years.  The article
impact factor (AIF) blends an article's own citations with its venue JIF:

    aif = ln(d * cits * p + (1 - d) * jif),   p = min(2, max(cits_m / jif, 0.5))

where d in (0, 0.5) balances the two terms and cits_m is the median citation
count of the reference corpus.  Because d * p < 1, AIF moves less than raw
citation counts when the citation window changes, which is what the
sensitivity and stability analyses below quantify.

All functions here are pure and safe for concurrent use.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DomainError, ValidationError

JIF_THRESHOLD = 6.0
AIF_THRESHOLD = 5.0

#: Numeric features correlated against the assessment indicators, in report order.
CORRELATION_FEATURES = (
    "reference_count",
    "reference_age",
    "impact_reference",
    "h_index",
    "author_cit",
    "author_papers",
)

CORRELATION_INDICATORS = ("jif", "citations", "aif")


class ImpactLabel(str, Enum):
    HIGH_IMPACT = "high_impact"
    OTHERS = "others"


@dataclass(frozen=True)
class CitationWindow:
    """Two-year citation/paper counts used to compute a JIF."""

    citations_t1: int
    citations_t2: int
    papers_t1: int
    papers_t2: int

    def __post_init__(self):
        for name in ("citations_t1", "citations_t2", "papers_t1", "papers_t2"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.papers_t1 + self.papers_t2 <= 0:
            raise DomainError("citation window has zero total paper count")


@dataclass(frozen=True)
class AifParams:
    """Balance parameter d and the corpus median citation count.

    cits_m is a statistic of the corpus the model was calibrated on; when
    scoring a standalone article the caller must pass the training corpus's
    median, never the new article's own.
    """

    d: float = 0.4
    cits_m: float = 29.0

    def __post_init__(self):
        if not (0.0 < self.d < 0.5):
            raise DomainError(f"d must lie in (0, 0.5), got {self.d}")
        if self.cits_m <= 0:
            raise DomainError(f"cits_m must be positive, got {self.cits_m}")


@dataclass(frozen=True)
class ImpactScores:
    jif: float
    cits: int
    p: float
    aif: float


@dataclass(frozen=True)
class CitationHistory:
    """Cumulative citation counts of one article at the 4- and 8-year horizons."""

    article_id: str
    cits_4y: int
    cits_8y: int

    def __post_init__(self):
        if self.cits_4y < 0 or self.cits_8y < 0:
            raise DomainError("citation counts must be >= 0")
        if self.cits_8y < self.cits_4y:
            raise DomainError(
                f"article {self.article_id}: cits_8y={self.cits_8y} < cits_4y={self.cits_4y} "
                "(citations are cumulative)"
            )


@dataclass(frozen=True)
class JournalRecord:
    """A journal with either a precomputed JIF or the window to compute one."""

    journal_id: str
    jif: float | None = None
    window: CitationWindow | None = None
    subject: str = ""

    def resolve_jif(self) -> float:
        if self.jif is not None:
            return float(self.jif)
        if self.window is not None:
            return compute_jif(self.window)
        raise ValidationError(f"journal {self.journal_id} has neither jif nor window")


def compute_jif(w: CitationWindow) -> float:
    """Citations over the two preceding years divided by papers published in them."""
    total_papers = w.papers_t1 + w.papers_t2
    if total_papers <= 0:
        raise DomainError("zero total paper count in citation window")
    return (w.citations_t1 + w.citations_t2) / total_papers


def scaling_factor(jif: float, params: AifParams) -> float:
    """p = min(2, max(cits_m / jif, 0.5)); undefined for jif <= 0."""
    if jif <= 0:
        raise DomainError(f"jif must be positive, got {jif}")
    return min(2.0, max(params.cits_m / jif, 0.5))


def compute_aif(cits: int, jif: float, params: AifParams) -> ImpactScores:
    """Blend an article's citations with its venue JIF into a log-scaled score."""
    if cits < 0:
        raise DomainError(f"cits must be >= 0, got {cits}")
    p = scaling_factor(jif, params)
    arg = params.d * cits * p + (1.0 - params.d) * jif
    if arg <= 0:
        raise DomainError(f"log argument must be positive, got {arg}")
    return ImpactScores(jif=jif, cits=cits, p=p, aif=math.log(arg))


def label_journal(jif: float) -> ImpactLabel:
    """High-impact iff jif >= 6 (boundary inclusive)."""
    if not math.isfinite(jif):
        raise DomainError(f"jif must be finite, got {jif}")
    return ImpactLabel.HIGH_IMPACT if jif >= JIF_THRESHOLD else ImpactLabel.OTHERS


def label_article(aif: float) -> ImpactLabel:
    """High-impact iff aif >= 5 (boundary inclusive)."""
    if not math.isfinite(aif):
        raise DomainError(f"aif must be finite, got {aif}")
    return ImpactLabel.HIGH_IMPACT if aif >= AIF_THRESHOLD else ImpactLabel.OTHERS


def sensitivity_gap(
    history: CitationHistory, params: AifParams, jif: float
) -> tuple[float, float]:
    """(d*p*|cits_4 - cits_8|, |cits_4 - cits_8|): AIF's citation-window error vs raw.

    p is the scaling factor of the venue, which does not depend on the citation
    count itself; since d < 0.5 and p <= 2 imply d*p < 1, the first component is
    strictly smaller whenever the two counts differ.
    """
    p = scaling_factor(jif, params)
    delta = abs(history.cits_4y - history.cits_8y)
    return (params.d * p * delta, float(delta))


@dataclass(frozen=True)
class StabilityReport:
    others_4y: int
    impactful_4y: int
    others_8y: int
    impactful_8y: int
    flip_count: int

    @property
    def total(self) -> int:
        return self.others_4y + self.impactful_4y

    @property
    def flip_fraction(self) -> float:
        return self.flip_count / self.total

    def to_json(self) -> str:
        return json.dumps(
            {
                "others_4y": self.others_4y,
                "impactful_4y": self.impactful_4y,
                "others_8y": self.others_8y,
                "impactful_8y": self.impactful_8y,
                "flip_count": self.flip_count,
                "flip_fraction": self.flip_fraction,
            },
            indent=2,
        )


def stability_report(
    histories: Sequence[CitationHistory], threshold: int
) -> StabilityReport:
    """Classify each history at both horizons (impactful iff cits > threshold)
    and count articles whose class flips between 4 and 8 years."""
    if not histories:
        raise DomainError("stability_report requires a nonempty history list")
    others_4 = impactful_4 = others_8 = impactful_8 = flips = 0
    for h in histories:
        hot_4 = h.cits_4y > threshold
        hot_8 = h.cits_8y > threshold
        impactful_4 += hot_4
        others_4 += not hot_4
        impactful_8 += hot_8
        others_8 += not hot_8
        flips += hot_4 != hot_8
    return StabilityReport(others_4, impactful_4, others_8, impactful_8, flips)


def read_citation_histories(path) -> list[CitationHistory]:
    """Read a CSV with columns article_id, cits_4y, cits_8y."""
    histories = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"article_id", "cits_4y", "cits_8y"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(
                f"citation history CSV must have columns {sorted(required)}, "
                f"got {reader.fieldnames}"
            )
        for row_no, row in enumerate(reader, start=2):
            try:
                histories.append(
                    CitationHistory(
                        article_id=row["article_id"],
                        cits_4y=int(row["cits_4y"]),
                        cits_8y=int(row["cits_8y"]),
                    )
                )
            except (DomainError, TypeError, ValueError) as exc:
                raise ValidationError(f"row {row_no}: {exc}") from exc
    return histories


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties assigned the mean of their rank span."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=float)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    """Pearson coefficient; None (not 0) when either column has zero variance."""
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0.0:
        return None
    return float(a @ b) / denom


def correlation_matrix(
    records: Sequence, method: str = "pearson"
) -> dict[str, dict[str, float | None]]:
    """Correlation of each assessment indicator (jif, citations, aif) against
    the six numeric reference/author features.

    Records must already carry jif and aif scores.  ``method`` is ``pearson``
    (default) or ``spearman``; a zero-variance column yields None rather than 0.
    """
    if len(records) < 3:
        raise DomainError(f"correlation requires >= 3 records, got {len(records)}")
    if method not in ("pearson", "spearman"):
        raise DomainError(f"unknown correlation method {method!r}")

    columns: dict[str, np.ndarray] = {}
    for name in CORRELATION_FEATURES:
        columns[name] = np.array([float(getattr(r, name)) for r in records])
    for name in CORRELATION_INDICATORS:
        if name == "citations":
            values = [float(r.citations) for r in records]
        else:
            values = []
            for r in records:
                v = getattr(r, name)
                if v is None:
                    raise DomainError(
                        f"record {r.id} is missing {name}; label the corpus first"
                    )
                values.append(float(v))
        columns[name] = np.array(values)

    if method == "spearman":
        columns = {k: _average_ranks(v) for k, v in columns.items()}

    return {
        ind: {feat: _pearson(columns[ind], columns[feat]) for feat in CORRELATION_FEATURES}
        for ind in CORRELATION_INDICATORS
    }


@dataclass
class LabelingResult:
    records: list  # labeled ArticleRecords
    rejections: list[tuple[str, str]]  # (article id, reason)
    cits_m: float


def median_citations(records: Sequence) -> float:
    if not records:
        raise DomainError("cannot take the median of an empty corpus")
    return float(np.median([r.citations for r in records]))


def label_corpus(
    records: Sequence,
    journals: dict[str, JournalRecord],
    d: float = 0.4,
    cits_m: float | None = None,
) -> LabelingResult:
    """Attach jif, aif, and both task labels to every record.

    cits_m defaults to the median citation count of ``records`` itself; pass
    the training corpus's value explicitly when labeling held-out articles.
    Records whose journal_id cannot be resolved are rejected per record.
    """
    from dataclasses import replace

    if cits_m is None:
        cits_m = median_citations(records)
    params = AifParams(d=d, cits_m=cits_m)
    labeled = []
    rejections: list[tuple[str, str]] = []
    for record in records:
        journal = journals.get(record.journal_id)
        if journal is None:
            rejections.append((record.id, f"unknown journal_id {record.journal_id!r}"))
            continue
        try:
            jif = journal.resolve_jif()
            scores = compute_aif(record.citations, jif, params)
        except (DomainError, ValidationError) as exc:
            rejections.append((record.id, str(exc)))
            continue
        labeled.append(
            replace(
                record,
                jif=jif,
                aif=scores.aif,
                journal_label=label_journal(jif).value,
                article_label=label_article(scores.aif).value,
            )
        )
    return LabelingResult(records=labeled, rejections=rejections, cits_m=cits_m)


def load_journals(path) -> dict[str, JournalRecord]:
    """Read a JSON file of journal records keyed by journal_id.

    Accepts either a list of objects or a mapping journal_id -> object.  Each
    object carries "jif" or the four window counts, plus optional "subject".
    """
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if isinstance(raw, dict):
        items = [{"journal_id": k, **v} for k, v in raw.items()]
    else:
        items = raw
    journals: dict[str, JournalRecord] = {}
    for obj in items:
        try:
            jid = str(obj["journal_id"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"journal entry missing journal_id: {obj!r}") from exc
        window = None
        if "citations_t1" in obj:
            window = CitationWindow(
                citations_t1=int(obj["citations_t1"]),
                citations_t2=int(obj["citations_t2"]),
                papers_t1=int(obj["papers_t1"]),
                papers_t2=int(obj["papers_t2"]),
            )
        journals[jid] = JournalRecord(
            journal_id=jid,
            jif=obj.get("jif"),
            window=window,
            subject=obj.get("subject", ""),
        )
    return journals
