"""Article data model, JSONL ingestion, splits, normalization, and featurization.

The record schema mirrors the selected-feature table: two text fields (title,
abstract), the publication year, three reference features, three first-author
features, plus the outcome fields (citations, journal_id) needed for labeling.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, ValidationError
from .stopwords import STOPWORDS

logger = logging.getLogger(__name__)

#: Numeric metadata columns in the fixed order used by MetadataVector.
METADATA_COLUMNS = (
    "year",
    "reference_count",
    "reference_age",
    "impact_reference",
    "h_index",
    "author_cit",
    "author_papers",
)

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")

# Sentinel token ids shared by the built-in tokenizer and encoder.
PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
NUM_SPECIAL_IDS = 4

DEFAULT_TITLE_MAX_LEN = 64
DEFAULT_ABSTRACT_MAX_LEN = 512


@dataclass(frozen=True)
class ArticleRecord:
    """One manuscript, with optional impact scores filled in by labeling."""

    id: str
    title: str
    abstract: str
    year: int
    reference_count: int
    reference_age: float
    impact_reference: float
    h_index: int
    author_cit: int
    author_papers: int
    citations: int
    journal_id: str
    jif: float | None = None
    aif: float | None = None
    journal_label: str | None = None
    article_label: str | None = None

    def text(self) -> str:
        return f"{self.title} {self.abstract}"


#: Fields a record must carry on ingest.  Outcome fields (citations,
#: journal_id) are only known post-publication, so prediction-time validation
#: drops them.
REQUIRED_FIELDS = (
    "id",
    "title",
    "abstract",
    "year",
    "reference_count",
    "reference_age",
    "impact_reference",
    "h_index",
    "author_cit",
    "author_papers",
    "citations",
    "journal_id",
)

PREDICTION_FIELDS = tuple(f for f in REQUIRED_FIELDS if f not in ("citations", "journal_id"))

_OPTIONAL_FIELDS = ("jif", "aif", "journal_label", "article_label")


def validate_record(
    obj: dict,
    year_range: tuple[int, int] = (1900, 2100),
    require_outcome: bool = True,
) -> ArticleRecord:
    """Build an ArticleRecord from a dict, raising ValidationError on any
    missing or out-of-range field.  No imputation.

    ``require_outcome=False`` accepts pre-publication articles, which have no
    citations or journal assignment yet (both default to 0 / "").
    """
    if not isinstance(obj, dict):
        raise ValidationError(f"expected a JSON object, got {type(obj).__name__}")
    required = REQUIRED_FIELDS if require_outcome else PREDICTION_FIELDS
    missing = [name for name in required if name not in obj]
    if missing:
        raise ValidationError(f"missing required fields: {', '.join(missing)}")

    def _num(name, caster):
        try:
            return caster(obj[name])
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"field {name}: {exc}") from exc

    record = ArticleRecord(
        id=str(obj["id"]),
        title=str(obj["title"]),
        abstract=str(obj["abstract"]),
        year=_num("year", int),
        reference_count=_num("reference_count", int),
        reference_age=_num("reference_age", float),
        impact_reference=_num("impact_reference", float),
        h_index=_num("h_index", int),
        author_cit=_num("author_cit", int),
        author_papers=_num("author_papers", int),
        citations=_num("citations", int) if "citations" in obj else 0,
        journal_id=str(obj.get("journal_id", "")),
        **{k: obj.get(k) for k in _OPTIONAL_FIELDS},
    )

    if not record.title.strip():
        raise ValidationError("title must be nonempty")
    if not record.abstract.strip():
        raise ValidationError("abstract must be nonempty")
    if not year_range[0] <= record.year <= year_range[1]:
        raise ValidationError(f"year {record.year} outside configured range {year_range}")
    if not 0.0 <= record.impact_reference <= 1.0:
        raise ValidationError(f"impact_reference {record.impact_reference} outside [0, 1]")
    for name in ("reference_count", "h_index", "author_cit", "author_papers", "citations"):
        if getattr(record, name) < 0:
            raise ValidationError(f"{name} must be >= 0, got {getattr(record, name)}")
    if not math.isfinite(record.reference_age):
        raise ValidationError("reference_age must be finite")
    return record


def record_to_dict(record: ArticleRecord) -> dict:
    out = {}
    for f in fields(ArticleRecord):
        value = getattr(record, f.name)
        if f.name in _OPTIONAL_FIELDS and value is None:
            continue
        out[f.name] = value
    return out


@dataclass(frozen=True)
class RejectedLine:
    line_no: int
    reason: str


@dataclass
class IngestResult:
    records: list[ArticleRecord]
    rejections: list[RejectedLine] = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def ingest(path, year_range: tuple[int, int] = (1900, 2100)) -> IngestResult:
    """Read a JSONL article file, one object per line.

    Malformed or invalid lines are rejected individually (with their line
    numbers) instead of aborting the whole file.
    """
    path = Path(path)
    result = IngestResult(records=[])
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                result.rejections.append(RejectedLine(line_no, f"malformed JSON: {exc}"))
                continue
            try:
                result.records.append(validate_record(obj, year_range=year_range))
            except ValidationError as exc:
                result.rejections.append(RejectedLine(line_no, str(exc)))
    if not result.records:
        logger.warning("ingest(%s): no valid records", path)
    return result


def write_jsonl(records: Iterable[ArticleRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), sort_keys=True) + "\n")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fractions = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f <= 0 for f in fractions):
            raise DomainError(f"all split fractions must be > 0, got {fractions}")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise DomainError(f"split fractions must sum to 1, got {sum(fractions)}")


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of n items to fractions; exact when the
    ideal counts are integral, otherwise within one item of ideal."""
    ideal = [n * f for f in fractions]
    counts = [int(x) for x in ideal]
    short = n - sum(counts)
    remainders = sorted(range(len(fractions)), key=lambda i: (-(ideal[i] - counts[i]), i))
    for i in remainders[:short]:
        counts[i] += 1
    return counts


def split(
    records: Sequence[ArticleRecord],
    spec: SplitSpec,
    labels: Sequence[int] | None = None,
) -> tuple[list[ArticleRecord], list[ArticleRecord], list[ArticleRecord]]:
    """Deterministic stratified train/val/test partition.

    When labels are given, each class is allocated independently so the class
    mix of every split tracks the corpus mix as closely as integer counts
    allow (each per-class count is within one record of the exact fraction).
    """
    if not records:
        raise DomainError("cannot split an empty record list")
    if labels is not None and len(labels) != len(records):
        raise DomainError("labels must align with records")
    strata: dict[int, list[int]] = {}
    for i in range(len(records)):
        strata.setdefault(0 if labels is None else int(labels[i]), []).append(i)

    rng = np.random.default_rng(spec.seed)
    parts: tuple[list[ArticleRecord], ...] = ([], [], [])
    fractions = (spec.train_fraction, spec.val_fraction, spec.test_fraction)
    for key in sorted(strata):
        indices = np.array(strata[key])
        indices = indices[rng.permutation(len(indices))]
        counts = _allocate(len(indices), fractions)
        start = 0
        for part, count in zip(parts, counts):
            part.extend(records[i] for i in indices[start : start + count])
            start += count
    for name, part in zip(("train", "val", "test"), parts):
        if not part:
            raise DomainError(f"{name} split received 0 records; adjust fractions")
    return parts


@dataclass(frozen=True)
class MetadataVector:
    """The 7 numeric metadata values in METADATA_COLUMNS order."""

    values: tuple[float, ...]
    normalized: bool = False

    def __post_init__(self):
        if len(self.values) != len(METADATA_COLUMNS):
            raise DomainError(
                f"metadata vector must have {len(METADATA_COLUMNS)} components, "
                f"got {len(self.values)}"
            )

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def metadata_of(record: ArticleRecord) -> MetadataVector:
    return MetadataVector(
        values=tuple(float(getattr(record, c)) for c in METADATA_COLUMNS)
    )


@dataclass(frozen=True)
class Normalizer:
    """Per-column affine transform (z-score) fitted on the training split only."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    def transform(self, metadata: MetadataVector) -> MetadataVector:
        x = metadata.as_array()
        mean = np.asarray(self.mean)
        std = np.asarray(self.std)
        # Zero-variance columns keep std 0 and are mapped through divisor 1,
        # so train values land exactly on 0.
        divisor = np.where(std == 0.0, 1.0, std)
        return MetadataVector(values=tuple((x - mean) / divisor), normalized=True)

    def transform_record(self, record: ArticleRecord) -> MetadataVector:
        return self.transform(metadata_of(record))

    def to_dict(self) -> dict:
        return {"columns": list(METADATA_COLUMNS), "mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, obj: dict) -> "Normalizer":
        if tuple(obj.get("columns", ())) != METADATA_COLUMNS:
            raise ValidationError("normalizer columns do not match the metadata schema")
        return cls(mean=tuple(obj["mean"]), std=tuple(obj["std"]))


def fit_normalizer(train: Sequence[ArticleRecord]) -> Normalizer:
    """Fit per-column mean and population standard deviation on train records."""
    if not train:
        raise DomainError("cannot fit a normalizer on an empty split")
    matrix = np.stack([metadata_of(r).as_array() for r in train])
    return Normalizer(
        mean=tuple(matrix.mean(axis=0)),
        std=tuple(matrix.std(axis=0)),
    )


def text_tokens(text: str) -> list[str]:
    """Lowercased word tokens with punctuation stripped."""
    return _TOKEN_RE.findall(text.lower())


def build_vocab(records: Sequence[ArticleRecord], k: int = 50) -> list[str]:
    """The k most frequent non-stop-word tokens over title+abstract text.

    Ties break lexicographically, so the vocabulary is deterministic and
    invariant to record order.
    """
    if not records:
        raise DomainError("cannot build a vocabulary from an empty corpus")
    counts: dict[str, int] = {}
    for record in records:
        for token in text_tokens(record.text()):
            if token not in STOPWORDS:
                counts[token] = counts.get(token, 0) + 1
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    if len(ranked) < k:
        logger.warning("vocabulary has only %d distinct tokens (< k=%d)", len(ranked), k)
    return [token for token, _ in ranked[:k]]


@dataclass(frozen=True)
class BaselineFeatures:
    """Presence indicators over the top-k vocabulary plus normalized metadata."""

    onehot: tuple[int, ...]
    metadata: MetadataVector

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            [np.asarray(self.onehot, dtype=np.float64), self.metadata.as_array()]
        )


def featurize_baseline(
    record: ArticleRecord, vocab: Sequence[str], normalizer: Normalizer
) -> BaselineFeatures:
    present = set(text_tokens(record.text()))
    return BaselineFeatures(
        onehot=tuple(int(term in present) for term in vocab),
        metadata=normalizer.transform_record(record),
    )


@dataclass(frozen=True)
class TokenSequence:
    """Integer token ids, bounded by max_len, with BOS/EOS sentinels."""

    ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) < 1:
            raise DomainError("token sequence must be nonempty")

    def __len__(self):
        return len(self.ids)


class WhitespaceTokenizer:
    """Deterministic lowercase word tokenizer with a corpus-fitted vocabulary.

    Desk-scale stand-in for a subword tokenizer: id assignment is frequency
    then lexicographic, so refitting the same corpus always reproduces the
    same mapping.  Unknown tokens map to UNK.
    """

    def __init__(self, token_to_id: dict[str, int]):
        self.token_to_id = dict(token_to_id)
        self.vocab_size = NUM_SPECIAL_IDS + len(self.token_to_id)

    @classmethod
    def fit(cls, texts: Iterable[str], vocab_size: int = 4096) -> "WhitespaceTokenizer":
        counts: dict[str, int] = {}
        for text in texts:
            for token in text_tokens(text):
                counts[token] = counts.get(token, 0) + 1
        ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
        keep = ranked[: max(0, vocab_size - NUM_SPECIAL_IDS)]
        mapping = {token: NUM_SPECIAL_IDS + i for i, (token, _) in enumerate(keep)}
        return cls(mapping)

    def encode(self, text: str, max_len: int) -> TokenSequence:
        return tokenize(text, max_len, self)

    def to_dict(self) -> dict:
        return {"kind": "whitespace", "token_to_id": self.token_to_id}

    @classmethod
    def from_dict(cls, obj: dict) -> "WhitespaceTokenizer":
        return cls(obj["token_to_id"])


class ExternalTokenizerAdapter:
    """Wraps any callable text -> list[int] (e.g. a subword tokenizer paired
    with a pretrained encoder checkpoint) behind the same encode() surface.

    The callable must produce ids already including any model-specific
    sentinels; this adapter only enforces the length bound.
    """

    def __init__(self, encode_fn: Callable[[str], Sequence[int]], vocab_size: int):
        self._encode_fn = encode_fn
        self.vocab_size = vocab_size

    def encode(self, text: str, max_len: int) -> TokenSequence:
        if not text.strip():
            raise DomainError("cannot tokenize empty text")
        ids = list(self._encode_fn(text))[:max_len]
        return TokenSequence(ids=tuple(ids))


def tokenize(text: str, max_len: int, tokenizer: WhitespaceTokenizer) -> TokenSequence:
    """BOS + word ids + EOS, truncated so the result is at most max_len long."""
    if not text.strip():
        raise DomainError("cannot tokenize empty text")
    if max_len < 2:
        raise DomainError(f"max_len must allow BOS and EOS, got {max_len}")
    ids = [BOS_ID]
    for token in text_tokens(text)[: max_len - 2]:
        ids.append(tokenizer.token_to_id.get(token, UNK_ID))
    ids.append(EOS_ID)
    return TokenSequence(ids=tuple(ids))


@dataclass(frozen=True)
class FeatureBundle:
    """Model-side view of one article: two token sequences + normalized metadata."""

    title: TokenSequence
    abstract: TokenSequence
    metadata: MetadataVector

    def __post_init__(self):
        if not self.metadata.normalized:
            raise DomainError("feature bundles require normalized metadata")


def bundle_record(
    record: ArticleRecord,
    tokenizer,
    normalizer: Normalizer,
    title_max_len: int = DEFAULT_TITLE_MAX_LEN,
    abstract_max_len: int = DEFAULT_ABSTRACT_MAX_LEN,
) -> FeatureBundle:
    return FeatureBundle(
        title=tokenizer.encode(record.title, title_max_len),
        abstract=tokenizer.encode(record.abstract, abstract_max_len),
        metadata=normalizer.transform_record(record),
    )
