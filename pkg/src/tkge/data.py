"""Quadruple corpora: parsing, time discretization, vocabularies, bundles.

Two on-disk fact formats are supported (UTF-8, tab-separated; fields may
contain spaces but never tabs):

* point facts:     ``subject<TAB>predicate<TAB>object<TAB>YYYY-MM-DD``
* interval facts:  ``subject<TAB>predicate<TAB>object<TAB>start<TAB>end``
  where start/end are dates whose unknown fields are '#'-masked
  (``2003-##-##``, ``####-##-##``).  An all-'#' year means the endpoint is
  missing entirely.  Negative years ("-453-##-##") are accepted.

Dates are discretized onto a ``Timeline``: day granularity maps a date to
days-since-earliest-observed; year-binned granularity drops month/day and
maps years into a fixed number of bins balanced by fact-year frequency.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import BundleError, DataError, ParseError

GRANULARITY_DAY = "day"
GRANULARITY_YEAR = "year-binned"

BUNDLE_FORMAT = "tkge-bundle"
BUNDLE_VERSION = 1


class Date(NamedTuple):
    """A possibly partial calendar date; month/day are None when unknown."""

    year: int
    month: int | None = None
    day: int | None = None

    @property
    def is_full(self) -> bool:
        return self.month is not None and self.day is not None

    def to_pydate(self) -> datetime.date:
        if not self.is_full:
            raise DataError(f"date {self} has no month/day, cannot place on a day timeline")
        return datetime.date(self.year, self.month, self.day)


class PointTime(NamedTuple):
    date: Date


class IntervalTime(NamedTuple):
    start: Date | None
    end: Date | None


@dataclass(frozen=True)
class RawFact:
    subject: str
    predicate: str
    object: str
    time: PointTime | IntervalTime

    def __post_init__(self):
        for name in ("subject", "predicate", "object"):
            if not getattr(self, name).strip():
                raise DataError(f"fact has empty {name}")


class Quadruple(NamedTuple):
    s: int
    p: int
    o: int
    t: int


class IntervalFact(NamedTuple):
    s: int
    p: int
    o: int
    t_start: int
    t_end: int


# ---------------------------------------------------------------------------
# parsing

_POINT_DATE_RE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")
_MASKED_DATE_RE = re.compile(r"^(-?\d+|#+)-(\d{1,2}|#+)-(\d{1,2}|#+)$")


def _parse_point_date(text: str, line_no: int) -> Date:
    m = _POINT_DATE_RE.match(text)
    if not m:
        raise ParseError(f"expected date YYYY-MM-DD, got {text!r}", line_no)
    year, month, day = (int(g) for g in m.groups())
    try:
        datetime.date(year, month, day)
    except ValueError as exc:
        raise ParseError(f"invalid calendar date {text!r}: {exc}", line_no) from None
    return Date(year, month, day)


def _parse_masked_date(text: str, line_no: int) -> Date | None:
    m = _MASKED_DATE_RE.match(text)
    if not m:
        raise ParseError(f"expected date like 2003-##-## or ####-##-##, got {text!r}", line_no)
    year_s, month_s, day_s = m.groups()
    if year_s.lstrip("-") and set(year_s) == {"#"}:
        return None
    year = int(year_s)
    month = None if "#" in month_s else int(month_s)
    day = None if "#" in day_s else int(day_s)
    if month is None and day is not None:
        raise ParseError(f"date {text!r} has a day but no month", line_no)
    if month is not None and not 1 <= month <= 12:
        raise ParseError(f"month out of range in {text!r}", line_no)
    if day is not None:
        if not 1 <= day <= 31:
            raise ParseError(f"day out of range in {text!r}", line_no)
        if year >= 1:
            try:
                datetime.date(year, month, day)
            except ValueError as exc:
                raise ParseError(f"invalid calendar date {text!r}: {exc}", line_no) from None
    return Date(year, month, day)


def _split_fields(line: str, n_fields: int, line_no: int) -> list[str]:
    fields = [f.strip() for f in line.rstrip("\r\n").split("\t")]
    if len(fields) != n_fields:
        raise ParseError(f"expected {n_fields} tab-separated fields, got {len(fields)}", line_no)
    if any(not f for f in fields[:3]):
        raise ParseError("empty subject/predicate/object field", line_no)
    return fields


def parse_point_file(stream: Iterable[str]) -> list[RawFact]:
    """Parse a point-fact file; one RawFact per non-empty line, order kept."""
    facts = []
    for line_no, line in enumerate(stream, 1):
        if not line.strip():
            continue
        s, p, o, date_s = _split_fields(line, 4, line_no)
        facts.append(RawFact(s, p, o, PointTime(_parse_point_date(date_s, line_no))))
    return facts


def parse_interval_file(stream: Iterable[str]) -> list[RawFact]:
    """Parse an interval-fact file; '#'-masked endpoints may be missing."""
    facts = []
    for line_no, line in enumerate(stream, 1):
        if not line.strip():
            continue
        s, p, o, start_s, end_s = _split_fields(line, 5, line_no)
        start = _parse_masked_date(start_s, line_no)
        end = _parse_masked_date(end_s, line_no)
        facts.append(RawFact(s, p, o, IntervalTime(start, end)))
    return facts


def format_date(date: Date | None) -> str:
    """Canonical text form of a possibly partial date ('#'-masked fields)."""
    if date is None:
        return "####-##-##"
    year = f"{date.year:04d}" if date.year >= 0 else str(date.year)
    month = "##" if date.month is None else f"{date.month:02d}"
    day = "##" if date.day is None else f"{date.day:02d}"
    return f"{year}-{month}-{day}"


def format_fact(fact: RawFact) -> str:
    """Serialize a fact back to its file line (inverse of the parsers)."""
    head = f"{fact.subject}\t{fact.predicate}\t{fact.object}"
    if isinstance(fact.time, PointTime):
        return f"{head}\t{format_date(fact.time.date)}"
    return f"{head}\t{format_date(fact.time.start)}\t{format_date(fact.time.end)}"


# ---------------------------------------------------------------------------
# timeline

@dataclass(frozen=True)
class Timeline:
    """Total, monotone mapping from dataset dates to steps in [0, n_steps).

    Day granularity counts days from ``origin``; year-binned granularity maps
    a date's year to the bin whose start-year range contains it
    (``bin_bounds[i]`` is the first year of bin i).  Out-of-range dates clamp
    to the first or last step.
    """

    granularity: str
    n_steps: int
    bin_bounds: tuple[int, ...] | None = None
    origin: datetime.date | None = None

    def __post_init__(self):
        if self.granularity not in (GRANULARITY_DAY, GRANULARITY_YEAR):
            raise DataError(f"unknown granularity {self.granularity!r}")
        if self.n_steps < 1:
            raise DataError("timeline needs at least one step")
        if self.granularity == GRANULARITY_YEAR:
            if not self.bin_bounds or len(self.bin_bounds) != self.n_steps:
                raise DataError("year-binned timeline needs one start year per bin")
            if any(a >= b for a, b in zip(self.bin_bounds, self.bin_bounds[1:])):
                raise DataError("bin bounds must be strictly increasing")
        elif self.origin is None:
            raise DataError("day timeline needs an origin date")

    def map_date(self, date: Date) -> int:
        if self.granularity == GRANULARITY_DAY:
            step = (date.to_pydate() - self.origin).days
        else:
            # month/day dropped before binning
            step = int(np.searchsorted(self.bin_bounds, date.year, side="right")) - 1
        return min(max(step, 0), self.n_steps - 1)

    def to_dict(self) -> dict:
        return {
            "granularity": self.granularity,
            "n_steps": self.n_steps,
            "bin_bounds": list(self.bin_bounds) if self.bin_bounds is not None else None,
            "origin": self.origin.isoformat() if self.origin is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Timeline":
        return cls(
            granularity=d["granularity"],
            n_steps=d["n_steps"],
            bin_bounds=tuple(d["bin_bounds"]) if d["bin_bounds"] is not None else None,
            origin=datetime.date.fromisoformat(d["origin"]) if d["origin"] is not None else None,
        )


def _fact_dates(fact: RawFact) -> list[Date]:
    if isinstance(fact.time, PointTime):
        return [fact.time.date]
    return [d for d in (fact.time.start, fact.time.end) if d is not None]


def greedy_year_bins(year_counts: dict[int, int], n_bins: int) -> tuple[int, ...]:
    """Left-to-right frequency partition of a year histogram into n_bins.

    Walks years in increasing order; a bin closes once it holds at least
    remaining_total/remaining_bins occurrences, except that every remaining
    bin is always left at least one distinct year.
    """
    years = sorted(year_counts)
    if n_bins > len(years):
        raise DataError(f"cannot split {len(years)} distinct years into {n_bins} bins")
    if n_bins < 1:
        raise DataError("need at least one bin")
    bounds = []
    remaining_total = float(sum(year_counts.values()))
    idx = 0
    for b in range(n_bins):
        bounds.append(years[idx])
        bins_left = n_bins - b - 1
        target = remaining_total / (n_bins - b)
        acc = 0.0
        while True:
            acc += year_counts[years[idx]]
            idx += 1
            if len(years) - idx <= bins_left or acc >= target:
                break
        remaining_total -= acc
    return tuple(bounds)


def build_timeline(
    facts: Sequence[RawFact], granularity: str, n_bins: int | None = None
) -> Timeline:
    """Construct the timeline from every date observed anywhere in the data."""
    dates = [d for f in facts for d in _fact_dates(f)]
    if not dates:
        raise DataError("no dated facts: cannot build a timeline")
    if granularity == GRANULARITY_DAY:
        pydates = [d.to_pydate() for d in dates]
        origin = min(pydates)
        n_steps = (max(pydates) - origin).days + 1
        return Timeline(GRANULARITY_DAY, n_steps, origin=origin)
    if granularity == GRANULARITY_YEAR:
        if n_bins is None:
            raise DataError("year-binned granularity requires n_bins")
        counts = Counter(d.year for d in dates)
        return Timeline(GRANULARITY_YEAR, n_bins, bin_bounds=greedy_year_bins(counts, n_bins))
    raise DataError(f"unknown granularity {granularity!r}")


# ---------------------------------------------------------------------------
# vocabulary

@dataclass
class Vocabulary:
    """Dense label<->id tables plus the timeline and the inverse-id convention.

    When ``reciprocal`` is set, relation ids [n_relations, 2*n_relations)
    denote inverses: id p + n_relations is the inverse of p.
    """

    entities: list[str]
    relations: list[str]
    timeline: Timeline
    reciprocal: bool = False
    entity_to_id: dict[str, int] = field(init=False, repr=False)
    relation_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.entity_to_id = {e: i for i, e in enumerate(self.entities)}
        self.relation_to_id = {r: i for i, r in enumerate(self.relations)}
        if len(self.entity_to_id) != len(self.entities):
            raise DataError("duplicate entity labels")
        if len(self.relation_to_id) != len(self.relations):
            raise DataError("duplicate relation labels")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        """Base relation count, excluding inverse ids."""
        return len(self.relations)

    @property
    def n_relation_slots(self) -> int:
        """Size of the relation id space (doubled when reciprocal)."""
        return 2 * len(self.relations) if self.reciprocal else len(self.relations)

    def digest(self) -> str:
        payload = {
            "entities": self.entities,
            "relations": self.relations,
            "reciprocal": self.reciprocal,
            "timeline": self.timeline.to_dict(),
        }
        return hashlib.sha256(_canonical_json(payload).encode("utf-8")).hexdigest()


def build_vocabulary(
    splits: Sequence[Sequence[RawFact]], timeline: Timeline, reciprocal: bool = False
) -> Vocabulary:
    """Assign dense ids in first-appearance order over train, valid, test."""
    entities: dict[str, int] = {}
    relations: dict[str, int] = {}
    for split in splits:
        for fact in split:
            for label in (fact.subject, fact.object):
                if label not in entities:
                    entities[label] = len(entities)
            if fact.predicate not in relations:
                relations[fact.predicate] = len(relations)
    return Vocabulary(list(entities), list(relations), timeline, reciprocal)


# ---------------------------------------------------------------------------
# discretization

def discretize(fact: RawFact, vocab: Vocabulary) -> IntervalFact:
    """Map labels to ids and dates to steps; a point fact gets t_start == t_end.

    A missing interval start maps to step 0, a missing end to the last step.
    A start that lands after its end (after discretization) is a data error.
    """
    try:
        s = vocab.entity_to_id[fact.subject]
        o = vocab.entity_to_id[fact.object]
        p = vocab.relation_to_id[fact.predicate]
    except KeyError as exc:
        raise DataError(f"label {exc.args[0]!r} not in vocabulary") from None
    timeline = vocab.timeline
    if isinstance(fact.time, PointTime):
        t = timeline.map_date(fact.time.date)
        return IntervalFact(s, p, o, t, t)
    t_start = 0 if fact.time.start is None else timeline.map_date(fact.time.start)
    t_end = timeline.n_steps - 1 if fact.time.end is None else timeline.map_date(fact.time.end)
    if t_start > t_end:
        raise DataError(
            f"interval fact ({fact.subject}, {fact.predicate}, {fact.object}) "
            f"maps to reversed steps [{t_start}, {t_end}]"
        )
    return IntervalFact(s, p, o, t_start, t_end)


def expand_interval(fact: IntervalFact) -> list[Quadruple]:
    """One quadruple per covered step, t_end - t_start + 1 in total."""
    return [Quadruple(fact.s, fact.p, fact.o, t) for t in range(fact.t_start, fact.t_end + 1)]


def facts_to_array(facts: Sequence[IntervalFact]) -> np.ndarray:
    """Pack facts into an int64 array with columns (s, p, o, t_start, t_end)."""
    if len(facts) == 0:
        return np.empty((0, 5), dtype=np.int64)
    return np.asarray(facts, dtype=np.int64).reshape(len(facts), 5)


def array_to_facts(arr: np.ndarray) -> list[IntervalFact]:
    return [IntervalFact(*row) for row in arr.tolist()]


def expand_split(arr: np.ndarray) -> np.ndarray:
    """Unroll interval rows (s,p,o,ts,te) into quadruple rows (s,p,o,t)."""
    if arr.shape[0] == 0:
        return np.empty((0, 4), dtype=np.int64)
    lengths = arr[:, 4] - arr[:, 3] + 1
    rows = np.repeat(np.arange(arr.shape[0]), lengths)
    starts = np.repeat(np.cumsum(lengths) - lengths, lengths)
    offsets = np.arange(lengths.sum()) - starts
    out = np.empty((rows.size, 4), dtype=np.int64)
    out[:, :3] = arr[rows, :3]
    out[:, 3] = arr[rows, 3] + offsets
    return out


# ---------------------------------------------------------------------------
# bundles

@dataclass
class DatasetBundle:
    """An immutable, fully discretized dataset: vocabulary plus integer splits.

    Split arrays have shape (n, 5) with columns (s, p, o, t_start, t_end);
    a point fact is stored with t_start == t_end.
    """

    vocabulary: Vocabulary
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("train", "valid", "test"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[1] != 5:
                raise DataError(f"{name} split must have shape (n, 5)")
        self._check_ids()

    def _check_ids(self):
        n_e = self.vocabulary.n_entities
        n_r = self.vocabulary.n_relation_slots
        n_t = self.vocabulary.timeline.n_steps
        for name in ("train", "valid", "test"):
            arr = getattr(self, name)
            if arr.shape[0] == 0:
                continue
            ok = (
                (arr[:, [0, 2]] >= 0).all()
                and (arr[:, [0, 2]] < n_e).all()
                and (arr[:, 1] >= 0).all()
                and (arr[:, 1] < n_r).all()
                and (arr[:, 3] >= 0).all()
                and (arr[:, 4] < n_t).all()
                and (arr[:, 3] <= arr[:, 4]).all()
            )
            if not ok:
                raise DataError(f"{name} split has ids outside the vocabulary ranges")

    def split(self, name: str) -> np.ndarray:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise DataError(f"unknown split {name!r}") from None


def assemble_bundle(
    train: Sequence[RawFact],
    valid: Sequence[RawFact],
    test: Sequence[RawFact],
    granularity: str,
    n_bins: int | None = None,
    reciprocal: bool = False,
    provenance: dict | None = None,
) -> DatasetBundle:
    """Build timeline + vocabulary over all splits, then discretize each."""
    splits = (train, valid, test)
    timeline = build_timeline([f for s in splits for f in s], granularity, n_bins)
    vocab = build_vocabulary(splits, timeline, reciprocal)
    arrays = [facts_to_array([discretize(f, vocab) for f in s]) for s in splits]
    prov = dict(provenance or {})
    prov.setdefault("binning", {"granularity": granularity, "n_bins": n_bins})
    return DatasetBundle(vocab, *arrays, provenance=prov)


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def save_bundle(bundle: DatasetBundle, path) -> None:
    """Write the bundle as a versioned, checksummed JSON container."""
    from .io import atomic_write

    payload = {
        "vocabulary": {
            "entities": bundle.vocabulary.entities,
            "relations": bundle.vocabulary.relations,
            "reciprocal": bundle.vocabulary.reciprocal,
        },
        "timeline": bundle.vocabulary.timeline.to_dict(),
        "splits": {
            "train": bundle.train.tolist(),
            "valid": bundle.valid.tolist(),
            "test": bundle.test.tolist(),
        },
        "provenance": bundle.provenance,
    }
    payload_json = _canonical_json(payload)
    digest = hashlib.sha256(payload_json.encode("utf-8")).hexdigest()
    text = (
        f'{{"format":"{BUNDLE_FORMAT}","version":{BUNDLE_VERSION},'
        f'"sha256":"{digest}","payload":{payload_json}}}'
    )
    atomic_write(path, text)


def load_bundle(path) -> DatasetBundle:
    """Load a bundle, verifying container version and payload checksum."""
    try:
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
    except FileNotFoundError:
        raise BundleError(f"bundle not found: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BundleError(f"corrupt bundle {path}: {exc}") from None
    if not isinstance(obj, dict) or obj.get("format") != BUNDLE_FORMAT:
        raise BundleError(f"{path} is not a {BUNDLE_FORMAT} file")
    if obj.get("version") != BUNDLE_VERSION:
        raise BundleError(f"unsupported bundle version {obj.get('version')!r}")
    payload = obj.get("payload")
    digest = hashlib.sha256(_canonical_json(payload).encode("utf-8")).hexdigest()
    if digest != obj.get("sha256"):
        raise BundleError(f"checksum mismatch in {path}: file is corrupt")
    vocab = Vocabulary(
        entities=payload["vocabulary"]["entities"],
        relations=payload["vocabulary"]["relations"],
        timeline=Timeline.from_dict(payload["timeline"]),
        reciprocal=payload["vocabulary"]["reciprocal"],
    )
    splits = [
        np.asarray(payload["splits"][name], dtype=np.int64).reshape(-1, 5)
        for name in ("train", "valid", "test")
    ]
    return DatasetBundle(vocab, *splits, provenance=payload["provenance"])


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
