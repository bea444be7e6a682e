"""Patient journeys: ingestion, vocabulary, flattening and context windows.

A journey file is JSONL, one patient per line::

    {"patient_id": "p1", "visits": [{"day": 0, "codes": ["A", "B"]},
                                    {"day": 12, "codes": ["C"]}]}

Each visit carries either an integer ``day`` (>= 0) or an ISO ``date``
(``YYYY-MM-DD``); a file must use one or the other throughout. Dates are
converted to days since the earliest date in the file.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

NOISE_POWER = 0.75


class JourneyParseError(ValueError):
    """Raised for a malformed journey record; carries the 1-based line number."""

    def __init__(self, lineno: int, message: str) -> None:
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class EmptyVocabularyError(ValueError):
    pass


class EmptySequenceError(ValueError):
    pass


@dataclass(frozen=True)
class Visit:
    day: int
    codes: tuple[str, ...]


@dataclass(frozen=True)
class PatientJourney:
    patient_id: str
    visits: tuple[Visit, ...]


@dataclass
class ParseStats:
    n_lines: int = 0
    n_journeys: int = 0
    duplicate_codes: int = 0
    dropped_short: int = 0


@dataclass(frozen=True)
class FlatSequence:
    ids: np.ndarray
    days: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class ContextSample:
    target: int
    ctx_ids: np.ndarray
    ctx_days: np.ndarray

    def intervals(self) -> np.ndarray:
        """Pairwise day differences between context positions (symmetric, zero diagonal)."""
        return np.abs(self.ctx_days[:, None] - self.ctx_days[None, :])


def _parse_visit(raw, lineno: int) -> tuple[str, object, list]:
    if not isinstance(raw, dict):
        raise JourneyParseError(lineno, "visit must be an object")
    has_day, has_date = "day" in raw, "date" in raw
    if has_day == has_date:
        raise JourneyParseError(lineno, "visit needs exactly one of 'day' or 'date'")
    codes = raw.get("codes")
    if not isinstance(codes, list) or not all(isinstance(c, str) for c in codes):
        raise JourneyParseError(lineno, "'codes' must be a list of strings")
    if has_day:
        day = raw["day"]
        if isinstance(day, bool) or not isinstance(day, int) or day < 0:
            raise JourneyParseError(lineno, f"'day' must be a non-negative integer, got {day!r}")
        return "day", day, codes
    try:
        date = dt.date.fromisoformat(raw["date"])
    except (TypeError, ValueError):
        raise JourneyParseError(lineno, f"bad date {raw['date']!r}") from None
    return "date", date, codes


def parse_journeys_with_stats(
    path: str | Path, *, min_visits: int = 1
) -> tuple[list[PatientJourney], ParseStats]:
    """Read a journey JSONL file.

    Visits are sorted by day, duplicate codes inside a visit are collapsed
    (and counted), and journeys with fewer than ``min_visits`` visits are
    dropped.
    """
    stats = ParseStats()
    records = []
    kind = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stats.n_lines = lineno
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise JourneyParseError(lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise JourneyParseError(lineno, "record must be a JSON object")
            pid = obj.get("patient_id")
            if not isinstance(pid, str):
                raise JourneyParseError(lineno, "'patient_id' must be a string")
            raw_visits = obj.get("visits")
            if not isinstance(raw_visits, list) or not raw_visits:
                raise JourneyParseError(lineno, "'visits' must be a non-empty list")
            visits = []
            for raw in raw_visits:
                vkind, stamp, codes = _parse_visit(raw, lineno)
                if kind is None:
                    kind = vkind
                elif kind != vkind:
                    raise JourneyParseError(lineno, "file mixes 'day' and 'date' visits")
                unique = tuple(dict.fromkeys(codes))
                stats.duplicate_codes += len(codes) - len(unique)
                visits.append((stamp, unique))
            records.append((pid, visits))

    epoch = None
    if kind == "date":
        epoch = min(stamp for _, visits in records for stamp, _ in visits)

    journeys = []
    for pid, visits in records:
        if epoch is not None:
            visits = [((stamp - epoch).days, codes) for stamp, codes in visits]
        visits.sort(key=lambda v: v[0])
        if len(visits) < min_visits:
            stats.dropped_short += 1
            continue
        journeys.append(PatientJourney(pid, tuple(Visit(day, codes) for day, codes in visits)))
    stats.n_journeys = len(journeys)
    if stats.duplicate_codes:
        logger.warning("%s: collapsed %d duplicate codes within visits", path, stats.duplicate_codes)
    return journeys, stats


def parse_journeys(path: str | Path, *, min_visits: int = 1) -> list[PatientJourney]:
    return parse_journeys_with_stats(path, min_visits=min_visits)[0]


def write_journeys(journeys: Iterable[PatientJourney], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for j in journeys:
            rec = {
                "patient_id": j.patient_id,
                "visits": [{"day": v.day, "codes": list(v.codes)} for v in j.visits],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


@dataclass
class Vocabulary:
    """Code/id bijection with frequencies and the negative-sampling distribution.

    Ids are assigned by descending count, ties broken by code.
    """

    codes: list[str]
    counts: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)
    noise: np.ndarray = field(init=False, repr=False)
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.codes) == 0:
            raise EmptyVocabularyError("empty vocabulary")
        if len(self.codes) != len(self.counts):
            raise ValueError("codes and counts differ in length")
        self.index = {c: i for i, c in enumerate(self.codes)}
        if len(self.index) != len(self.codes):
            raise ValueError("duplicate codes in vocabulary")
        self.noise = noise_distribution(self.counts)
        self._cdf = np.cumsum(self.noise)
        self._cdf[-1] = 1.0

    def __len__(self) -> int:
        return len(self.codes)

    def __contains__(self, code: str) -> bool:
        return code in self.index

    def digest(self) -> str:
        h = hashlib.sha256()
        for code, count in zip(self.codes, self.counts):
            h.update(f"{code}\t{count}\n".encode())
        return h.hexdigest()

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        """I.i.d. draws from the noise distribution."""
        return np.searchsorted(self._cdf, rng.random(size), side="right").clip(max=len(self) - 1)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, (code, count) in enumerate(zip(self.codes, self.counts)):
                fh.write(f"{code}\t{i}\t{count}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{path}:{lineno}: expected code<TAB>id<TAB>count")
                code, idx, count = parts
                rows.append((int(idx), code, int(count)))
        rows.sort()
        if [r[0] for r in rows] != list(range(len(rows))):
            raise ValueError(f"{path}: ids are not contiguous from 0")
        return cls([r[1] for r in rows], [r[2] for r in rows])


def noise_distribution(counts: Sequence[int] | np.ndarray, power: float = NOISE_POWER) -> np.ndarray:
    weights = np.asarray(counts, dtype=np.float64) ** power
    total = weights.sum()
    if not total > 0:
        raise ValueError("noise distribution needs a positive count")
    return weights / total


def build_vocabulary(journeys: Iterable[PatientJourney], min_count: int = 5) -> Vocabulary:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    freq = Counter(code for j in journeys for v in j.visits for code in v.codes)
    kept = sorted(((c, n) for c, n in freq.items() if n >= min_count), key=lambda cn: (-cn[1], cn[0]))
    if not kept:
        raise EmptyVocabularyError("empty vocabulary")
    return Vocabulary([c for c, _ in kept], [n for _, n in kept])


def flatten_journey(journey: PatientJourney, vocab: Vocabulary) -> FlatSequence:
    """Concatenate visits in day order; codes within a visit ordered by id."""
    ids, days = [], []
    for visit in journey.visits:
        known = sorted(vocab.index[c] for c in visit.codes if c in vocab.index)
        ids.extend(known)
        days.extend([visit.day] * len(known))
    if not ids:
        raise EmptySequenceError(f"empty sequence for patient {journey.patient_id!r}")
    return FlatSequence(np.asarray(ids, dtype=np.int64), np.asarray(days, dtype=np.int64))


def make_context_samples(seq: FlatSequence, window: int) -> list[ContextSample]:
    if window < 1:
        raise ValueError("window must be >= 1")
    n = len(seq)
    samples = []
    for i in range(n):
        lo, hi = max(0, i - window), min(n, i + window + 1)
        pos = np.r_[lo:i, i + 1 : hi]
        if pos.size == 0:
            continue
        samples.append(ContextSample(int(seq.ids[i]), seq.ids[pos], seq.days[pos]))
    return samples


def sample_negatives(vocab: Vocabulary, target: int, r: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``r`` noise ids, redrawing any that hit ``target``."""
    if r < 0:
        raise ValueError("r must be >= 0")
    if r == 0:
        return np.zeros(0, dtype=np.int64)
    if len(vocab) < 2:
        raise ValueError("no negatives available")
    out = vocab.draw(rng, r)
    bad = out == target
    while bad.any():
        out[bad] = vocab.draw(rng, int(bad.sum()))
        bad = out == target
    return out


def sample_negatives_batch(
    vocab: Vocabulary, targets: np.ndarray, r: int, rng: np.random.Generator
) -> np.ndarray:
    """Row-wise :func:`sample_negatives` for a batch of targets, shape (B, r)."""
    targets = np.asarray(targets)
    if r == 0:
        return np.zeros((len(targets), 0), dtype=np.int64)
    if len(vocab) < 2:
        raise ValueError("no negatives available")
    out = vocab.draw(rng, (len(targets), r))
    bad = out == targets[:, None]
    while bad.any():
        out[bad] = vocab.draw(rng, int(bad.sum()))
        bad = out == targets[:, None]
    return out


@dataclass
class SampleSet:
    """All context samples of a corpus, padded to a fixed width.

    ``ids``/``days`` have shape (N, 2*window); padded slots have ``mask`` False.
    """

    targets: np.ndarray
    ids: np.ndarray
    days: np.ndarray
    mask: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)

    def max_interval(self) -> int:
        if len(self) == 0:
            return 0
        big = np.iinfo(np.int64).max
        lo = np.where(self.mask, self.days, big).min(axis=1)
        hi = np.where(self.mask, self.days, -1).max(axis=1)
        return int((hi - lo).max())

    def sample(self, i: int) -> ContextSample:
        m = self.mask[i]
        return ContextSample(int(self.targets[i]), self.ids[i][m], self.days[i][m])


def build_samples(journeys: Iterable[PatientJourney], vocab: Vocabulary, window: int) -> SampleSet:
    width = 2 * window
    targets, rows_ids, rows_days, lens = [], [], [], []
    skipped = 0
    for journey in journeys:
        try:
            seq = flatten_journey(journey, vocab)
        except EmptySequenceError:
            skipped += 1
            continue
        for s in make_context_samples(seq, window):
            targets.append(s.target)
            rows_ids.append(s.ctx_ids)
            rows_days.append(s.ctx_days)
            lens.append(len(s.ctx_ids))
    if skipped:
        logger.info("skipped %d journeys with no in-vocabulary codes", skipped)
    n = len(targets)
    ids = np.zeros((n, width), dtype=np.int64)
    days = np.zeros((n, width), dtype=np.int64)
    mask = np.zeros((n, width), dtype=bool)
    for k, (ri, rd, m) in enumerate(zip(rows_ids, rows_days, lens)):
        ids[k, :m] = ri
        days[k, :m] = rd
        mask[k, :m] = True
    return SampleSet(np.asarray(targets, dtype=np.int64), ids, days, mask)
