"""Synthetic journeys with planted concept groups and temporal motifs.

Every patient has a home group. Each visit draws its codes from the home
group, or with probability ``cross_group_noise`` uniformly from the other
groups. Visit days are cumulative sums of gaps drawn from
``inter_visit_gap``. A motif ``(a, b, gap)`` makes every generated visit
holding ``a`` schedule ``b`` ``gap +/- 1`` days later, merging into a visit
already on that day or creating a new one; inserted codes never trigger
further motifs.

``group_gaps`` optionally gives every group its own gap range: the gap in
front of a visit is then drawn from the range of the group of that visit's
first drawn code. With one code per visit and codes spread evenly over the
groups, this yields groups that co-occur identically and differ only in
their time intervals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .journeys import PatientJourney, Visit, write_journeys


class SynthConfigError(ValueError):
    pass


def concept_code(group: int, index: int) -> str:
    return f"G{group}_C{index:03d}"


def group_label(group: int) -> str:
    return f"G{group}"


def _check_range(name: str, rng: tuple[int, int], low: int) -> None:
    if len(rng) != 2 or rng[0] > rng[1] or rng[0] < low:
        raise SynthConfigError(f"{name} must be a range (lo, hi) with {low} <= lo <= hi")


@dataclass(frozen=True)
class SynthConfig:
    n_groups: int = 4
    concepts_per_group: int = 25
    n_patients: int = 2000
    visits_per_patient: tuple[int, int] = (2, 6)
    codes_per_visit: tuple[int, int] = (2, 4)
    inter_visit_gap: tuple[int, int] = (1, 90)
    motif_pairs: tuple[tuple[str, str, int], ...] = field(default_factory=tuple)
    cross_group_noise: float = 0.1
    seed: int = 1
    group_gaps: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self) -> None:
        if self.n_groups < 1 or self.concepts_per_group < 1 or self.n_patients < 1:
            raise SynthConfigError("n_groups, concepts_per_group and n_patients must be >= 1")
        _check_range("visits_per_patient", self.visits_per_patient, 1)
        _check_range("codes_per_visit", self.codes_per_visit, 1)
        _check_range("inter_visit_gap", self.inter_visit_gap, 0)
        if not 0.0 <= self.cross_group_noise <= 1.0:
            raise SynthConfigError("cross_group_noise must lie in [0, 1]")
        if self.n_groups == 1 and self.cross_group_noise > 0:
            raise SynthConfigError("cross_group_noise needs at least two groups")
        if self.codes_per_visit[1] > self.concepts_per_group:
            raise SynthConfigError(
                f"group of {self.concepts_per_group} concepts is too small for "
                f"{self.codes_per_visit[1]} codes per visit")
        if self.group_gaps is not None:
            if len(self.group_gaps) != self.n_groups:
                raise SynthConfigError("group_gaps needs one range per group")
            for rng in self.group_gaps:
                _check_range("group_gaps entry", tuple(rng), 0)
        codes = set(self.codes())
        for a, b, gap in self.motif_pairs:
            if a not in codes or b not in codes:
                raise SynthConfigError(f"motif ({a}, {b}) names an unknown code")
            if gap < 1:
                raise SynthConfigError("motif gap must be >= 1 day")

    def codes(self) -> list[str]:
        return [concept_code(g, i) for g in range(self.n_groups) for i in range(self.concepts_per_group)]

    def ground_truth(self) -> dict[str, str]:
        return {concept_code(g, i): group_label(g)
                for g in range(self.n_groups) for i in range(self.concepts_per_group)}


def _draw_visit(rng: np.random.Generator, cfg: SynthConfig, home: int, k: int) -> tuple[set[str], int]:
    """Codes for one visit and the group of the first code drawn."""
    codes: set[str] = set()
    others = [g for g in range(cfg.n_groups) if g != home]
    lead = None
    while len(codes) < k:
        group = home
        if others and rng.random() < cfg.cross_group_noise:
            group = others[rng.integers(len(others))]
        lead = group if lead is None else lead
        codes.add(concept_code(group, int(rng.integers(cfg.concepts_per_group))))
    return codes, lead


def _patient(rng: np.random.Generator, cfg: SynthConfig, pid: str) -> PatientJourney:
    home = int(rng.integers(cfg.n_groups))
    n_visits = int(rng.integers(cfg.visits_per_patient[0], cfg.visits_per_patient[1] + 1))
    day = int(rng.integers(0, 365))
    visits: dict[int, set[str]] = {}
    for v in range(n_visits):
        k = int(rng.integers(cfg.codes_per_visit[0], cfg.codes_per_visit[1] + 1))
        codes, lead = _draw_visit(rng, cfg, home, k)
        if v:
            lo, hi = cfg.inter_visit_gap if cfg.group_gaps is None else cfg.group_gaps[lead]
            day += int(rng.integers(lo, hi + 1))
        visits.setdefault(day, set()).update(codes)
    inserts = []
    for vday in sorted(visits):
        for a, b, gap in cfg.motif_pairs:
            if a in visits[vday]:
                inserts.append((vday + gap + int(rng.integers(-1, 2)), b))
    for vday, code in inserts:
        visits.setdefault(vday, set()).add(code)
    return PatientJourney(pid, tuple(Visit(d, tuple(sorted(visits[d]))) for d in sorted(visits)))


def generate(config: SynthConfig) -> tuple[list[PatientJourney], dict[str, str]]:
    """Journeys (in patient-id order) and the code -> group ground truth."""
    width = len(str(config.n_patients))
    streams = np.random.SeedSequence(config.seed).spawn(config.n_patients)
    journeys = [_patient(np.random.default_rng(s), config, f"p{i:0{width}d}") for i, s in enumerate(streams)]
    return journeys, config.ground_truth()


def write_ground_truth(truth: dict[str, str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for code, group in truth.items():
            fh.write(f"{code}\t{group}\n")


def write_corpus(config: SynthConfig, journeys_path: str | Path, truth_path: str | Path) -> None:
    journeys, truth = generate(config)
    write_journeys(journeys, journeys_path)
    write_ground_truth(truth, truth_path)
