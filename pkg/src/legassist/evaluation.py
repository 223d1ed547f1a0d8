"""Detection / false-positive protocol over the 18 standing trials."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .blobs import AREA_BAND, LINK_RADIUS, connected_components, leg_sized
from .errors import InvalidArgumentError
from .nn import SegmentationMask
from .pipeline import Segmenter
from .raster import GridSpec, deproject_cell, rasterize
from .sim import GroundTruth, Trial


@dataclass(frozen=True)
class Thresholds:
    detect: float = 0.05  # m, predicted centroid to a true leg centre
    false_positive: float = 0.10  # m, clutter blob to both leg centres
    area_band: tuple[int, int] = AREA_BAND
    link_radius: int = LINK_RADIUS


@dataclass(frozen=True)
class TrialResult:
    scenario: int
    location: int
    legs_detected: bool
    false_positive: bool
    centroids: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.scenario not in (1, 2) or not 1 <= self.location <= 9:
            raise InvalidArgumentError(f"bad trial id ({self.scenario}, {self.location})")


def _percent(n: int, n_t: int) -> float:
    if n_t <= 0:
        raise InvalidArgumentError("n_t must be positive")
    return n / n_t * 100


def accuracy(n_s: int, n_t: int) -> float:
    return _percent(n_s, n_t)


def fp_rate(n_f: int, n_t: int) -> float:
    return _percent(n_f, n_t)


def display_percent(n: int, n_t: int) -> str:
    """One decimal, truncated rather than rounded (7/18 -> "38.8")."""
    if n_t <= 0:
        raise InvalidArgumentError("n_t must be positive")
    tenths = Fraction(n * 1000, n_t).__floor__()
    return f"{tenths // 10}.{tenths % 10}"


@dataclass(frozen=True)
class EvalSummary:
    n_t: int
    n_s: int
    n_f: int

    def __post_init__(self):
        if not (0 <= self.n_s <= self.n_t and 0 <= self.n_f <= self.n_t):
            raise InvalidArgumentError(f"inconsistent counts {self}")

    @property
    def acc(self) -> float:
        return accuracy(self.n_s, self.n_t)

    @property
    def fp(self) -> float:
        return fp_rate(self.n_f, self.n_t)

    def to_json(self) -> dict:
        return {"n_t": self.n_t, "n_s": self.n_s, "n_f": self.n_f, "acc": self.acc, "fp": self.fp}

    @classmethod
    def of(cls, results: Sequence[TrialResult]) -> EvalSummary:
        return cls(len(results), sum(r.legs_detected for r in results),
                   sum(r.false_positive for r in results))


def classify_trial(mask: SegmentationMask, truth: GroundTruth, scenario: int = 1, location: int = 1,
                   spec: GridSpec = GridSpec(), thresholds: Thresholds = Thresholds()) -> TrialResult:
    """Detected: exactly two leg-sized blobs lie within ``detect`` of the legs and
    they match distinct legs. False positive: some leg-sized blob at least
    ``false_positive`` from both legs. Far blobs do not veto a detection, so
    the two flags are independent.

    Leg positions are the centroids of each leg's visible returns."""
    blobs = [b for b in connected_components(mask, mask.threshold, thresholds.link_radius)
             if leg_sized(b, thresholds.area_band)]
    cents = [deproject_cell(*b.centroid, spec) for b in blobs]
    legs = [np.array(c[:2]) for c in truth.reference_centers()]
    if not cents or not legs:
        return TrialResult(scenario, location, False, bool(cents) and not legs,
                           [(round(c.x, 6), round(c.y, 6)) for c in cents])
    dist = np.array([[np.linalg.norm(np.array(c[:2]) - leg) for leg in legs] for c in cents])
    near = dist[dist.min(axis=1) <= thresholds.detect]
    detected = False
    if len(near) == 2 and len(legs) == 2:
        d = thresholds.detect
        detected = bool((near[0, 0] <= d and near[1, 1] <= d) or (near[0, 1] <= d and near[1, 0] <= d))
    fp = bool(np.any(dist.min(axis=1) >= thresholds.false_positive))
    return TrialResult(scenario, location, detected, fp,
                       [(round(c.x, 6), round(c.y, 6)) for c in cents])


@dataclass
class ProtocolReport:
    model: str
    seed: int
    thresholds: Thresholds
    trials: list[TrialResult]

    @property
    def summary(self) -> EvalSummary:
        return EvalSummary.of(self.trials)

    def scenario_summary(self, scenario: int) -> EvalSummary:
        return EvalSummary.of([t for t in self.trials if t.scenario == scenario])

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "seed": self.seed,
            "thresholds": asdict(self.thresholds),
            "trials": [asdict(t) for t in self.trials],
            "summary": self.summary.to_json(),
            "per_scenario": {str(s): self.scenario_summary(s).to_json() for s in (1, 2)},
        }

    @classmethod
    def from_json(cls, obj: dict) -> ProtocolReport:
        th = dict(obj["thresholds"])
        th["area_band"] = tuple(th["area_band"])
        trials = [TrialResult(t["scenario"], t["location"], t["legs_detected"], t["false_positive"],
                              [tuple(c) for c in t["centroids"]]) for t in obj["trials"]]
        return cls(obj["model"], obj["seed"], Thresholds(**th), trials)


def run_protocol(segmenter: Segmenter, trials: Sequence[Trial], *, name: str = "model",
                 seed: int = 0, spec: GridSpec = GridSpec(),
                 thresholds: Thresholds = Thresholds()) -> ProtocolReport:
    results = []
    for trial in trials:
        mask = segmenter(rasterize(trial.scan, spec))
        results.append(classify_trial(mask, trial.truth, trial.scenario, trial.location,
                                      spec, thresholds))
    return ProtocolReport(name, seed, thresholds, results)


def format_table(reports: Sequence[ProtocolReport]) -> str:
    """Two columns per model (legs detected, false positives), as counts and percents."""
    head1, head2, counts, pcts = [], [], [], []
    for r in reports:
        s = r.summary
        head1.append(f"{r.model:^33}")
        head2.append(f"{'Legs detected':^16}|{'False Positives':^16}")
        counts.append(f"{f'{s.n_s}/{s.n_t}':^16}|{f'{s.n_f}/{s.n_t}':^16}")
        pcts.append(f"{'acc ' + display_percent(s.n_s, s.n_t) + '%':^16}|"
                    f"{'FP ' + display_percent(s.n_f, s.n_t) + '%':^16}")
    lines = ["|" + "|".join(row) + "|" for row in (head1, head2, counts, pcts)]
    rule = "+" + "+".join("-" * 33 for _ in reports) + "+"
    out = [rule, lines[0], rule, lines[1], rule, lines[2], lines[3], rule]
    extra = []
    for r in reports:
        for sc in (1, 2):
            s = r.scenario_summary(sc)
            extra.append(f"  {r.model} scenario {sc}: detected {s.n_s}/{s.n_t}, FP {s.n_f}/{s.n_t}")
    return "\n".join(out + ["per-scenario breakdown (not part of the aggregate table):"] + extra)


def reports_to_json(reports: Sequence[ProtocolReport]) -> str:
    return json.dumps({"reports": [r.to_json() for r in reports]}, indent=2, sort_keys=True)


def reports_from_json(text: str) -> list[ProtocolReport]:
    return [ProtocolReport.from_json(o) for o in json.loads(text)["reports"]]
