"""Campaign statistics: symptom counts, infection loci and stack distances."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from riptide.analyzer import ABBREVIATIONS, INCONCLUSIVE, NO_INFECTION, SYMPTOMS, SymptomDiagnosis
from riptide.project import MethodDescriptor
from riptide.static import StackDistanceSample
from riptide.transform import ExtremeTransformation

LOCI = ("result", "arguments", "receiver")


def locus_of(root: str) -> str | None:
    if root == "result":
        return "result"
    if root == "this":
        return "receiver"
    if root.startswith("arg"):
        return "arguments"
    return None


@dataclass
class CampaignSummary:
    counts: dict[str, int] = field(default_factory=dict)
    loci: dict[str, int] = field(default_factory=dict)
    populations: dict[str, int] = field(default_factory=dict)
    distances: list[dict] = field(default_factory=list)
    proportions: dict[str, float] = field(default_factory=dict)
    transformations: int = 0
    detected: int = 0
    undetected: int = 0

    def to_dict(self) -> dict:
        return {
            "transformations": self.transformations,
            "detected": self.detected,
            "undetected": self.undetected,
            "counts": dict(sorted(self.counts.items())),
            "proportions": dict(sorted(self.proportions.items())),
            "infection_loci": dict(sorted(self.loci.items())),
            "infected_populations": dict(sorted(self.populations.items())),
            "stack_distances": self.distances,
        }

    def distances_tsv(self) -> str:
        rows = ["transformation_id\tsymptom\tdistance\ttest_id"]
        rows += [f"{d['transformation_id']}\t{d['symptom']}\t{d['distance']}\t{d['test_id']}" for d in self.distances]
        return "\n".join(rows) + "\n"

    def lines(self) -> list[str]:
        """Short human summary used at the top of the report."""
        c = self.counts
        out = [f"- transformations: {self.transformations}, detected: {self.detected}, "
               f"undetected: {self.undetected}"]
        out.append("- " + ", ".join(f"{ABBREVIATIONS[s]}: {c.get(s, 0)}" for s in SYMPTOMS + (INCONCLUSIVE,)))
        if any(self.loci.values()):
            out.append("- infection observed in " + ", ".join(f"{k}: {self.loci.get(k, 0)}" for k in LOCI))
        return out


def summarize(
    diagnoses: Iterable[SymptomDiagnosis],
    samples: Iterable[StackDistanceSample] = (),
    *,
    methods: Mapping[str, MethodDescriptor] | None = None,
    transformations: Iterable[ExtremeTransformation] = (),
) -> CampaignSummary:
    """Aggregate diagnoses deterministically.

    Loci are non-exclusive: a diff touching both the result and the receiver
    counts for both.
    """
    diagnoses = sorted(diagnoses, key=lambda d: d.transformation_id)
    ts = {t.id: t for t in transformations}
    s = CampaignSummary()
    s.transformations = len(ts)
    s.detected = sum(1 for t in ts.values() if t.detection == "detected")
    s.undetected = len(diagnoses)
    counts = Counter(d.symptom for d in diagnoses)
    s.counts = {k: counts.get(k, 0) for k in SYMPTOMS + (INCONCLUSIVE,)}
    classified = s.undetected - s.counts[INCONCLUSIVE]
    s.proportions = {k: (round(s.counts[k] / classified, 4) if classified else 0.0) for k in SYMPTOMS}
    loci = Counter()
    pops = Counter()
    for d in diagnoses:
        if d.symptom in (NO_INFECTION, INCONCLUSIVE) or not d.method_diff:
            continue
        for locus in {locus_of(r) for r in d.method_diff.locus} - {None}:
            loci[locus] += 1
        t = ts.get(d.transformation_id)
        m = methods.get(t.method) if (methods and t) else None
        pops["infected"] += 1
        if m is not None:
            pops["non_void"] += m.return_category != "void"
            pops["parameterized"] += bool(m.params)
            pops["non_static"] += not m.is_static
    s.loci = {k: loci.get(k, 0) for k in LOCI}
    s.populations = {k: pops.get(k, 0) for k in ("infected", "non_void", "parameterized", "non_static")}
    symptom = {d.transformation_id: d.symptom for d in diagnoses}
    s.distances = [
        {"transformation_id": x.transformation_id, "symptom": symptom.get(x.transformation_id, ""),
         "distance": x.distance, "test_id": x.test_id}
        for x in sorted(samples, key=lambda x: x.transformation_id)
    ]
    return s
