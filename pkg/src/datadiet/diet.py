"""Loss-ranked percentile pruning of PSMA samples.

PSMA records are ordered by loss, lowest first, and the first
``ceil(n / 100 * #PSMA)`` are dropped from the training manifest.  FDG records
are never touched.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

from .cohort import CohortManifest, SampleRecord, Tracer
from .errors import MissingLabelsError, MissingMetricsError, PercentileOutOfRangeError

EXCLUDED_IDS_FILE = "excluded_ids.txt"
PLAN_FILE = "diet_plan.json"
RETAINED_FILE = "retained_manifest.json"


def rank_psma_by_loss(manifest: CohortManifest, metric: str = "loss") -> list[tuple[str, float]]:
    """PSMA ``(sample_id, value)`` pairs, ascending, ties broken by id."""
    psma = manifest.by_tracer(Tracer.PSMA)
    missing = [r.sample_id for r in psma if r.metrics is None]
    if missing:
        raise MissingMetricsError(missing, metric)
    ranked = [(r.sample_id, float(getattr(r.metrics, metric))) for r in psma]
    ranked.sort(key=lambda pair: (pair[1], pair[0]))
    return ranked


def exclusion_count(n, population: int) -> int:
    """``ceil(n / 100 * population)`` evaluated exactly on the decimal value of ``n``."""
    if not 0 < float(n) < 100:
        raise PercentileOutOfRangeError(f"percentile must lie in (0, 100), got {n}")
    exact = Decimal(str(n)) * population / 100
    return int(math.ceil(exact))


@dataclass(frozen=True)
class DietPlan:
    percentile_n: float
    excluded_ids: tuple[str, ...]
    retained_manifest: CohortManifest
    source_manifest_hash: str
    ranking_metric: str = "loss"
    psma_count: int = 0

    @property
    def k(self) -> int:
        return len(self.excluded_ids)

    def to_dict(self) -> dict:
        return {
            "percentile_n": self.percentile_n,
            "k": self.k,
            "psma_count": self.psma_count,
            "ranking_metric": self.ranking_metric,
            "source_manifest_hash": self.source_manifest_hash,
            "retained_manifest_hash": self.retained_manifest.digest(),
            "excluded_ids": list(self.excluded_ids),
        }

    def write(self, out_dir) -> dict[str, Path]:
        """Write plan JSON, the excluded-ids list and the retained manifest."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "plan": out_dir / PLAN_FILE,
            "excluded": out_dir / EXCLUDED_IDS_FILE,
            "retained": out_dir / RETAINED_FILE,
        }
        paths["plan"].write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        paths["excluded"].write_text("".join(i + "\n" for i in self.excluded_ids))
        self.retained_manifest.save(paths["retained"])
        return paths


def prune_percentile(manifest: CohortManifest, n, metric: str = "loss") -> DietPlan:
    """Drop the lowest-``metric`` ``n`` percent of PSMA samples."""
    psma_count = len(manifest.by_tracer(Tracer.PSMA))
    k = exclusion_count(n, psma_count)
    ranking = rank_psma_by_loss(manifest, metric)
    excluded = {sid for sid, _ in ranking[:k]}
    retained = manifest.with_samples(
        (r for r in manifest if r.sample_id not in excluded),
        provenance=f"{manifest.provenance}; post {n}% diet".lstrip("; "),
    )
    return DietPlan(
        percentile_n=float(n),
        excluded_ids=tuple(sorted(excluded)),
        retained_manifest=retained,
        source_manifest_hash=manifest.digest(),
        ranking_metric=metric,
        psma_count=psma_count,
    )


@dataclass(frozen=True)
class HealthCheck:
    excluded: int
    healthy_excluded: int
    healthy_ids: tuple[str, ...]

    @property
    def claim_holds(self) -> bool:
        return self.healthy_excluded == 0


def verify_diet_health_claim(plan: DietPlan, manifest: CohortManifest) -> HealthCheck:
    """Count excluded samples whose ground truth is empty (healthy)."""
    records: list[SampleRecord] = [manifest.get(sid) for sid in plan.excluded_ids]
    unknown = [r.sample_id for r in records if r.is_sick is None]
    if unknown:
        raise MissingLabelsError(unknown)
    healthy = tuple(r.sample_id for r in records if not r.is_sick)
    return HealthCheck(len(records), len(healthy), healthy)


def read_excluded_ids(path) -> list[str]:
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
