"""Power, energy, PUE, and carbon accounting, plus region siting comparisons.

The default cooling calibration (COP 1.5, zero overhead) makes cooling power
exactly 40% of total facility power at any positive IT load, which is the
published anchor this module is tuned to.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO

from .errors import EmptyRegions, InvalidCop, NegativeEnergy, ParseError, ZeroItPower
from .graph import BuildingGraph, NodeKind

REGIONS_HEADER = "twinforge-regions v1"

DEFAULT_COP = 1.5
# HVAC faults reduce the effective COP; capped so cooling power stays finite
# even when a CRAC is fully degraded.
DEGRADATION_COP_FACTOR = 0.5


@dataclass(frozen=True)
class PowerBreakdown:
    it_watts: float
    cooling_watts: float
    overhead_watts: float = 0.0

    @property
    def total_watts(self) -> float:
        return self.it_watts + self.cooling_watts + self.overhead_watts


@dataclass(frozen=True)
class RegionProfile:
    region_id: str
    carbon_intensity: float  # gCO2 per kWh
    baseline_2005_index: float = 1.0  # current footprint relative to 2005
    yearly_index: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.carbon_intensity < 0:
            raise ValueError(f"carbon_intensity must be >= 0: {self.carbon_intensity}")
        if self.baseline_2005_index <= 0:
            raise ValueError(f"baseline_2005_index must be > 0: {self.baseline_2005_index}")
        for year, idx in self.yearly_index.items():
            if idx <= 0:
                raise ValueError(f"yearly index for {year} must be > 0: {idx}")


@dataclass(frozen=True)
class SitingRow:
    rank: int
    region_id: str
    total_kwh: float
    emissions_kg: float
    carbon_intensity: float
    index_vs_2005: float


def it_power(graph: BuildingGraph, util: dict[str, float] | float) -> float:
    """Total server power: sum of idle + util * (max - idle), in watts.

    ``util`` is either a per-server-id mapping or a single utilization applied
    to every server.
    """
    total = 0.0
    for node in graph.nodes_of_kind(NodeKind.SERVER):
        u = util if isinstance(util, (int, float)) else util.get(node.id, 0.0)
        u = min(1.0, max(0.0, float(u)))
        idle = node.attrs["idle_watts"]
        peak = node.attrs["max_watts"]
        total += idle + u * (peak - idle)
    return total


def cooling_power(it_watts: float, cop: float = DEFAULT_COP, degradation: float = 0.0) -> float:
    """Cooling power needed to reject ``it_watts`` of heat at the given COP.

    ``degradation`` in [0, 1] models HVAC faults as an effective-COP loss
    (scaled by DEGRADATION_COP_FACTOR so a dead CRAC doubles rather than
    explodes the cooling bill).
    """
    if cop <= 0:
        raise InvalidCop(f"cop must be > 0, got {cop}")
    degradation = min(1.0, max(0.0, float(degradation)))
    effective_cop = cop * (1.0 - DEGRADATION_COP_FACTOR * degradation)
    return it_watts / effective_cop


def pue(breakdown: PowerBreakdown) -> float:
    if breakdown.it_watts <= 0:
        raise ZeroItPower("PUE undefined at zero IT power")
    return breakdown.total_watts / breakdown.it_watts


def emissions(energy_kwh: float, profile: RegionProfile) -> float:
    """kg of CO2 for the given energy consumed in the region."""
    if energy_kwh < 0:
        raise NegativeEnergy(f"energy_kwh must be >= 0, got {energy_kwh}")
    return energy_kwh * profile.carbon_intensity / 1000.0


def siting_report(
    load_profile_watts: Sequence[float],
    regions: Iterable[RegionProfile],
    hours_per_sample: float = 1.0,
) -> list[SitingRow]:
    """Rank regions by total emissions for a common load profile.

    ``load_profile_watts`` is a sequence of total facility power samples, each
    covering ``hours_per_sample`` hours. Ties break by region_id.
    """
    regions = list(regions)
    if not regions:
        raise EmptyRegions("need at least one region profile")
    if not load_profile_watts:
        raise ValueError("load profile must be nonempty")
    total_kwh = sum(load_profile_watts) * hours_per_sample / 1000.0

    scored = []
    for profile in regions:
        kg = emissions(total_kwh, profile)
        latest = profile.baseline_2005_index
        if profile.yearly_index:
            latest = profile.yearly_index[max(profile.yearly_index)]
        scored.append((kg, profile.region_id, profile, latest))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [
        SitingRow(
            rank=i + 1,
            region_id=rid,
            total_kwh=total_kwh,
            emissions_kg=kg,
            carbon_intensity=profile.carbon_intensity,
            index_vs_2005=latest,
        )
        for i, (kg, rid, profile, latest) in enumerate(scored)
    ]


def format_siting_report(rows: Sequence[SitingRow]) -> str:
    header = f"{'rank':>4}  {'region':<12} {'energy_kwh':>12} {'emissions_kg':>13} {'g/kwh':>8} {'vs2005':>7}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.rank:>4}  {r.region_id:<12} {r.total_kwh:>12.3f} {r.emissions_kg:>13.3f}"
            f" {r.carbon_intensity:>8.1f} {r.index_vs_2005:>7.2f}"
        )
    return "\n".join(lines)


# -- region profile file -------------------------------------------------------

def save_regions(regions: Sequence[RegionProfile], sink: str | TextIO) -> None:
    years = sorted({y for r in regions for y in r.yearly_index})
    buf = io.StringIO()
    buf.write(REGIONS_HEADER + "\n")
    writer = csv.writer(buf)
    writer.writerow(
        ["region_id", "carbon_intensity_g_per_kwh", "baseline_2005_index"]
        + [f"index_{y}" for y in years]
    )
    for r in sorted(regions, key=lambda r: r.region_id):
        row = [r.region_id, repr(r.carbon_intensity), repr(r.baseline_2005_index)]
        row += [repr(r.yearly_index[y]) if y in r.yearly_index else "" for y in years]
        writer.writerow(row)
    text = buf.getvalue()
    if isinstance(sink, str):
        from .util import atomic_write_text

        atomic_write_text(sink, text)
    else:
        sink.write(text)


def load_regions(source: str | TextIO) -> list[RegionProfile]:
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source.read()
    lines = text.splitlines()
    if not lines or lines[0].strip() != REGIONS_HEADER:
        raise ParseError(f"line 1: expected header {REGIONS_HEADER!r}")
    reader = csv.reader(io.StringIO("\n".join(lines[1:])))
    try:
        columns = next(reader)
    except StopIteration:
        raise ParseError("line 2: missing column header") from None
    required = ["region_id", "carbon_intensity_g_per_kwh", "baseline_2005_index"]
    if columns[: len(required)] != required:
        raise ParseError(f"line 2: columns must start with {required}, got {columns}")
    year_cols: list[tuple[int, int]] = []
    for i, name in enumerate(columns[len(required):], start=len(required)):
        if not name.startswith("index_"):
            raise ParseError(f"line 2: unexpected column {name!r}")
        try:
            year_cols.append((i, int(name.removeprefix("index_"))))
        except ValueError:
            raise ParseError(f"line 2: bad year column {name!r}") from None

    regions: list[RegionProfile] = []
    for lineno, row in enumerate(reader, start=3):
        if not row:
            continue
        try:
            yearly = {
                year: float(row[i]) for i, year in year_cols if i < len(row) and row[i] != ""
            }
            regions.append(
                RegionProfile(
                    region_id=row[0],
                    carbon_intensity=float(row[1]),
                    baseline_2005_index=float(row[2]),
                    yearly_index=yearly,
                )
            )
        except (IndexError, ValueError) as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
    if not regions:
        raise ParseError("region file defines no regions")
    return regions
