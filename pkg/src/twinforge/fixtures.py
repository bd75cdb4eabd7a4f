"""Bundled demo building and default region profiles.

Demo topology composition (84 nodes):
  2 Floors
  4 Racks per floor                          ->  8 Racks
  4 Servers per rack (idle 100 W, max 300 W) -> 32 Servers
  2 CRAC units per floor (setpoint 22 degC)  ->  4 CracUnits
  temperature + humidity + airquality sensor
    on every rack and every CRAC             -> 36 Sensors
  1 Gateway per floor                        ->  2 Gateways

Racks double as thermal zones; CRAC-mounted sensors observe their floor's
mean zone values. Sensors uplink to their floor's gateway.
"""

from __future__ import annotations

from .energy import RegionProfile
from .graph import BuildingGraph, EdgeKind, NodeKind

SENSOR_SUFFIXES = (("t", "temperature"), ("h", "humidity"), ("q", "airquality"))


def demo_topology() -> BuildingGraph:
    g = BuildingGraph()
    for f in (1, 2):
        floor = f"f{f}"
        g.add_node(NodeKind.FLOOR, {"size": 600, "age": 10}, node_id=floor)
        gateway = f"f{f}-gw"
        g.add_node(NodeKind.GATEWAY, {"age": 1}, node_id=gateway)
        g.add_edge(floor, gateway, EdgeKind.CONTAINS)

        cracs = []
        for c in (1, 2):
            crac = f"f{f}c{c}"
            g.add_node(NodeKind.CRAC, {"setpoint": 22, "size": 10, "age": 7}, node_id=crac)
            g.add_edge(floor, crac, EdgeKind.CONTAINS)
            cracs.append(crac)
            _attach_sensors(g, crac, gateway)

        for r in (1, 2, 3, 4):
            rack = f"f{f}r{r}"
            g.add_node(NodeKind.RACK, {"size": 2, "age": 5}, node_id=rack)
            g.add_edge(floor, rack, EdgeKind.CONTAINS)
            g.add_edge(floor, rack, EdgeKind.POWER_FEED)
            for crac in cracs:
                g.add_edge(crac, rack, EdgeKind.AIRFLOW)
            for s in (1, 2, 3, 4):
                server = f"{rack}s{s}"
                g.add_node(
                    NodeKind.SERVER,
                    {"idle_watts": 100, "max_watts": 300, "age": 3},
                    node_id=server,
                )
                g.add_edge(rack, server, EdgeKind.CONTAINS)
                g.add_edge(rack, server, EdgeKind.POWER_FEED)
            _attach_sensors(g, rack, gateway)
    return g.freeze()


def _attach_sensors(g: BuildingGraph, target: str, gateway: str) -> None:
    for suffix, channel in SENSOR_SUFFIXES:
        sensor = f"{target}-{suffix}"
        g.add_node(NodeKind.SENSOR, {"age": 1}, node_id=sensor, channel=channel)
        g.add_edge(sensor, target, EdgeKind.MONITORS)
        g.add_edge(sensor, gateway, EdgeKind.UPLINK)


def default_regions() -> list[RegionProfile]:
    """Five editable placeholder regions for siting comparisons.

    Intensities are illustrative configuration values, not measurements of
    any particular country.
    """
    rows = [
        ("region-a", 120.0, 1.35),
        ("region-b", 260.0, 1.10),
        ("region-c", 410.0, 1.62),
        ("region-d", 540.0, 1.48),
        ("region-e", 700.0, 1.91),
    ]
    return [
        RegionProfile(region_id=rid, carbon_intensity=ci, baseline_2005_index=idx)
        for rid, ci, idx in rows
    ]
