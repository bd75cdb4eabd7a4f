"""Discrete-time synthetic plant for the building graph.

Evolves a first-order lumped thermal model per rack zone, emits noisy sensor
telemetry, and injects labeled faults. Every trajectory is fully determined by
(graph, initial state, fault schedule, seed): the RNG snapshot lives inside
PlantState, so stepping is a pure state -> state function.

Zone dynamics (per rack, per step of ``dt`` seconds):

    T' = T + dt * (dynamic_it_heat + U*(T_ambient - T) - cooling) / C
    cooling = sum over same-floor CRACs of capacity * G * max(0, T - setpoint) / n_racks

With zero utilization and T = setpoint = ambient the state is an exact fixed
point, which anchors the equilibrium tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import TargetMismatch
from .graph import BuildingGraph, FeatureSet, NodeKind
from .util import new_rng, restore_rng, rng_state, stable_hash


class FaultKind(str, Enum):
    HVAC_DEGRADATION = "HvacDegradation"
    SENSOR_DRIFT = "SensorDrift"
    AIR_QUALITY_INCIDENT = "AirQualityIncident"
    OVERLOAD_SURGE = "OverloadSurge"


FAULT_TARGET_KINDS = {
    FaultKind.HVAC_DEGRADATION: (NodeKind.CRAC,),
    FaultKind.SENSOR_DRIFT: (NodeKind.SENSOR,),
    FaultKind.AIR_QUALITY_INCIDENT: (NodeKind.ZONE, NodeKind.RACK),
    FaultKind.OVERLOAD_SURGE: (NodeKind.SERVER,),
}

# Sensor noise sigmas and the per-channel scale a SensorDrift magnitude
# multiplies into the affected readings.
NOISE_SIGMA = {"temperature": 0.2, "humidity": 1.0, "airquality": 0.02, "power": 2.0}
DRIFT_SCALES = {"temperature": 10.0, "humidity": 20.0, "airquality": 0.5, "power": 200.0}


@dataclass(frozen=True)
class FaultEvent:
    kind: FaultKind
    target: str
    onset: int
    duration: int
    magnitude: float

    def __post_init__(self) -> None:
        if not (0.0 < self.magnitude <= 1.0):
            raise ValueError(f"magnitude must be in (0, 1]: {self.magnitude}")
        if self.duration < 1:
            raise ValueError(f"duration must be >= 1 step: {self.duration}")
        if self.onset < 0:
            raise ValueError(f"onset must be >= 0: {self.onset}")

    def active_at(self, t: int) -> bool:
        return self.onset <= t < self.onset + self.duration

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "target": self.target,
            "onset": self.onset,
            "duration": self.duration,
            "magnitude": self.magnitude,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FaultEvent":
        return cls(FaultKind(d["kind"]), d["target"], d["onset"], d["duration"], d["magnitude"])


def inject_fault(
    schedule: Sequence[FaultEvent], event: FaultEvent, graph: BuildingGraph
) -> tuple[FaultEvent, ...]:
    """Return the schedule extended with ``event`` after kind/target checks."""
    if event.target not in graph:
        raise TargetMismatch(f"unknown target node {event.target!r}")
    node_kind = graph.node(event.target).kind
    if node_kind not in FAULT_TARGET_KINDS[event.kind]:
        raise TargetMismatch(
            f"{event.kind.value} cannot target {node_kind.value} node {event.target!r}"
        )
    return tuple(schedule) + (event,)


@dataclass(frozen=True)
class Labels:
    anomaly: bool
    per_fault: dict[str, bool]

    def as_vector(self) -> np.ndarray:
        return np.array([float(self.per_fault[k.value]) for k in FaultKind], dtype=np.float64)

    def to_dict(self) -> dict:
        return {"anomaly": self.anomaly, "per_fault": dict(self.per_fault)}


def labels_for(schedule: Iterable[FaultEvent], t: int) -> Labels:
    per_fault = {k.value: False for k in FaultKind}
    for event in schedule:
        if event.active_at(t):
            per_fault[event.kind.value] = True
    return Labels(anomaly=any(per_fault.values()), per_fault=per_fault)


@dataclass(frozen=True)
class TelemetryFrame:
    time: int
    readings: dict[str, float]
    labels: Labels
    truth: dict

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "readings": dict(self.readings),
            "labels": self.labels.to_dict(),
            "truth": self.truth,
        }


@dataclass(frozen=True)
class PlantConfig:
    dt: float = 60.0                   # seconds per step
    thermal_mass: float = 50_000.0     # J/degC per rack zone
    env_conductance: float = 50.0      # W/degC zone <-> ambient
    crac_conductance: float = 300.0    # W/degC per CRAC at full capacity
    ambient_temp: float = 25.0
    ambient_humidity: float = 45.0
    humidity_rate: float = 0.002       # 1/s relaxation toward ambient humidity
    air_quality_rate: float = 0.005    # 1/s relaxation toward clean air
    util_mean: float = 0.5
    util_phi: float = 0.9              # AR(1) pole for utilization wander
    util_sigma: float = 0.02
    noise_sigma: dict = field(default_factory=lambda: dict(NOISE_SIGMA))
    drift_scales: dict = field(default_factory=lambda: dict(DRIFT_SCALES))
    # Optional scripted ambient drift: (start_step, degC_per_step, n_steps).
    ambient_ramp: Optional[tuple[int, float, int]] = None

    def to_dict(self) -> dict:
        d = {
            "dt": self.dt,
            "thermal_mass": self.thermal_mass,
            "env_conductance": self.env_conductance,
            "crac_conductance": self.crac_conductance,
            "ambient_temp": self.ambient_temp,
            "ambient_humidity": self.ambient_humidity,
            "humidity_rate": self.humidity_rate,
            "air_quality_rate": self.air_quality_rate,
            "util_mean": self.util_mean,
            "util_phi": self.util_phi,
            "util_sigma": self.util_sigma,
            "noise_sigma": dict(self.noise_sigma),
            "drift_scales": dict(self.drift_scales),
            "ambient_ramp": list(self.ambient_ramp) if self.ambient_ramp else None,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlantConfig":
        ramp = d.get("ambient_ramp")
        return cls(
            dt=d["dt"],
            thermal_mass=d["thermal_mass"],
            env_conductance=d["env_conductance"],
            crac_conductance=d["crac_conductance"],
            ambient_temp=d["ambient_temp"],
            ambient_humidity=d["ambient_humidity"],
            humidity_rate=d["humidity_rate"],
            air_quality_rate=d["air_quality_rate"],
            util_mean=d["util_mean"],
            util_phi=d["util_phi"],
            util_sigma=d["util_sigma"],
            noise_sigma=dict(d["noise_sigma"]),
            drift_scales=dict(d["drift_scales"]),
            ambient_ramp=tuple(ramp) if ramp else None,
        )


@dataclass(frozen=True)
class PlantState:
    time: int
    zone_temp: dict[str, float]
    ambient_temp: float
    humidity: dict[str, float]
    air_quality: dict[str, float]
    util: dict[str, float]
    crac_capacity: dict[str, float]
    setpoints: dict[str, float]
    rng: dict  # serialized generator snapshot; advances every step

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "zone_temp": dict(self.zone_temp),
            "ambient_temp": self.ambient_temp,
            "humidity": dict(self.humidity),
            "air_quality": dict(self.air_quality),
            "util": dict(self.util),
            "crac_capacity": dict(self.crac_capacity),
            "setpoints": dict(self.setpoints),
            "rng": dict(self.rng),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlantState":
        return cls(
            time=d["time"],
            zone_temp=dict(d["zone_temp"]),
            ambient_temp=d["ambient_temp"],
            humidity=dict(d["humidity"]),
            air_quality=dict(d["air_quality"]),
            util=dict(d["util"]),
            crac_capacity=dict(d["crac_capacity"]),
            setpoints=dict(d["setpoints"]),
            rng=dict(d["rng"]),
        )

    def state_hash(self) -> str:
        return stable_hash(self.to_dict())


def zone_ids(graph: BuildingGraph) -> list[str]:
    return sorted(
        n.id for n in graph.nodes.values() if n.kind in (NodeKind.RACK, NodeKind.ZONE)
    )


def make_initial_state(
    graph: BuildingGraph, config: Optional[PlantConfig] = None, seed: int = 42
) -> PlantState:
    config = config or PlantConfig()
    gen = new_rng((seed, 0))
    setpoints = {
        n.id: n.attrs.get("setpoint", 22.0) for n in graph.nodes_of_kind(NodeKind.CRAC)
    }
    mean_setpoint = (
        sum(setpoints.values()) / len(setpoints) if setpoints else config.ambient_temp
    )
    zones = zone_ids(graph)
    return PlantState(
        time=0,
        zone_temp={z: mean_setpoint for z in zones},
        ambient_temp=config.ambient_temp,
        humidity={z: config.ambient_humidity for z in zones},
        air_quality={z: 1.0 for z in zones},
        util={n.id: config.util_mean for n in graph.nodes_of_kind(NodeKind.SERVER)},
        crac_capacity={c: 1.0 for c in setpoints},
        setpoints=setpoints,
        rng=rng_state(gen),
    )


def _active_events(schedule: Iterable[FaultEvent], t: int) -> list[FaultEvent]:
    return [e for e in schedule if e.active_at(t)]


def effective_crac_capacity(
    state: PlantState, schedule: Iterable[FaultEvent], t: int
) -> dict[str, float]:
    caps = dict(state.crac_capacity)
    for event in _active_events(schedule, t):
        if event.kind is FaultKind.HVAC_DEGRADATION and event.target in caps:
            caps[event.target] *= 1.0 - event.magnitude
    return caps


def _effective_util(
    util: dict[str, float], schedule: Iterable[FaultEvent], t: int
) -> dict[str, float]:
    eff = dict(util)
    for event in _active_events(schedule, t):
        if event.kind is FaultKind.OVERLOAD_SURGE and event.target in eff:
            eff[event.target] = min(1.0, eff[event.target] + event.magnitude)
    return eff


def _effective_air_quality(
    air_quality: dict[str, float], schedule: Iterable[FaultEvent], t: int
) -> dict[str, float]:
    eff = dict(air_quality)
    for event in _active_events(schedule, t):
        if event.kind is FaultKind.AIR_QUALITY_INCIDENT and event.target in eff:
            eff[event.target] = max(0.0, eff[event.target] - event.magnitude)
    return eff


class _Layout:
    """Per-graph index of zones, servers, CRACs, and sensor sources.

    Cached on the graph instance: building it walks every edge, and step()
    runs thousands of times against the same frozen graph.
    """

    def __init__(self, graph: BuildingGraph):
        self.zones = zone_ids(graph)
        self.servers_by_zone: dict[str, list] = {z: [] for z in self.zones}
        for server in graph.nodes_of_kind(NodeKind.SERVER):
            parent = graph.contains_parent(server.id)
            if parent in self.servers_by_zone:
                self.servers_by_zone[parent].append(server)
        self.floor_of = {z: graph.floor_of(z) for z in self.zones}
        self.cracs_by_floor: dict[str, list[str]] = {}
        for crac in graph.nodes_of_kind(NodeKind.CRAC):
            floor = graph.floor_of(crac.id)
            self.cracs_by_floor.setdefault(floor, []).append(crac.id)
        self.zones_by_floor: dict[str, list[str]] = {}
        for z in self.zones:
            self.zones_by_floor.setdefault(self.floor_of[z], []).append(z)
        self.sensors = sorted(graph.nodes_of_kind(NodeKind.SENSOR), key=lambda n: n.id)
        self.sensor_source = {s.id: graph.monitored_by(s.id) for s in self.sensors}
        self.graph = graph


def _layout(graph: BuildingGraph) -> _Layout:
    cached = getattr(graph, "_plant_layout", None)
    if cached is None:
        cached = _Layout(graph)
        graph._plant_layout = cached  # type: ignore[attr-defined]
    return cached


def _dynamic_heat(servers: list, eff_util: dict[str, float]) -> float:
    return sum(
        eff_util[s.id] * (s.attrs["max_watts"] - s.attrs["idle_watts"]) for s in servers
    )


def _node_power(node, eff_util: dict[str, float]) -> float:
    return node.attrs["idle_watts"] + eff_util[node.id] * (
        node.attrs["max_watts"] - node.attrs["idle_watts"]
    )


def step(
    graph: BuildingGraph,
    state: PlantState,
    config: Optional[PlantConfig] = None,
    schedule: Sequence[FaultEvent] = (),
    dt: Optional[float] = None,
) -> tuple[PlantState, TelemetryFrame]:
    """Advance one step and emit the telemetry frame for the new time."""
    config = config or PlantConfig()
    dt = config.dt if dt is None else dt
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    layout = _layout(graph)
    gen = restore_rng(state.rng)
    t_new = state.time + 1

    # Scripted ambient drift, if configured.
    ambient = state.ambient_temp
    if config.ambient_ramp is not None:
        start, per_step, n_steps = config.ambient_ramp
        if start <= state.time < start + n_steps:
            ambient += per_step

    # Utilization wander (AR(1) around the configured mean), then fault overlays.
    util = {}
    for sid in sorted(state.util):
        u = state.util[sid]
        if config.util_sigma > 0:
            u = config.util_mean + config.util_phi * (u - config.util_mean)
            u += config.util_sigma * gen.standard_normal()
        util[sid] = float(min(1.0, max(0.0, u)))
    eff_util = _effective_util(util, schedule, t_new)
    eff_caps = effective_crac_capacity(state, schedule, t_new)

    # Zone thermal update (explicit Euler; dt * conductance / C stays < 1).
    zone_temp = {}
    for z in layout.zones:
        temp = state.zone_temp[z]
        heat = _dynamic_heat(layout.servers_by_zone[z], eff_util)
        env = config.env_conductance * (ambient - temp)
        cooling = 0.0
        floor = layout.floor_of[z]
        floor_zones = layout.zones_by_floor.get(floor, [z])
        for crac_id in layout.cracs_by_floor.get(floor, []):
            setpoint = state.setpoints[crac_id]
            cooling += (
                eff_caps[crac_id]
                * config.crac_conductance
                * max(0.0, temp - setpoint)
                / max(1, len(floor_zones))
            )
        zone_temp[z] = temp + dt * (heat + env - cooling) / config.thermal_mass

    humidity = {
        z: h + dt * config.humidity_rate * (config.ambient_humidity - h)
        for z, h in state.humidity.items()
    }
    air_quality = {
        z: min(1.0, q + dt * config.air_quality_rate * (1.0 - q))
        for z, q in state.air_quality.items()
    }
    eff_aq = _effective_air_quality(air_quality, schedule, t_new)

    new_state = PlantState(
        time=t_new,
        zone_temp=zone_temp,
        ambient_temp=ambient,
        humidity=humidity,
        air_quality=air_quality,
        util=util,
        crac_capacity=dict(state.crac_capacity),
        setpoints=dict(state.setpoints),
        rng=rng_state(gen),
    )

    readings = _emit_readings(layout, new_state, eff_util, eff_aq, config, schedule, t_new, gen)
    # Readings consumed generator draws after the snapshot above; refresh it so
    # the stored stream position covers everything drawn this step.
    new_state = replace(new_state, rng=rng_state(gen))

    frame = TelemetryFrame(
        time=t_new,
        readings=readings,
        labels=labels_for(schedule, t_new),
        truth={
            "ambient_temp": ambient,
            "zone_temp": dict(zone_temp),
            "air_quality": dict(eff_aq),
            "mean_zone_temp": sum(zone_temp.values()) / max(1, len(zone_temp)),
        },
    )
    return new_state, frame


def _true_sensor_value(
    layout: _Layout,
    state: PlantState,
    eff_util: dict[str, float],
    eff_aq: dict[str, float],
    sensor,
    source_id: Optional[str],
) -> float:
    graph = layout.graph
    channel = sensor.channel
    source = graph.node(source_id) if source_id else None

    if source is None:
        return 0.0
    if source.kind in (NodeKind.RACK, NodeKind.ZONE):
        zones = [source.id]
    elif source.kind is NodeKind.CRAC or source.kind is NodeKind.FLOOR:
        floor = graph.floor_of(source.id)
        zones = layout.zones_by_floor.get(floor, [])
    elif source.kind is NodeKind.SERVER:
        parent = graph.contains_parent(source.id)
        zones = [parent] if parent else []
    else:
        zones = []

    if channel == "temperature":
        vals = [state.zone_temp[z] for z in zones if z in state.zone_temp]
        return sum(vals) / len(vals) if vals else state.ambient_temp
    if channel == "humidity":
        vals = [state.humidity[z] for z in zones if z in state.humidity]
        return sum(vals) / len(vals) if vals else 45.0
    if channel == "airquality":
        vals = [eff_aq[z] for z in zones if z in eff_aq]
        return sum(vals) / len(vals) if vals else 1.0
    if channel == "power":
        if source.kind is NodeKind.SERVER:
            return _node_power(source, eff_util)
        total = 0.0
        for z in zones:
            total += sum(_node_power(s, eff_util) for s in layout.servers_by_zone.get(z, []))
        return total
    raise ValueError(f"unknown channel {channel!r}")


def _emit_readings(
    layout: _Layout,
    state: PlantState,
    eff_util: dict[str, float],
    eff_aq: dict[str, float],
    config: PlantConfig,
    schedule: Sequence[FaultEvent],
    t: int,
    gen: np.random.Generator,
) -> dict[str, float]:
    drift_offsets: dict[str, float] = {}
    for event in _active_events(schedule, t):
        if event.kind is FaultKind.SENSOR_DRIFT:
            drift_offsets[event.target] = drift_offsets.get(event.target, 0.0)
            drift_offsets[event.target] += event.magnitude  # scaled per channel below

    readings = {}
    for sensor in layout.sensors:
        true_value = _true_sensor_value(
            layout, state, eff_util, eff_aq, sensor, layout.sensor_source[sensor.id]
        )
        sigma = config.noise_sigma.get(sensor.channel, 0.0)
        noise = sigma * gen.standard_normal() if sigma > 0 else 0.0
        drift = drift_offsets.get(sensor.id, 0.0) * config.drift_scales[sensor.channel]
        readings[sensor.id] = float(true_value + noise + drift)
    return readings


# -- dataset generation ---------------------------------------------------------

@dataclass
class Dataset:
    """Featurized, labeled trajectory of the plant."""

    samples: list[tuple[FeatureSet, Labels]]
    frames: list[TelemetryFrame]
    schedule: tuple[FaultEvent, ...]
    graph_hash: str
    seed: int
    horizon: int
    fault_rate: float

    @property
    def prevalence(self) -> float:
        if not self.samples:
            return 0.0
        return sum(1 for _, y in self.samples if y.anomaly) / len(self.samples)

    def label_balance(self) -> dict[str, float]:
        n = max(1, len(self.samples))
        balance = {"anomaly": self.prevalence}
        for kind in FaultKind:
            balance[kind.value] = (
                sum(1 for _, y in self.samples if y.per_fault[kind.value]) / n
            )
        return balance


def _sample_fault(
    graph: BuildingGraph, gen: np.random.Generator, onset: int
) -> Optional[FaultEvent]:
    kind = list(FaultKind)[int(gen.integers(0, len(FaultKind)))]
    candidates = sorted(
        n.id
        for n in graph.nodes.values()
        if n.kind in FAULT_TARGET_KINDS[kind]
    )
    if not candidates:
        return None
    target = candidates[int(gen.integers(0, len(candidates)))]
    duration = int(gen.integers(10, 41))
    magnitude = float(gen.uniform(0.4, 1.0))
    return FaultEvent(kind, target, onset, duration, magnitude)


def generate_dataset(
    graph: BuildingGraph,
    horizon: int,
    fault_rate: float,
    seed: int = 42,
    config: Optional[PlantConfig] = None,
    keep_frames: bool = False,
) -> Dataset:
    """Simulate ``horizon`` steps with Poisson fault arrivals and featurize.

    ``fault_rate`` is the expected number of new fault events per step;
    sampled faults start immediately and last 10-40 steps with magnitude in
    [0.4, 1.0].
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if not (0.0 <= fault_rate <= 1.0):
        raise ValueError(f"fault_rate must be in [0, 1], got {fault_rate}")
    config = config or PlantConfig()
    state = make_initial_state(graph, config, seed)
    fault_gen = new_rng((seed, 1))
    schedule: tuple[FaultEvent, ...] = ()
    samples: list[tuple[FeatureSet, Labels]] = []
    frames: list[TelemetryFrame] = []

    for _ in range(horizon):
        if fault_rate > 0:
            for _ in range(int(fault_gen.poisson(fault_rate))):
                event = _sample_fault(graph, fault_gen, onset=state.time + 1)
                if event is not None:
                    schedule = schedule + (event,)
        state, frame = step(graph, state, config, schedule)
        samples.append((graph.featurize(frame), frame.labels))
        if keep_frames:
            frames.append(frame)

    return Dataset(
        samples=samples,
        frames=frames,
        schedule=schedule,
        graph_hash=graph.graph_hash(),
        seed=seed,
        horizon=horizon,
        fault_rate=fault_rate,
    )


def steps_to_equilibrium(
    graph: BuildingGraph,
    config: Optional[PlantConfig] = None,
    seed: int = 42,
    tol: float = 1e-6,
    max_steps: int = 1000,
) -> int:
    """Steps until the largest zone-temperature move falls below ``tol`` degC.

    Run with a noiseless config (util_sigma 0) for a deterministic answer.
    """
    config = config or PlantConfig(util_sigma=0.0)
    state = make_initial_state(graph, config, seed)
    for n in range(1, max_steps + 1):
        new_state, _ = step(graph, state, config)
        delta = max(
            abs(new_state.zone_temp[z] - state.zone_temp[z]) for z in state.zone_temp
        ) if state.zone_temp else 0.0
        state = new_state
        if delta < tol:
            return n
    return max_steps
