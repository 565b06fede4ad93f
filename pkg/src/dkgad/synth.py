"""Synthetic Kubernetes-style telemetry as TTL snapshots with labelled anomalies.

Normal behaviour: order-1 autoregressive attribute series around a daily
sinusoidal mean, occasional benign traffic bursts, pod rescheduling and rare
restarts.  Injected anomalies (always labelled on a Service):

``cpu_spike``   one backing pod's cpu is multiplied (attribute-level)
``crash_loop``  one backing pod flaps: unready, restarting, absent on
                alternate snapshots (presence-level)
``conn_storm``  a burst of extra connections hits the service
                (structure-level)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .labels import AnomalyEvent, write_labels_csv
from .ontology import K8S, RDF_TYPE, OntologySchema, microservice_schema
from .ttl import XSD_BOOLEAN, XSD_DECIMAL, XSD_INTEGER, Literal, Quad, emit_snapshot, snapshot_filename

ANOMALY_CLASSES = ("cpu_spike", "crash_loop", "conn_storm")
DAY_SECONDS = 86400


class InfeasibleScenario(ValueError):
    pass


@dataclass(frozen=True)
class AnomalySpec:
    """One anomaly family.  ``count`` is its relative share of injected events."""

    cls: str
    target: str = "Service"
    count: int = 1
    duration: tuple[int, int] = (8, 30)
    magnitude: float = 3.0

    def __post_init__(self):
        if self.cls not in ANOMALY_CLASSES:
            raise ValueError(f"unknown anomaly class {self.cls!r}")
        if self.target != "Service":
            raise ValueError("anomalies are labelled on Service entities")
        lo, hi = self.duration
        if not 1 <= lo <= hi:
            raise ValueError("anomaly duration range must be positive and ordered")
        if self.count < 1 or self.magnitude <= 1.0:
            raise ValueError("anomaly count must be >= 1 and magnitude > 1")


DEFAULT_ANOMALIES = (
    AnomalySpec("cpu_spike", duration=(8, 30), magnitude=3.0),
    AnomalySpec("crash_loop", duration=(10, 36), magnitude=3.0),
    AnomalySpec("conn_storm", duration=(6, 24), magnitude=2.0),
)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    duration: int = 5760
    cadence: int = 15
    clusters: int = 1
    nodes: int = 3
    pods: int = 6
    services: int = 3
    connections: int = 8
    anomalies: tuple[AnomalySpec, ...] = DEFAULT_ANOMALIES
    anomaly_rate: float = 0.04
    noise: float = 0.04
    burst_rate: float = 1 / 200
    reschedule_rate: float = 1 / 20000
    start: int = 1717200000

    def __post_init__(self):
        for name in ("duration", "cadence", "clusters", "nodes", "pods", "services", "connections"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.anomaly_rate < 0.5:
            raise ValueError("anomaly rate must lie in (0, 0.5)")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


# ---------------------------------------------------------------------------
# config file: "key = value" lines; "anomaly = <class> count=.. duration=lo-hi magnitude=.."

def _parse_anomaly(text: str) -> AnomalySpec:
    parts = text.split()
    kwargs = {}
    for item in parts[1:]:
        key, _, value = item.partition("=")
        if key == "duration":
            lo, _, hi = value.partition("-")
            kwargs["duration"] = (int(lo), int(hi or lo))
        elif key == "count":
            kwargs["count"] = int(value)
        elif key == "magnitude":
            kwargs["magnitude"] = float(value)
        elif key == "target":
            kwargs["target"] = value
        else:
            raise ValueError(f"unknown anomaly field {key!r}")
    return AnomalySpec(parts[0], **kwargs)


def parse_config(text: str) -> ScenarioConfig:
    kinds = {f.name: f.type for f in fields(ScenarioConfig)}
    values: dict = {}
    anomalies = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep:
            raise ValueError(f"line {lineno}: expected key = value")
        if key == "anomaly":
            anomalies.append(_parse_anomaly(value))
        elif key == "anomalies" and value == "none":
            anomalies = []
            values["anomalies"] = ()
        elif key in kinds:
            values[key] = float(value) if kinds[key] == "float" else int(value)
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    if anomalies:
        values["anomalies"] = tuple(anomalies)
    return ScenarioConfig(**values)


def load_config(path: str | Path) -> ScenarioConfig:
    return parse_config(Path(path).read_text())


def format_config(config: ScenarioConfig) -> str:
    lines = []
    for f in fields(ScenarioConfig):
        if f.name == "anomalies":
            continue
        lines.append(f"{f.name} = {getattr(config, f.name)!r}")
    if not config.anomalies:
        lines.append("anomalies = none")
    for a in config.anomalies:
        lines.append(f"anomaly = {a.cls} count={a.count} duration={a.duration[0]}-{a.duration[1]} "
                     f"magnitude={a.magnitude!r} target={a.target}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------

@dataclass
class GroundTruth:
    config: ScenarioConfig
    timestamps: np.ndarray
    events: list[AnomalyEvent]
    quads: list[list[Quad]]
    adjacency: list[dict[str, set[tuple[str, str]]]] = field(repr=False)

    def all_quads(self) -> list[Quad]:
        return [q for snap in self.quads for q in snap]


@dataclass
class _Event:
    cls: str
    service: int
    start: int
    end: int          # inclusive snapshot index
    magnitude: float
    pod: int = -1


def _ar1(rng, mean: np.ndarray, rel_noise: float, rho: float = 0.8) -> np.ndarray:
    """AR(1) deviations around a time-varying mean (last axis is time)."""
    eps = rng.standard_normal(mean.shape) * rel_noise
    dev = np.zeros_like(mean)
    for t in range(mean.shape[-1]):
        prev = dev[..., t - 1] if t else 0.0
        dev[..., t] = rho * prev + eps[..., t]
    return mean * (1.0 + dev)


def _place_events(config: ScenarioConfig, rng, S: int, T: int) -> list[_Event]:
    if not config.anomalies:
        return []
    target = int(round(config.anomaly_rate * S * T))
    cycle = [a for a in config.anomalies for _ in range(a.count)]
    gap = 8
    busy = [np.zeros(T, dtype=bool) for _ in range(S)]
    events: list[_Event] = []
    placed = 0
    k = 0
    while placed < target:
        spec = cycle[k % len(cycle)]
        k += 1
        lo, hi = spec.duration
        dur = int(rng.integers(lo, hi + 1))
        remaining = target - placed
        if remaining < dur:
            dur = max(remaining, lo)
        for _ in range(500):
            s = int(rng.integers(S))
            if T - dur - 1 < 1:
                break
            start = int(rng.integers(1, T - dur))
            end = start + dur - 1
            if not busy[s][max(0, start - gap): end + gap + 1].any():
                break
        else:
            raise InfeasibleScenario(
                f"cannot place a {dur}-snapshot {spec.cls} event; anomaly rate {config.anomaly_rate} "
                f"is unreachable in {T} snapshots")
        if T - dur - 1 < 1:
            raise InfeasibleScenario(f"{T} snapshots cannot hold a {dur}-snapshot {spec.cls} event")
        busy[s][start:end + 1] = True
        strength = 0.5 + 0.5 * rng.random()
        magnitude = 1.0 + (spec.magnitude - 1.0) * strength
        events.append(_Event(spec.cls, s, start, end, magnitude))
        placed += dur
    realized = placed / (S * T)
    if abs(realized - config.anomaly_rate) > 0.25 * config.anomaly_rate:
        raise InfeasibleScenario(f"realized anomaly rate {realized:.4f} misses target {config.anomaly_rate}")
    return sorted(events, key=lambda e: (e.start, e.service))


def _dec(v: float) -> Literal:
    return Literal(f"{v:.4f}", XSD_DECIMAL)


def generate(config: ScenarioConfig, out_dir: str | Path | None = None,
             schema: OntologySchema | None = None) -> GroundTruth:
    """Simulate ``config.duration`` snapshots; optionally write TTL files and labels.

    With ``out_dir`` the layout is ``snapshots/snapshot_<epoch>.ttl``,
    ``labels.csv`` and ``scenario.cfg``.
    """
    schema = schema or microservice_schema()
    ns = schema.namespace
    rng = np.random.default_rng(config.seed)
    T, S, P, N, C = config.duration, config.services, config.pods, config.nodes, config.clusters
    times = config.start + config.cadence * np.arange(T, dtype=np.int64)

    # topology
    node_cluster = np.arange(N) % C
    pod_service = np.arange(P) % S
    pod_node = rng.integers(N, size=(P,))
    conn_pairs = [(p, int(pod_service[p])) for p in range(min(P, config.connections))]
    for _ in range(config.connections - len(conn_pairs)):
        conn_pairs.append((int(rng.integers(P)), int(rng.integers(S))))
    service_pods = [sorted({p for p, s in conn_pairs if s == si}) for si in range(S)]
    own_pods = [[p for p in range(P) if pod_service[p] == si] for si in range(S)]

    # daily load curve and benign bursts
    phase = rng.uniform(0, 2 * math.pi, size=S)
    day = 2 * math.pi * (times - config.start) / DAY_SECONDS
    load = 1.0 + 0.15 * np.sin(day[None, :] + phase[:, None])  # S x T
    burst = np.ones((S, T))
    for si in range(S):
        for b0 in np.flatnonzero(rng.random(T) < config.burst_rate):
            burst[si, b0:b0 + int(rng.integers(2, 6))] *= 1.0 + rng.uniform(0.3, 0.7)
    load = load * burst

    events = _place_events(config, rng, S, T)
    for ev in events:
        candidates = own_pods[ev.service] or service_pods[ev.service] or list(range(P))
        ev.pod = int(candidates[int(rng.integers(len(candidates)))])

    noise = config.noise
    req_base = rng.uniform(50, 150, size=S)
    lat_base = rng.uniform(20, 60, size=S)
    cpu_base = rng.uniform(0.3, 0.8, size=P)
    mem_base = rng.uniform(200, 400, size=P)

    service_rate = _ar1(rng, req_base[:, None] * load, noise)
    pod_load = load[pod_service]
    pod_cpu_clean = _ar1(rng, cpu_base[:, None] * pod_load, noise)
    pod_mem = _ar1(rng, np.repeat(mem_base[:, None], T, axis=1), noise / 4)
    lat_noise = _ar1(rng, np.ones((S, T)), noise)
    api_latency = _ar1(rng, np.full((C, T), 5.0), noise)
    conn_err = np.abs(_ar1(rng, np.full((len(conn_pairs), T), 0.01), noise * 5))

    pod_cpu = pod_cpu_clean.copy()
    pod_ready = np.ones((P, T), dtype=bool)
    pod_present = np.ones((P, T), dtype=bool)
    restarts = np.zeros((P, T), dtype=np.int64)
    storm_conns: list[tuple[int, int, int, int]] = []  # (pod, service, start, end)
    rate_boost = np.ones((S, T))
    storm_load = np.zeros((S, T))

    # benign short-lived disturbances: pod cpu blips, single restarts, connection churn
    for p in range(P):
        for b0 in np.flatnonzero(rng.random(T) < config.burst_rate):
            pod_cpu[p, b0:b0 + int(rng.integers(2, 5))] *= rng.uniform(1.5, 2.5)
        for b0 in np.flatnonzero(rng.random(T) < config.burst_rate / 3):
            pod_ready[p, b0:b0 + int(rng.integers(1, 3))] = False
            restarts[p, b0] += 1
    for si in range(S):
        for b0 in np.flatnonzero(rng.random(T) < config.burst_rate):
            blen = int(rng.integers(2, 5))
            for _ in range(int(rng.integers(1, 3))):
                storm_conns.append((int(rng.integers(P)), si, int(b0), int(min(T - 1, b0 + blen - 1))))

    for ev in events:
        sl = slice(ev.start, ev.end + 1)
        if ev.cls == "cpu_spike":
            pod_cpu[ev.pod, sl] *= ev.magnitude
        elif ev.cls == "crash_loop":
            idx = np.arange(ev.start, ev.end + 1)
            pod_ready[ev.pod, sl] = False
            pod_cpu[ev.pod, sl] /= ev.magnitude
            pod_present[ev.pod, idx[(idx - ev.start) % 2 == 1]] = False
            restarts[ev.pod, idx[(idx - ev.start) % 2 == 0]] += 1
        else:
            n_extra = max(1, int(math.ceil(ev.magnitude * max(1, len(service_pods[ev.service])))))
            for _ in range(n_extra):
                storm_conns.append((int(rng.integers(P)), ev.service, ev.start, ev.end))
            rate_boost[ev.service, sl] *= 1.0 + 0.1 * ev.magnitude
            storm_load[ev.service, sl] = ev.magnitude - 1.0
    service_rate = service_rate * rate_boost

    # pod rescheduling: node assignment per snapshot
    pod_node_t = np.repeat(pod_node[:, None], T, axis=1)
    for p in range(P):
        for t0 in np.flatnonzero(rng.random(T) < config.reschedule_rate):
            pod_node_t[p, t0:] = int(rng.integers(N))

    # service latency: weak coupling to backing-pod pressure and readiness
    latency = np.empty((S, T))
    for si in range(S):
        pods = own_pods[si]
        if pods:
            pressure = pod_cpu[pods].mean(axis=0) / np.maximum(pod_cpu_clean[pods].mean(axis=0), 1e-9)
            unready = 1.0 - pod_ready[pods].mean(axis=0)
        else:
            pressure, unready = np.ones(T), np.zeros(T)
        latency[si] = lat_base[si] * (0.8 + 0.2 * load[si]) * lat_noise[si] * (
            1.0 + 0.3 * (pressure - 1.0) + 0.4 * unready + 0.3 * storm_load[si])

    node_cpu = np.zeros((N, T))
    node_mem = np.zeros((N, T))
    present_cpu = np.where(pod_present, pod_cpu, 0.0)
    present_mem = np.where(pod_present, pod_mem, 0.0)
    for p in range(P):
        np.add.at(node_cpu, (pod_node_t[p], np.arange(T)), present_cpu[p])
        np.add.at(node_mem, (pod_node_t[p], np.arange(T)), present_mem[p])
    node_cpu += _ar1(rng, np.full((N, T), 0.2), noise)
    node_mem += _ar1(rng, np.full((N, T), 512.0), noise / 4)

    conn_share = np.array([sum(1 for _, s2 in conn_pairs if s2 == s) for _, s in conn_pairs], dtype=float)
    conn_rate = np.array([service_rate[s] / conn_share[i] for i, (_, s) in enumerate(conn_pairs)])
    conn_rate = _ar1(rng, conn_rate, noise / 2) if len(conn_pairs) else conn_rate

    # emit quads
    def iri(kind, i):
        return f"{ns}{kind}-{i}"

    cat = {c: schema.category_iri(c) for c in schema.categories}
    pred = {(a.category, a.name): a.predicate for a in schema.attributes}
    rel = {r.domain + ">" + r.range: r.predicate for r in schema.relations}
    clusters = [iri("cluster", i) for i in range(C)]
    nodes = [iri("node", i) for i in range(N)]
    pods = [iri("pod", i) for i in range(P)]
    services = [iri("svc", i) for i in range(S)]
    conns = [iri("conn", i) for i in range(len(conn_pairs))]
    storms = [iri("conn-x", i) for i in range(len(storm_conns))]

    all_quads: list[list[Quad]] = []
    adjacency: list[dict[str, set[tuple[str, str]]]] = []
    for t in range(T):
        ts = int(times[t])
        q: list[Quad] = []
        adj: dict[str, set[tuple[str, str]]] = {
            "Node->Cluster": set(), "Pod->Node": set(), "Connection->Pod": set(), "Service->Connection": set()}
        for i, c_iri in enumerate(clusters):
            q.append(Quad(c_iri, RDF_TYPE, cat["Cluster"], ts))
            q.append(Quad(c_iri, pred["Cluster", "api_latency"], _dec(api_latency[i, t]), ts))
        for i, n_iri in enumerate(nodes):
            q.append(Quad(n_iri, RDF_TYPE, cat["Node"], ts))
            q.append(Quad(n_iri, pred["Node", "cpu"], _dec(node_cpu[i, t]), ts))
            q.append(Quad(n_iri, pred["Node", "memory"], _dec(node_mem[i, t]), ts))
            q.append(Quad(clusters[node_cluster[i]], rel["Cluster>Node"], n_iri, ts))
            adj["Node->Cluster"].add((n_iri, clusters[node_cluster[i]]))
        for i, p_iri in enumerate(pods):
            if not pod_present[i, t]:
                continue
            q.append(Quad(p_iri, RDF_TYPE, cat["Pod"], ts))
            q.append(Quad(p_iri, pred["Pod", "cpu"], _dec(pod_cpu[i, t]), ts))
            q.append(Quad(p_iri, pred["Pod", "memory"], _dec(pod_mem[i, t]), ts))
            q.append(Quad(p_iri, pred["Pod", "restarts"], Literal(str(int(restarts[i, t])), XSD_INTEGER), ts))
            q.append(Quad(p_iri, pred["Pod", "ready"],
                          Literal("true" if pod_ready[i, t] else "false", XSD_BOOLEAN), ts))
            n_iri = nodes[pod_node_t[i, t]]
            q.append(Quad(n_iri, rel["Node>Pod"], p_iri, ts))
            adj["Pod->Node"].add((p_iri, n_iri))
        for i, s_iri in enumerate(services):
            q.append(Quad(s_iri, RDF_TYPE, cat["Service"], ts))
            q.append(Quad(s_iri, pred["Service", "request_rate"], _dec(service_rate[i, t]), ts))
            q.append(Quad(s_iri, pred["Service", "latency"], _dec(latency[i, t]), ts))
        live = [(conns[i], p, s, conn_rate[i, t], conn_err[i, t]) for i, (p, s) in enumerate(conn_pairs)]
        for i, (p, s, a, b) in enumerate(storm_conns):
            if a <= t <= b:
                live.append((storms[i], p, s, service_rate[s, t] / 2, 0.05 * (1 + t % 3)))
        for c_iri, p, s, r, e in live:
            q.append(Quad(c_iri, RDF_TYPE, cat["Connection"], ts))
            q.append(Quad(c_iri, pred["Connection", "request_rate"], _dec(r), ts))
            q.append(Quad(c_iri, pred["Connection", "error_rate"], _dec(e), ts))
            q.append(Quad(c_iri, rel["Connection>Service"], services[s], ts))
            adj["Service->Connection"].add((services[s], c_iri))
            if pod_present[p, t]:
                q.append(Quad(c_iri, rel["Connection>Pod"], pods[p], ts))
                adj["Connection->Pod"].add((c_iri, pods[p]))
        all_quads.append(q)
        adjacency.append(adj)

    labels = [
        AnomalyEvent(services[ev.service], int(times[ev.start]), int(times[ev.end]), ev.cls) for ev in events
    ]
    truth = GroundTruth(config, times, labels, all_quads, adjacency)
    if out_dir is not None:
        write_scenario(truth, out_dir, schema)
    return truth


def write_scenario(truth: GroundTruth, out_dir: str | Path, schema: OntologySchema | None = None) -> Path:
    schema = schema or microservice_schema()
    out = Path(out_dir)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    prefixes = {"k": schema.namespace}
    for t, quads in zip(truth.timestamps, truth.quads):
        (snap_dir / snapshot_filename(int(t))).write_text(emit_snapshot(quads, prefixes), encoding="utf-8")
    write_labels_csv(truth.events, out / "labels.csv")
    (out / "scenario.cfg").write_text(format_config(truth.config))
    return out


def realized_anomaly_rate(truth: GroundTruth) -> float:
    cadence = truth.config.cadence
    rows = sum((ev.t_end - ev.t_start) // cadence + 1 for ev in truth.events)
    return rows / (truth.config.services * truth.config.duration)
