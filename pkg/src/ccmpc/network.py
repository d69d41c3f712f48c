"""Drainage network description: elements, topology, strict JSON config parsing.

A network is a directed acyclic graph of storage tanks, transport delays and
runoff entry points.  Tanks come in two kinds:

* ``passive`` tanks drain on their own; the outflow is proportional to the
  stored volume through a volume-flow coefficient (``beta_per_s``).
* ``controlled`` tanks release water through a commanded throttle flow,
  bounded by a pipe capacity (``q_u_max_m3s``).

Delays move flow unchanged, one buffer slot per time step.  Runoff inputs are
exogenous inflow signals.  Optional pipe overflow structures sit on runoff
lines and spill everything above their capacity before the flow enters the
network.

Elements may feed several downstream elements; the outflow is then split in
equal parts so that mass is conserved.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field


TANK_KINDS = ("passive", "controlled")
RECEIVING_WATERS = ("river", "creek")


class NetworkConfigError(Exception):
    """Base class for all network configuration problems."""


class ConfigSyntaxError(NetworkConfigError):
    """The config text is not valid JSON.  Carries line/column of the error."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"config syntax error at line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ConfigSchemaError(NetworkConfigError):
    """The config JSON does not match the expected schema."""


class NetworkCycleError(NetworkConfigError):
    """The element graph contains a cycle."""


class DanglingReferenceError(NetworkConfigError):
    """An element id is referenced but never declared, or declared but unused."""


class UnstableTankError(NetworkConfigError):
    """A tank's volume-flow coefficient is incompatible with the time step."""


@dataclass(frozen=True)
class Tank:
    id: str
    kind: str
    v_max_m3: float
    beta_per_s: float
    overflow_weight: float
    receiving_water: str
    q_u_max_m3s: float | None = None


@dataclass(frozen=True)
class Delay:
    id: str
    steps: int


@dataclass(frozen=True)
class PipeCso:
    """Overflow structure on a runoff line: spills everything above capacity."""

    id: str
    carries: str
    capacity_m3s: float
    receiving_water: str


@dataclass(frozen=True)
class NetworkSpec:
    """Immutable, validated network description.

    ``inflows`` is stored as declaration-ordered pairs ``(element, sources)``
    so that parse/serialize round-trips compare equal.
    """

    delta_t_s: float
    tanks: tuple[Tank, ...]
    delays: tuple[Delay, ...]
    inflows: tuple[tuple[str, tuple[str, ...]], ...]
    runoff_inputs: tuple[str, ...]
    wwtp_sink: str
    pipe_csos: tuple[PipeCso, ...] = field(default=())

    # -- lookup helpers -------------------------------------------------

    def tank(self, element_id: str) -> Tank:
        for t in self.tanks:
            if t.id == element_id:
                return t
        raise KeyError(element_id)

    def delay(self, element_id: str) -> Delay:
        for d in self.delays:
            if d.id == element_id:
                return d
        raise KeyError(element_id)

    @property
    def tank_ids(self) -> tuple[str, ...]:
        return tuple(t.id for t in self.tanks)

    @property
    def delay_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.delays)

    @property
    def controlled_tanks(self) -> tuple[Tank, ...]:
        return tuple(t for t in self.tanks if t.kind == "controlled")

    @property
    def passive_tanks(self) -> tuple[Tank, ...]:
        return tuple(t for t in self.tanks if t.kind == "passive")

    def inflow_map(self) -> dict[str, tuple[str, ...]]:
        return {elem: sources for elem, sources in self.inflows}

    def consumers(self) -> dict[str, tuple[str, ...]]:
        """Map each element id to the elements fed by its outflow."""
        out: dict[str, list[str]] = {}
        for elem, sources in self.inflows:
            for s in sources:
                out.setdefault(s, []).append(elem)
        return {k: tuple(v) for k, v in out.items()}

    def split_factor(self, element_id: str) -> float:
        """Fraction of an element's outflow received by each consumer."""
        n = len(self.consumers().get(element_id, ()))
        return 1.0 / n if n > 1 else 1.0

    def exit_elements(self) -> tuple[str, ...]:
        """Elements whose outflow leaves the modelled system.

        The WWTP sink tank is excluded; its outflow is the plant inflow and
        is accounted separately.
        """
        consumed = set(self.consumers())
        out = []
        for eid in self.tank_ids + self.delay_ids:
            if eid not in consumed and eid != self.wwtp_sink:
                out.append(eid)
        return tuple(out)

    def pipe_for_input(self, runoff_id: str) -> PipeCso | None:
        for p in self.pipe_csos:
            if p.carries == runoff_id:
                return p
        return None

    def signature(self) -> str:
        """Short content hash used to detect mismatched traces/artifacts."""
        return hashlib.sha256(serialize_network(self).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOP_KEYS = {"delta_t_s", "tanks", "delays", "inflows", "runoff_inputs",
             "wwtp_sink", "pipe_csos"}
_TANK_KEYS = {"id", "kind", "v_max_m3", "beta_per_s", "q_u_max_m3s",
              "overflow_weight", "receiving_water"}
_DELAY_KEYS = {"id", "steps"}
_PIPE_KEYS = {"id", "carries", "capacity_m3s", "receiving_water"}


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigSchemaError(message)


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigSchemaError(f"unknown key(s) {sorted(unknown)} in {where}")


def _positive_number(obj: dict, key: str, where: str) -> float:
    _require(key in obj, f"missing key '{key}' in {where}")
    value = obj[key]
    _require(isinstance(value, (int, float)) and not isinstance(value, bool),
             f"'{key}' in {where} must be a number")
    _require(value > 0, f"'{key}' in {where} must be > 0, got {value}")
    return float(value)


def _identifier(obj: dict, key: str, where: str) -> str:
    _require(key in obj, f"missing key '{key}' in {where}")
    value = obj[key]
    _require(isinstance(value, str) and value, f"'{key}' in {where} must be a non-empty string")
    return value


def parse_network(text: str) -> NetworkSpec:
    """Parse and validate a network config JSON document.

    Raises:
        ConfigSyntaxError: malformed JSON (with line/column).
        ConfigSchemaError: wrong structure, types, or unknown keys.
        DanglingReferenceError: id referenced but not declared, or a runoff
            input that feeds nothing.
        NetworkCycleError: the element graph has a cycle.
        UnstableTankError: beta_per_s * delta_t_s outside (0, 1].
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(exc.msg, exc.lineno, exc.colno) from exc

    _require(isinstance(raw, dict), "top-level config must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "top-level config")
    for key in ("delta_t_s", "tanks", "inflows", "runoff_inputs", "wwtp_sink"):
        _require(key in raw, f"missing top-level key '{key}'")

    delta_t = _positive_number(raw, "delta_t_s", "top-level config")

    _require(isinstance(raw["tanks"], list) and raw["tanks"],
             "'tanks' must be a non-empty list")
    tanks = []
    for i, entry in enumerate(raw["tanks"]):
        where = f"tanks[{i}]"
        _require(isinstance(entry, dict), f"{where} must be an object")
        _check_keys(entry, _TANK_KEYS, where)
        tid = _identifier(entry, "id", where)
        kind = _identifier(entry, "kind", where)
        _require(kind in TANK_KINDS, f"'kind' in {where} must be one of {TANK_KINDS}")
        v_max = _positive_number(entry, "v_max_m3", where)
        beta = _positive_number(entry, "beta_per_s", where)
        _require("overflow_weight" in entry, f"missing key 'overflow_weight' in {where}")
        weight = entry["overflow_weight"]
        _require(isinstance(weight, (int, float)) and not isinstance(weight, bool)
                 and weight >= 0, f"'overflow_weight' in {where} must be a number >= 0")
        water = _identifier(entry, "receiving_water", where)
        _require(water in RECEIVING_WATERS,
                 f"'receiving_water' in {where} must be one of {RECEIVING_WATERS}")
        q_u_max = None
        if kind == "controlled":
            q_u_max = _positive_number(entry, "q_u_max_m3s", where)
        else:
            _require("q_u_max_m3s" not in entry,
                     f"passive tank {where} must not set 'q_u_max_m3s'")
        if beta * delta_t > 1.0:
            raise UnstableTankError(
                f"tank '{tid}': beta_per_s*delta_t_s = {beta * delta_t:.6g} > 1; "
                f"the volume update would turn negative")
        tanks.append(Tank(tid, kind, v_max, beta, float(weight), water, q_u_max))

    delays = []
    for i, entry in enumerate(raw.get("delays", [])):
        where = f"delays[{i}]"
        _require(isinstance(entry, dict), f"{where} must be an object")
        _check_keys(entry, _DELAY_KEYS, where)
        did = _identifier(entry, "id", where)
        _require("steps" in entry, f"missing key 'steps' in {where}")
        steps = entry["steps"]
        _require(isinstance(steps, int) and not isinstance(steps, bool) and steps >= 1,
                 f"'steps' in {where} must be an integer >= 1")
        delays.append(Delay(did, steps))

    _require(isinstance(raw["runoff_inputs"], list) and raw["runoff_inputs"],
             "'runoff_inputs' must be a non-empty list")
    runoff = []
    for i, rid in enumerate(raw["runoff_inputs"]):
        _require(isinstance(rid, str) and rid,
                 f"runoff_inputs[{i}] must be a non-empty string")
        runoff.append(rid)

    pipes = []
    for i, entry in enumerate(raw.get("pipe_csos", [])):
        where = f"pipe_csos[{i}]"
        _require(isinstance(entry, dict), f"{where} must be an object")
        _check_keys(entry, _PIPE_KEYS, where)
        pid = _identifier(entry, "id", where)
        carries = _identifier(entry, "carries", where)
        cap = _positive_number(entry, "capacity_m3s", where)
        water = _identifier(entry, "receiving_water", where)
        _require(water in RECEIVING_WATERS,
                 f"'receiving_water' in {where} must be one of {RECEIVING_WATERS}")
        pipes.append(PipeCso(pid, carries, cap, water))

    _require(isinstance(raw["inflows"], dict), "'inflows' must be an object")
    inflows = []
    for elem, sources in raw["inflows"].items():
        _require(isinstance(sources, list),
                 f"inflows['{elem}'] must be a list of source ids")
        for s in sources:
            _require(isinstance(s, str) and s,
                     f"sources of inflows['{elem}'] must be non-empty strings")
        inflows.append((elem, tuple(sources)))

    wwtp = raw["wwtp_sink"]
    _require(isinstance(wwtp, str) and wwtp, "'wwtp_sink' must be a non-empty string")

    spec = NetworkSpec(
        delta_t_s=delta_t,
        tanks=tuple(tanks),
        delays=tuple(delays),
        inflows=tuple(inflows),
        runoff_inputs=tuple(runoff),
        wwtp_sink=wwtp,
        pipe_csos=tuple(pipes),
    )
    _validate_references(spec)
    _validate_graph(spec)
    return spec


def parse_network_file(path) -> NetworkSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_network(fh.read())


def _validate_references(spec: NetworkSpec) -> None:
    tank_ids = spec.tank_ids
    delay_ids = spec.delay_ids
    storage_ids = tank_ids + delay_ids
    all_ids = storage_ids + spec.runoff_inputs

    seen: set[str] = set()
    for eid in all_ids + tuple(p.id for p in spec.pipe_csos):
        if eid in seen:
            raise ConfigSchemaError(f"duplicate element id '{eid}'")
        seen.add(eid)

    inflow_keys = [elem for elem, _ in spec.inflows]
    if len(set(inflow_keys)) != len(inflow_keys):
        raise ConfigSchemaError("duplicate element key in 'inflows'")

    for elem, sources in spec.inflows:
        if elem not in storage_ids:
            raise DanglingReferenceError(
                f"inflows key '{elem}' is not a declared tank or delay")
        for s in sources:
            if s not in all_ids:
                raise DanglingReferenceError(
                    f"inflow source '{s}' of '{elem}' is not declared")
            if s == elem:
                raise NetworkCycleError(f"element '{elem}' feeds itself")
        if len(set(sources)) != len(sources):
            raise ConfigSchemaError(f"duplicate source in inflows['{elem}']")

    if spec.wwtp_sink not in tank_ids:
        raise DanglingReferenceError(
            f"wwtp_sink '{spec.wwtp_sink}' is not a declared tank")

    consumed = spec.consumers()
    for rid in spec.runoff_inputs:
        if rid not in consumed:
            raise DanglingReferenceError(
                f"runoff input '{rid}' feeds no element")

    for p in spec.pipe_csos:
        if p.carries not in spec.runoff_inputs:
            raise DanglingReferenceError(
                f"pipe CSO '{p.id}' carries unknown runoff input '{p.carries}'")
    carried = [p.carries for p in spec.pipe_csos]
    if len(set(carried)) != len(carried):
        raise ConfigSchemaError("two pipe CSOs carry the same runoff input")


def _declaration_index(spec: NetworkSpec) -> dict[str, int]:
    order: dict[str, int] = {}
    for eid in spec.runoff_inputs + spec.tank_ids + spec.delay_ids:
        order[eid] = len(order)
    return order


def _validate_graph(spec: NetworkSpec) -> None:
    order = topological_order(spec)  # raises NetworkCycleError
    # The treatment-plant sink must actually receive water from somewhere.
    inflow = spec.inflow_map()
    reachable: set[str] = set(spec.runoff_inputs)
    for eid in order:
        for s in inflow.get(eid, ()):
            if s in reachable:
                reachable.add(eid)
                break
    if spec.wwtp_sink not in reachable:
        raise ConfigSchemaError(
            f"wwtp_sink '{spec.wwtp_sink}' receives no runoff through the network")


def topological_order(spec: NetworkSpec) -> tuple[str, ...]:
    """All element ids (runoff inputs, tanks, delays) in dependency order.

    Deterministic: ties are broken by declaration order, so the same config
    always yields the same ordering.
    """
    decl = _declaration_index(spec)
    inflow = spec.inflow_map()
    indegree = {eid: len(inflow.get(eid, ())) for eid in decl}
    consumers = spec.consumers()

    ready = sorted((eid for eid, deg in indegree.items() if deg == 0),
                   key=decl.__getitem__)
    out: list[str] = []
    while ready:
        eid = ready.pop(0)
        out.append(eid)
        for c in sorted(consumers.get(eid, ()), key=decl.__getitem__):
            indegree[c] -= 1
            if indegree[c] == 0:
                # insert keeping the ready list ordered by declaration index
                pos = 0
                while pos < len(ready) and decl[ready[pos]] < decl[c]:
                    pos += 1
                ready.insert(pos, c)
    if len(out) != len(decl):
        stuck = sorted(set(decl) - set(out), key=decl.__getitem__)
        raise NetworkCycleError(f"cycle detected among elements {stuck}")
    return tuple(out)


def ordered_tanks(spec: NetworkSpec) -> tuple[Tank, ...]:
    """Tanks in topological order; fixes the row/state ordering everywhere."""
    topo = topological_order(spec)
    by_id = {t.id: t for t in spec.tanks}
    return tuple(by_id[eid] for eid in topo if eid in by_id)


def ordered_delays(spec: NetworkSpec) -> tuple[Delay, ...]:
    topo = topological_order(spec)
    by_id = {d.id: d for d in spec.delays}
    return tuple(by_id[eid] for eid in topo if eid in by_id)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def serialize_network(spec: NetworkSpec) -> str:
    """Render a NetworkSpec back to config JSON; parse(serialize(s)) == s."""
    doc: dict = {"delta_t_s": spec.delta_t_s, "tanks": []}
    for t in spec.tanks:
        entry: dict = {"id": t.id, "kind": t.kind, "v_max_m3": t.v_max_m3,
                       "beta_per_s": t.beta_per_s}
        if t.q_u_max_m3s is not None:
            entry["q_u_max_m3s"] = t.q_u_max_m3s
        entry["overflow_weight"] = t.overflow_weight
        entry["receiving_water"] = t.receiving_water
        doc["tanks"].append(entry)
    doc["delays"] = [{"id": d.id, "steps": d.steps} for d in spec.delays]
    doc["inflows"] = {elem: list(sources) for elem, sources in spec.inflows}
    doc["runoff_inputs"] = list(spec.runoff_inputs)
    doc["wwtp_sink"] = spec.wwtp_sink
    doc["pipe_csos"] = [
        {"id": p.id, "carries": p.carries, "capacity_m3s": p.capacity_m3s,
         "receiving_water": p.receiving_water}
        for p in spec.pipe_csos
    ]
    return json.dumps(doc, indent=2)
