"""Deterministic completeness, structural, and physics-sanity deck checks.

Rules:

* R1: every registry block present, plus registry-required params.
* R2: reference params (eos, input/inputs, output/outputs) resolve to an
  existing sub-block.
* R3: each open flow path has a kinematic inlet boundary and a pressure
  outlet boundary; closed circulating loops (all component ends joined, no
  boundary components) are exempt.
* R4: deck component geometry agrees with the schematic topology, when given.
* R5: unit plausibility screens for temperature and pressure params.
* R6: function references (``*_fn``, ``function``) exist in the Functions
  block.

Problems are findings, never exceptions; ``passed`` means no error-severity
findings. An optional energy-balance screen compares a declared outlet
temperature against a bulk single-stream estimate.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass

from .deck_model import Block, BlockRegistry, InputDeck, ParamValue
from .topology import EPS_GEOM, TopologyGraph

__all__ = [
    "Finding",
    "ValidationReport",
    "FINDING_CODES",
    "NonPhysicalInput",
    "EnergyQuantities",
    "validate",
    "energy_balance_estimate",
    "extract_energy_quantities",
    "semantic_instructions",
]

SEVERITIES = ("error", "warning", "info")

# The documented closed set of finding codes.
FINDING_CODES = (
    "MISSING_BLOCK",
    "MISSING_PARAM",
    "EMPTY_BLOCK",
    "DANGLING_REF",
    "NO_INLET_BC",
    "NO_PRESSURE_BC",
    "GEOM_DISCONTINUITY",
    "UNIT_SUSPECT",
    "UNRESOLVED_FUNCTION",
    "ENERGY_IMBALANCE",
)


class NonPhysicalInput(ValueError):
    """An energy-balance quantity that must be positive is not."""


@dataclass(frozen=True)
class Finding:
    severity: str
    code: str
    location: str
    message: str

    def __post_init__(self):
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.severity!r}")
        if self.code not in FINDING_CODES:
            raise ValueError(f"unknown finding code {self.code!r}")

    def render(self) -> str:
        return f"[{self.severity}] {self.code} at {self.location}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...]
    checked_rules: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return not any(f.severity == "error" for f in self.findings)

    def errors(self) -> tuple[Finding, ...]:
        return tuple(f for f in self.findings if f.severity == "error")

    def to_json(self) -> str:
        doc = {
            "passed": self.passed,
            "checked_rules": list(self.checked_rules),
            "findings": [
                {"severity": f.severity, "code": f.code,
                 "location": f.location, "message": f.message}
                for f in self.findings
            ],
        }
        return json.dumps(doc, indent=2)

    def to_text(self) -> str:
        lines = [f"validation: {'PASS' if self.passed else 'FAIL'} "
                 f"({len(self.errors())} errors, {len(self.findings)} findings)"]
        lines += [f.render() for f in self.findings]
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Energy balance estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyQuantities:
    """Bulk single-stream quantities: power (W), density (kg/m^3), velocity
    (m/s), flow area (m^2), specific heat (J/(kg K)), inlet temperature (K)."""

    power: float
    density: float
    velocity: float
    area: float
    specific_heat: float
    inlet_temperature: float


def energy_balance_estimate(quantities: EnergyQuantities) -> float:
    """Expected bulk outlet temperature: T_in + Q / (rho * v * A * cp).

    Zero power returns the inlet temperature exactly. Raises NonPhysicalInput
    when density, velocity, area, or specific heat are not positive.
    """
    q = quantities
    for label, value in (("density", q.density), ("velocity", q.velocity),
                         ("area", q.area), ("specific_heat", q.specific_heat)):
        if not (value > 0) or not math.isfinite(value):
            raise NonPhysicalInput(f"{label} must be positive, got {value!r}")
    if q.power == 0.0:
        return q.inlet_temperature
    mass_flow = q.density * q.velocity * q.area
    return q.inlet_temperature + q.power / (mass_flow * q.specific_heat)


def _param_number(block: Block, key: str) -> float | None:
    p = block.param(key)
    if p and p.value.kind in ("real", "integer"):
        return float(p.value.payload)
    return None


def extract_energy_quantities(deck: InputDeck, registry: BlockRegistry):
    """Pull the documented energy-screen convention out of a deck.

    Needs GlobalParams.expected_T_out, a component carrying ``power``, a
    kinematic inlet boundary with ``v_bc`` and ``T_bc`` whose ``input`` names
    a component with flow area ``A``, and an EOS child with explicit ``rho``
    and ``cp``. Returns (EnergyQuantities, declared outlet T) or None when the
    convention is absent.
    """
    gp = deck.block("GlobalParams")
    declared = _param_number(gp, "expected_T_out") if gp else None
    comps = deck.block("Components")
    eos = deck.block("EOS")
    if declared is None or comps is None or eos is None:
        return None

    power = 0.0
    saw_power = False
    for child in comps.children:
        value = _param_number(child, "power")
        if value is not None:
            power += value
            saw_power = True

    inlet = next((c for c in comps.children
                  if _type_of(c) in registry.inlet_bc_types), None)
    props = next((c for c in eos.children
                  if _param_number(c, "rho") is not None
                  and _param_number(c, "cp") is not None), None)
    if not saw_power or inlet is None or props is None:
        return None

    velocity = _param_number(inlet, "v_bc")
    t_in = _param_number(inlet, "T_bc")
    area = None
    ref = inlet.param("input")
    if ref and ref.value.kind in ("string", "identifier-reference", "string-vector"):
        tokens = (ref.value.payload,) if isinstance(ref.value.payload, str) \
            else ref.value.payload
        for token in tokens:
            target = comps.child(_strip_port(token))
            if target is not None:
                area = _param_number(target, "A")
                if area is not None:
                    break
    if velocity is None or t_in is None or area is None:
        return None

    quantities = EnergyQuantities(
        power=power, density=_param_number(props, "rho"),
        velocity=velocity, area=area,
        specific_heat=_param_number(props, "cp"), inlet_temperature=t_in)
    return quantities, declared


# ---------------------------------------------------------------------------
# validate()
# ---------------------------------------------------------------------------

_PORT_RE = re.compile(r"^([A-Za-z0-9_-]+)(?:\((in|out)\))?$")


def _strip_port(token: str) -> str:
    m = _PORT_RE.match(token)
    return m.group(1) if m else token


def _type_of(block: Block) -> str | None:
    p = block.param("type")
    if p and p.value.kind in ("string", "identifier-reference"):
        return p.value.payload
    return None


class _Collector:
    """Accumulates findings with deck-order sort keys."""

    def __init__(self, deck: InputDeck):
        self.ordinals: dict[str, int] = {}
        counter = 0

        def walk(block: Block, prefix: str):
            nonlocal counter
            path = f"{prefix}{block.name}"
            self.ordinals[path] = counter
            counter += 1
            for p in block.params:
                self.ordinals[f"{path}/{p.key}"] = counter
                counter += 1
            for c in block.children:
                walk(c, path + "/")

        for b in deck.blocks:
            walk(b, "")
        self._end = counter
        self.items: list[tuple[int, int, Finding]] = []

    def add(self, severity, code, location, message, *, order_after_end: int = 0):
        ordinal = self.ordinals.get(location)
        if ordinal is None:
            ordinal = self._end + order_after_end
        self.items.append((ordinal, len(self.items), Finding(severity, code, location, message)))

    def sorted_findings(self) -> tuple[Finding, ...]:
        return tuple(f for _, _, f in sorted(self.items, key=lambda t: (t[0], t[1])))


def validate(deck: InputDeck, registry: BlockRegistry,
             topology: TopologyGraph | None = None, *,
             geom_tolerance: float = EPS_GEOM,
             energy_threshold: float = 0.2) -> ValidationReport:
    """Run every deterministic rule against a parsed deck.

    ``topology`` enables the geometry-consistency rule (R4). The energy
    screen runs only when the deck carries the documented quantity
    convention. Pure: the same inputs always produce the same report.
    """
    out = _Collector(deck)
    checked = ["R1", "R2", "R3"]

    _rule_required_blocks(deck, registry, out)
    _rule_references(deck, registry, out)
    _rule_boundary_conditions(deck, registry, out)
    if topology is not None:
        checked.append("R4")
        _rule_topology_consistency(deck, topology, geom_tolerance, out)
    checked += ["R5", "R6"]
    _rule_unit_screens(deck, registry, out)
    _rule_function_references(deck, registry, out)

    extract = extract_energy_quantities(deck, registry)
    if extract is not None:
        checked.append("ENERGY")
        _rule_energy_balance(extract, energy_threshold, out)

    return ValidationReport(findings=out.sorted_findings(),
                            checked_rules=tuple(checked))


def _rule_required_blocks(deck, registry, out):
    for i, name in enumerate(registry.required_blocks):
        block = deck.block(name)
        if block is None:
            out.add("error", "MISSING_BLOCK", name,
                    f"required block [{name}] is missing", order_after_end=i)
            continue
        rule = registry.rule_for(name)
        for key in rule.required_params:
            if block.param(key) is None:
                out.add("error", "MISSING_PARAM", f"{name}/{key}",
                        f"block [{name}] requires parameter {key!r}")
        if rule.min_children and len(block.children) < rule.min_children:
            out.add("warning", "EMPTY_BLOCK", name,
                    f"block [{name}] should define at least "
                    f"{rule.min_children} sub-block(s)")


def _iter_params(deck):
    def walk(block, prefix):
        path = f"{prefix}{block.name}"
        for p in block.params:
            yield f"{path}/{p.key}", block, p
        for c in block.children:
            yield from walk(c, path + "/")

    for b in deck.blocks:
        yield from walk(b, "")


def _ref_tokens(value: ParamValue):
    if value.kind in ("string", "identifier-reference"):
        return (value.payload,)
    if value.kind == "string-vector":
        return value.payload
    return ()


def _rule_references(deck, registry, out):
    comps = deck.block("Components")
    comp_names = {c.name for c in comps.children} if comps else set()
    eos = deck.block("EOS")
    eos_names = {c.name for c in eos.children} if eos else set()

    for path, _block, p in _iter_params(deck):
        if p.key not in registry.reference_keys:
            continue
        targets = eos_names if p.key == "eos" else comp_names
        kind = "EOS" if p.key == "eos" else "Components"
        for token in _ref_tokens(p.value):
            name = _strip_port(token)
            if name not in targets:
                out.add("error", "DANGLING_REF", path,
                        f"{token!r} does not name a sub-block of [{kind}]")


def _rule_boundary_conditions(deck, registry, out):
    comps = deck.block("Components")
    if comps is None or not comps.children:
        return

    classify = {}
    for child in comps.children:
        t = _type_of(child)
        if t in registry.inlet_bc_types:
            classify[child.name] = "inlet"
        elif t in registry.pressure_bc_types:
            classify[child.name] = "pressure"
        elif t in registry.junction_types:
            classify[child.name] = "junction"
        else:
            classify[child.name] = "flow"

    parent = {name: name for name in classify}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    covered: dict[str, set] = {n: set() for n in classify}
    for child in comps.children:
        for p in child.params:
            if p.key not in registry.reference_keys or p.key == "eos":
                continue
            for token in _ref_tokens(p.value):
                m = _PORT_RE.match(token)
                if not m or m.group(1) not in classify:
                    continue
                union(child.name, m.group(1))
                if m.group(2):
                    covered[m.group(1)].add(m.group(2))

    groups: dict[str, list[str]] = {}
    for name in classify:
        groups.setdefault(find(name), []).append(name)

    for members in groups.values():
        flow = [n for n in members if classify[n] == "flow"]
        if not flow:
            continue
        has_inlet = any(classify[n] == "inlet" for n in members)
        has_pressure = any(classify[n] == "pressure" for n in members)
        fully_joined = all(covered[n] >= {"in", "out"} for n in flow)
        if fully_joined and not has_inlet and not has_pressure:
            # closed circulating loop: pressure level comes from initial
            # conditions, no boundary components to require
            continue
        label = ", ".join(sorted(flow))
        if not has_inlet:
            out.add("error", "NO_INLET_BC", "Components",
                    f"flow path ({label}) has no velocity or flow inlet boundary")
        if not has_pressure:
            out.add("error", "NO_PRESSURE_BC", "Components",
                    f"flow path ({label}) has no pressure outlet boundary")


def _vec3(value: ParamValue):
    if value.kind == "real-vector" and len(value.payload) == 3:
        return value.payload
    return None


def _rule_topology_consistency(deck, topology, tol, out):
    comps = deck.block("Components")
    nodes = {n.id: n for n in topology.nodes}
    for seg in topology.segments:
        path = f"Components/{seg.name}"
        child = comps.child(seg.name) if comps else None
        if child is None:
            out.add("error", "GEOM_DISCONTINUITY", path,
                    f"schematic segment {seg.name!r} has no deck component")
            continue
        start = nodes[seg.start_node]
        expect = {
            "position": (start.x, start.y, 0.0),
            "orientation": (seg.orientation[0], seg.orientation[1], 0.0),
        }
        for key, want in expect.items():
            p = child.param(key)
            got = _vec3(p.value) if p else None
            if got is None:
                out.add("error", "GEOM_DISCONTINUITY", f"{path}/{key}",
                        f"component {seg.name!r} lacks a 3-vector {key!r}")
            elif any(abs(g - w) > tol for g, w in zip(got, want)):
                out.add("error", "GEOM_DISCONTINUITY", f"{path}/{key}",
                        f"{key} {tuple(got)} disagrees with schematic {want}")
        p = child.param("length")
        length = float(p.value.payload) if p and p.value.kind in ("real", "integer") else None
        if length is None:
            out.add("error", "GEOM_DISCONTINUITY", f"{path}/length",
                    f"component {seg.name!r} lacks a numeric length")
        elif abs(length - seg.length) > tol:
            out.add("error", "GEOM_DISCONTINUITY", f"{path}/length",
                    f"length {length} disagrees with schematic {seg.length}")


def _screen_category(key: str, unit_hint, registry):
    tokens = key.split("_")
    if (unit_hint in registry.temperature_units
            or any(t == "T" or t.lower() in ("temp", "temperature") for t in tokens)):
        return "temperature", registry.temperature_range, "K"
    if (unit_hint in registry.pressure_units
            or any(t in ("P", "p") or t.lower() in ("press", "pressure") for t in tokens)):
        return "pressure", registry.pressure_range, "Pa"
    return None


def _rule_unit_screens(deck, registry, out):
    for path, _block, p in _iter_params(deck):
        if p.value.kind not in ("real", "integer"):
            continue
        cat = _screen_category(p.key, p.unit_hint, registry)
        if cat is None:
            continue
        name, (lo, hi), unit = cat
        value = float(p.value.payload)
        if not (lo <= value <= hi):
            out.add("warning", "UNIT_SUSPECT", path,
                    f"{name} {value} {unit} outside plausible range [{lo}, {hi}]")


def _rule_function_references(deck, registry, out):
    funcs = deck.block("Functions")
    func_names = {c.name for c in funcs.children} if funcs else set()
    for path, _block, p in _iter_params(deck):
        is_fn_key = p.key.endswith(registry.function_key_suffix) \
            or p.key in registry.function_keys
        if not is_fn_key:
            continue
        for token in _ref_tokens(p.value):
            if token not in func_names:
                out.add("error", "UNRESOLVED_FUNCTION", path,
                        f"{token!r} is not defined in [Functions]")


def _rule_energy_balance(extract, threshold, out):
    quantities, declared = extract
    try:
        estimate = energy_balance_estimate(quantities)
    except NonPhysicalInput as exc:
        out.add("warning", "ENERGY_IMBALANCE", "GlobalParams/expected_T_out",
                f"energy screen skipped: {exc}")
        return
    rise = max(abs(estimate - quantities.inlet_temperature), 1.0)
    deviation = abs(declared - estimate) / rise
    if deviation > threshold:
        out.add("warning", "ENERGY_IMBALANCE", "GlobalParams/expected_T_out",
                f"declared outlet {declared} K deviates from bulk estimate "
                f"{estimate:.6g} K by {deviation:.0%} of the temperature rise "
                f"(threshold {threshold:.0%})")


# ---------------------------------------------------------------------------
# Semantic instruction text
# ---------------------------------------------------------------------------

_GUIDANCE = (
    "Pressure must decrease monotonically along each flow direction; any "
    "local rise away from a pump indicates a connectivity or form-loss error.",
    "With a negative temperature feedback coefficient, reactivity feedback "
    "must decrease smoothly and monotonically while temperatures rise, then "
    "level off once the driving transient ends.",
    "In a circulating loop with a heated core, the hottest temperatures "
    "belong near the core outlet; the primary side must cool across the heat "
    "exchanger while its secondary side warms from inlet to outlet.",
    "An adiabatic, unheated component must show equal bulk inlet and outlet "
    "temperatures; wall temperatures should track the fluid.",
)


def semantic_instructions(report: ValidationReport) -> str:
    """Render the fixed semantic-check guidance plus the report's findings.

    Deterministic template: identical reports give byte-identical text.
    """
    lines = ["Semantic review instructions", "============================", ""]
    if report.findings:
        lines.append(f"Deterministic findings ({len(report.findings)}):")
        lines += [f"- {f.render()}" for f in report.findings]
    else:
        lines.append("Deterministic findings: none.")
    lines += ["", "Beyond the deterministic rules, verify:"]
    lines += [f"- {g}" for g in _GUIDANCE]
    return "\n".join(lines) + "\n"
