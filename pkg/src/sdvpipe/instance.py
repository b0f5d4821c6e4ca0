"""Model instances: XMI-subset parsing, canonical serialization and
conformance checking against a metamodel.

Instance documents look like::

    <objects>
     <obj class="Vehicle" id="v1" name="ego" maxSpeed="60">
      <obj class="Sensor" id="s1" type="radar" range="150.0" owner="sensors"/>
     </obj>
    </objects>

Nesting plus the ``owner`` attribute expresses containment; cross references
are ``ref-<name>="id1 id2"`` attributes.  Parsing is permissive about model
errors (unknown classes, bad values): those become conformance findings, not
parse failures.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from xml.sax.saxutils import quoteattr

from .errors import SdvpipeError
from .metamodel import MetaModel

UNKNOWN_CLASS = "UnknownClass"
UNKNOWN_FEATURE = "UnknownFeature"
TYPE_MISMATCH = "TypeMismatch"
MULTIPLICITY_VIOLATION = "MultiplicityViolation"
DANGLING_REFERENCE = "DanglingReference"
CONTAINMENT_CYCLE = "ContainmentCycle"

_INT_RE = re.compile(r"^[+-]?\d+$")
_REAL_RE = re.compile(r"^[+-]?\d+(?:\.\d+)?$")


class InstanceError(SdvpipeError):
    pass


class InstanceSyntaxError(InstanceError):
    pass


class DuplicateObjectId(InstanceError):
    pass


@dataclass
class ModelObject:
    id: str
    class_name: str
    attrs: dict[str, object] = field(default_factory=dict)
    links: dict[str, list[str]] = field(default_factory=dict)


@dataclass
class ModelInstance:
    objects: dict[str, ModelObject]


@dataclass(frozen=True)
class Violation:
    object_id: str
    kind: str
    feature: str
    message: str


@dataclass
class ConformanceReport:
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def format(self) -> str:
        if self.ok:
            return "conformant: no violations\n"
        lines = [
            f"{v.object_id}: {v.kind} {v.feature}: {v.message}".rstrip()
            for v in self.violations
        ]
        return "\n".join(lines) + "\n"


def coerce_value(raw: str, type_name: str) -> object:
    """Coerce an attribute string to its declared type; failures keep the raw
    string so conformance can report them."""
    if type_name == "Int" and _INT_RE.match(raw):
        return int(raw)
    if type_name == "Real" and _REAL_RE.match(raw):
        return float(raw)
    if type_name == "Bool" and raw in ("true", "false"):
        return raw == "true"
    if type_name == "String":
        return raw
    return raw


def render_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_instance(text: str, mm: MetaModel) -> ModelInstance:
    """Parse the XMI subset; only structural problems raise."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise InstanceSyntaxError(f"malformed document: {exc}") from exc
    if root.tag != "objects":
        raise InstanceSyntaxError(f"root element must be <objects>, got <{root.tag}>")

    objects: dict[str, ModelObject] = {}

    def handle(elem: ET.Element, parent: ModelObject | None) -> None:
        if elem.tag != "obj":
            raise InstanceSyntaxError(f"unexpected element <{elem.tag}>")
        attrib = dict(elem.attrib)
        class_name = attrib.pop("class", None)
        obj_id = attrib.pop("id", None)
        if class_name is None or obj_id is None:
            raise InstanceSyntaxError("<obj> requires class and id attributes")
        if obj_id in objects:
            raise DuplicateObjectId(f"object id {obj_id!r} declared twice")
        owner = attrib.pop("owner", None)
        if parent is None and owner is not None:
            raise InstanceSyntaxError(f"top-level object {obj_id} must not name an owner")
        if parent is not None and owner is None:
            raise InstanceSyntaxError(f"nested object {obj_id} must name an owner reference")

        obj = ModelObject(obj_id, class_name)
        declared = mm.all_attributes(class_name) if class_name in mm.classes else {}
        for name, raw in attrib.items():
            if name.startswith("ref-"):
                obj.links[name[4:]] = raw.split()
            elif name in declared:
                obj.attrs[name] = coerce_value(raw, declared[name].type)
            else:
                obj.attrs[name] = raw
        objects[obj_id] = obj
        if parent is not None:
            parent.links.setdefault(owner, []).append(obj_id)
        for child in elem:
            handle(child, obj)

    for elem in root:
        handle(elem, None)
    return ModelInstance(objects)


def serialize_instance(inst: ModelInstance, mm: MetaModel) -> str:
    """Canonical XMI-subset text; parse_instance(serialize_instance(i)) == i."""
    contained: dict[str, tuple[str, str]] = {}  # child id -> (parent id, ref name)
    for obj in inst.objects.values():
        refs = mm.all_references(obj.class_name) if obj.class_name in mm.classes else {}
        for ref_name, targets in obj.links.items():
            ref = refs.get(ref_name)
            if ref is None or not ref.containment:
                continue
            for target in targets:
                if target in inst.objects and target not in contained:
                    contained[target] = (obj.id, ref_name)

    emitted: set[str] = set()
    lines = ["<objects>"]

    def emit(obj: ModelObject, indent: int, owner: str | None) -> None:
        emitted.add(obj.id)
        refs = mm.all_references(obj.class_name) if obj.class_name in mm.classes else {}
        parts = [f'class="{obj.class_name}"', f'id="{obj.id}"']
        for name in sorted(obj.attrs):
            parts.append(f"{name}={quoteattr(render_value(obj.attrs[name]))}")
        if owner is not None:
            parts.append(f'owner="{owner}"')
        nested: list[tuple[str, str]] = []
        for ref_name in sorted(obj.links):
            targets = obj.links[ref_name]
            ref = refs.get(ref_name)
            inline = []
            for target in targets:
                if (
                    ref is not None
                    and ref.containment
                    and contained.get(target) == (obj.id, ref_name)
                    and target not in emitted
                ):
                    nested.append((ref_name, target))
                else:
                    inline.append(target)
            if inline:
                parts.append(f"ref-{ref_name}={quoteattr(' '.join(inline))}")
        pad = " " * indent
        if nested:
            lines.append(f"{pad}<obj {' '.join(parts)}>")
            for ref_name, target in nested:
                emit(inst.objects[target], indent + 1, ref_name)
            lines.append(f"{pad}</obj>")
        else:
            lines.append(f"{pad}<obj {' '.join(parts)}/>")

    for obj in inst.objects.values():
        if obj.id not in contained and obj.id not in emitted:
            emit(obj, 1, None)
    # Containment cycles leave orphans unreachable from any root; emit them flat.
    for obj in inst.objects.values():
        if obj.id not in emitted:
            emit(obj, 1, None)
    lines.append("</objects>")
    return "\n".join(lines) + "\n"


def _expected_python_type(type_name: str) -> type:
    return {"Int": int, "Real": float, "Bool": bool, "String": str}[type_name]


def check_conformance(inst: ModelInstance, mm: MetaModel) -> ConformanceReport:
    """Structural validity of an instance against its metamodel.

    Findings are data; this never raises.  Report order: object id, then
    feature name.
    """
    violations: list[Violation] = []

    for obj in inst.objects.values():
        if obj.class_name not in mm.classes:
            violations.append(
                Violation(obj.id, UNKNOWN_CLASS, "", f"class {obj.class_name} not in metamodel")
            )
            continue
        attrs = mm.all_attributes(obj.class_name)
        refs = mm.all_references(obj.class_name)

        for name, value in obj.attrs.items():
            attr = attrs.get(name)
            if attr is None:
                violations.append(
                    Violation(obj.id, UNKNOWN_FEATURE, name, f"no attribute {name} on {obj.class_name}")
                )
                continue
            expected = _expected_python_type(attr.type)
            ok = isinstance(value, bool) if expected is bool else (
                isinstance(value, expected) and not isinstance(value, bool)
            )
            if not ok:
                violations.append(
                    Violation(
                        obj.id,
                        TYPE_MISMATCH,
                        name,
                        f"expected {attr.type}, got {value!r}",
                    )
                )
        for name, attr in attrs.items():
            if attr.required and name not in obj.attrs:
                violations.append(
                    Violation(obj.id, MULTIPLICITY_VIOLATION, name, f"required attribute {name} missing")
                )

        for name, targets in obj.links.items():
            ref = refs.get(name)
            if ref is None:
                violations.append(
                    Violation(obj.id, UNKNOWN_FEATURE, name, f"no reference {name} on {obj.class_name}")
                )
                continue
            for target in targets:
                target_obj = inst.objects.get(target)
                if target_obj is None:
                    violations.append(
                        Violation(obj.id, DANGLING_REFERENCE, name, f"target {target} does not exist")
                    )
                elif target_obj.class_name in mm.classes and not mm.conforms(
                    target_obj.class_name, ref.target
                ):
                    violations.append(
                        Violation(
                            obj.id,
                            TYPE_MISMATCH,
                            name,
                            f"target {target} is {target_obj.class_name}, expected {ref.target}",
                        )
                    )
        for name, ref in refs.items():
            count = len(obj.links.get(name, ()))
            if count < ref.lower or (ref.upper is not None and count > ref.upper):
                violations.append(
                    Violation(
                        obj.id,
                        MULTIPLICITY_VIOLATION,
                        name,
                        f"{count} link(s), expected {ref.multiplicity()}",
                    )
                )

    violations.extend(_containment_findings(inst, mm))
    violations.sort(key=lambda v: (v.object_id, v.feature, v.kind, v.message))
    return ConformanceReport(violations)


def _containment_findings(inst: ModelInstance, mm: MetaModel) -> list[Violation]:
    parents: dict[str, list[str]] = {}
    for obj in inst.objects.values():
        refs = mm.all_references(obj.class_name) if obj.class_name in mm.classes else {}
        for ref_name, targets in obj.links.items():
            ref = refs.get(ref_name)
            if ref is None or not ref.containment:
                continue
            for target in targets:
                if target in inst.objects:
                    parents.setdefault(target, []).append(obj.id)

    out = []
    for child, owners in parents.items():
        if len(owners) > 1:
            out.append(
                Violation(
                    child,
                    CONTAINMENT_CYCLE,
                    "",
                    f"contained by multiple parents: {', '.join(sorted(owners))}",
                )
            )

    state: dict[str, int] = {}  # 0 in progress, 1 done

    def walk(oid: str, trail: list[str]) -> None:
        state[oid] = 0
        trail.append(oid)
        parent = parents.get(oid, [None])[0]
        if parent is not None:
            if state.get(parent) == 0:
                cycle = trail[trail.index(parent):] if parent in trail else trail
                for member in cycle:
                    out.append(
                        Violation(member, CONTAINMENT_CYCLE, "", "containment cycle detected")
                    )
            elif parent not in state:
                walk(parent, trail)
        state[oid] = 1
        trail.pop()

    for oid in inst.objects:
        if oid not in state:
            walk(oid, [])
    return out
