"""Class-level schema for model checking: PlantUML-subset parsing and a
canonical text form with a round-trip parser.

The supported PlantUML subset: ``class N { a : T }`` blocks, ``A <|-- B``
inheritance, ``A --> "l..u" B : r`` references and ``A *-- "l..u" B : r``
containment references.  Anything else is a syntax error, never skipped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import SdvpipeError

ATTRIBUTE_TYPES = ("String", "Int", "Real", "Bool")

UNBOUNDED = None  # upper bound spelled "*" in all text forms


class MetamodelError(SdvpipeError):
    pass


class MetamodelSyntaxError(MetamodelError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class UnknownType(MetamodelError):
    pass


class UndefinedClassInRelation(MetamodelError):
    pass


class InheritanceCycle(MetamodelError):
    pass


class DuplicateFeature(MetamodelError):
    pass


class InvalidMultiplicity(MetamodelError):
    pass


@dataclass(frozen=True)
class Attribute:
    name: str
    type: str
    required: bool = True


@dataclass(frozen=True)
class Reference:
    name: str
    target: str
    containment: bool = False
    lower: int = 0
    upper: int | None = 1  # None = unbounded

    def multiplicity(self) -> str:
        upper = "*" if self.upper is UNBOUNDED else str(self.upper)
        return f"{self.lower}..{upper}"


@dataclass
class MetaClass:
    name: str
    supertype: str | None = None
    attributes: list[Attribute] = field(default_factory=list)
    references: list[Reference] = field(default_factory=list)


@dataclass
class MetaModel:
    classes: dict[str, MetaClass]

    def supertype_chain(self, name: str) -> list[str]:
        chain = []
        cur: str | None = name
        while cur is not None and cur in self.classes:
            chain.append(cur)
            cur = self.classes[cur].supertype
        return chain

    def conforms(self, class_name: str, context: str) -> bool:
        """True when class_name is context or inherits from it."""
        return context in self.supertype_chain(class_name)

    def all_attributes(self, class_name: str) -> dict[str, Attribute]:
        out: dict[str, Attribute] = {}
        for cls in reversed(self.supertype_chain(class_name)):
            for attr in self.classes[cls].attributes:
                out[attr.name] = attr
        return out

    def all_references(self, class_name: str) -> dict[str, Reference]:
        out: dict[str, Reference] = {}
        for cls in reversed(self.supertype_chain(class_name)):
            for ref in self.classes[cls].references:
                out[ref.name] = ref
        return out

    def validate(self) -> None:
        """Enforce structural invariants; raises a MetamodelError subclass."""
        for cls in self.classes.values():
            if cls.supertype is not None and cls.supertype not in self.classes:
                raise UndefinedClassInRelation(
                    f"class {cls.name} extends unknown class {cls.supertype}"
                )
            for ref in cls.references:
                if ref.target not in self.classes:
                    raise UndefinedClassInRelation(
                        f"reference {cls.name}.{ref.name} targets unknown class {ref.target}"
                    )
                if ref.lower < 0 or (
                    ref.upper is not UNBOUNDED and (ref.upper < 1 or ref.lower > ref.upper)
                ):
                    raise InvalidMultiplicity(
                        f"reference {cls.name}.{ref.name} has bounds {ref.multiplicity()}"
                    )
            for attr in cls.attributes:
                if attr.type not in ATTRIBUTE_TYPES:
                    raise UnknownType(
                        f"attribute {cls.name}.{attr.name} has unknown type {attr.type}"
                    )
        for name in self.classes:
            seen = {name}
            cur = self.classes[name].supertype
            while cur is not None:
                if cur in seen:
                    raise InheritanceCycle(f"inheritance cycle through {name}")
                seen.add(cur)
                cur = self.classes[cur].supertype if cur in self.classes else None
        for name in self.classes:
            feature_names: set[str] = set()
            for cls in self.supertype_chain(name):
                for feat in (
                    *self.classes[cls].attributes,
                    *self.classes[cls].references,
                ):
                    if feat.name in feature_names:
                        raise DuplicateFeature(
                            f"feature {feat.name} declared more than once for {name}"
                        )
                    feature_names.add(feat.name)


_PUML_CLASS_RE = re.compile(r"^class\s+(\w+)\s*(\{)?\s*(.*)$")
_PUML_ATTR_RE = re.compile(r"^(\w+)\s*:\s*(\w+)$")
_PUML_INHERIT_RE = re.compile(r"^(\w+)\s*<\|--\s*(\w+)$")
_PUML_REF_RE = re.compile(
    r'^(\w+)\s*(?:"([^"]*)"\s*)?(-->|\*--)\s*(?:"([^"]*)"\s*)?(\w+)\s*:\s*(\w+)$'
)
_MULT_RE = re.compile(r"^(?:(\d+)\.\.(\d+|\*)|(\*)|(\d+))$")


def _parse_multiplicity(text: str, line_no: int) -> tuple[int, int | None]:
    m = _MULT_RE.match(text.strip())
    if not m:
        raise MetamodelSyntaxError(line_no, f"bad multiplicity {text!r}")
    if m.group(1) is not None:
        lower = int(m.group(1))
        upper = UNBOUNDED if m.group(2) == "*" else int(m.group(2))
    elif m.group(3) is not None:
        lower, upper = 0, UNBOUNDED
    else:
        lower = upper = int(m.group(4))
    return lower, upper


def parse_plantuml(text: str) -> MetaModel:
    """Parse the frozen PlantUML subset into a validated MetaModel."""
    lines = text.split("\n")
    stripped = [(i + 1, ln.strip()) for i, ln in enumerate(lines) if ln.strip()]
    if not stripped or stripped[0][1] != "@startuml":
        raise MetamodelSyntaxError(stripped[0][0] if stripped else 1, "missing @startuml")
    if stripped[-1][1] != "@enduml":
        raise MetamodelSyntaxError(stripped[-1][0], "missing @enduml")

    classes: dict[str, MetaClass] = {}
    relations: list[tuple[int, str]] = []
    current: MetaClass | None = None

    def add_attr(cls: MetaClass, body: str, line_no: int) -> None:
        m = _PUML_ATTR_RE.match(body.strip())
        if not m:
            raise MetamodelSyntaxError(line_no, f"bad attribute {body.strip()!r}")
        if m.group(2) not in ATTRIBUTE_TYPES:
            raise UnknownType(
                f"attribute {cls.name}.{m.group(1)} has unknown type {m.group(2)}"
            )
        cls.attributes.append(Attribute(m.group(1), m.group(2)))

    for line_no, line in stripped[1:-1]:
        if current is not None:
            body = line
            closes = body.endswith("}")
            if closes:
                body = body[:-1].strip()
            if body:
                add_attr(current, body, line_no)
            if closes:
                current = None
            continue
        class_m = _PUML_CLASS_RE.match(line)
        if class_m:
            name, brace, rest = class_m.groups()
            if name in classes:
                raise MetamodelSyntaxError(line_no, f"duplicate class {name}")
            cls = MetaClass(name)
            classes[name] = cls
            if brace:
                closes = rest.endswith("}")
                if closes:
                    rest = rest[:-1].strip()
                if rest:
                    add_attr(cls, rest, line_no)
                if not closes:
                    current = cls
            elif rest:
                raise MetamodelSyntaxError(line_no, f"unsupported construct {line!r}")
            continue
        if _PUML_INHERIT_RE.match(line) or _PUML_REF_RE.match(line):
            relations.append((line_no, line))
            continue
        raise MetamodelSyntaxError(line_no, f"unsupported construct {line!r}")

    if current is not None:
        raise MetamodelSyntaxError(stripped[-1][0], "unclosed class block")

    for line_no, line in relations:
        inherit_m = _PUML_INHERIT_RE.match(line)
        if inherit_m:
            parent, child = inherit_m.groups()
            for name in (parent, child):
                if name not in classes:
                    raise UndefinedClassInRelation(
                        f"relation on line {line_no} names unknown class {name}"
                    )
            if classes[child].supertype is not None:
                raise MetamodelSyntaxError(line_no, f"class {child} already has a supertype")
            classes[child].supertype = parent
            continue
        ref_m = _PUML_REF_RE.match(line)
        source, _src_mult, arrow, mult, target, ref_name = ref_m.groups()
        for name in (source, target):
            if name not in classes:
                raise UndefinedClassInRelation(
                    f"relation on line {line_no} names unknown class {name}"
                )
        lower, upper = _parse_multiplicity(mult, line_no) if mult else (0, 1)
        classes[source].references.append(
            Reference(ref_name, target, containment=arrow == "*--", lower=lower, upper=upper)
        )

    mm = MetaModel(classes)
    mm.validate()
    return mm


def to_canonical(mm: MetaModel) -> str:
    """Deterministic text form: classes and features sorted by name."""
    blocks = []
    for name in sorted(mm.classes):
        cls = mm.classes[name]
        head = f"class {name}"
        if cls.supertype is not None:
            head += f" extends {cls.supertype}"
        lines = [head + " {"]
        for attr in sorted(cls.attributes, key=lambda a: a.name):
            suffix = "" if attr.required else " optional"
            lines.append(f"  attr {attr.name} : {attr.type}{suffix}")
        for ref in sorted(cls.references, key=lambda r: r.name):
            suffix = " containment" if ref.containment else ""
            lines.append(f"  ref {ref.name} : {ref.target} [{ref.multiplicity()}]{suffix}")
        lines.append("}")
        blocks.append("\n".join(lines))
    return "\n".join(blocks) + ("\n" if blocks else "")


_CANON_CLASS_RE = re.compile(r"^class (\w+)(?: extends (\w+))? \{$")
_CANON_ATTR_RE = re.compile(r"^attr (\w+) : (\w+)( optional)?$")
_CANON_REF_RE = re.compile(r"^ref (\w+) : (\w+) \[(\d+)\.\.(\d+|\*)\]( containment)?$")


def parse_metamodel(text: str) -> MetaModel:
    """Parse the canonical form back into a validated MetaModel."""
    classes: dict[str, MetaClass] = {}
    current: MetaClass | None = None
    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line:
            continue
        if current is None:
            m = _CANON_CLASS_RE.match(line)
            if not m:
                raise MetamodelSyntaxError(line_no, f"expected class header, got {line!r}")
            name, supertype = m.groups()
            if name in classes:
                raise MetamodelSyntaxError(line_no, f"duplicate class {name}")
            current = MetaClass(name, supertype)
            classes[name] = current
            continue
        if line == "}":
            current = None
            continue
        attr_m = _CANON_ATTR_RE.match(line)
        if attr_m:
            if attr_m.group(2) not in ATTRIBUTE_TYPES:
                raise UnknownType(
                    f"attribute {current.name}.{attr_m.group(1)} has unknown type {attr_m.group(2)}"
                )
            current.attributes.append(
                Attribute(attr_m.group(1), attr_m.group(2), required=not attr_m.group(3))
            )
            continue
        ref_m = _CANON_REF_RE.match(line)
        if ref_m:
            upper = UNBOUNDED if ref_m.group(4) == "*" else int(ref_m.group(4))
            current.references.append(
                Reference(
                    ref_m.group(1),
                    ref_m.group(2),
                    containment=bool(ref_m.group(5)),
                    lower=int(ref_m.group(3)),
                    upper=upper,
                )
            )
            continue
        raise MetamodelSyntaxError(line_no, f"unsupported line {line!r}")
    if current is not None:
        raise MetamodelSyntaxError(len(text.split("\n")), "unclosed class block")
    mm = MetaModel(classes)
    mm.validate()
    return mm


def structurally_equal(a: MetaModel, b: MetaModel) -> bool:
    """Equality up to declaration order (the canonical form is the witness)."""
    return to_canonical(a) == to_canonical(b)


def emit_plantuml(mm: MetaModel) -> str:
    """Render a metamodel in the PlantUML subset.

    Optional attributes have no PlantUML spelling in the subset and are
    rejected rather than silently dropped.
    """
    lines = ["@startuml"]
    for name in sorted(mm.classes):
        cls = mm.classes[name]
        if not cls.attributes:
            lines.append(f"class {name} {{}}")
            continue
        lines.append(f"class {name} {{")
        for attr in sorted(cls.attributes, key=lambda a: a.name):
            if not attr.required:
                raise ValueError(
                    f"optional attribute {name}.{attr.name} not representable in PlantUML subset"
                )
            lines.append(f"  {attr.name} : {attr.type}")
        lines.append("}")
    for name in sorted(mm.classes):
        cls = mm.classes[name]
        if cls.supertype is not None:
            lines.append(f"{cls.supertype} <|-- {name}")
        for ref in sorted(cls.references, key=lambda r: r.name):
            arrow = "*--" if ref.containment else "-->"
            lines.append(f'{name} {arrow} "{ref.multiplicity()}" {ref.target} : {ref.name}')
    lines.append("@enduml")
    return "\n".join(lines) + "\n"
