"""Generator interface for all text-producing stages, with candidate
validation and consensus selection.

Backends produce N candidate texts per prompt; every candidate runs through a
stage-specific validator that yields a canonical serialization; the winner is
the largest group of canonically-equal valid candidates (ties break toward the
earliest candidate).  The file-replay mock backend makes the whole pipeline
deterministic and offline.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Protocol

from . import scenario as scn
from .errors import SdvpipeError
from .instance import check_conformance, parse_instance, serialize_instance
from .metamodel import MetaModel, parse_plantuml, to_canonical
from .ocl import parse_ocl, render_constraints

STAGES = (
    "metamodel",
    "instance",
    "ocl",
    "scenario_vehicle",
    "scenario_pre",
    "scenario_post",
    "control_code",
)

_PLACEHOLDER_RE = re.compile(r"\{\{\w+\}\}")


class GenerationFailed(SdvpipeError):
    def __init__(self, message: str, diagnostics: list[str]):
        detail = "; ".join(diagnostics) if diagnostics else "no candidates"
        super().__init__(f"{message}: {detail}")
        self.diagnostics = diagnostics


class InvalidCandidate(SdvpipeError):
    pass


@dataclass(frozen=True)
class Prompt:
    stage: str
    key: str
    text: str

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")


@dataclass(frozen=True)
class Candidate:
    index: int
    text: str
    valid: bool = False
    canonical: str | None = None
    diagnostic: str | None = None


@dataclass(frozen=True)
class ConsensusPolicy:
    n: int = 5
    min_valid: int = 1

    def __post_init__(self) -> None:
        if self.n < 1 or self.min_valid < 1:
            raise ValueError("n and min_valid must be >= 1")


class GeneratorBackend(Protocol):
    def generate(self, prompt: Prompt, n: int) -> list[str]: ...


class MockBackend:
    """File-replay backend: candidate i for (stage, key) is
    ``<stage>.<key>.<i>.txt`` in the fixture directory; a missing file simply
    means fewer candidates."""

    def __init__(self, fixture_dir: str | Path):
        self.fixture_dir = Path(fixture_dir)

    def generate(self, prompt: Prompt, n: int) -> list[str]:
        texts = []
        for i in range(1, n + 1):
            path = self.fixture_dir / f"{prompt.stage}.{prompt.key}.{i}.txt"
            if not path.is_file():
                break
            texts.append(path.read_text(encoding="utf-8"))
        return texts


Validator = Callable[[str], str]


def _validate_control_code(text: str) -> str:
    leftover = _PLACEHOLDER_RE.findall(text)
    if leftover:
        raise InvalidCandidate(f"unresolved placeholder(s): {', '.join(sorted(set(leftover)))}")
    normalized = "\n".join(line.rstrip() for line in text.split("\n")).rstrip("\n")
    return normalized + "\n"


def make_validator(stage: str, metamodel: MetaModel | None = None) -> Validator:
    """Stage-specific acceptance check returning the canonical serialization."""
    if stage == "metamodel":
        return lambda text: to_canonical(parse_plantuml(text))
    if stage == "instance":
        if metamodel is None:
            raise ValueError("instance validation requires a metamodel")

        def validate_instance(text: str) -> str:
            inst = parse_instance(text, metamodel)
            report = check_conformance(inst, metamodel)
            if not report.ok:
                raise InvalidCandidate(report.format().strip())
            return serialize_instance(inst, metamodel)

        return validate_instance
    if stage == "ocl":
        return lambda text: render_constraints(parse_ocl(text))
    if stage == "scenario_vehicle":
        return lambda text: scn.emit_vehicle_section(scn.parse_vehicle_section(text))
    if stage == "scenario_pre":
        return lambda text: scn.emit_pre_section(scn.parse_pre_section(text))
    if stage == "scenario_post":
        return lambda text: scn.emit_post_section(scn.parse_post_section(text))
    if stage == "control_code":
        return _validate_control_code
    raise ValueError(f"unknown stage {stage!r}")


def validate_candidate(candidate: Candidate, validator: Validator) -> Candidate:
    """Run the validator; invalidity is recorded on the candidate, not raised."""
    try:
        canonical = validator(candidate.text)
    except SdvpipeError as exc:
        return replace(candidate, valid=False, canonical=None, diagnostic=str(exc))
    return replace(candidate, valid=True, canonical=canonical, diagnostic=None)


def select(candidates: list[Candidate], policy: ConsensusPolicy = ConsensusPolicy()) -> Candidate:
    """Majority vote over canonical forms of the valid candidates.

    The largest canonical group wins; ties break toward the group whose first
    member has the smallest index, and that member is returned.
    """
    valid = [c for c in candidates if c.valid]
    if len(valid) < policy.min_valid:
        diagnostics = [
            f"candidate {c.index}: {c.diagnostic or 'invalid'}" for c in candidates if not c.valid
        ]
        raise GenerationFailed(
            f"only {len(valid)} valid candidate(s), need {policy.min_valid}", diagnostics
        )
    groups: dict[str, list[Candidate]] = {}
    for cand in valid:
        assert cand.canonical is not None
        groups.setdefault(cand.canonical, []).append(cand)
    winner = max(groups.values(), key=lambda members: (len(members), -members[0].index))
    return winner[0]


def generate_and_select(
    backend: GeneratorBackend,
    prompt: Prompt,
    validator: Validator,
    policy: ConsensusPolicy = ConsensusPolicy(),
) -> tuple[Candidate, list[Candidate]]:
    """Generate, validate and select; returns (winner, all candidates)."""
    texts = backend.generate(prompt, policy.n)
    candidates = [
        validate_candidate(Candidate(i, text), validator) for i, text in enumerate(texts)
    ]
    return select(candidates, policy), candidates
