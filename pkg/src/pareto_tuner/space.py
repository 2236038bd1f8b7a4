"""Mixed search space: integer/real ranges and prompt-token subsets.

The genome is an ordered list of genes, one per parameter. Scalar genes are
plain ints/floats; token-subset genes are boolean inclusion masks over a
fixed vocabulary. All types are immutable; the variation operators are pure
functions of an explicit ``random.Random`` stream, so runs replay exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from random import Random
from typing import Union

SPACE_SCHEMA = "pareto-tuner/space/1"

DEFAULT_POSITIVE_TOKENS = ("photograph", "color", "ultra real")
DEFAULT_NEGATIVE_TOKENS = ("sketch", "cropped", "low quality")

GeneValue = Union[int, float, tuple[bool, ...]]


class SpaceError(ValueError):
    """Invalid parameter definition, space document, or candidate."""


@dataclass(frozen=True)
class IntegerRange:
    """Inclusive integer interval."""

    low: int
    high: int

    def __post_init__(self) -> None:
        if not (isinstance(self.low, int) and isinstance(self.high, int)):
            raise SpaceError("integer_range bounds must be ints")
        if self.low > self.high:
            raise SpaceError(f"integer_range low {self.low} > high {self.high}")

    def contains(self, value: GeneValue) -> bool:
        return isinstance(value, int) and not isinstance(value, bool) and self.low <= value <= self.high

    def sample(self, rng: Random) -> int:
        return rng.randint(self.low, self.high)


@dataclass(frozen=True)
class RealRange:
    """Inclusive real interval."""

    low: float
    high: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "low", float(self.low))
        object.__setattr__(self, "high", float(self.high))
        if not (self.low <= self.high):
            raise SpaceError(f"real_range low {self.low} > high {self.high}")

    def contains(self, value: GeneValue) -> bool:
        return isinstance(value, float) and self.low <= value <= self.high

    def sample(self, rng: Random) -> float:
        return rng.uniform(self.low, self.high)


@dataclass(frozen=True)
class TokenSubset:
    """Subset over an ordered token vocabulary, encoded as an inclusion mask."""

    vocabulary: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        if not self.vocabulary:
            raise SpaceError("token_subset vocabulary is empty")
        if any(not tok for tok in self.vocabulary):
            raise SpaceError("token_subset vocabulary has empty entries")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise SpaceError("token_subset vocabulary has duplicate entries")

    def contains(self, value: GeneValue) -> bool:
        return (
            isinstance(value, tuple)
            and len(value) == len(self.vocabulary)
            and all(isinstance(b, bool) for b in value)
        )

    def sample(self, rng: Random) -> tuple[bool, ...]:
        return tuple(rng.random() < 0.5 for _ in self.vocabulary)


ParamKind = Union[IntegerRange, RealRange, TokenSubset]


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: ParamKind

    def __post_init__(self) -> None:
        if not self.name or not self.name.replace("_", "").isalnum():
            raise SpaceError(f"invalid parameter name {self.name!r}")


@dataclass(frozen=True)
class SearchSpace:
    """Ordered list of parameters; gene order follows parameter order."""

    params: tuple[ParamSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", tuple(self.params))
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise SpaceError("duplicate parameter names")
        if not self.params:
            raise SpaceError("space has no parameters")

    def validate(self, candidate: "Candidate") -> None:
        """Raise SpaceError unless every gene is in bounds for this space."""
        if len(candidate.genes) != len(self.params):
            raise SpaceError(
                f"candidate has {len(candidate.genes)} genes, space has {len(self.params)} params"
            )
        for spec, gene in zip(self.params, candidate.genes):
            if not spec.kind.contains(gene):
                raise SpaceError(f"gene {gene!r} out of bounds for {spec.name}")

    def param_values(self, candidate: "Candidate") -> dict[str, GeneValue]:
        """Genes keyed by parameter name, in space order."""
        return {spec.name: gene for spec, gene in zip(self.params, candidate.genes)}


@dataclass(frozen=True)
class Candidate:
    """One point of the search space: a tuple of genes in space order.

    Hashable and value-comparable so evaluation caches can key on it.
    """

    genes: tuple[GeneValue, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "genes", tuple(self.genes))


def default_space() -> SearchSpace:
    """The stock text-to-image genome: sampler settings plus prompt tokens."""
    return SearchSpace(
        params=(
            ParamSpec("inference_steps", IntegerRange(1, 100)),
            ParamSpec("guidance_scale", RealRange(1.0, 20.0)),
            ParamSpec("guidance_rescale", RealRange(0.0, 1.0)),
            ParamSpec("seed", IntegerRange(1, 512)),
            ParamSpec("positive_prompt", TokenSubset(DEFAULT_POSITIVE_TOKENS)),
            ParamSpec("negative_prompt", TokenSubset(DEFAULT_NEGATIVE_TOKENS)),
        )
    )


def sample_random(space: SearchSpace, rng: Random) -> Candidate:
    """Uniform draw: ints/reals uniform in range, each token included at p=0.5."""
    return Candidate(genes=tuple(spec.kind.sample(rng) for spec in space.params))


REAL_MUTATION_ETA = 20.0


def _perturb_real(value: float, low: float, high: float, rng: Random) -> float:
    """Bounded polynomial perturbation (distribution index REAL_MUTATION_ETA).

    Real genes need a local move operator: without one the population can
    never tighten around an optimum finer than the raw sampling density, and
    Pareto-front endpoints stall well short of their true positions. The
    perturbation is boundary-aware, so mass never piles up on the bounds.
    """
    span = high - low
    if span <= 0.0:
        return value
    u = rng.random()
    exponent = 1.0 / (REAL_MUTATION_ETA + 1.0)
    if u < 0.5:
        gap = (value - low) / span
        inner = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - gap) ** (REAL_MUTATION_ETA + 1.0)
        delta = inner**exponent - 1.0
    else:
        gap = (high - value) / span
        inner = 2.0 * (1.0 - u) + (2.0 * u - 1.0) * (1.0 - gap) ** (REAL_MUTATION_ETA + 1.0)
        delta = 1.0 - inner**exponent
    return min(high, max(low, value + delta * span))


def mutate(candidate: Candidate, space: SearchSpace, per_gene_rate: float, rng: Random) -> Candidate:
    """Independent per-gene mutation.

    Integer genes are resampled uniformly within bounds with probability
    ``per_gene_rate``; real genes receive a bounded polynomial perturbation
    with that probability; token masks flip each bit independently with it.
    The input candidate is never modified.
    """
    if not 0.0 <= per_gene_rate <= 1.0:
        raise SpaceError(f"mutation rate {per_gene_rate} outside [0, 1]")
    genes: list[GeneValue] = []
    for spec, gene in zip(space.params, candidate.genes):
        if isinstance(spec.kind, TokenSubset):
            mask = gene
            assert isinstance(mask, tuple)
            genes.append(tuple((not bit) if rng.random() < per_gene_rate else bit for bit in mask))
        elif isinstance(spec.kind, RealRange):
            if rng.random() < per_gene_rate:
                genes.append(_perturb_real(float(gene), spec.kind.low, spec.kind.high, rng))
            else:
                genes.append(gene)
        else:
            genes.append(spec.kind.sample(rng) if rng.random() < per_gene_rate else gene)
    return Candidate(genes=tuple(genes))


def crossover(a: Candidate, b: Candidate, space: SearchSpace, rng: Random) -> tuple[Candidate, Candidate]:
    """Uniform crossover; token masks are crossed bitwise.

    Each scalar position swaps between the children with probability 0.5;
    each mask bit likewise. The pair of values at every position (gene or
    bit) is preserved across the two children.
    """
    genes_a: list[GeneValue] = []
    genes_b: list[GeneValue] = []
    for spec, ga, gb in zip(space.params, a.genes, b.genes):
        if isinstance(spec.kind, TokenSubset):
            assert isinstance(ga, tuple) and isinstance(gb, tuple)
            bits_a = []
            bits_b = []
            for ba, bb in zip(ga, gb):
                if rng.random() < 0.5:
                    ba, bb = bb, ba
                bits_a.append(ba)
                bits_b.append(bb)
            genes_a.append(tuple(bits_a))
            genes_b.append(tuple(bits_b))
        else:
            if rng.random() < 0.5:
                ga, gb = gb, ga
            genes_a.append(ga)
            genes_b.append(gb)
    return Candidate(tuple(genes_a)), Candidate(tuple(genes_b))


def render_prompt(candidate: Candidate, base_prompt: str, space: SearchSpace) -> tuple[str, str]:
    """Expand the candidate's token masks into positive/negative prompt strings.

    The positive prompt is the base prompt followed by the selected tokens of
    the ``positive_prompt`` parameter, comma-joined in vocabulary order; the
    negative prompt is the selected ``negative_prompt`` tokens alone. Spaces
    without those parameters yield the base prompt and an empty string.
    """
    values = space.param_values(candidate)
    positive = base_prompt
    negative = ""
    for name, spec in ((p.name, p) for p in space.params):
        if not isinstance(spec.kind, TokenSubset):
            continue
        mask = values[name]
        assert isinstance(mask, tuple)
        selected = [tok for tok, bit in zip(spec.kind.vocabulary, mask) if bit]
        if name == "positive_prompt" and selected:
            positive = base_prompt + ", " + ", ".join(selected) if base_prompt else ", ".join(selected)
        elif name == "negative_prompt":
            negative = ", ".join(selected)
    return positive, negative


# --- serialization ---------------------------------------------------------

_KIND_TAGS = {IntegerRange: "integer_range", RealRange: "real_range", TokenSubset: "token_subset"}


def space_to_dict(space: SearchSpace) -> dict:
    params = []
    for spec in space.params:
        kind = spec.kind
        entry: dict = {"name": spec.name, "kind": _KIND_TAGS[type(kind)]}
        if isinstance(kind, (IntegerRange, RealRange)):
            entry["low"] = kind.low
            entry["high"] = kind.high
        else:
            entry["vocabulary"] = list(kind.vocabulary)
        params.append(entry)
    return {"schema": SPACE_SCHEMA, "params": params}


def space_from_dict(doc: dict) -> SearchSpace:
    if not isinstance(doc, dict):
        raise SpaceError("space definition must be a JSON object")
    if doc.get("schema") != SPACE_SCHEMA:
        raise SpaceError(f"unsupported space schema {doc.get('schema')!r}")
    params = []
    for entry in doc.get("params", []):
        kind_tag = entry.get("kind")
        if kind_tag == "integer_range":
            kind: ParamKind = IntegerRange(int(entry["low"]), int(entry["high"]))
        elif kind_tag == "real_range":
            kind = RealRange(float(entry["low"]), float(entry["high"]))
        elif kind_tag == "token_subset":
            kind = TokenSubset(tuple(entry["vocabulary"]))
        else:
            raise SpaceError(f"unknown parameter kind {kind_tag!r}")
        params.append(ParamSpec(entry["name"], kind))
    return SearchSpace(tuple(params))


def dump_space(space: SearchSpace) -> str:
    """Space definition file content (JSON, schema-versioned)."""
    return json.dumps(space_to_dict(space), indent=2, sort_keys=True) + "\n"


def load_space(text: str) -> SearchSpace:
    return space_from_dict(json.loads(text))


def candidate_to_dict(candidate: Candidate, space: SearchSpace) -> dict:
    """Exact, name-keyed gene mapping (masks as 0/1 lists). Round-trips losslessly."""
    out: dict = {}
    for spec, gene in zip(space.params, candidate.genes):
        if isinstance(spec.kind, TokenSubset):
            assert isinstance(gene, tuple)
            out[spec.name] = [int(b) for b in gene]
        else:
            out[spec.name] = gene
    return out


def candidate_from_dict(doc: dict, space: SearchSpace) -> Candidate:
    genes: list[GeneValue] = []
    for spec in space.params:
        if spec.name not in doc:
            raise SpaceError(f"candidate document missing gene {spec.name!r}")
        raw = doc[spec.name]
        if isinstance(spec.kind, TokenSubset):
            genes.append(tuple(bool(b) for b in raw))
        elif isinstance(spec.kind, IntegerRange):
            genes.append(int(raw))
        else:
            genes.append(float(raw))
    candidate = Candidate(tuple(genes))
    space.validate(candidate)
    return candidate
