"""Dilemma domain model.

A scenario puts two groups of characters on the two sides of the road; the
car is heading toward one side (killing it unless it swerves) and at most one
side is crossing legally. The module owns the character taxonomy with its
five attributes, the canonical 42-component integer encoding of a dilemma,
left/right mirroring, and detection of the six single-dimension problem
types (humans vs. animals, old vs. young, more vs. less, fat vs. fit,
male vs. female, high vs. low status).

Encoding layout (components 0..41):
    0..19   left-side count per character, in taxonomy order
    20..39  right-side count per character, in taxonomy order
    40      car heading: +1 = left, -1 = right
    41      legality: 0 = none, +1 = left crosses legally, -1 = right legally

The taxonomy (characters, attributes, counterpart pairs) is loaded from
``configs/characters.json`` and can be re-mapped without code changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Iterator, Mapping, NamedTuple, Optional

import numpy as np

from .errors import ValidationError

MAX_GROUP_SIZE = 5
KEY_LENGTH = 42

ATTRIBUTES = ("species", "age", "body", "gender", "status")


class Side(Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def other(self) -> "Side":
        return Side.RIGHT if self is Side.LEFT else Side.LEFT

    @property
    def sign(self) -> int:
        return 1 if self is Side.LEFT else -1


class Legality(Enum):
    """Which side, if any, crosses legally; the other side crosses illegally."""

    NONE = "none"
    LEFT_LEGAL = "left_legal"
    RIGHT_LEGAL = "right_legal"

    @property
    def sign(self) -> int:
        return {Legality.NONE: 0, Legality.LEFT_LEGAL: 1, Legality.RIGHT_LEGAL: -1}[self]

    @staticmethod
    def from_sign(sign: int) -> "Legality":
        return {0: Legality.NONE, 1: Legality.LEFT_LEGAL, -1: Legality.RIGHT_LEGAL}[int(sign)]

    def mirrored(self) -> "Legality":
        return Legality.from_sign(-self.sign)


class ProblemType(Enum):
    """The six single-dimension dilemma categories.

    Enum order is the detection precedence when several matchers fire.
    Each type has a designated positive pole (the attribute value whose side
    carries the type's side-level feature); the sign of the weight learned
    for that feature is free.
    """

    HUMANS_VS_ANIMALS = "humans_vs_animals"
    OLD_VS_YOUNG = "old_vs_young"
    MORE_VS_LESS = "more_vs_less"
    FAT_VS_FIT = "fat_vs_fit"
    MALE_VS_FEMALE = "male_vs_female"
    HIGH_VS_LOW_STATUS = "high_vs_low_status"

    @property
    def pole(self) -> str:
        return _POLES[self]

    @property
    def index(self) -> int:
        return list(ProblemType).index(self)


_POLES = {
    ProblemType.HUMANS_VS_ANIMALS: "humans",
    ProblemType.OLD_VS_YOUNG: "young",
    ProblemType.MORE_VS_LESS: "more",
    ProblemType.FAT_VS_FIT: "fit",
    ProblemType.MALE_VS_FEMALE: "female",
    ProblemType.HIGH_VS_LOW_STATUS: "high",
}

POLE_TO_TYPE = {t.pole: t for t in ProblemType}

# Problem types whose matcher is a character-level counterpart map (the other
# two, humans-vs-animals and more-vs-less, are structural).
MAPPED_TYPES = (
    ProblemType.OLD_VS_YOUNG,
    ProblemType.FAT_VS_FIT,
    ProblemType.MALE_VS_FEMALE,
    ProblemType.HIGH_VS_LOW_STATUS,
)


class TypeMatch(NamedTuple):
    kind: ProblemType
    pole_side: Side


@dataclass(frozen=True)
class Character:
    name: str
    display: str
    species: str
    age: str
    body: str
    gender: str
    status: str

    def attribute(self, attr: str) -> str:
        if attr == "kind":
            return self.name
        if attr not in ATTRIBUTES:
            raise ValidationError(f"unknown attribute {attr!r}")
        return getattr(self, attr)


class Taxonomy:
    """The closed character set, its attributes, and the counterpart pairs."""

    def __init__(self, characters: list[Character], counterparts: Mapping[str, list[tuple[str, str]]]):
        self.characters = tuple(characters)
        self.names = tuple(c.name for c in self.characters)
        self.index = {c.name: i for i, c in enumerate(self.characters)}
        if len(self.index) != len(self.characters):
            raise ValidationError("duplicate character names in taxonomy")
        self.by_name = {c.name: c for c in self.characters}
        # counterpart pairs per mapped problem type, as (positive, negative)
        self.counterparts = {}
        for type_name, pairs in counterparts.items():
            ptype = ProblemType(type_name)
            checked = []
            for pos, neg in pairs:
                for name in (pos, neg):
                    if name not in self.index:
                        raise ValidationError(f"counterpart pair references unknown character {name!r}")
                checked.append((pos, neg))
            self.counterparts[ptype] = tuple(checked)
        for ptype in MAPPED_TYPES:
            self.counterparts.setdefault(ptype, ())
        self.human_names = tuple(c.name for c in self.characters if c.species == "human")
        self.animal_names = tuple(c.name for c in self.characters if c.species == "animal")

    @property
    def size(self) -> int:
        return len(self.characters)

    def attribute_values(self, attr: str) -> set[str]:
        if attr == "kind":
            return set(self.names)
        return {c.attribute(attr) for c in self.characters} - {"n/a"}

    def attribute_mask(self, attr: str, value: str) -> np.ndarray:
        """Boolean vector over taxonomy order: which characters satisfy attr=value."""
        return np.array([c.attribute(attr) == value for c in self.characters])


def _taxonomy_from_dict(raw: dict) -> Taxonomy:
    chars = [Character(name=name, **raw["characters"][name]) for name in raw["order"]]
    pairs = {k: [tuple(p) for p in v] for k, v in raw["counterparts"].items()}
    return Taxonomy(chars, pairs)


def load_taxonomy(path) -> Taxonomy:
    """Load a re-mapped taxonomy from a JSON file with the same layout as the default."""
    with open(path) as fh:
        return _taxonomy_from_dict(json.load(fh))


DEFAULT_TAXONOMY = _taxonomy_from_dict(
    json.loads(resources.files("moralloop.configs").joinpath("characters.json").read_text())
)

_active_taxonomy = DEFAULT_TAXONOMY


def active_taxonomy() -> Taxonomy:
    return _active_taxonomy


def set_active_taxonomy(tax: Taxonomy) -> None:
    """Swap the process-wide taxonomy (for re-mapped character sets)."""
    global _active_taxonomy
    _active_taxonomy = tax


@dataclass(frozen=True)
class SideComposition:
    """Multiset of characters on one side; between 1 and 5 individuals."""

    counts: Mapping[str, int]

    def __post_init__(self):
        cleaned = {}
        for name, count in self.counts.items():
            if name not in _active_taxonomy.index:
                raise ValidationError(f"unknown character {name!r}")
            if not isinstance(count, (int, np.integer)) or count < 0:
                raise ValidationError(f"count for {name!r} must be a non-negative integer, got {count!r}")
            if count > 0:
                cleaned[name] = int(count)
        total = sum(cleaned.values())
        if total < 1:
            raise ValidationError("a side must contain at least one character")
        if total > MAX_GROUP_SIZE:
            raise ValidationError(f"a side holds at most {MAX_GROUP_SIZE} characters, got {total}")
        object.__setattr__(self, "counts", dict(sorted(cleaned.items())))

    @classmethod
    def of(cls, *names: str) -> "SideComposition":
        counts: dict[str, int] = {}
        for n in names:
            counts[n] = counts.get(n, 0) + 1
        return cls(counts)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def count(self, name: str) -> int:
        return self.counts.get(name, 0)

    def vector(self, taxonomy: Taxonomy = None) -> np.ndarray:
        tax = taxonomy or _active_taxonomy
        v = np.zeros(tax.size, dtype=np.int16)
        for name, count in self.counts.items():
            v[tax.index[name]] = count
        return v

    def names_present(self) -> Iterator[str]:
        return iter(self.counts)

    def __hash__(self):
        return hash(tuple(sorted(self.counts.items())))


@dataclass(frozen=True)
class Scenario:
    """One dilemma: two pedestrian groups, the car's heading, legality."""

    left: SideComposition
    right: SideComposition
    car_heading: Side
    legality: Legality = Legality.NONE

    def side(self, which: Side) -> SideComposition:
        return self.left if which is Side.LEFT else self.right

    def crossing_is_legal(self, which: Side) -> Optional[bool]:
        """True/False when legality names a side, None when no signal exists."""
        if self.legality is Legality.NONE:
            return None
        legal_side = Side.LEFT if self.legality is Legality.LEFT_LEGAL else Side.RIGHT
        return which is legal_side


@dataclass(frozen=True)
class Response:
    """One recorded decision: which side the respondent chose to save."""

    scenario: Scenario
    saved: Side
    row_id: str = ""


def encode(s: Scenario, taxonomy: Taxonomy = None) -> tuple[int, ...]:
    """Canonical 42-component key; bijective with the scenario."""
    tax = taxonomy or _active_taxonomy
    parts = np.concatenate([
        s.left.vector(tax),
        s.right.vector(tax),
        [s.car_heading.sign, s.legality.sign],
    ])
    return tuple(int(x) for x in parts)


def decode(key, taxonomy: Taxonomy = None) -> Scenario:
    """Inverse of :func:`encode`."""
    tax = taxonomy or _active_taxonomy
    key = tuple(int(x) for x in key)
    if len(key) != 2 * tax.size + 2:
        raise ValidationError(f"key must have {2 * tax.size + 2} components, got {len(key)}")
    left = SideComposition({tax.names[i]: key[i] for i in range(tax.size) if key[i]})
    right = SideComposition({tax.names[i]: key[tax.size + i] for i in range(tax.size) if key[tax.size + i]})
    heading = Side.LEFT if key[-2] == 1 else Side.RIGHT
    if key[-2] not in (1, -1):
        raise ValidationError(f"car-heading component must be +1 or -1, got {key[-2]}")
    if key[-1] not in (0, 1, -1):
        raise ValidationError(f"legality component must be 0, +1 or -1, got {key[-1]}")
    return Scenario(left, right, heading, Legality.from_sign(key[-1]))


def mirror(s: Scenario) -> Scenario:
    """Swap the two sides, flipping heading and legality accordingly."""
    return Scenario(
        left=s.right,
        right=s.left,
        car_heading=s.car_heading.other,
        legality=s.legality.mirrored(),
    )


# ---------------------------------------------------------------------------
# Problem-type detection
# ---------------------------------------------------------------------------

def _mapped_image(counts: Mapping[str, int], pairs) -> Optional[dict]:
    """Image of a composition under pos->neg pairs; None if any character is unmapped."""
    mapping = {pos: neg for pos, neg in pairs}
    image: dict[str, int] = {}
    for name, count in counts.items():
        target = mapping.get(name)
        if target is None:
            return None
        image[target] = image.get(target, 0) + count
    return image


def _match_mapped(s: Scenario, pairs) -> Optional[Side]:
    if not pairs:
        return None
    left_image = _mapped_image(s.left.counts, pairs)
    if left_image is not None and left_image == s.right.counts:
        return Side.LEFT
    right_image = _mapped_image(s.right.counts, pairs)
    if right_image is not None and right_image == s.left.counts:
        return Side.RIGHT
    return None


def _match_species(s: Scenario, tax: Taxonomy) -> Optional[Side]:
    def all_of(comp, species):
        return all(tax.by_name[n].species == species for n in comp.counts)

    if s.left.total != s.right.total:
        return None
    if all_of(s.left, "human") and all_of(s.right, "animal"):
        return Side.LEFT
    if all_of(s.left, "animal") and all_of(s.right, "human"):
        return Side.RIGHT
    return None


def _match_more(s: Scenario) -> Optional[Side]:
    def strict_sub(a, b):
        return all(a.count(n) <= b.count(n) for n in a.counts) and a.total < b.total

    if strict_sub(s.left, s.right):
        return Side.RIGHT
    if strict_sub(s.right, s.left):
        return Side.LEFT
    return None


def detect_problem_type(s: Scenario, taxonomy: Taxonomy = None) -> Optional[TypeMatch]:
    """First problem type (in enum precedence order) whose matcher fires.

    Returns the type together with the side holding its positive pole, or
    None when the two sides do not form a single-dimension contrast.
    """
    tax = taxonomy or _active_taxonomy
    for ptype in ProblemType:
        if ptype is ProblemType.HUMANS_VS_ANIMALS:
            pole = _match_species(s, tax)
        elif ptype is ProblemType.MORE_VS_LESS:
            pole = _match_more(s)
        else:
            pole = _match_mapped(s, tax.counterparts[ptype])
        if pole is not None:
            return TypeMatch(ptype, pole)
    return None


def detect_problem_type_matrix(keys: np.ndarray, taxonomy: Taxonomy = None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized twin of :func:`detect_problem_type` over an (N, 42) key matrix.

    Returns (codes, poles): codes holds the ProblemType index or -1 for none;
    poles holds +1 when the left side is the positive pole, -1 for right,
    0 for none. Kept in exact agreement with the scalar matcher by tests.
    """
    tax = taxonomy or _active_taxonomy
    keys = np.asarray(keys)
    n_char = tax.size
    left = keys[:, :n_char]
    right = keys[:, n_char:2 * n_char]
    l_tot = left.sum(axis=1)
    r_tot = right.sum(axis=1)

    human = np.array([tax.by_name[n].species == "human" for n in tax.names])
    l_human = left[:, human].sum(axis=1)
    r_human = right[:, human].sum(axis=1)

    matches = {}
    matches[ProblemType.HUMANS_VS_ANIMALS] = (
        (l_human == l_tot) & (r_human == 0) & (l_tot == r_tot),
        (r_human == r_tot) & (l_human == 0) & (l_tot == r_tot),
    )
    sub_lr = (left <= right).all(axis=1) & (l_tot < r_tot)
    sub_rl = (right <= left).all(axis=1) & (r_tot < l_tot)
    matches[ProblemType.MORE_VS_LESS] = (sub_rl, sub_lr)  # pole side holds more

    for ptype in MAPPED_TYPES:
        pairs = tax.counterparts[ptype]
        if not pairs:
            false = np.zeros(len(keys), dtype=bool)
            matches[ptype] = (false, false)
            continue
        proj = np.zeros((n_char, n_char))
        domain = np.zeros(n_char, dtype=bool)
        for pos, neg in pairs:
            proj[tax.index[pos], tax.index[neg]] += 1
            domain[tax.index[pos]] = True
        l_in = left[:, ~domain].sum(axis=1) == 0
        r_in = right[:, ~domain].sum(axis=1) == 0
        l_image = left @ proj
        r_image = right @ proj
        matches[ptype] = (
            l_in & (l_image == right).all(axis=1),
            r_in & (r_image == left).all(axis=1),
        )

    codes = np.full(len(keys), -1, dtype=np.int8)
    poles = np.zeros(len(keys), dtype=np.int8)
    for idx, ptype in enumerate(ProblemType):
        match_left, match_right = matches[ptype]
        unset = codes == -1
        take_left = unset & match_left
        take_right = unset & match_right & ~match_left
        codes[take_left | take_right] = idx
        poles[take_left] = 1
        poles[take_right] = -1
    return codes, poles
