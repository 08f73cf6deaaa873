"""User background dataset construction and occupation-group-disjoint splits.

Backgrounds can come from a chat backend (prompted generation with
validation and re-queries) or from the offline synthesizer, which composes
records deterministically from per-field fragment pools so the whole test
suite runs without any remote model.  Splits assign whole occupation groups,
so no group ever appears in two splits.
"""

from __future__ import annotations

import io
import json
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import GenerationExhausted, InvalidSplit
from .gateway import ChatMessage, CompletionParams, EndpointRef, Gateway
from .models import (
    SCHEMA_VERSION,
    WORD_COUNT_MAX,
    WORD_COUNT_MIN,
    UserBackground,
    count_words,
    dump_json,
    read_jsonl,
    validate,
    write_jsonl,
)
from .prompts import load_template

# ISCO-08 sub-major occupation groups (two-digit codes), 43 in total.
OCCUPATION_CATALOG: tuple[tuple[str, str], ...] = (
    ("11", "Chief Executives, Senior Officials and Legislators"),
    ("12", "Administrative and Commercial Managers"),
    ("13", "Production and Specialized Services Managers"),
    ("14", "Hospitality, Retail and Other Services Managers"),
    ("21", "Science and Engineering Professionals"),
    ("22", "Health Professionals"),
    ("23", "Teaching Professionals"),
    ("24", "Business and Administration Professionals"),
    ("25", "Information and Communications Technology Professionals"),
    ("26", "Legal, Social and Cultural Professionals"),
    ("31", "Science and Engineering Associate Professionals"),
    ("32", "Health Associate Professionals"),
    ("33", "Business and Administration Associate Professionals"),
    ("34", "Legal, Social, Cultural and Related Associate Professionals"),
    ("35", "Information and Communications Technicians"),
    ("41", "General and Keyboard Clerks"),
    ("42", "Customer Services Clerks"),
    ("43", "Numerical and Material Recording Clerks"),
    ("44", "Other Clerical Support Workers"),
    ("51", "Personal Services Workers"),
    ("52", "Sales Workers"),
    ("53", "Personal Care Workers"),
    ("54", "Protective Services Workers"),
    ("61", "Market-oriented Skilled Agricultural Workers"),
    ("62", "Market-oriented Skilled Forestry, Fishery and Hunting Workers"),
    ("63", "Subsistence Farmers, Fishers, Hunters and Gatherers"),
    ("71", "Building and Related Trades Workers, excluding Electricians"),
    ("72", "Metal, Machinery and Related Trades Workers"),
    ("73", "Handicraft and Printing Workers"),
    ("74", "Electrical and Electronic Trades Workers"),
    ("75", "Food Processing, Wood Working, Garment and Other Craft and Related Trades Workers"),
    ("81", "Stationary Plant and Machine Operators"),
    ("82", "Assemblers"),
    ("83", "Drivers and Mobile Plant Operators"),
    ("91", "Cleaners and Helpers"),
    ("92", "Agricultural, Forestry and Fishery Labourers"),
    ("93", "Labourers in Mining, Construction, Manufacturing and Transport"),
    ("94", "Food Preparation Assistants"),
    ("95", "Street and Related Sales and Services Workers"),
    ("96", "Refuse Workers and Other Elementary Workers"),
    ("01", "Commissioned Armed Forces Officers"),
    ("02", "Non-commissioned Armed Forces Officers"),
    ("03", "Armed Forces Occupations, Other Ranks"),
)


@dataclass(frozen=True)
class BackgroundDataset:
    backgrounds: tuple[UserBackground, ...]
    splits: dict[str, tuple[str, ...]] | None = None

    def by_id(self) -> dict[str, UserBackground]:
        return {b.id: b for b in self.backgrounds}

    def split_users(self, split: str) -> list[UserBackground]:
        if not self.splits or split not in self.splits:
            raise KeyError(f"dataset has no split {split!r}")
        index = self.by_id()
        return [index[i] for i in self.splits[split]]

    def groups(self) -> list[str]:
        seen: list[str] = []
        for b in self.backgrounds:
            if b.occupation_group not in seen:
                seen.append(b.occupation_group)
        return seen


def select_groups(n: int, seed: int, catalog: Sequence[tuple[str, str]] = OCCUPATION_CATALOG) -> list[tuple[str, str]]:
    """Seeded random selection of n groups from the bundled catalog."""
    if not (1 <= n <= len(catalog)):
        raise ValueError(f"cannot select {n} groups from a catalog of {len(catalog)}")
    rng = random.Random(f"group-selection:{seed}")
    picked = rng.sample(range(len(catalog)), n)
    return [catalog[i] for i in sorted(picked)]


# ---------------------------------------------------------------------------
# Offline synthesizer
# ---------------------------------------------------------------------------

_FIRST_NAMES = (
    "Avery", "Bruno", "Carmen", "Dalia", "Eitan", "Farah", "Goran", "Hana",
    "Ivo", "Juno", "Kenji", "Lena", "Mateo", "Nadia", "Omar", "Priya",
    "Quinn", "Rosa", "Samir", "Tessa", "Ugo", "Vera", "Wen", "Ximena",
    "Yusuf", "Zofia", "Anouk", "Bilal", "Clara", "Dmitri",
)

_LAST_NAMES = (
    "Aldana", "Brandt", "Castillo", "Dvorak", "Eriksen", "Fontaine", "Grieco",
    "Haddad", "Ibarra", "Jansen", "Kovacs", "Lindqvist", "Moyo", "Novak",
    "Okafor", "Petrov", "Quispe", "Rahimi", "Sato", "Tanaka", "Uzun",
    "Vasquez", "Wojcik", "Xu", "Yilmaz", "Zhang", "Abebe", "Bergstrom",
)

_CAREER_ARCS = (
    "worked {years} years in the field, climbing slowly from an entry role to a trusted senior position",
    "spent {years} years in the trade, including a rough stretch after a layoff that forced a restart at the bottom",
    "has {years} years of experience, interrupted twice by failed attempts to start an independent business",
    "built a {years}-year career across three employers, earning a reputation for reliability rather than brilliance",
    "drifted into the occupation by accident and stayed {years} years, never quite shaking the feeling of being stuck",
    "moved cities twice chasing better positions over a {years}-year career that finally settled into steady work",
)

_EDUCATIONS = (
    "Finished a vocational program straight out of school and learned the rest on the job.",
    "Holds a bachelor's degree earned part-time over six difficult years.",
    "Dropped out of university in the second year and regrets nothing.",
    "Completed an apprenticeship and later a certification course paid out of pocket.",
    "Has a master's degree that feels increasingly unrelated to the daily work.",
    "Self-taught after secondary school, with a shelf of well-worn manuals to prove it.",
)

_PERSONALITIES = (
    "Patient and methodical, but prone to long grudges when slighted.",
    "Outgoing on good days, withdrawn and irritable when work piles up.",
    "A stubborn perfectionist who struggles to delegate anything.",
    "Warm with strangers yet guarded about personal matters.",
    "Blunt to the point of rudeness, though colleagues value the honesty.",
    "Anxious about change and quietly competitive with peers.",
    "Cheerful and chatty, with a habit of overpromising.",
)

_HOBBIES = (
    "tending an unruly balcony garden",
    "long-distance cycling at dawn",
    "collecting secondhand vinyl records",
    "playing chess at a neighborhood club",
    "fishing on quiet weekends",
    "baking bread with mixed results",
    "photographing old buildings",
    "following a football club with painful devotion",
    "carving small wooden figures",
    "learning languages from battered phrasebooks",
)

_PADDING = (
    "Neighbors describe a person of fixed routines and strong opinions.",
    "Weekends are jealously guarded for family and quiet time.",
    "Money has been tight more than once, which shows in careful habits.",
    "Keeps in touch with a small circle of old friends from the first job.",
)


def synthesize_background(group: tuple[str, str], index: int, seed: int) -> UserBackground:
    """Deterministic offline persona for one occupation group slot."""
    code, label = group
    rng = random.Random(f"persona:{seed}:{code}:{index}")
    first = _FIRST_NAMES[rng.randrange(len(_FIRST_NAMES))]
    last = _LAST_NAMES[rng.randrange(len(_LAST_NAMES))]
    name = f"{first} {last}"
    years = rng.randint(3, 27)
    arc = rng.choice(_CAREER_ARCS).format(years=years)
    career = f"One of the {label.lower()}, {name.split()[0]} {arc}."
    education = rng.choice(_EDUCATIONS)
    personality = rng.choice(_PERSONALITIES)
    hobby_pair = rng.sample(_HOBBIES, 2)
    hobbies = f"Spends free time {hobby_pair[0]} and {hobby_pair[1]}."

    background = UserBackground(
        id=f"{code}-{index:03d}",
        occupation_group=label,
        name=name,
        career=career,
        education=education,
        personality=personality,
        hobbies=hobbies,
        word_count=0,
    )
    words = count_words(background.combined_text())
    padding = list(_PADDING)
    rng.shuffle(padding)
    while words < WORD_COUNT_MIN and padding:
        extra = padding.pop()
        personality = f"{personality} {extra}"
        background = UserBackground(
            id=background.id,
            occupation_group=label,
            name=name,
            career=career,
            education=education,
            personality=personality,
            hobbies=hobbies,
            word_count=0,
        )
        words = count_words(background.combined_text())
    return UserBackground(
        id=background.id,
        occupation_group=label,
        name=name,
        career=career,
        education=education,
        personality=personality,
        hobbies=hobbies,
        word_count=words,
    )


def synthesize_backgrounds(group: tuple[str, str], count: int, seed: int) -> list[UserBackground]:
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    names: set[str] = set()
    index = 0
    attempt = 0
    while len(out) < count:
        record = synthesize_background(group, index, seed + attempt * 1000)
        # regenerate on a name collision within the group; ids stay sequential
        if record.name in names:
            attempt += 1
            continue
        names.add(record.name)
        out.append(record)
        index += 1
        attempt = 0
    return out


# ---------------------------------------------------------------------------
# Backend-driven generation
# ---------------------------------------------------------------------------

_FIELD_RE = re.compile(r"^(Name|Career|Education|Personality|Hobbies)\s*:\s*(.*)$", re.IGNORECASE)


def parse_persona_blocks(text: str) -> list[dict[str, str]]:
    blocks: list[dict[str, str]] = []
    current: dict[str, str] = {}
    current_field: str | None = None
    for line in text.splitlines():
        if line.strip() == "---":
            if current:
                blocks.append(current)
            current, current_field = {}, None
            continue
        m = _FIELD_RE.match(line.strip())
        if m:
            current_field = m.group(1).lower()
            current[current_field] = m.group(2).strip()
        elif current_field and line.strip():
            current[current_field] += " " + line.strip()
    if current:
        blocks.append(current)
    required = {"name", "career", "education", "personality", "hobbies"}
    return [b for b in blocks if required.issubset(b.keys())]


def generate_backgrounds(
    gateway: Gateway,
    backend: EndpointRef,
    group: tuple[str, str],
    count: int,
    max_requeries: int = 3,
    temperature: float = 0.9,
) -> list[UserBackground]:
    """Backend-generated personas for one group, validated and re-queried.

    Records failing the word-count or name-uniqueness checks are dropped and
    the shortfall re-requested, up to max_requeries times; raises
    GenerationExhausted when the valid count is still unmet.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    code, label = group
    accepted: list[UserBackground] = []
    names: set[str] = set()
    for _ in range(max_requeries + 1):
        need = count - len(accepted)
        if need == 0:
            break
        prompt = load_template("persona_generation").render(count=str(need), occupation_group=label)
        result = gateway.complete_chat(
            backend,
            [ChatMessage(role="user", content=prompt)],
            CompletionParams(temperature=temperature, max_tokens=4096),
        )
        for block in parse_persona_blocks(result.text):
            if len(accepted) == count:
                break
            candidate = UserBackground(
                id=f"{code}-{len(accepted):03d}",
                occupation_group=label,
                name=block["name"],
                career=block["career"],
                education=block["education"],
                personality=block["personality"],
                hobbies=block["hobbies"],
                word_count=0,
            )
            words = count_words(candidate.combined_text())
            candidate = UserBackground(**{**candidate.to_dict(), "word_count": words})
            if candidate.name in names or not (WORD_COUNT_MIN <= words <= WORD_COUNT_MAX):
                continue
            if validate(candidate):
                continue
            names.add(candidate.name)
            accepted.append(candidate)
    if len(accepted) < count:
        raise GenerationExhausted(
            f"group {label!r}: only {len(accepted)}/{count} valid backgrounds after {max_requeries} re-queries"
        )
    return accepted


def build_dataset(
    groups: Sequence[tuple[str, str]],
    per_group: int,
    gateway: Gateway | None = None,
    backend: EndpointRef | None = None,
    seed: int = 0,
) -> BackgroundDataset:
    """Concatenate per-group generations; offline synthesizer when no backend given."""
    if not groups:
        raise ValueError("groups must be non-empty")
    codes = [code for code, _ in groups]
    if len(set(codes)) != len(codes):
        raise ValueError("duplicate occupation group in input")
    backgrounds: list[UserBackground] = []
    for group in sorted(groups, key=lambda g: g[0]):
        if backend is not None and gateway is not None:
            backgrounds.extend(generate_backgrounds(gateway, backend, group, per_group))
        else:
            backgrounds.extend(synthesize_backgrounds(group, per_group, seed))
    return BackgroundDataset(backgrounds=tuple(backgrounds))


def split_dataset(
    dataset: BackgroundDataset,
    group_counts: tuple[int, int, int],
    seed: int,
) -> BackgroundDataset:
    """Assign whole occupation groups to train/validation/test, seeded shuffle."""
    groups = dataset.groups()
    if sum(group_counts) != len(groups):
        raise InvalidSplit(f"group counts {group_counts} do not sum to {len(groups)} groups")
    rng = random.Random(f"split:{seed}")
    shuffled = list(groups)
    rng.shuffle(shuffled)
    n_train, n_val, _ = group_counts
    assignment = {
        "train": set(shuffled[:n_train]),
        "validation": set(shuffled[n_train:n_train + n_val]),
        "test": set(shuffled[n_train + n_val:]),
    }
    splits = {
        name: tuple(b.id for b in dataset.backgrounds if b.occupation_group in members)
        for name, members in assignment.items()
    }
    return BackgroundDataset(backgrounds=dataset.backgrounds, splits=splits)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

BACKGROUNDS_NAME = "backgrounds.jsonl"
DATASET_MANIFEST_NAME = "dataset_manifest.json"


def save_dataset(directory: str | Path, dataset: BackgroundDataset, seed: int | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_jsonl(directory / BACKGROUNDS_NAME, (b.to_dict() for b in dataset.backgrounds), kind="backgrounds")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "dataset_manifest",
        "seed": seed,
        "groups": dataset.groups(),
        "per_group_counts": _per_group_counts(dataset),
        "splits": {k: list(v) for k, v in dataset.splits.items()} if dataset.splits else None,
    }
    with io.open(directory / DATASET_MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_json(manifest) + "\n")
    return directory


def load_dataset(directory: str | Path) -> BackgroundDataset:
    directory = Path(directory)
    backgrounds = tuple(UserBackground.from_dict(r) for r in read_jsonl(directory / BACKGROUNDS_NAME, kind="backgrounds"))
    manifest_path = directory / DATASET_MANIFEST_NAME
    splits = None
    if manifest_path.is_file():
        with io.open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("splits"):
            splits = {k: tuple(v) for k, v in manifest["splits"].items()}
    return BackgroundDataset(backgrounds=backgrounds, splits=splits)


def import_backgrounds(path: str | Path) -> list[UserBackground]:
    """Load externally authored records; out-of-range word counts are flagged, not rejected."""
    records = []
    for raw in read_jsonl(path):
        record = UserBackground.from_dict(raw)
        words = count_words(record.combined_text())
        flagged = not (WORD_COUNT_MIN <= words <= WORD_COUNT_MAX)
        records.append(UserBackground(**{**record.to_dict(), "word_count": words, "flagged": flagged}))
    return records


def _per_group_counts(dataset: BackgroundDataset) -> dict[str, int]:
    counts: dict[str, int] = {}
    for b in dataset.backgrounds:
        counts[b.occupation_group] = counts.get(b.occupation_group, 0) + 1
    return counts
