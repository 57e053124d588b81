"""Synthetic scenes of colored shapes with exact boxes, and the OD / REC / RD / VQA
annotations drawn from them.

Reasoning prompts never name the target's attributes directly. They go through a
small world-knowledge lexicon ("the color of grass" -> green, "warm-colored" ->
red or yellow, "looks like a ball" -> circle), which VQA samples also teach as
plain text facts.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import textproto as tp
from .diffcore.rng import Rng
from .geometry import Box, iou

log = logging.getLogger(__name__)

SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue", "yellow")
SIZES = ("small", "large")
RGB = {"red": (220, 40, 40), "green": (40, 180, 60), "blue": (50, 90, 230), "yellow": (235, 215, 40)}
BACKGROUND = (20, 20, 20)
IMAGE_SIZE = 64
SIDE_RANGE = {"small": (11, 15), "large": (20, 26)}  # inclusive, pixels
MAX_OBJECTS = 4
MAX_PAIR_IOU = 0.1
PLACEMENT_TRIES = 100

RELATIONS = ("left of", "right of", "above", "below")
NUMBER_WORDS = {1: "one", 2: "two", 3: "three", 4: "four"}

# world knowledge: phrase -> allowed attribute values
COLOR_FACT = {"red": "a tomato is red", "green": "grass is green", "blue": "the sky is blue",
              "yellow": "a banana is yellow"}
COLOR_LIKE = {"red": "the color of a tomato", "green": "the color of grass", "blue": "the color of the sky",
              "yellow": "the color of a banana"}
COLOR_GROUP = {"warm": ("red", "yellow"), "cool": ("green", "blue")}
SHAPE_ADJ = {"circle": "round", "square": "boxy", "triangle": "pointy"}
SHAPE_LIKE = {"circle": "a ball", "square": "a box", "triangle": "a slice of pizza"}
SHAPE_FACT = {"circle": "a ball is round", "square": "a box is square", "triangle": "a slice of pizza is a triangle"}
CORNERED = ("square", "triangle")
SIZE_ADJ = {"small": "tiny", "large": "big"}
KNOWLEDGE_QA = [
    ("What color is grass ?", "Grass is green ."),
    ("What color is the sky ?", "The sky is blue ."),
    ("What color is a tomato ?", "A tomato is red ."),
    ("What color is a banana ?", "A banana is yellow ."),
    ("What shape is a ball ?", "A ball is round like a circle ."),
    ("What shape is a box ?", "A box is a square ."),
    ("What shape is a slice of pizza ?", "A slice of pizza is a triangle ."),
    ("Which colors are warm ?", "Red and yellow are warm colors ."),
    ("Which colors are cool ?", "Green and blue are cool colors ."),
    ("Which shapes have corners ?", "Squares and triangles have corners ."),
]

DATA_MIX_KEYS = ("od", "rec", "rd", "vqa")


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    size: str
    x0: int
    y0: int
    side: int
    image_size: int = IMAGE_SIZE

    @property
    def box(self) -> Box:
        s = float(self.image_size)
        return Box.from_corners(self.x0 / s, self.y0 / s, (self.x0 + self.side) / s, (self.y0 + self.side) / s)

    def attrs(self) -> dict[str, str]:
        return {"shape": self.shape, "color": self.color, "size": self.size}


@dataclass
class Scene:
    objects: list[SceneObject]
    image_size: int = IMAGE_SIZE
    # (shape,), (color, shape), ... attribute tuples that identify exactly one object
    unique_flags: list[list[tuple[str, ...]]] = field(default_factory=list)

    def categories(self) -> list[str]:
        return sorted({o.shape for o in self.objects})


def _unique_flags(objects: list[SceneObject]) -> list[list[tuple[str, ...]]]:
    combos = [("shape",), ("color",), ("color", "shape"), ("size", "shape"), ("size", "color", "shape")]
    flags = []
    for o in objects:
        mine = []
        for keys in combos:
            n = sum(all(getattr(p, k) == getattr(o, k) for k in keys) for p in objects)
            if n == 1:
                mine.append(keys)
        flags.append(mine)
    return flags


def generate_scene(rng: Rng, image_size: int = IMAGE_SIZE) -> Scene:
    """1-4 shapes with pairwise box IoU <= 0.1, deterministic in ``rng``."""
    for _ in range(PLACEMENT_TRIES):
        n = rng.integers(1, MAX_OBJECTS + 1)
        objects: list[SceneObject] = []
        for _ in range(n):
            shape, color, size = rng.choice(SHAPES), rng.choice(COLORS), rng.choice(SIZES)
            lo, hi = SIDE_RANGE[size]
            side = rng.integers(lo, hi + 1) * image_size // IMAGE_SIZE
            if side > image_size:
                break
            for _ in range(PLACEMENT_TRIES):
                cand = SceneObject(shape, color, size, rng.integers(0, image_size - side + 1),
                                   rng.integers(0, image_size - side + 1), side, image_size)
                if all(iou(cand.box, o.box) <= MAX_PAIR_IOU for o in objects):
                    objects.append(cand)
                    break
            else:
                break
        if len(objects) == n:
            return Scene(objects, image_size, _unique_flags(objects))
    raise PlacementError(f"could not place objects after {PLACEMENT_TRIES} retries; scene too crowded")


def shape_mask(obj: SceneObject, image_size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:image_size, 0:image_size] + 0.5
    s = obj.side
    cx, cy = obj.x0 + s / 2, obj.y0 + s / 2
    if obj.shape == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= (s / 2) ** 2
    inside = (xs >= obj.x0) & (xs <= obj.x0 + s) & (ys >= obj.y0) & (ys <= obj.y0 + s)
    if obj.shape == "square":
        return inside
    return inside & (np.abs(xs - cx) <= (ys - obj.y0) / 2)


def render(scene: Scene) -> np.ndarray:
    """uint8 RGB image (H, W, 3); objects painted in list order."""
    n = scene.image_size
    img = np.empty((n, n, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    for o in scene.objects:
        img[shape_mask(o, n)] = RGB[o.color]
    return img


def write_ppm(path, img: np.ndarray) -> None:
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    data = open(path, "rb").read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3).copy()


# -- referring expressions -------------------------------------------------------
def relation_holds(rel: str, a: SceneObject, b: SceneObject) -> bool:
    """Does ``a`` stand in ``rel`` to ``b``? Uses the dominant axis of the center offset."""
    ba, bb = a.box, b.box
    dx, dy = bb.cx - ba.cx, bb.cy - ba.cy
    if rel == "left of":
        return dx > 0.1 and dx > abs(dy)
    if rel == "right of":
        return -dx > 0.1 and -dx > abs(dy)
    if rel == "above":
        return dy > 0.1 and dy > abs(dx)
    if rel == "below":
        return -dy > 0.1 and -dy > abs(dx)
    raise ValueError(rel)


def _matches(o: SceneObject, constraint: dict[str, Iterable[str]]) -> bool:
    return all(getattr(o, k) in v for k, v in constraint.items())


def _count(scene: Scene, constraint) -> int:
    return sum(_matches(o, constraint) for o in scene.objects)


def _describe(o: SceneObject, keys: tuple[str, ...]) -> str:
    words = [getattr(o, k) for k in ("size", "color") if k in keys]
    words.append(o.shape if "shape" in keys else "thing")
    return " ".join(words)


REC_FORMS = (("shape",), ("color", "shape"), ("size", "shape"), ("size", "color", "shape"), ("color",))


def rec_captions(scene: Scene, t: int) -> list[str]:
    """Every caption form that picks out object ``t`` and nothing else."""
    o = scene.objects[t]
    out = []
    for keys in REC_FORMS:
        cons = {k: (getattr(o, k),) for k in keys}
        if _count(scene, cons) == 1:
            out.append("the " + _describe(o, keys))
    # relational: the <shape> <rel> the <color> <shape>
    for a_idx, a in enumerate(scene.objects):
        if a_idx == t or _count(scene, {"color": (a.color,), "shape": (a.shape,)}) != 1:
            continue
        for rel in RELATIONS:
            if not relation_holds(rel, o, a):
                continue
            for keys in (("shape",), ("color", "shape")):
                cons = {k: (getattr(o, k),) for k in keys}
                hits = [p for i, p in enumerate(scene.objects)
                        if i != a_idx and _matches(p, cons) and relation_holds(rel, p, a)]
                if len(hits) == 1:
                    out.append(f"the {_describe(o, keys)} {rel} the {a.color} {a.shape}")
    return out


# -- reasoning prompts -----------------------------------------------------------
@dataclass(frozen=True)
class Clue:
    attr: str       # shape | color | size
    kind: str       # specific | group
    allowed: tuple[str, ...]
    key: str        # the value or group name the phrase refers to


def _clues_for(o: SceneObject) -> list[Clue]:
    clues = [Clue("shape", "specific", (o.shape,), o.shape),
             Clue("color", "specific", (o.color,), o.color),
             Clue("size", "specific", (o.size,), o.size)]
    if o.shape in CORNERED:
        clues.append(Clue("shape", "group", CORNERED, "cornered"))
    group = next(g for g, cs in COLOR_GROUP.items() if o.color in cs)
    clues.append(Clue("color", "group", COLOR_GROUP[group], group))
    return clues


def reasoning_clue_sets(scene: Scene, t: int) -> list[tuple[Clue, ...]]:
    """Clue combinations (one clue per attribute) that identify object ``t`` uniquely."""
    o = scene.objects[t]
    clues = _clues_for(o)
    out = []
    for r in (1, 2, 3):
        for combo in itertools.combinations(clues, r):
            if len({c.attr for c in combo}) != r:
                continue
            if combo == tuple(c for c in combo if c.attr == "size"):
                continue  # size alone is not a reasoning prompt
            cons = {c.attr: c.allowed for c in combo}
            if _count(scene, cons) == 1:
                out.append(combo)
    return out


def _order(clues) -> list[Clue]:
    rank = {"size": 0, "shape": 1, "color": 2}
    return sorted(clues, key=lambda c: rank[c.attr])


def short_reasoning_caption(clues) -> str:
    adjs, tail = [], ""
    for c in _order(clues):
        if c.attr == "size":
            adjs.append(SIZE_ADJ[c.key])
        elif c.attr == "shape":
            adjs.append(SHAPE_ADJ[c.key] if c.kind == "specific" else "cornered")
        elif c.kind == "group":
            adjs.append(f"{c.key}-colored")
        else:
            tail = f" with {COLOR_LIKE[c.key]}"
    return "the " + " ".join(adjs + ["thing"]) + tail


def long_reasoning_question(clues) -> str:
    parts = []
    for c in _order(clues):
        if c.attr == "size":
            parts.append(f"is {SIZE_ADJ[c.key]}")
        elif c.attr == "shape":
            parts.append(f"looks like {SHAPE_LIKE[c.key]}" if c.kind == "specific" else "has corners")
        elif c.kind == "group":
            parts.append(f"has a {c.key} color")
        else:
            parts.append(f"has {COLOR_LIKE[c.key]}")
    return "Which thing in the picture " + " and ".join(parts) + " ?"


def reasoning_explanation(o: SceneObject, clues) -> str:
    facts = []
    for c in _order(clues):
        if c.attr == "size":
            facts.append(f"it is {o.size}")
        elif c.attr == "shape":
            facts.append(SHAPE_FACT[o.shape] if c.kind == "specific" else f"a {o.shape} has corners")
        elif c.kind == "group":
            facts.append(f"{o.color} is a {c.key} color")
        else:
            facts.append(COLOR_FACT[o.color])
    return f"it is the {o.color} {o.shape} because " + " and ".join(facts)


# -- VQA -------------------------------------------------------------------------
def vqa_pairs(scene: Scene) -> list[tuple[str, str]]:
    n = len(scene.objects)
    count_answer = "There is one thing ." if n == 1 else f"There are {NUMBER_WORDS[n]} things ."
    pairs = [("How many things are in the picture ?", count_answer)]
    for o in scene.objects:
        if _count(scene, {"shape": (o.shape,)}) == 1:
            pairs.append((f"What color is the {o.shape} ?", f"The {o.shape} is {o.color} ."))
        if _count(scene, {"color": (o.color,)}) == 1:
            pairs.append((f"What shape is the {o.color} thing ?", f"It is a {o.shape} ."))
    return pairs + KNOWLEDGE_QA


# -- samples ---------------------------------------------------------------------
def _normalize_mix(mix: dict[str, float]) -> dict[str, float]:
    unknown = set(mix) - set(DATA_MIX_KEYS)
    if unknown:
        raise ValueError(f"unknown data types in mix: {sorted(unknown)}")
    total = sum(mix.values())
    if total <= 0 or any(v < 0 for v in mix.values()):
        raise ValueError("mix weights must be non-negative with a positive sum")
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"mix weights must sum to 1, got {total}")
    return {k: float(mix.get(k, 0.0)) for k in DATA_MIX_KEYS}


def make_raw(scene: Scene, kind: str, rng: Rng, tries: int = 8) -> dict | None:
    """One raw annotation of ``kind`` (od, rec, rd, vqa), or None when no unambiguous
    referent exists after ``tries`` target draws."""
    objs = scene.objects
    if kind == "od":
        category = rng.choice(scene.categories())
        boxes = [o.box.tolist() for o in objs if o.shape == category]
        return {"data_type": "od", "category": category, "boxes": boxes}
    if kind == "vqa":
        q, a = rng.choice(vqa_pairs(scene))
        return {"data_type": "vqa", "question": q, "answer": a, "boxes": []}
    for _ in range(tries):
        t = rng.integers(0, len(objs))
        if kind == "rec":
            caps = rec_captions(scene, t)
            if caps:
                return {"data_type": "rec", "caption": rng.choice(caps), "target": t, "boxes": [objs[t].box.tolist()]}
        elif kind == "rd":
            sets = reasoning_clue_sets(scene, t)
            if sets:
                clues = rng.choice(sets)
                box = [objs[t].box.tolist()]
                if rng.random() < 0.5:
                    return {"data_type": "rd_short", "caption": short_reasoning_caption(clues), "target": t, "boxes": box}
                return {"data_type": "rd_long", "question": long_reasoning_question(clues),
                        "reason": reasoning_explanation(objs[t], clues), "target": t, "boxes": box}
        else:
            raise ValueError(f"unknown sample kind {kind!r}")
    return None


def make_samples(scene: Scene, mix: dict[str, float], rng: Rng, n: int = 1) -> list[dict]:
    """``n`` raw annotations with data types drawn from ``mix`` (keys od, rec, rd, vqa)."""
    mix = _normalize_mix(mix)
    kinds, weights = list(mix), list(mix.values())
    out = []
    for _ in range(n):
        kind = rng.weighted_choice(kinds, weights)
        raw = make_raw(scene, kind, rng)
        if raw is None:
            log.warning("no unambiguous %s referent in scene; sample skipped", kind)
            continue
        out.append(raw)
    return out


def lexicon_words() -> set[str]:
    phrases: list[str] = [*SHAPES, *COLORS, *SIZES, *RELATIONS, *NUMBER_WORDS.values(), "the", "thing", "things"]
    phrases += list(COLOR_FACT.values()) + list(COLOR_LIKE.values()) + list(SHAPE_ADJ.values())
    phrases += list(SHAPE_LIKE.values()) + list(SHAPE_FACT.values()) + list(SIZE_ADJ.values())
    phrases += [f"{g}-colored" for g in COLOR_GROUP] + [f"has a {g} color" for g in COLOR_GROUP]
    phrases += [f"{c} is a {g} color" for g, cs in COLOR_GROUP.items() for c in cs]
    phrases += [f"a {s} has corners" for s in CORNERED] + ["cornered has corners", "looks like", "is", "with"]
    phrases += ["Which thing in the picture and ?", "it is the because", "it is"]
    phrases += ["How many things are in the picture ?", "There is one thing .", "There are things ."]
    phrases += ["What color is the ?", "The is .", "What shape is the thing ?", "It is a ."]
    for q, a in KNOWLEDGE_QA:
        phrases += [q, a]
    return {w for p in phrases for w in p.split()}


def world_vocab() -> tp.Vocab:
    return tp.build_vocab(lexicon_words())


# -- datasets --------------------------------------------------------------------
def scene_samples(split: str, index: int, seed: int, mix: dict[str, float], per_scene: int,
                  category_list=SHAPES) -> tuple[Scene, list[tp.Sample]]:
    """Scene ``index`` of ``split`` and its formatted samples; a pure function of the args."""
    rng = Rng(seed, split, index)
    scene = generate_scene(rng.derive("scene"))
    raws = make_samples(scene, mix, rng.derive("samples"), per_scene)
    sid = f"{split}-{index:06d}"
    image = f"images/{sid}.ppm"
    samples = []
    for j, raw in enumerate(raws):
        conv = tp.format_sample(raw, raw["data_type"], rng.derive("format", j))
        samples.append(tp.Sample.from_conversation(f"{sid}-{j}", image, conv, raw["boxes"], category_list))
    return scene, samples


def generate_split(out_dir, split: str, seed: int, mix: dict[str, float], *, n_samples: int | None = None,
                   n_scenes: int | None = None, per_scene: int = 1) -> dict:
    """Write ``{split}.jsonl`` plus PPM images under ``out_dir``.

    Either stop after ``n_samples`` samples (one scene at a time) or after ``n_scenes``
    scenes. Returns counts per data type.
    """
    from pathlib import Path

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    counts = {t: 0 for t in tp.DATA_TYPES}
    lines: list[str] = []
    scenes = 0
    index = 0
    while True:
        if n_samples is not None and len(lines) >= n_samples:
            break
        if n_scenes is not None and scenes >= n_scenes:
            break
        scene, samples = scene_samples(split, index, seed, mix, per_scene)
        index += 1
        if n_samples is not None:
            samples = samples[:n_samples - len(lines)]
        if not samples:
            continue
        write_ppm(out / samples[0].image, render(scene))
        scenes += 1
        for s in samples:
            counts[s.data_type] += 1
            lines.append(s.to_json())
    (out / f"{split}.jsonl").write_text("".join(line + "\n" for line in lines))
    return {"samples": len(lines), "scenes": scenes, "counts": counts}


def load_split(path) -> list[tp.Sample]:
    with open(path) as f:
        return [tp.Sample.from_json(line) for line in f if line.strip()]
