import itertools
import json

import numpy as np
import pytest

from dettoken import synthworld as sw
from dettoken import textproto as tp
from dettoken.diffcore import Rng
from dettoken.geometry import iou, mask_to_box

MIX = {"od": 0.3, "rec": 0.4, "rd": 0.2, "vqa": 0.1}


def test_scene_is_deterministic():
    a = sw.generate_scene(Rng(5, "s"))
    b = sw.generate_scene(Rng(5, "s"))
    assert a == b
    assert sw.generate_scene(Rng(6, "s")) != a


def test_ten_thousand_scenes_respect_invariants():
    counts = np.zeros(5, dtype=int)
    for i in range(10_000):
        scene = sw.generate_scene(Rng(1, "sweep", i))
        objs = scene.objects
        counts[len(objs)] += 1
        for a, b in itertools.combinations(objs, 2):
            assert iou(a.box, b.box) <= 0.1
        for o in objs:
            x0, y0, x1, y1 = o.box.corners()
            assert 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1
    assert counts[0] == 0 and counts[1:].min() > 0


def test_crowded_parameters_fail(monkeypatch):
    monkeypatch.setattr(sw, "SIDE_RANGE", {"small": (70, 70), "large": (70, 70)})
    with pytest.raises(sw.PlacementError, match="100 retries"):
        sw.generate_scene(Rng(0))


def test_render_is_pure_and_background_outside_boxes():
    scene = sw.generate_scene(Rng(2, "r"))
    img = sw.render(scene)
    assert np.array_equal(img, sw.render(scene))
    outside = np.ones(img.shape[:2], bool)
    for o in scene.objects:
        outside[o.y0:o.y0 + o.side, o.x0:o.x0 + o.side] = False
    assert np.all(img[outside] == sw.BACKGROUND)


def test_rendered_pixels_bound_the_box():
    checked = 0
    for i in range(300):
        scene = sw.generate_scene(Rng(3, "px", i))
        if len(scene.objects) != 1:
            continue
        o = scene.objects[0]
        img = sw.render(scene)
        got = mask_to_box(np.all(img == sw.RGB[o.color], axis=-1))
        assert np.max(np.abs(np.subtract(got.corners(), o.box.corners()))) <= 1 / 64 + 1e-12
        checked += 1
    assert checked > 20


def test_ppm_round_trip(tmp_path):
    img = sw.render(sw.generate_scene(Rng(4)))
    sw.write_ppm(tmp_path / "a.ppm", img)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n64 64\n255\n")
    assert np.array_equal(sw.read_ppm(tmp_path / "a.ppm"), img)


# -- independent referent resolvers ---------------------------------------------
def _rel(rel, a, b):
    # centers in pixels, dominant axis, 0.1 of the image as the minimum offset
    ax, ay = a.x0 + a.side / 2, a.y0 + a.side / 2
    bx, by = b.x0 + b.side / 2, b.y0 + b.side / 2
    dx, dy = bx - ax, by - ay
    m = 0.1 * a.image_size
    return {"left of": dx > m and dx > abs(dy), "right of": -dx > m and -dx > abs(dy),
            "above": dy > m and dy > abs(dx), "below": -dy > m and -dy > abs(dx)}[rel]


def _phrase_ok(o, words):
    for w in words:
        if w in sw.SIZES and o.size != w:
            return False
        if w in sw.COLORS and o.color != w:
            return False
        if w in sw.SHAPES and o.shape != w:
            return False
    return True


def resolve_rec(scene, caption):
    """All objects a REC caption could refer to."""
    words = caption.split()
    assert words[0] == "the"
    for rel in sw.RELATIONS:
        if f" {rel} the " in caption:
            head, anchor = caption[4:].split(f" {rel} the ")
            anchors = [o for o in scene.objects if _phrase_ok(o, anchor.split())]
            if len(anchors) != 1:
                return []
            return [o for o in scene.objects if o is not anchors[0] and _phrase_ok(o, head.split())
                    and _rel(rel, o, anchors[0])]
    return [o for o in scene.objects if _phrase_ok(o, words[1:])]


ADJ = {"tiny": ("size", {"small"}), "big": ("size", {"large"}), "round": ("shape", {"circle"}),
       "boxy": ("shape", {"square"}), "pointy": ("shape", {"triangle"}),
       "cornered": ("shape", {"square", "triangle"}), "warm-colored": ("color", {"red", "yellow"}),
       "cool-colored": ("color", {"green", "blue"})}
LIKE = {"tomato": "red", "grass": "green", "sky": "blue", "banana": "yellow"}


def resolve_short_rd(scene, caption):
    head, _, tail = caption.partition(" with ")
    cons = [ADJ[w] for w in head.split() if w in ADJ]
    if tail:
        cons.append(("color", {LIKE[tail.split()[-1]]}))
    return [o for o in scene.objects if all(getattr(o, a) in ok for a, ok in cons)]


def test_rec_captions_resolve_to_exactly_the_target():
    n = 0
    i = 0
    while n < 1000:
        scene = sw.generate_scene(Rng(8, "rec", i))
        i += 1
        raw = sw.make_raw(scene, "rec", Rng(8, "raw", i))
        if raw is None:
            continue
        hits = resolve_rec(scene, raw["caption"])
        assert hits == [scene.objects[raw["target"]]], raw["caption"]
        n += 1


def test_single_object_scene_rec_resolves_to_its_box():
    for i in range(200):
        scene = sw.generate_scene(Rng(9, i))
        if len(scene.objects) == 1:
            raw = sw.make_raw(scene, "rec", Rng(9, "r", i))
            assert raw["boxes"] == [scene.objects[0].box.tolist()]
            return
    pytest.fail("no single-object scene found")


def test_short_reasoning_captions_are_unambiguous():
    n = 0
    for i in range(3000):
        scene = sw.generate_scene(Rng(10, i))
        raw = sw.make_raw(scene, "rd", Rng(10, "r", i))
        if raw is None or raw["data_type"] != "rd_short":
            continue
        assert resolve_short_rd(scene, raw["caption"]) == [scene.objects[raw["target"]]], raw["caption"]
        n += 1
    assert n > 300


def test_od_category_in_scene():
    for i in range(200):
        scene = sw.generate_scene(Rng(11, i))
        raw = sw.make_raw(scene, "od", Rng(11, "r", i))
        assert raw["category"] in scene.categories()
        assert raw["boxes"] == [o.box.tolist() for o in scene.objects if o.shape == raw["category"]]


def test_long_reasoning_has_reason_and_vqa_has_no_boxes():
    kinds = set()
    for i in range(200):
        scene = sw.generate_scene(Rng(12, i))
        for raw in sw.make_samples(scene, MIX, Rng(12, "m", i), 3):
            kinds.add(raw["data_type"])
            conv = tp.format_sample(raw, raw["data_type"], Rng(0))
            if raw["data_type"] == "rd_long":
                assert raw["reason"].startswith("it is the ")
            if raw["data_type"] == "vqa":
                assert raw["boxes"] == [] and not conv.has_det
    assert kinds == set(tp.DATA_TYPES)


def test_mix_must_sum_to_one():
    scene = sw.generate_scene(Rng(0))
    with pytest.raises(ValueError):
        sw.make_samples(scene, {"od": 0.5, "rec": 0.4}, Rng(0))
    with pytest.raises(ValueError):
        sw.make_samples(scene, {"caption": 1.0}, Rng(0))


def test_every_generated_word_is_in_vocab():
    vocab = sw.world_vocab()
    for i in range(300):
        _, samples = sw.scene_samples("v", i, 0, MIX, 3)
        for s in samples:
            tp.tokenize(" ".join(s.to_conversation().words()), vocab)
            tp.tokenize(tp.train_detector_text(s), vocab)


def test_dataset_generation_is_byte_identical(tmp_path):
    a = sw.generate_split(tmp_path / "a", "train", 3, MIX, n_samples=30)
    b = sw.generate_split(tmp_path / "b", "train", 3, MIX, n_samples=30)
    assert a == b and a["samples"] == 30
    for p in sorted((tmp_path / "a").rglob("*")):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_splits_are_disjoint_by_scene(tmp_path):
    sw.generate_split(tmp_path, "train", 3, MIX, n_samples=20)
    sw.generate_split(tmp_path, "val", 3, MIX, n_scenes=10)
    train = {s.image for s in sw.load_split(tmp_path / "train.jsonl")}
    val = {s.image for s in sw.load_split(tmp_path / "val.jsonl")}
    assert train and val and not train & val
    line = json.loads((tmp_path / "val.jsonl").read_text().splitlines()[0])
    assert set(line) == {"id", "data_type", "image", "conversation", "detector_text", "boxes", "category_list"}
