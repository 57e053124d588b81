"""The ten release criteria, each at its stated tolerance. Every test leaves one PASS/FAIL
line (see ``verdicts.py``), repeated in the session summary."""
import time

import numpy as np
import pytest

from dettoken import geometry as geo
from dettoken import synthworld as sw
from dettoken import textproto as tp
from dettoken.diffcore import Rng, Tensor
from dettoken.harness import cli, experiments, gradsuite
from dettoken.harness.config import RunConfig
from dettoken.harness.system import System, load_encoded
from dettoken.harness.train import train
from dettoken.lossmatch import hungarian_match
from golden import GOLDEN, RAW
from oracles import brute_force_assignment, raster_iou_giou
from verdicts import verdict


# -- shared long runs ------------------------------------------------------------
@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    t0 = time.perf_counter()
    summary = experiments.overfit(tmp_path_factory.mktemp("overfit"))
    return summary, time.perf_counter() - t0


@pytest.fixture(scope="session")
def generalization_runs(tmp_path_factory):
    t0 = time.perf_counter()
    runs = experiments.generalization(tmp_path_factory.mktemp("generalization"))
    return runs, time.perf_counter() - t0


# -- 1 ---------------------------------------------------------------------------
def test_c01_gradient_integrity():
    t0 = time.perf_counter()
    results = gradsuite.run("all")
    dt = time.perf_counter() - t0
    names = {r.name.split("[")[0] for r in results}
    composites = {"detector/mqs_forward", "detector/det_decode_k2", "loss/detection_loss"}
    failed = [r.name for r in results if not r.ok]
    worst = max(r.rel_err for r in results)
    ok = not failed and composites <= names and dt < 120
    verdict(1, "gradient integrity", ok,
            f"{len(results) - len(failed)}/{len(results)} checks, max rel err {worst:.1e} <= 1e-4, {dt:.0f}s < 120s"
            + (f", failed {failed}" if failed else ""))


# -- 2 ---------------------------------------------------------------------------
def test_c02_geometry_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    order_ok = True
    for _ in range(1000):
        # corners on the 1e-3 raster lines, so the cell-count oracle is exact
        a = np.sort(rng.choice(1001, size=(2, 2), replace=False), axis=1) / 1000
        b = np.sort(rng.choice(1001, size=(2, 2), replace=False), axis=1) / 1000
        ca, cb = (a[0, 0], a[1, 0], a[0, 1], a[1, 1]), (b[0, 0], b[1, 0], b[0, 1], b[1, 1])
        box_a = geo.Box(*geo.box_convert(ca, "center"))
        box_b = geo.Box(*geo.box_convert(cb, "center"))
        ref_iou, ref_giou = raster_iou_giou(ca, cb)
        got_iou, got_giou = geo.iou(box_a, box_b), geo.giou(box_a, box_b)
        worst = max(worst, abs(got_iou - ref_iou), abs(got_giou - ref_giou))
        order_ok &= got_giou <= got_iou + 1e-12
    same = Tensor(np.array([[0.4, 0.5, 0.2, 0.3]]))
    _, loss = geo.giou_loss(same, same.data)
    zero = float(loss.data.sum()) == 0.0
    dt = time.perf_counter() - t0
    verdict(2, "geometry oracle", worst <= 1e-3 and order_ok and zero and dt < 60,
            f"max |err| {worst:.1e} <= 1e-3 on 1000 pairs, giou<=iou {order_ok}, "
            f"giou_loss(identical)==0 {zero}, {dt:.0f}s < 60s")


# -- 3 ---------------------------------------------------------------------------
def test_c03_hungarian_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(200):
        m = int(rng.integers(1, 7))
        k = int(rng.integers(m, 9))
        cost = rng.normal(size=(m, k))
        got, _ = hungarian_match(cost)
        want, _ = brute_force_assignment(cost)
        bad += abs(got - want) > 1e-9
    dt = time.perf_counter() - t0
    verdict(3, "hungarian optimality", bad == 0 and dt < 60,
            f"{200 - bad}/200 matrices up to 6x8 equal brute force, {dt:.0f}s < 60s")


# -- 4 ---------------------------------------------------------------------------
def test_c04_template_bit_exactness():
    got = {t: (c.user_text(), c.answer_text()) for t in tp.DATA_TYPES
           for c in [tp.format_sample(RAW[t], t, rng=None)]}
    fragments = ["Please detect the", "Please output object location.", "the detection result is"]
    text = " ".join(a + " " + b for a, b in GOLDEN.values())
    ok = got == GOLDEN and all(f in text for f in fragments)
    verdict(4, "template bit-exactness", ok,
            f"{sum(got[t] == GOLDEN[t] for t in GOLDEN)}/5 families equal golden strings")


# -- 5 ---------------------------------------------------------------------------
def test_c05_loss_composition_identity(tmp_path):
    data = tmp_path / "data"
    cli.gen_data(data, 7, {"train": 24}, cli.parse_mix(cli.DEFAULT_MIX))
    base = {"seed": 7, "train_data": str(data / "train.jsonl"), "total_steps": 20}
    a = train(RunConfig.from_dict({**base, "weights": {"det": 0.0}}))
    b = train(RunConfig.from_dict({**base, "lm_only": True}))
    la = np.array([m.L for m in a.history])
    lb = np.array([m.L for m in b.history])
    state_a = dict(a.system.named_parameters())
    same_weights = all(np.array_equal(p.data, state_a[n].data) for n, p in b.system.named_parameters())
    ok = len(la) == 20 and np.array_equal(la, lb) and same_weights
    verdict(5, "loss composition identity", ok,
            f"20-step traces bit-equal {np.array_equal(la, lb)}, LM weights bit-equal {same_weights}")


# -- 6 ---------------------------------------------------------------------------
@pytest.mark.slow
def test_c06_hdet_liveness(overfit_run):
    summary, _ = overfit_run
    system = System.load(summary.ckpt)
    data = load_encoded(system.cfg.train_data, system.vocab, ("rec",))[:2]
    h = [system.mllm(e.image, e.ids, e.det_positions).h_det.data for e in data]
    enc0 = data[0]
    checks = []
    for own, other in ((h[0], h[1]), (h[1], h[0])):
        det_in = system.det.encode_pair(enc0.image, enc0.det_text_ids)
        sel_a = system.det.mqs_select(Tensor(own), det_in)
        sel_b = system.det.mqs_select(Tensor(other), det_in)
        pred_a = system.det.det_decode(sel_a, det_in)
        pred_b = system.det.det_decode(sel_b, det_in)
        checks.append(not np.array_equal(sel_a.queries.data, sel_b.queries.data))
        checks.append(pred_a.pred.tolist() != pred_b.pred.tolist())
    det_in = system.det.encode_pair(enc0.image, enc0.det_text_ids)
    sel = system.det.mqs_select(Tensor(h[0]), det_in)
    live = system.det.det_decode(sel, det_in)
    zeroed = system.det.det_decode(sel, det_in, zero_hdet_slot=True)
    slot = not (np.array_equal(live.boxes.data, zeroed.boxes.data) and np.array_equal(live.logits.data, zeroed.logits.data))
    verdict(6, "h_det liveness", all(checks) and slot,
            f"permuted h_det changes f_img' and box {all(checks)}, zeroed slot changes prediction {slot}")


# -- 7 ---------------------------------------------------------------------------
@pytest.mark.slow
def test_c07_overfit_localization(overfit_run):
    summary, seconds = overfit_run
    acc, miou = summary.report.accuracy, summary.report.mean_iou
    ok = acc >= 0.9 and miou >= 0.75 and seconds < 15 * 60
    verdict(7, "overfit localization", ok,
            f"acc@0.5 {acc:.3f} >= 0.9, mean IoU {miou:.3f} >= 0.75, {seconds:.0f}s < 900s (2000 steps)")


# -- 8 ---------------------------------------------------------------------------
@pytest.mark.slow
def test_c08_generalization(generalization_runs):
    runs, seconds = generalization_runs
    live, const = runs["live"], runs["constant"]
    acc = live.report.accuracy
    gap = 100 * (live.subset(experiments.REASONING).accuracy - const.subset(experiments.REASONING).accuracy)
    ok = acc >= 0.6 and gap >= 10 and seconds < 2 * 3600
    verdict(8, "generalization", ok,
            f"held-out acc@0.5 {acc:.3f} >= 0.6, RD gap vs constant h_det {gap:+.1f} >= 10 points, "
            f"{seconds / 60:.0f} min < 120 min")


# -- 9 ---------------------------------------------------------------------------
def test_c09_metric_boundary():
    from dettoken.harness.evaluate import score_predictions
    gt = [0.5, 0.5, 0.5, 0.5]
    at, below = geo.Box(0.5, 0.5, 0.25, 0.5), geo.Box(0.5, 0.5, 0.24995, 0.5)
    rep = score_predictions([("hit", "rec", at, [gt]), ("miss", "rec", below, [gt])])
    ious = [s.iou for s in rep.samples]
    ok = ious[0] == 0.5 and abs(ious[1] - 0.4999) < 1e-12 and [s.hit for s in rep.samples] == [True, False]
    verdict(9, "metric boundary", ok, f"iou {ious[0]:.4f} -> hit, iou {ious[1]:.4f} -> miss")


# -- 10 --------------------------------------------------------------------------
def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c10_determinism(tmp_path):
    same = {}
    for run in ("a", "b"):
        d = tmp_path / run
        assert cli.main(["gen-data", "--seed", "10", "--out", str(d / "data"), "--counts", "train=16,val=2"]) == 0
        cfg = RunConfig.from_dict({"seed": 10, "train_data": str(d / "data" / "train.jsonl"), "total_steps": 20})
        cfg.save(d / "cfg.json")
        assert cli.main(["train", "--config", str(d / "cfg.json"), "--out", str(d / "ckpt"), "--steps", "6"]) == 0
        image = next((d / "data" / "images").glob("*.ppm"))
        assert cli.main(["infer", "--ckpt", str(d / "ckpt"), "--image", str(image),
                         "--prompt", "What is the red circle in this image? Please output object location.",
                         "--out", str(d / "infer")]) == 0
    for part in ("data", "ckpt", "infer"):
        a, b = _tree(tmp_path / "a" / part), _tree(tmp_path / "b" / part)
        # the saved config records its own data path, which differs between the two roots
        a.pop("config.json", None), b.pop("config.json", None)
        same[part] = bool(a) and a == b
    verdict(10, "determinism", all(same.values()),
            ", ".join(f"{k} byte-identical {v}" for k, v in same.items()))
