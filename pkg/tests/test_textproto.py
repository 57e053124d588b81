import numpy as np
import pytest

from dettoken import synthworld as sw
from dettoken import textproto as tp
from dettoken.diffcore import Rng
from golden import GOLDEN, RAW

VOCAB = sw.world_vocab()


@pytest.mark.parametrize("data_type", tp.DATA_TYPES)
def test_golden_templates(data_type):
    conv = tp.format_sample(RAW[data_type], data_type, rng=None)
    assert (conv.user_text(), conv.answer_text()) == GOLDEN[data_type]


def test_golden_strings_carry_verbatim_fragments():
    assert "Please detect the" in GOLDEN["od"][0]
    assert "Please output object location." in GOLDEN["rec"][0]
    assert "the detection result is" in GOLDEN["rd_long"][1]


def test_rec_paraphrase_is_drawn_from_the_pool():
    seen = set()
    for s in range(40):
        conv = tp.format_sample({"caption": "the red circle"}, "rec", Rng(s))
        seen.add(conv.user_text())
        assert conv.user_text().endswith("Please output object location.")
    assert len(seen) == len(tp.REC_QUESTIONS)


def test_od_category_drawn_from_ground_truth():
    picks = {tp.format_sample({"categories": ["square", "circle"]}, "od", Rng(s)).slot for s in range(20)}
    assert picks == {"square", "circle"}


def test_formatting_is_deterministic():
    a = tp.format_sample({"caption": "the red circle"}, "rec", Rng(3, "x"))
    b = tp.format_sample({"caption": "the red circle"}, "rec", Rng(3, "x"))
    assert a == b


def test_tokenize_examples():
    ids = tp.tokenize("Sure, <DET> .", VOCAB)
    assert len(ids) == 3 and ids[1] == VOCAB.det_id
    assert tp.detokenize(ids, VOCAB) == "Sure, <DET> ."
    assert tp.tokenize("", VOCAB) == []
    assert VOCAB.pad_id == 0


def test_oov_names_the_word():
    with pytest.raises(tp.VocabError, match="zebra"):
        tp.tokenize("the zebra", VOCAB)


def test_errors():
    with pytest.raises(tp.TemplateError):
        tp.format_sample({}, "rec")
    with pytest.raises(tp.TemplateError):
        tp.format_sample({"caption": "x"}, "caption")
    with pytest.raises(tp.TemplateError):
        tp.extract_caption(tp.format_sample(RAW["vqa"], "vqa"))
    with pytest.raises(tp.TemplateError):
        tp.supervision_mask(["<bos>", "User:", "hi", "<eos>"])


def test_extract_caption_returns_stored_slot():
    assert tp.extract_caption(tp.format_sample(RAW["rec"], "rec")) == "the red circle"
    assert tp.extract_caption(tp.format_sample(RAW["od"], "od")) == "circle"
    assert tp.extract_caption(tp.format_sample(RAW["rd_long"], "rd_long")) == RAW["rd_long"]["question"]


def test_det_token_never_in_prompts():
    for t in tp.DATA_TYPES:
        conv = tp.format_sample(RAW[t], t)
        assert tp.DET not in conv.user_text().split()
        assert (tp.DET in conv.answer_text().split()) == conv.has_det


def test_rec_mask():
    conv = tp.format_sample(RAW["rec"], "rec")
    words = conv.words()
    mask = tp.supervision_mask(words)
    assert [w for w, m in zip(words, mask) if m] == ["It", "is", "<DET>", ".", "<eos>"]
    only = tp.supervision_mask(words, det_only=True)
    assert [w for w, m in zip(words, only) if m] == ["<DET>"]


def _corpus(n=1000):
    mix = {"od": 0.3, "rec": 0.4, "rd": 0.2, "vqa": 0.1}
    out = []
    i = 0
    while len(out) < n:
        _, samples = sw.scene_samples("tp", i, 11, mix, 2)
        out.extend(samples)
        i += 1
    return out[:n]


CORPUS = _corpus()


def test_corpus_round_trips():
    for s in CORPUS:
        conv = s.to_conversation()
        text = " ".join(conv.words())
        assert tp.detokenize(tp.tokenize(text, VOCAB), VOCAB) == text
        assert tp.Sample.from_json(s.to_json()) == s


def _recount(words):
    # independent: walk the string form, counting words after the assistant marker
    text = " ".join(words)
    head, _, tail = text.partition(" Assistant: ")
    return len(tail.split())


def test_mask_sum_matches_recount():
    for s in CORPUS:
        words = s.to_conversation().words()
        assert tp.supervision_mask(words).sum() == _recount(words)


def test_det_positions_hold_det_ids():
    for s in CORPUS:
        conv = s.to_conversation()
        ids = np.array(tp.tokenize(" ".join(conv.words()), VOCAB))
        pos = conv.det_positions
        assert np.all(ids[pos] == VOCAB.det_id)
        assert np.sum(ids == VOCAB.det_id) == len(pos)
        assert (len(pos) >= 1) == conv.has_det
        assert bool(conv.detector_text) == conv.has_det


def test_parse_prompt_recovers_slot():
    for s in CORPUS:
        conv = s.to_conversation()
        kind, slot = tp.parse_prompt(conv.user_text())
        if s.data_type == "vqa":
            assert kind == "vqa"
        else:
            assert slot == s.detector_text
            assert kind == {"rd_short": "rec"}.get(s.data_type, s.data_type)


def test_od_training_text_lists_all_categories():
    s = next(s for s in CORPUS if s.data_type == "od")
    assert tp.train_detector_text(s) == "circle . square . triangle"
