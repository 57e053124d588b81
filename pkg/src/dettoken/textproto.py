"""Vocabulary, whitespace tokenizer, conversation templates and LM supervision masks.

Token streams look like::

    <bos> User: <image> What is the red circle in this image? Please output object location. Assistant: It is <DET> . <eos>

Every template is written with explicit spaces around the tokens that must stay
separate (``<DET>``, trailing punctuation), so tokenization is ``str.split``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS, IMAGE, DET = "<pad>", "<bos>", "<eos>", "<image>", "<DET>"
USER, ASSISTANT = "User:", "Assistant:"
SPECIALS = (PAD, BOS, EOS, IMAGE, DET, USER, ASSISTANT)

DATA_TYPES = ("od", "rec", "rd_short", "rd_long", "vqa")
DETECTION_TYPES = ("od", "rec", "rd_short", "rd_long")

OD_QUESTION = "Please detect the {category} in this image."
OD_ANSWER = f"Sure, {DET} ."
REC_QUESTIONS = (
    "What is {caption} in this image? Please output object location.",
    "Where is {caption} in this image? Please output object location.",
    "Can you find {caption} in this image? Please output object location.",
    "Please point out {caption} in this image. Please output object location.",
)
REC_ANSWER = f"It is {DET} ."
RD_LONG_QUESTION = "{question} Please output object location and explain the reason."
RD_LONG_ANSWER = "Sure, the detection result is " + DET + " , {reason} ."
OD_TEXT_SEPARATOR = " . "


class VocabError(KeyError):
    pass


class TemplateError(ValueError):
    pass


class Vocab:
    """Bijective word <-> id map. ``<pad>`` is id 0."""

    def __init__(self, words: Iterable[str]):
        seen = dict.fromkeys(SPECIALS)
        for w in sorted(set(words) - set(SPECIALS)):
            seen[w] = None
        self.itos: list[str] = list(seen)
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word in self.stoi

    def __getitem__(self, word: str) -> int:
        try:
            return self.stoi[word]
        except KeyError:
            raise VocabError(f"out-of-vocabulary word {word!r}") from None

    @property
    def pad_id(self) -> int:
        return self.stoi[PAD]

    @property
    def det_id(self) -> int:
        return self.stoi[DET]

    @property
    def eos_id(self) -> int:
        return self.stoi[EOS]

    @property
    def image_id(self) -> int:
        return self.stoi[IMAGE]

    @property
    def bos_id(self) -> int:
        return self.stoi[BOS]

    @property
    def assistant_id(self) -> int:
        return self.stoi[ASSISTANT]


def template_words() -> set[str]:
    parts = [OD_QUESTION, OD_ANSWER, REC_ANSWER, RD_LONG_QUESTION, RD_LONG_ANSWER, *REC_QUESTIONS]
    words = set()
    for p in parts:
        for w in p.split():
            if not w.startswith("{"):
                words.add(w)
    return words | {"."}


def build_vocab(extra_words: Iterable[str] = ()) -> Vocab:
    return Vocab(template_words() | set(extra_words))


def tokenize(text: str, vocab: Vocab) -> list[int]:
    return [vocab[w] for w in text.split()]


def detokenize(ids: Sequence[int], vocab: Vocab) -> str:
    return " ".join(vocab.itos[int(i)] for i in ids)


@dataclass
class Conversation:
    turns: list[tuple[str, str]]
    data_type: str
    detector_text: str = ""
    # slot text inserted into the template (category, caption or question)
    slot: str = ""

    def words(self) -> list[str]:
        out = [BOS]
        for role, text in self.turns:
            out.append(USER if role == "user" else ASSISTANT)
            out.extend(text.split())
        out.append(EOS)
        return out

    @property
    def det_positions(self) -> list[int]:
        return [i for i, w in enumerate(self.words()) if w == DET]

    @property
    def has_det(self) -> bool:
        return self.data_type in DETECTION_TYPES

    def prompt_words(self) -> list[str]:
        """Everything up to and including the ``Assistant:`` marker."""
        words = self.words()
        return words[:words.index(ASSISTANT) + 1]

    def answer_text(self) -> str:
        return next(t for r, t in self.turns if r == "assistant")

    def user_text(self) -> str:
        return next(t for r, t in self.turns if r == "user")


def _need(raw: dict, key: str, data_type: str) -> str:
    val = raw.get(key)
    if not val:
        raise TemplateError(f"{data_type} sample is missing the {key!r} field")
    return str(val)


def format_sample(raw: dict, data_type: str, rng=None) -> Conversation:
    """Fill the conversation template for ``data_type`` from a raw annotation.

    OD picks ``category`` at random from ``categories`` when a list is given; REC and
    RD-short draw their question from the paraphrase pool. Both draws use ``rng``.
    """
    if data_type == "od":
        if raw.get("categories"):
            category = rng.choice(sorted(raw["categories"])) if rng is not None else sorted(raw["categories"])[0]
        else:
            category = _need(raw, "category", data_type)
        user = f"{IMAGE} " + OD_QUESTION.format(category=category)
        return Conversation([("user", user), ("assistant", OD_ANSWER)], "od", category, category)
    if data_type in ("rec", "rd_short"):
        caption = _need(raw, "caption", data_type)
        pool_idx = rng.integers(0, len(REC_QUESTIONS)) if rng is not None else 0
        user = f"{IMAGE} " + REC_QUESTIONS[pool_idx].format(caption=caption)
        return Conversation([("user", user), ("assistant", REC_ANSWER)], data_type, caption, caption)
    if data_type == "rd_long":
        question = _need(raw, "question", data_type)
        reason = _need(raw, "reason", data_type)
        user = f"{IMAGE} " + RD_LONG_QUESTION.format(question=question)
        answer = RD_LONG_ANSWER.format(reason=reason)
        return Conversation([("user", user), ("assistant", answer)], "rd_long", question, question)
    if data_type == "vqa":
        question = _need(raw, "question", data_type)
        answer = _need(raw, "answer", data_type)
        return Conversation([("user", f"{IMAGE} {question}"), ("assistant", answer)], "vqa", "", question)
    raise TemplateError(f"unknown data_type {data_type!r}")


def extract_caption(conv: Conversation) -> str:
    """Detector text for a conversation: the slot that was filled into the template."""
    if conv.data_type == "vqa":
        raise TemplateError("VQA conversations carry no object caption")
    return conv.slot


def parse_prompt(user_text: str) -> tuple[str, str]:
    """Recover (data_type, slot) from a user turn by matching the templates.

    Used at inference time when only the raw prompt is available. Anything that
    matches no detection template is treated as VQA.
    """
    text = " ".join(user_text.replace(IMAGE, " ").split())

    def match(template: str, key: str) -> str | None:
        head, tail = template.split("{" + key + "}")
        head, tail = head.strip(), tail.strip()
        if text.startswith(head) and text.endswith(tail) and len(text) > len(head) + len(tail):
            return text[len(head):len(text) - len(tail)].strip()
        return None

    slot = match(OD_QUESTION, "category")
    if slot:
        return "od", slot
    for q in REC_QUESTIONS:
        slot = match(q, "caption")
        if slot:
            return "rec", slot
    slot = match(RD_LONG_QUESTION, "question")
    if slot:
        return "rd_long", slot
    return "vqa", ""


def supervision_mask(words: Sequence[str], det_only: bool = False) -> np.ndarray:
    """1 on assistant-answer tokens (including ``<DET>`` and ``<eos>``), 0 elsewhere.

    With ``det_only`` only the ``<DET>`` positions are supervised.
    """
    words = list(words)
    if ASSISTANT not in words:
        raise TemplateError("conversation has no assistant turn")
    mask = np.zeros(len(words), dtype=np.float32)
    start = words.index(ASSISTANT) + 1
    for i in range(start, len(words)):
        if words[i] == USER:
            break
        if not det_only or words[i] == DET:
            mask[i] = 1.0
    return mask


@dataclass
class Sample:
    """One dataset line."""
    id: str
    data_type: str
    image: str
    conversation: list[dict]
    detector_text: str
    boxes: list[list[float]] = field(default_factory=list)
    category_list: list[str] = field(default_factory=list)

    @classmethod
    def from_conversation(cls, sid: str, image: str, conv: Conversation, boxes, category_list) -> "Sample":
        return cls(sid, conv.data_type, image, [{"role": r, "text": t} for r, t in conv.turns],
                   conv.detector_text, [list(map(float, b)) for b in boxes], list(category_list))

    def to_conversation(self) -> Conversation:
        turns = [(t["role"], t["text"]) for t in self.conversation]
        return Conversation(turns, self.data_type, self.detector_text, self.detector_text)

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(", ", ": "))

    @classmethod
    def from_json(cls, line: str) -> "Sample":
        return cls(**json.loads(line))


def od_detector_text(category_list: Sequence[str]) -> str:
    return OD_TEXT_SEPARATOR.join(category_list)


def train_detector_text(sample: Sample) -> str:
    """OD samples see every category name; other types keep their caption."""
    if sample.data_type == "od" and sample.category_list:
        return od_detector_text(sample.category_list)
    return sample.detector_text
