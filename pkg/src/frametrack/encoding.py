"""Turning turns and frame histories into model inputs.

Covers tokenization, letter trigrams, the index dictionaries, frame
encoding (most recent non-negated value per slot), the precomputed string
similarity matrix, recency decay vectors, and the active/new-frame one-hot
codes. After dictionaries are frozen every function here is pure.

Tokenizer rules (deterministic, dependency-free): lowercase, split on
whitespace, emit leading/trailing punctuation characters as their own
tokens, keep emoticons and number-like chunks intact. Internal punctuation
(hyphens, apostrophes, decimal points) stays inside the token.
"""

import hashlib
import json
import re
import string
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .corpus import frames_before_turn

UNK = 0

# Table-1 input columns, in table order; keys are the lesion identifiers
# accepted by the encoder and the model.
LESIONS = ("full_acts", "only_acts", "frames", "text", "h_c", "h_d", "f_n", "s_l", "f_c")
LESION_LABELS = {
    "full_acts": "Full Acts", "only_acts": "Only Acts", "frames": "Frames",
    "text": "Text", "h_c": "h_c", "h_d": "h_d", "f_n": "f_n", "s_l": "S_L", "f_c": "f_c",
}

_PUNCT = set(string.punctuation)
_EMOTICON = re.compile(r"^(?:[:;=8xX][-'o^*]?[()\[\]{}|/\\dpc3<>]+|<3+|</3)$")


class ConfigError(ValueError):
    """Invalid configuration value."""


def tokenize(text):
    """Lowercased tokens with detached boundary punctuation."""
    tokens = []
    for chunk in text.lower().split():
        if _EMOTICON.match(chunk):
            tokens.append(chunk)
            continue
        lead = []
        while chunk and chunk[0] in _PUNCT and not _EMOTICON.match(chunk):
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail = []
        while chunk and chunk[-1] in _PUNCT and not _EMOTICON.match(chunk):
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


def letter_trigrams(token):
    """Boundary-padded letter trigrams: 'hello' -> #he hel ell llo lo#."""
    if not token:
        raise ValueError("letter_trigrams requires a non-empty token")
    padded = f"#{token}#"
    return [padded[i:i + 3] for i in range(len(padded) - 2)]


@dataclass
class Dictionaries:
    """Trigram/slot/act index maps; index 0 is reserved for unknowns."""
    trigrams: dict = field(default_factory=dict)
    slots: dict = field(default_factory=dict)
    acts: dict = field(default_factory=dict)

    @property
    def n_trigrams(self):
        return len(self.trigrams) + 1

    @property
    def n_slots(self):
        return len(self.slots) + 1

    @property
    def n_acts(self):
        return len(self.acts) + 1

    def trigram_id(self, trigram):
        return self.trigrams.get(trigram, UNK)

    def slot_id(self, slot):
        return self.slots.get(slot, UNK)

    def act_id(self, act):
        return self.acts.get(act, UNK)

    def to_json(self):
        return {"version": 1, "trigrams": self.trigrams, "slots": self.slots, "acts": self.acts}

    @classmethod
    def from_json(cls, obj):
        if obj.get("version") != 1:
            raise ValueError(f"unsupported dictionary version {obj.get('version')!r}")
        d = cls(dict(obj["trigrams"]), dict(obj["slots"]), dict(obj["acts"]))
        for name, table in (("trigrams", d.trigrams), ("slots", d.slots), ("acts", d.acts)):
            ids = sorted(table.values())
            if ids != list(range(1, len(ids) + 1)):
                raise ValueError(f"dictionary {name}: ids must be dense starting at 1")
        return d

    def canonical_bytes(self):
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode("utf-8")

    def content_hash(self):
        return hashlib.sha256(self.canonical_bytes()).hexdigest()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def build_dictionaries(dialogues, trigram_cap=8192):
    """Index maps from a training corpus.

    Trigrams come from user utterances and every slot value (user args and
    wizard offers both feed frame contents); the trigram table keeps the
    `trigram_cap` most frequent entries, ties broken lexicographically.
    Slot and act inventories are sorted for stable ids. Unseen items map to
    index 0 at encoding time.
    """
    counts = {}
    slots = set()
    acts = set()

    def count_text(text):
        for token in tokenize(text):
            for tri in letter_trigrams(token):
                counts[tri] = counts.get(tri, 0) + 1

    for d in dialogues:
        for t in d.turns:
            if t.author == "user":
                count_text(t.utterance)
                for act in t.acts:
                    acts.add(act.name)
            for act in t.acts:
                for arg in act.args:
                    slots.add(arg.slot)
                    if arg.value:
                        count_text(arg.value)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:trigram_cap]
    return Dictionaries(
        trigrams={tri: i + 1 for i, (tri, _) in enumerate(ranked)},
        slots={s: i + 1 for i, s in enumerate(sorted(slots))},
        acts={a: i + 1 for i, a in enumerate(sorted(acts))},
    )


def encode_tokens(text, dicts):
    """Per-token trigram index tuples for a text string."""
    return tuple(tuple(dicts.trigram_id(tri) for tri in letter_trigrams(tok))
                 for tok in tokenize(text))


def encode_frame(frame, dicts):
    """(slot id, value token trigram ids) per slot, most recent non-negated
    value; slots whose whole history is negated are dropped."""
    out = []
    for slot, _history in frame.constraints:
        value = frame.latest_value(slot)
        if value is None:
            continue
        out.append((dicts.slot_id(slot), encode_tokens(value, dicts)))
    return tuple(out)


def similarity(a, b, norm="max"):
    """1 - normalized edit distance, case-insensitive, in [0, 1]."""
    a = a.lower()
    b = b.lower()
    if not a and not b:
        return 1.0
    dist = kernels.levenshtein(a, b)
    if norm == "max":
        denom = max(len(a), len(b))
    elif norm == "sum":
        denom = len(a) + len(b)
    else:
        raise ConfigError(f"unknown similarity norm {norm!r}")
    return 1.0 - dist / denom


def similarity_matrix(pairs, frames, norm="max"):
    """N x |F| matrix of value similarities.

    pairs is a list of (slot, value); entry (i, j) compares value i with
    frame j's most recent non-negated value for the same slot, 0.0 when the
    frame lacks the slot or the triple has no value.
    """
    S = np.zeros((len(pairs), len(frames)))
    for i, (slot, value) in enumerate(pairs):
        if not value:
            continue
        for j, frame in enumerate(frames):
            fv = frame.latest_value(slot)
            if fv:
                S[i, j] = similarity(value, fv, norm=norm)
    return S


def recency_vectors(dialogue, turn_index, gamma=0.9):
    """(h_c, h_d) per frame existing before the user turn at turn_index.

    The clock ticks once per user turn. h_d decays from the frame's
    creation tick (wizard frames tick at the next user turn, so a fresh
    offer scores 1.0); h_c decays from the frame's most recent tick as the
    active frame, 0.0 if it has never been active.
    """
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"recency discount must be in (0, 1), got {gamma}")
    frames = frames_before_turn(dialogue, turn_index)
    turn = dialogue.turns[turn_index]
    now = turn.user_index
    user_turns = [t for t in dialogue.user_turns if t.user_index <= now]

    last_active = {}
    for t in user_turns:
        last_active[t.active_frame_before] = t.user_index

    created_tick = {}
    for f in frames:
        if f.creator == "user":
            tick = next((t.user_index for t in user_turns if t.index == f.created_turn), 1)
        else:
            tick = next((t.user_index for t in user_turns if t.index > f.created_turn), now + 1)
        created_tick[f.id] = tick

    h_c = np.zeros(len(frames))
    h_d = np.zeros(len(frames))
    for j, f in enumerate(frames):
        tick = created_tick[f.id]
        if tick <= now:
            h_d[j] = gamma ** (now - tick)
        if f.id in last_active:
            h_c[j] = gamma ** (now - last_active[f.id])
    return h_c, h_d


def frame_onehots(frame_ids, active_id):
    """(f_c, f_n) over |F|+1 positions; the extra slot is the new-frame
    candidate, which is where f_n points."""
    ids = list(frame_ids)
    if active_id not in ids:
        raise ValueError(f"active frame {active_id} not among frames {ids}")
    n = len(ids)
    f_c = np.zeros(n + 1)
    f_n = np.zeros(n + 1)
    f_c[ids.index(active_id)] = 1.0
    f_n[n] = 1.0
    return f_c, f_n


@dataclass(frozen=True)
class EncodedTriple:
    act_pos: int
    act_id: int
    slot_id: int
    value_tokens: tuple
    act_name: str
    slot: str
    value: str


@dataclass(frozen=True)
class EncodedTurn:
    """Everything the model consumes for one user turn."""
    dialogue_id: str
    turn_index: int
    frame_ids: tuple
    triples: tuple
    act_ids: tuple
    act_names: tuple
    utt_tokens: tuple
    frames_enc: tuple
    S_L: np.ndarray
    h_c: np.ndarray
    h_d: np.ndarray
    f_c: np.ndarray
    f_n: np.ndarray
    active_pos: int
    lesions: frozenset = frozenset()

    @property
    def n_frames(self):
        return len(self.frame_ids)

    @property
    def n_triples(self):
        return len(self.triples)


def encode_turn(dialogue, turn, dicts, gamma=0.9, norm="max", lesions=()):
    """Encode one user turn against its frame history.

    `lesions` names inputs to remove (see LESIONS); vector inputs are
    zeroed here, act/text/frame encodings are emptied or flagged for the
    model to zero at embedding time.
    """
    lesions = frozenset(lesions)
    unknown = lesions - set(LESIONS)
    if unknown:
        raise ConfigError(f"unknown lesion name(s): {sorted(unknown)}")
    frames = frames_before_turn(dialogue, turn.index)
    frame_ids = tuple(f.id for f in frames)

    triples = []
    act_ids = []
    act_names = []
    for pos, act in enumerate(turn.acts):
        act_ids.append(dicts.act_id(act.name))
        act_names.append(act.name)
        for arg in act.args:
            triples.append(EncodedTriple(
                act_pos=pos,
                act_id=dicts.act_id(act.name),
                slot_id=dicts.slot_id(arg.slot),
                value_tokens=encode_tokens(arg.value, dicts) if arg.value else (),
                act_name=act.name,
                slot=arg.slot,
                value=arg.value,
            ))

    pairs = [(t.slot, t.value) for t in triples]
    S_L = np.zeros((len(pairs), len(frames))) if "s_l" in lesions else similarity_matrix(pairs, frames, norm=norm)
    h_c, h_d = recency_vectors(dialogue, turn.index, gamma=gamma)
    if "h_c" in lesions:
        h_c = np.zeros_like(h_c)
    if "h_d" in lesions:
        h_d = np.zeros_like(h_d)
    f_c, f_n = frame_onehots(frame_ids, turn.active_frame_before)
    if "f_c" in lesions:
        f_c = np.zeros_like(f_c)
    if "f_n" in lesions:
        f_n = np.zeros_like(f_n)

    utt_tokens = () if "text" in lesions else encode_tokens(turn.utterance, dicts)
    frames_enc = tuple(() if "frames" in lesions else encode_frame(f, dicts) for f in frames)

    return EncodedTurn(
        dialogue_id=dialogue.id,
        turn_index=turn.index,
        frame_ids=frame_ids,
        triples=tuple(triples),
        act_ids=tuple(act_ids),
        act_names=tuple(act_names),
        utt_tokens=utt_tokens,
        frames_enc=frames_enc,
        S_L=S_L,
        h_c=h_c,
        h_d=h_d,
        f_c=f_c,
        f_n=f_n,
        active_pos=frame_ids.index(turn.active_frame_before),
        lesions=lesions,
    )


def permute_frames(encoded, perm):
    """Reorder the frame axis of an EncodedTurn by `perm` (new order of old
    positions). Used by the permutation-equivariance checks."""
    perm = list(perm)
    n = encoded.n_frames
    assert sorted(perm) == list(range(n))
    f_c = encoded.f_c.copy()
    f_n = encoded.f_n.copy()
    f_c[:n] = encoded.f_c[perm]
    f_n[:n] = encoded.f_n[perm]
    return EncodedTurn(
        dialogue_id=encoded.dialogue_id,
        turn_index=encoded.turn_index,
        frame_ids=tuple(encoded.frame_ids[p] for p in perm),
        triples=encoded.triples,
        act_ids=encoded.act_ids,
        act_names=encoded.act_names,
        utt_tokens=encoded.utt_tokens,
        frames_enc=tuple(encoded.frames_enc[p] for p in perm),
        S_L=encoded.S_L[:, perm].copy(),
        h_c=encoded.h_c[perm].copy(),
        h_d=encoded.h_d[perm].copy(),
        f_c=f_c,
        f_n=f_n,
        active_pos=perm.index(encoded.active_pos),
        lesions=encoded.lesions,
    )
