"""Dialogue/frame data model and corpus ingestion.

The corpus is UTF-8 JSON: a list of dialogues, each a list of turns in the
published Frames layout (`author`, `text`, `labels.acts`,
`labels.active_frame`, per-arg frame annotations). A minimal subset schema
ships at data/frames_subset.schema.json so synthetic fixtures only need the
required fields.

Frame contents are reconstructed by replaying turns: the first user turn
seeds frame 1, wizard `offer` acts create frames, user acts that reference
the next unused frame id create frames, and writer acts append slot values
to the frame their argument resolves to. Args without an explicit `ref`
resolve to the frame that is active when their act is interpreted, tracked
through within-turn switches and creations. An optional top-level `frames`
list (id / creator / created_turn) is validated against the replay.

All types are immutable after construction and safe to share across
threads.
"""

import json
from dataclasses import dataclass, field

# Acts whose arguments write constraint values into their target frame.
# Everything else (request, request_compare, switch_frame, ...) only reads.
WRITER_ACTS = frozenset({"inform", "negate", "offer", "confirm"})


class CorpusError(ValueError):
    """Schema or consistency violation in a corpus file."""


@dataclass(frozen=True)
class SlotValue:
    """One value in a slot's history. `value` may be empty for bare args."""
    slot: str
    value: str = ""
    negated: bool = False
    turn: int = 0


@dataclass(frozen=True)
class DialogueAct:
    """An annotated dialogue act; arg_refs[i] is args[i]'s explicit frame
    reference (None = implicit, resolves to the frame active at act time)."""
    name: str
    args: tuple = ()
    arg_refs: tuple = ()
    act_refs: tuple = ()


@dataclass(frozen=True)
class UserTurn:
    index: int
    user_index: int
    utterance: str
    acts: tuple
    active_frame_before: int
    active_frame_after: int

    author = "user"


@dataclass(frozen=True)
class WizardTurn:
    index: int
    utterance: str
    acts: tuple

    author = "wizard"


@dataclass(frozen=True)
class Frame:
    """Accumulated slot constraints of one user goal or wizard offer.

    constraints is an ordered tuple of (slot, value-history) pairs; each
    history is chronological and may mix negated and non-negated values.
    """
    id: int
    creator: str
    created_turn: int
    constraints: tuple = ()

    def latest_value(self, slot):
        """Most recent non-negated value for `slot`, or None."""
        for s, history in self.constraints:
            if s == slot:
                for sv in reversed(history):
                    if not sv.negated:
                        return sv.value
                return None
        return None

    def as_of(self, turn_index):
        """Snapshot with only values added strictly before `turn_index`."""
        kept = []
        for slot, history in self.constraints:
            h = tuple(sv for sv in history if sv.turn < turn_index)
            if h:
                kept.append((slot, h))
        return Frame(self.id, self.creator, self.created_turn, tuple(kept))


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple
    frames: tuple

    @property
    def user_turns(self):
        return tuple(t for t in self.turns if isinstance(t, UserTurn))


@dataclass(frozen=True)
class TripleGold:
    """Gold info for one act-slot-value triple of a user turn."""
    act_pos: int
    act_name: str
    slot: str
    value: str
    negated: bool
    ref: int              # final frame id; > n_before means created this turn
    dynamic_active: int   # frame active when the act is interpreted
    penalize: bool        # switch_frame or frame-creating act


@dataclass(frozen=True)
class ActGold:
    act_pos: int
    name: str
    gold_set: tuple       # resolved referenced frame ids (sorted)
    creates: bool


@dataclass(frozen=True)
class TurnGold:
    """Per-turn reference plan: resolved gold for triples and acts."""
    n_before: int
    active_before: int
    new_id: int
    triples: tuple
    acts: tuple
    has_switch: bool
    switch_triple_index: int | None


class _FrameBuilder:
    __slots__ = ("id", "creator", "created_turn", "slots")

    def __init__(self, fid, creator, created_turn):
        self.id = fid
        self.creator = creator
        self.created_turn = created_turn
        self.slots = {}

    def add(self, slot, value, negated, turn):
        self.slots.setdefault(slot, []).append(SlotValue(slot, value, negated, turn))

    def freeze(self):
        cons = tuple((slot, tuple(values)) for slot, values in self.slots.items())
        return Frame(self.id, self.creator, self.created_turn, cons)


def _parse_act(obj, did, ti, ai):
    where = f"dialogue {did}: turns[{ti}].labels.acts[{ai}]"
    if not isinstance(obj, dict) or not isinstance(obj.get("name"), str) or not obj["name"]:
        raise CorpusError(f"{where}: act needs a non-empty 'name'")
    args, arg_refs = [], []
    for k, arg in enumerate(obj.get("args", []) or []):
        if not isinstance(arg, dict) or not isinstance(arg.get("key"), str) or not arg["key"]:
            raise CorpusError(f"{where}.args[{k}]: arg needs a non-empty 'key'")
        val = arg.get("val", "")
        if val is None:
            val = ""
        if not isinstance(val, str):
            val = str(val)
        ref = arg.get("ref")
        if ref is not None and not isinstance(ref, int):
            raise CorpusError(f"{where}.args[{k}].ref: must be an integer frame id")
        args.append(SlotValue(arg["key"], val, bool(arg.get("negated", False)), ti))
        arg_refs.append(ref)
    act_refs = obj.get("refs", []) or []
    if not all(isinstance(r, int) for r in act_refs):
        raise CorpusError(f"{where}.refs: must be integer frame ids")
    return DialogueAct(obj["name"], tuple(args), tuple(arg_refs), tuple(act_refs))


def _parse_dialogue(obj, pos):
    if not isinstance(obj, dict):
        raise CorpusError(f"corpus[{pos}]: dialogue must be an object")
    did = obj.get("id")
    if not isinstance(did, str) or not did:
        raise CorpusError(f"corpus[{pos}]: dialogue needs a non-empty string 'id'")
    raw_turns = obj.get("turns")
    if not isinstance(raw_turns, list) or not raw_turns:
        raise CorpusError(f"dialogue {did}: 'turns' must be a non-empty list")

    builders = []
    turns = []
    active = 1
    user_count = 0

    def resolve(ref, where, turn_index, creator):
        """Map a gold ref to a frame, creating the next frame if referenced."""
        if ref == len(builders) + 1:
            builders.append(_FrameBuilder(ref, creator, turn_index))
        if not 1 <= ref <= len(builders):
            raise CorpusError(f"dialogue {did}: {where}: dangling frame reference {ref} "
                              f"({len(builders)} frames exist)")
        return ref

    for ti, raw in enumerate(raw_turns):
        if not isinstance(raw, dict):
            raise CorpusError(f"dialogue {did}: turns[{ti}] must be an object")
        author = raw.get("author")
        if author not in ("user", "wizard"):
            raise CorpusError(f"dialogue {did}: turns[{ti}].author must be 'user' or 'wizard'")
        text = raw.get("text", "")
        if not isinstance(text, str):
            raise CorpusError(f"dialogue {did}: turns[{ti}].text must be a string")
        labels = raw.get("labels", {}) or {}
        acts = tuple(_parse_act(a, did, ti, ai) for ai, a in enumerate(labels.get("acts", []) or []))

        if ti == 0 and author != "user":
            raise CorpusError(f"dialogue {did}: turns[0].author: dialogues must open with a user turn")

        if author == "user":
            if not builders:
                builders.append(_FrameBuilder(1, "user", 0))
            user_count += 1
            before = active
            dyn = active
            for ai, act in enumerate(acts):
                creates = False
                writer = act.name in WRITER_ACTS
                for k, (arg, ref) in enumerate(zip(act.args, act.arg_refs)):
                    n_prev = len(builders)
                    target = resolve(ref, f"turns[{ti}].labels.acts[{ai}].args[{k}].ref",
                                     ti, "user") if ref is not None else dyn
                    creates = creates or len(builders) > n_prev
                    if writer and arg.value:
                        negated = arg.negated or act.name == "negate"
                        builders[target - 1].add(arg.slot, arg.value, negated, ti)
                for r in act.act_refs:
                    n_prev = len(builders)
                    resolve(r, f"turns[{ti}].labels.acts[{ai}].refs", ti, "user")
                    creates = creates or len(builders) > n_prev
                if creates:
                    dyn = len(builders)
                elif act.name == "switch_frame":
                    explicit = [r for r in list(act.arg_refs) + list(act.act_refs) if r is not None]
                    dyn = explicit[0] if explicit else labels.get("active_frame", dyn)
            after = labels.get("active_frame")
            if after is None:
                after = dyn
            if not isinstance(after, int) or not 1 <= after <= len(builders):
                raise CorpusError(f"dialogue {did}: turns[{ti}].labels.active_frame: "
                                  f"invalid frame id {after!r}")
            turns.append(UserTurn(ti, user_count, text, acts, before, after))
            active = after
        else:
            for ai, act in enumerate(acts):
                if act.name == "offer":
                    builders.append(_FrameBuilder(len(builders) + 1, "wizard", ti))
                    for arg in act.args:
                        if arg.value:
                            builders[-1].add(arg.slot, arg.value, arg.negated, ti)
                else:
                    writer = act.name in WRITER_ACTS
                    for k, (arg, ref) in enumerate(zip(act.args, act.arg_refs)):
                        if ref is None:
                            continue
                        target = resolve(ref, f"turns[{ti}].labels.acts[{ai}].args[{k}].ref",
                                         ti, "wizard")
                        if writer and arg.value:
                            builders[target - 1].add(arg.slot, arg.value, arg.negated, ti)
            turns.append(WizardTurn(ti, text, acts))

    frames = tuple(b.freeze() for b in builders)

    declared = obj.get("frames")
    if declared is not None:
        if not isinstance(declared, list):
            raise CorpusError(f"dialogue {did}: 'frames' must be a list")
        got = [(f.id, f.creator, f.created_turn) for f in frames]
        want = []
        for k, fr in enumerate(declared):
            if not isinstance(fr, dict):
                raise CorpusError(f"dialogue {did}: frames[{k}] must be an object")
            try:
                want.append((int(fr["frame_id"]), fr["creator"], int(fr["created_turn"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"dialogue {did}: frames[{k}]: needs frame_id/creator/"
                                  f"created_turn ({exc})") from None
        if got != want:
            raise CorpusError(f"dialogue {did}: frames: replay produced {got}, file declares {want}")

    return Dialogue(did, tuple(turns), frames)


def parse_corpus(data):
    """Validate an in-memory corpus structure (a list of dialogue objects)."""
    if not isinstance(data, list):
        raise CorpusError("corpus must be a JSON list of dialogues")
    return [_parse_dialogue(obj, pos) for pos, obj in enumerate(data)]


def load_corpus(path):
    """Load and validate a corpus file; returns dialogues in file order."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}: not valid JSON ({exc})") from None
    return parse_corpus(data)


def dump_corpus(dialogues):
    """Inverse of load_corpus on the documented schema fields."""
    out = []
    for d in dialogues:
        turns = []
        for t in d.turns:
            acts = []
            for act in t.acts:
                args = []
                for arg, ref in zip(act.args, act.arg_refs):
                    a = {"key": arg.slot, "val": arg.value}
                    if arg.negated:
                        a["negated"] = True
                    if ref is not None:
                        a["ref"] = ref
                    args.append(a)
                entry = {"name": act.name}
                if args:
                    entry["args"] = args
                if act.act_refs:
                    entry["refs"] = list(act.act_refs)
                acts.append(entry)
            labels = {"acts": acts}
            if isinstance(t, UserTurn):
                labels["active_frame"] = t.active_frame_after
            turns.append({"author": t.author, "text": t.utterance, "labels": labels})
        out.append({
            "id": d.id,
            "turns": turns,
            "frames": [{"frame_id": f.id, "creator": f.creator, "created_turn": f.created_turn}
                       for f in d.frames],
        })
    return out


def save_corpus(dialogues, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dump_corpus(dialogues), fh, indent=2, sort_keys=True)
        fh.write("\n")


def frames_before_turn(dialogue, turn_index):
    """Frames created strictly before the user turn at `turn_index`, each
    snapshotted to its constraints as of that turn."""
    if not 0 <= turn_index < len(dialogue.turns):
        raise IndexError(f"turn index {turn_index} out of range for dialogue {dialogue.id}")
    turn = dialogue.turns[turn_index]
    if not isinstance(turn, UserTurn):
        raise IndexError(f"turn {turn_index} of dialogue {dialogue.id} is not a user turn")
    out = []
    for f in dialogue.frames:
        if f.created_turn < turn_index or (f.created_turn == turn_index and turn_index == 0 and f.id == 1):
            out.append(f.as_of(turn_index))
    return tuple(out)


def gold_plan(dialogue, turn):
    """Resolve a user turn's gold references against the frames before it.

    Tracks the within-turn dynamic active frame (switch_frame and
    frame-creating acts move it): implicit arg refs resolve to it, and the
    target-rewriting/loss-masking machinery needs it per triple.
    """
    n_before = len(frames_before_turn(dialogue, turn.index))
    n_exist = n_before
    dyn = turn.active_frame_before
    triples = []
    acts = []
    has_switch = False
    switch_triple = None
    for ai, act in enumerate(turn.acts):
        act_dyn = dyn
        creates = False
        refs = []
        resolved_args = []
        for arg, ref in zip(act.args, act.arg_refs):
            if ref is None:
                ref = act_dyn
            if ref == n_exist + 1:
                n_exist += 1
                creates = True
            refs.append(ref)
            resolved_args.append((arg, ref))
        for r in act.act_refs:
            if r == n_exist + 1:
                n_exist += 1
                creates = True
            refs.append(r)
        penalize = act.name == "switch_frame" or creates
        for arg, ref in resolved_args:
            if act.name == "switch_frame" and switch_triple is None:
                switch_triple = len(triples)
            triples.append(TripleGold(ai, act.name, arg.slot, arg.value, arg.negated,
                                      ref, act_dyn, penalize))
        acts.append(ActGold(ai, act.name, tuple(sorted(set(refs))), creates))
        if act.name == "switch_frame":
            has_switch = True
        if creates:
            dyn = n_exist
        elif act.name == "switch_frame":
            existing = [r for r in refs if r <= n_before]
            dyn = existing[0] if existing else turn.active_frame_after
    return TurnGold(n_before, turn.active_frame_before, n_before + 1,
                    tuple(triples), tuple(acts), has_switch, switch_triple)


@dataclass(frozen=True)
class StatsReport:
    dialogues: int
    frames: int
    total_turns: int
    user_turns: int
    frame_change_turns: int
    frame_change_rate: float
    switch_frame_turns: int
    off_active_reference_rate: float

    def to_dict(self):
        return {
            "dialogues": self.dialogues,
            "frames": self.frames,
            "total_turns": self.total_turns,
            "user_turns": self.user_turns,
            "frame_change_turns": self.frame_change_turns,
            "frame_change_rate": self.frame_change_rate,
            "switch_frame_turns": self.switch_frame_turns,
            "off_active_reference_rate": self.off_active_reference_rate,
        }

    def to_table(self):
        rows = [
            ("dialogues", f"{self.dialogues}"),
            ("frames", f"{self.frames}"),
            ("total turns", f"{self.total_turns}"),
            ("user turns", f"{self.user_turns}"),
            ("frame-change user turns", f"{self.frame_change_turns} ({100.0 * self.frame_change_rate:.1f}%)"),
            ("turns with switch_frame", f"{self.switch_frame_turns}"),
            ("off-active reference rate", f"{100.0 * self.off_active_reference_rate:.1f}%"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def corpus_stats(dialogues):
    """Corpus-level counts used to sanity-check ingestion."""
    if not dialogues:
        raise CorpusError("corpus_stats requires a non-empty corpus")
    total = sum(len(d.turns) for d in dialogues)
    user = 0
    changes = 0
    switches = 0
    stable = 0
    off_active = 0
    for d in dialogues:
        for t in d.user_turns:
            user += 1
            changed = t.active_frame_after != t.active_frame_before
            changes += changed
            if any(a.name == "switch_frame" for a in t.acts):
                switches += 1
            if not changed:
                stable += 1
                plan = gold_plan(d, t)
                refs = {r for a in plan.acts for r in a.gold_set}
                if refs - {t.active_frame_before}:
                    off_active += 1
    return StatsReport(
        dialogues=len(dialogues),
        frames=sum(len(d.frames) for d in dialogues),
        total_turns=total,
        user_turns=user,
        frame_change_turns=changes,
        frame_change_rate=changes / user if user else 0.0,
        switch_frame_turns=switches,
        off_active_reference_rate=off_active / stable if stable else 0.0,
    )
