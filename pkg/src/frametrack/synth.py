"""Synthetic Frames-style corpus generator.

Dialogues are built from a mixture of user behavior classes that cover the
frame-referencing patterns this task exhibits: switching to a frame by
naming a slot value (sometimes with a spelling variant of the stored
value), switching by accepting an offer with no direct reference,
anaphoric switches ("the first option"), implicit and explicit
comparisons, creating a frame through a conflicting value (optionally with
a negation first), extending the active frame with a new constraint, and
bare slot requests. The wizard sets up preconditions (offers, twin offers
with matching cities but different durations) between user turns.

Every act argument carries an explicit gold frame reference, so generated
references are recoverable by construction; the whole corpus replays
through the loader's validation. Output is byte-identical for a fixed
seed.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import parse_corpus
from .encoding import ConfigError

# canonical city -> surface variants (edit-similar but below the baseline's
# matching threshold; similarity window asserted in tests)
CITY_VARIANTS = {
    "rome": ["roma"],
    "sydney": ["sidnee"],
    "atlanta": ["atlanat"],
    "barcelona": ["barzelano"],
    "montreal": ["montriol", "muntreol"],
    "lisbon": ["lizbona"],
    "denver": ["danvar"],
    "havana": ["habanna", "hawanna"],
    "paris": ["paryss"],
    "berlin": ["berlyna", "barline"],
    "madrid": ["madryt", "madritt"],
    "dublin": ["dablinn"],
    "vienna": ["vyenaa", "wiena"],
    "prague": ["praga"],
    "athens": ["atthins"],
    "oslo": ["ozlo"],
    "cairo": ["kayro"],
    "kyoto": ["kiotto", "kioton"],
}

CITIES = [
    "rome", "paris", "berlin", "madrid", "lisbon", "dublin", "vienna",
    "prague", "athens", "oslo", "cairo", "denver", "sydney", "havana",
    "atlanta", "barcelona", "montreal", "kyoto",
]

SEATS = ["economy", "business"]
CATEGORIES = ["3 star", "4 star", "5 star"]

CLASSES = (
    "value_switch",
    "ambiguous_value_switch",
    "offer_accept",
    "anaphora_switch",
    "conflict_new_frame",
    "extend_active",
    "request_slot",
    "compare_implicit",
    "compare_explicit",
)

DEFAULT_MIXTURE = {
    "value_switch": 0.26,
    "ambiguous_value_switch": 0.10,
    "offer_accept": 0.13,
    "anaphora_switch": 0.05,
    "conflict_new_frame": 0.16,
    "extend_active": 0.10,
    "request_slot": 0.05,
    "compare_implicit": 0.05,
    "compare_explicit": 0.10,
}


@dataclass(frozen=True)
class GenSpec:
    n_dialogues: int = 50
    classes: dict = field(default_factory=lambda: dict(DEFAULT_MIXTURE))
    variant_prob: float = 0.6
    min_body_turns: int = 3
    max_body_turns: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.n_dialogues < 1:
            raise ConfigError("n_dialogues must be >= 1")
        unknown = set(self.classes) - set(CLASSES)
        if unknown:
            raise ConfigError(f"unknown behavior class(es): {sorted(unknown)}")
        total = sum(self.classes.values())
        if abs(total - 1.0) > 1e-6:
            raise ConfigError(f"class mixture weights must sum to 1, got {total}")
        if not 0 <= self.variant_prob <= 1:
            raise ConfigError("variant_prob must be in [0, 1]")
        if not 1 <= self.min_body_turns <= self.max_body_turns:
            raise ConfigError("need 1 <= min_body_turns <= max_body_turns")

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        known = {"n_dialogues", "classes", "variant_prob", "min_body_turns", "max_body_turns", "seed"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown generation spec key(s): {sorted(unknown)}")
        return cls(**obj)


class _State:
    """Frame bookkeeping mirroring what the loader will reconstruct."""

    def __init__(self):
        self.turns = []
        self.frames = []          # dicts: id, creator, created_turn, slots{}
        self.active = 1
        self.user_ticks = 0
        self.last_active = {}     # frame id -> last user tick it was active

    @property
    def turn_index(self):
        return len(self.turns)

    def new_frame(self, creator, slots):
        fid = len(self.frames) + 1
        self.frames.append({"id": fid, "creator": creator,
                            "created_turn": self.turn_index, "slots": dict(slots)})
        return fid

    def frame(self, fid):
        return self.frames[fid - 1]

    def user_turn(self, text, acts, active_after):
        self.user_ticks += 1
        self.last_active[self.active] = self.user_ticks
        self.turns.append({"author": "user", "text": text,
                           "labels": {"active_frame": active_after, "acts": acts}})
        self.active = active_after

    def wizard_turn(self, text, acts):
        self.turns.append({"author": "wizard", "text": text, "labels": {"acts": acts}})

    def cities_in_use(self):
        return {f["slots"]["dst_city"] for f in self.frames if "dst_city" in f["slots"]}

    def unique_city_frames(self):
        """Frames whose city occurs exactly once across all frames."""
        counts = {}
        for f in self.frames:
            c = f["slots"].get("dst_city")
            if c:
                counts[c] = counts.get(c, 0) + 1
        return [f for f in self.frames if counts.get(f["slots"].get("dst_city"), 0) == 1]


def _arg(key, val=None, ref=None, negated=False):
    a = {"key": key}
    if val is not None:
        a["val"] = val
    if ref is not None:
        a["ref"] = ref
    if negated:
        a["negated"] = True
    return a


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _price(rng):
    return f"${int(rng.integers(7, 47)) * 100}"


def _duration(rng):
    return str(int(rng.integers(3, 20)))


def _fresh_city(rng, state):
    used = state.cities_in_use()
    free = [c for c in CITIES if c not in used]
    return _pick(rng, free) if free else _pick(rng, CITIES)


def _wizard_offers(rng, state, cities_durations):
    texts = []
    acts = []
    for city, duration in cities_durations:
        duration = duration or _duration(rng)
        price = _price(rng)
        slots = {"dst_city": city, "duration": duration, "price": price}
        args = [_arg("dst_city", city), _arg("duration", duration), _arg("price", price)]
        text = _pick(rng, ["i found a {d} day deal to {c} for {p}",
                           "how about {c} for {d} days at {p}",
                           "there is a {d} day package in {c}, {p} total"]).format(
                               c=city, d=duration, p=price)
        if rng.random() < 0.25:
            seat = _pick(rng, SEATS)
            slots["seat"] = seat
            args.append(_arg("seat", seat))
            text += f", flying {seat}"
        if rng.random() < 0.2:
            cat = _pick(rng, CATEGORIES)
            slots["category"] = cat
            args.append(_arg("category", cat))
            text += f", staying at a {cat} hotel"
        state.new_frame("wizard", slots)
        acts.append({"name": "offer", "args": args})
        texts.append(text + ".")
    state.wizard_turn(" ".join(texts), acts)


def _wizard_ack(rng, state):
    state.wizard_turn(_pick(rng, ["sure, let me check.", "of course!", "one moment please.",
                                  "noted. anything else?", "alright."]), [])


def _surface(rng, spec, city):
    variants = CITY_VARIANTS.get(city)
    if variants and rng.random() < spec.variant_prob:
        return _pick(rng, variants)
    return city


def _wizard_setup(rng, state, cls):
    """Wizard turn before a user turn of class `cls`; establishes whatever
    the class needs and acks otherwise."""
    if cls == "ambiguous_value_switch":
        city = _fresh_city(rng, state)
        d1 = _duration(rng)
        d2 = d1
        while d2 == d1:
            d2 = _duration(rng)
        _wizard_offers(rng, state, [(city, d1), (city, d2)])
        return
    if cls == "offer_accept":
        _wizard_offers(rng, state, [(_fresh_city(rng, state), None)])
        return
    if cls == "anaphora_switch":
        _wizard_offers(rng, state, [(_fresh_city(rng, state), None)])
        return
    if cls == "value_switch":
        targets = [f for f in state.unique_city_frames() if f["id"] != state.active]
        if not targets:
            _wizard_offers(rng, state, [(_fresh_city(rng, state), None)])
            return
    _wizard_ack(rng, state)


def _user_body_turn(rng, spec, state, cls):
    """Realize one user turn of behavior class `cls`; falls back to
    extend_active when preconditions cannot be met."""
    active = state.active

    if cls in ("value_switch", "compare_explicit"):
        targets = [f for f in state.unique_city_frames() if f["id"] != active]
        if not targets:
            cls = "extend_active"
        else:
            recent_offer = max((f["id"] for f in state.frames if f["creator"] == "wizard"), default=None)
            older = [f for f in targets if f["id"] != recent_offer]
            target = _pick(rng, older or targets)
            city = target["slots"]["dst_city"]
            surf = _surface(rng, spec, city)
            if cls == "value_switch":
                text = _pick(rng, ["oh, the {c} deal sounds much better!",
                                   "can you tell me more about the {c} package?",
                                   "let us go back to the {c} option.",
                                   "actually i liked {c} more."]).format(c=surf)
                acts = [{"name": "switch_frame", "args": [_arg("dst_city", surf, ref=target["id"])]}]
                state.user_turn(text, acts, target["id"])
            else:
                text = _pick(rng, ["can you compare this one with the {c} package?",
                                   "is this trip cheaper than the one to {c}?"]).format(c=surf)
                acts = [{"name": "request_compare",
                         "args": [_arg("dst_city", surf, ref=target["id"])],
                         "refs": [active, target["id"]]}]
                state.user_turn(text, acts, active)
            return

    if cls == "ambiguous_value_switch":
        by_city = {}
        for f in state.frames:
            c = f["slots"].get("dst_city")
            if c and "duration" in f["slots"]:
                by_city.setdefault(c, []).append(f)
        twins = sorted(c for c, fs in by_city.items()
                       if len(fs) >= 2 and len({x["slots"]["duration"] for x in fs}) >= 2)
        if not twins:
            cls = "extend_active"
        else:
            city = twins[-1]
            pair = by_city[city][-2:]
            target = _pick(rng, pair)
            text = _pick(rng, ["i will take the {d} day {c} trip!",
                               "the {d} day trip to {c} works for us."]).format(
                                   c=city, d=target["slots"]["duration"])
            acts = [{"name": "switch_frame", "args": [_arg("dst_city", city, ref=target["id"])]}]
            state.user_turn(text, acts, target["id"])
            return

    if cls == "offer_accept":
        offers = [f for f in state.frames if f["creator"] == "wizard"]
        if not offers:
            cls = "extend_active"
        else:
            target = offers[-1]["id"]
            text = _pick(rng, ["yes please, tell me more!", "yeah that sounds reasonable.",
                               "sounds good, let us book it!"])
            acts = [{"name": "switch_frame", "refs": [target]}]
            state.user_turn(text, acts, target)
            return

    if cls == "anaphora_switch":
        offer_turns = sorted({f["created_turn"] for f in state.frames if f["creator"] == "wizard"})
        offers = [f for f in state.frames if f["creator"] == "wizard"]
        if len(offer_turns) < 2:
            cls = "extend_active"
        else:
            which = _pick(rng, ["first", "latest"])
            target = offers[0]["id"] if which == "first" else offers[-1]["id"]
            text = _pick(rng, ["give me the {w} option, thank you.",
                               "let us do the {w} one you mentioned."]).format(w=which)
            acts = [{"name": "switch_frame", "refs": [target]}]
            state.user_turn(text, acts, target)
            return

    if cls == "conflict_new_frame":
        new_city = _fresh_city(rng, state)
        old_city = state.frame(active)["slots"].get("dst_city", "")
        acts = []
        if old_city and rng.random() < 0.3:
            text = f"no, not {old_city}. how about {new_city} then?"
            acts.append({"name": "negate",
                         "args": [_arg("dst_city", old_city, ref=active, negated=True)]})
        else:
            text = _pick(rng, ["okaaay, how about to {c} then?",
                               "hmm, what about {c} instead?",
                               "could we try {c}?"]).format(c=new_city)
        new_id = len(state.frames) + 1
        acts.append({"name": "inform", "args": [_arg("dst_city", new_city, ref=new_id)]})
        state.new_frame("user", {"dst_city": new_city})
        state.user_turn(text, acts, new_id)
        return

    if cls == "compare_implicit":
        others = sorted((tick, fid) for fid, tick in state.last_active.items() if fid != active)
        if not others:
            cls = "extend_active"
        else:
            other = others[-1][1]
            slot = _pick(rng, ["price", "duration"])
            text = _pick(rng, ["do these two trips differ in {s}?",
                               "which of the two has the better {s}?"]).format(s=slot)
            acts = [{"name": "request_compare", "args": [_arg(slot, ref=active)],
                     "refs": sorted([active, other])}]
            state.user_turn(text, acts, active)
            return

    if cls == "request_slot":
        slot, text = _pick(rng, [("end_date", "when would that trip end?"),
                                 ("price", "how much would it cost in total?"),
                                 ("duration", "and how long is the stay?")])
        acts = [{"name": "request", "args": [_arg(slot, ref=active)]}]
        state.user_turn(text, acts, active)
        return

    # extend_active (also every fallback path)
    slots = state.frame(active)["slots"]
    options = [s for s in ("seat", "n_adults", "flex", "category") if s not in slots]
    if not options:
        slot, text = "end_date", "when would that trip end?"
        acts = [{"name": "request", "args": [_arg(slot, ref=active)]}]
        state.user_turn(text, acts, active)
        return
    slot = options[0]
    if slot == "seat":
        val = _pick(rng, SEATS)
        text = f"{val} class please."
    elif slot == "n_adults":
        val = str(int(rng.integers(1, 6)))
        text = f"we will be {val} adults."
    elif slot == "flex":
        val = "true"
        text = _pick(rng, ["make it flexible please.", "we need flexible dates."])
    else:
        val = _pick(rng, CATEGORIES)
        text = f"i would prefer a {val} hotel."
    slots[slot] = val
    acts = [{"name": "inform", "args": [_arg(slot, val, ref=active)]}]
    state.user_turn(text, acts, active)


def _gen_dialogue(rng, spec, idx):
    state = _State()
    city0 = _pick(rng, CITIES)
    budget = _price(rng)
    state.new_frame("user", {"dst_city": city0, "budget": budget})
    state.user_turn(
        _pick(rng, ["i want to go to {c} on a budget of {b}.",
                    "looking for a trip to {c}, {b} max.",
                    "hi! {c} please, budget around {b}."]).format(c=city0, b=budget),
        [{"name": "inform", "args": [_arg("dst_city", city0, ref=1), _arg("budget", budget, ref=1)]}],
        1)

    n_open = 1 if rng.random() < 0.6 else 2
    _wizard_offers(rng, state, [(_fresh_city(rng, state), None) for _ in range(n_open)])

    names = sorted(spec.classes)
    weights = np.array([spec.classes[n] for n in names])
    weights = weights / weights.sum()
    body = int(rng.integers(spec.min_body_turns, spec.max_body_turns + 1))
    seq = [names[int(i)] for i in rng.choice(len(names), size=body, p=weights)]
    for cls in seq:
        _wizard_setup(rng, state, cls)
        _user_body_turn(rng, spec, state, cls)

    return {
        "id": f"syn-{idx:04d}",
        "turns": state.turns,
        "frames": [{"frame_id": f["id"], "creator": f["creator"], "created_turn": f["created_turn"]}
                   for f in state.frames],
    }


def generate_raw(spec, seed=None):
    """Raw corpus JSON structure for a generation spec."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    return [_gen_dialogue(rng, spec, i) for i in range(spec.n_dialogues)]


def generate_corpus(spec, seed=None):
    """Generated dialogues, run through the loader's full validation."""
    return parse_corpus(generate_raw(spec, seed))


def write_corpus(spec, path, seed=None):
    data = generate_raw(spec, seed)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return len(data)
