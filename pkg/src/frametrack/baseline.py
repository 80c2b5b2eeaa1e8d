"""Deterministic rule-based frame tracker.

Stands in for the unpublished rule baseline this task is usually compared
against; it anchors relative comparisons and is not expected to reproduce
any published baseline score. Rules, in priority order per triple:

1. exactly one frame's same-slot value within the similarity threshold ->
   that frame;
2. several such frames -> the most recently active of them;
3. a switch_frame triple/act with no acceptable match -> the most recent
   wizard offer frame (else the active frame);
4. an inform whose value conflicts with the active frame's value for the
   same slot -> a new frame;
5. otherwise -> the active frame.

Act-level references default to the active frame; request_compare acts
reference the two most recently active frames; switch_frame acts reference
their rule-predicted target; an act with a new-frame triple references the
new frame. Pure functions throughout: identical inputs give identical
outputs on every platform.
"""

from dataclasses import dataclass

import numpy as np

from .corpus import frames_before_turn
from .encoding import similarity
from .model import (NEW_FRAME, ActPrediction, ReferencePrediction,
                    TriplePrediction)


@dataclass(frozen=True)
class BaselineRules:
    threshold: float = 0.8
    similarity_norm: str = "max"
    # ranking keys for "most recently active", most significant first
    tie_break: tuple = ("last_active", "created_turn", "id")
    # acts that may accept a pending wizard offer without naming a value
    offer_accept_acts: tuple = ("switch_frame",)


def _rank_key(frame, last_active, rules):
    keys = {
        "last_active": last_active.get(frame.id, 0),
        "created_turn": frame.created_turn,
        "id": frame.id,
    }
    return tuple(keys[k] for k in rules.tie_break)


def _most_recent_offer(frames):
    offers = [f for f in frames if f.creator == "wizard"]
    if not offers:
        return None
    return max(offers, key=lambda f: (f.created_turn, f.id))


def _predict_triple(act_name, slot, value, frames, active, last_active, rules):
    if value:
        matches = []
        for f in frames:
            fv = f.latest_value(slot)
            if fv and similarity(value, fv, norm=rules.similarity_norm) >= rules.threshold:
                matches.append(f)
        if len(matches) == 1:
            return matches[0].id
        if len(matches) > 1:
            return max(matches, key=lambda f: _rank_key(f, last_active, rules)).id
    if act_name in rules.offer_accept_acts:
        offer = _most_recent_offer(frames)
        return offer.id if offer is not None else active.id
    if act_name == "inform" and value:
        av = active.latest_value(slot)
        if av and similarity(value, av, norm=rules.similarity_norm) < rules.threshold:
            return NEW_FRAME
    return active.id


def baseline_predict(turn, frames, active_id, last_active=None, rules=BaselineRules()):
    """Rule-based predictions for one user turn.

    `frames` are the frames existing before the turn (snapshotted),
    `last_active` maps frame id -> most recent user tick it was active
    (used only for tie-breaking; defaults to empty).
    """
    last_active = last_active or {}
    by_id = {f.id: f for f in frames}
    active = by_id[active_id]
    n = len(frames)
    pos = {f.id: i for i, f in enumerate(frames)}

    def onehot(ref):
        row = np.zeros(n + 1)
        row[n if ref == NEW_FRAME else pos[ref]] = 1.0
        return tuple(row)

    triples = []
    act_triple_refs = [[] for _ in turn.acts]
    for pos_a, act in enumerate(turn.acts):
        for arg in act.args:
            ref = _predict_triple(act.name, arg.slot, arg.value, frames, active, last_active, rules)
            act_triple_refs[pos_a].append(ref)
            triples.append(TriplePrediction(act.name, arg.slot, arg.value, ref, onehot(ref)))

    ranked = sorted(frames, key=lambda f: _rank_key(f, last_active, rules), reverse=True)
    acts = []
    for pos_a, act in enumerate(turn.acts):
        refs = act_triple_refs[pos_a]
        if act.name == "request_compare":
            chosen = [f.id for f in ranked[:2]] or [active_id]
        elif NEW_FRAME in refs:
            chosen = [NEW_FRAME]
        elif act.name in rules.offer_accept_acts:
            if refs:
                chosen = [refs[0]]
            else:
                offer = _most_recent_offer(frames)
                chosen = [offer.id if offer is not None else active_id]
        else:
            off_active = [r for r in refs if r != active_id]
            chosen = [off_active[0]] if off_active else [active_id]
        acts.append(ActPrediction(act.name, tuple(sorted(set(chosen), key=str))))

    return ReferencePrediction(
        dialogue_id="", turn_index=turn.index, frame_ids=tuple(f.id for f in frames),
        triples=tuple(triples), acts=tuple(acts))


def last_active_ticks(dialogue, turn):
    """Frame id -> most recent user tick (<= this turn) it entered as the
    active frame; feeds the baseline's recency tie-breaking."""
    ticks = {}
    for t in dialogue.user_turns:
        if t.user_index > turn.user_index:
            break
        ticks[t.active_frame_before] = t.user_index
    return ticks


def baseline_predict_turn(dialogue, turn, rules=BaselineRules()):
    """Convenience wrapper resolving frames and recency from the dialogue."""
    frames = frames_before_turn(dialogue, turn.index)
    pred = baseline_predict(turn, frames, turn.active_frame_before,
                            last_active_ticks(dialogue, turn), rules)
    return ReferencePrediction(dialogue.id, turn.index, pred.frame_ids, pred.triples, pred.acts)
