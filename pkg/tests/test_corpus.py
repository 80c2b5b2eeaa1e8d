import json
import os

import pytest

from frametrack import corpus as C


def fixture_path(name):
    return os.path.join(os.path.dirname(__file__), "fixtures", name)


def test_two_turn_fixture_loads(two_turn):
    assert len(two_turn) == 1
    d = two_turn[0]
    assert len(d.turns) == 2
    assert len(d.frames) == 1
    assert d.frames[0].creator == "user"
    assert d.frames[0].latest_value("dst_city") == "Rome"


def test_fixture_matches_published_subset_schema():
    jsonschema = pytest.importorskip("jsonschema")
    import frametrack

    schema_path = frametrack.__path__[0] + "/data/frames_subset.schema.json"
    with open(schema_path) as fh:
        schema = json.load(fh)
    for name in ("two_turn.json", "offers.json"):
        with open(fixture_path(name)) as fh:
            jsonschema.validate(json.load(fh), schema)


def test_empty_corpus_loads_empty(tmp_path):
    p = tmp_path / "empty.json"
    p.write_text("[]")
    assert C.load_corpus(p) == []


def test_load_error_names_dialogue_and_field(tmp_path):
    bad = [{"id": "d-bad", "turns": [
        {"author": "user", "text": "hi",
         "labels": {"active_frame": 1,
                    "acts": [{"name": "inform", "args": [{"key": "x", "val": "y", "ref": 7}]}]}}]}]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    with pytest.raises(C.CorpusError, match="d-bad") as err:
        C.load_corpus(p)
    assert "ref" in str(err.value)


def test_declared_frames_validated_against_replay(tmp_path):
    data = json.load(open(fixture_path("two_turn.json")))
    data[0]["frames"][0]["creator"] = "wizard"
    p = tmp_path / "mismatch.json"
    p.write_text(json.dumps(data))
    with pytest.raises(C.CorpusError, match="replay"):
        C.load_corpus(p)


def test_frames_before_first_turn_is_seed_frame(offers):
    frames = C.frames_before_turn(offers[0], 0)
    assert len(frames) == 1
    assert frames[0].id == 1
    assert frames[0].constraints == ()


def test_two_offers_make_three_frames_before_next_turn(offers):
    frames = C.frames_before_turn(offers[0], 2)
    assert [f.id for f in frames] == [1, 2, 3]
    assert [f.creator for f in frames] == ["user", "wizard", "wizard"]
    assert frames[1].latest_value("dst_city") == "Havana"


def test_frame_created_in_turn_excluded(offers):
    # turn 4 creates frame 4; only 1..3 exist before it
    frames = C.frames_before_turn(offers[0], 4)
    assert [f.id for f in frames] == [1, 2, 3]


def test_frames_before_turn_index_errors(offers):
    with pytest.raises(IndexError):
        C.frames_before_turn(offers[0], 99)
    with pytest.raises(IndexError):
        C.frames_before_turn(offers[0], 1)  # wizard turn


def test_frames_before_turn_monotone_prefix(offers):
    d = offers[0]
    user_turns = [t.index for t in d.user_turns]
    for a, b in zip(user_turns, user_turns[1:]):
        ida = [f.id for f in C.frames_before_turn(d, a)]
        idb = [f.id for f in C.frames_before_turn(d, b)]
        assert idb[:len(ida)] == ida


def test_constraint_histories_are_chronological(offers):
    for f in offers[0].frames:
        for _, history in f.constraints:
            turns = [sv.turn for sv in history]
            assert turns == sorted(turns)


def test_roundtrip_identity(offers, two_turn, tmp_path):
    for ds in (offers, two_turn):
        p = tmp_path / "rt.json"
        C.save_corpus(ds, p)
        again = C.load_corpus(p)
        assert again == ds


def test_gold_plan_flex_case(tmp_path):
    # a later act referencing the frame created earlier in the same turn is
    # rewritten to the dynamic active frame, not treated as creating
    data = [{"id": "flex", "turns": [
        {"author": "user", "text": "rome on a 2000 budget",
         "labels": {"active_frame": 1, "acts": [
             {"name": "inform", "args": [{"key": "dst_city", "val": "rome", "ref": 1}]}]}},
        {"author": "wizard", "text": "ok", "labels": {"acts": []}},
        {"author": "user", "text": "make it 3000 and flexible",
         "labels": {"active_frame": 2, "acts": [
             {"name": "inform", "args": [{"key": "budget", "val": "3000", "ref": 2}]},
             {"name": "inform", "args": [{"key": "flex", "val": "T", "ref": 2}]}]}},
    ]}]
    p = tmp_path / "flex.json"
    p.write_text(json.dumps(data))
    d = C.load_corpus(p)[0]
    plan = C.gold_plan(d, d.turns[2])
    budget, flex = plan.triples
    assert budget.penalize and budget.ref == 2 and budget.dynamic_active == 1
    assert not flex.penalize and flex.ref == 2 and flex.dynamic_active == 2


def test_corpus_stats_counts(offers):
    stats = C.corpus_stats(offers)
    assert stats.total_turns == 5
    assert stats.user_turns == 3
    assert stats.frame_change_turns == 2
    assert stats.switch_frame_turns == 1
    assert stats.frames == 4


def test_corpus_stats_no_changes_rate_zero(two_turn):
    stats = C.corpus_stats(two_turn)
    assert stats.frame_change_turns == 0
    assert stats.frame_change_rate == 0.0


def test_corpus_stats_empty_corpus_rejected():
    with pytest.raises(C.CorpusError):
        C.corpus_stats([])
