import numpy as np
import pytest

from frametrack import encoding as E
from frametrack.corpus import Frame, SlotValue, frames_before_turn


def brute_levenshtein(a, b):
    """Full-matrix DP oracle, kept independent of the kernel backends."""
    la, lb = len(a), len(b)
    d = [[0] * (lb + 1) for _ in range(la + 1)]
    for i in range(la + 1):
        d[i][0] = i
    for j in range(lb + 1):
        d[0][j] = j
    for i in range(1, la + 1):
        for j in range(1, lb + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[la][lb]


# ---------------------------------------------------------------------------
# tokenizer / trigrams


def test_tokenize_empty():
    assert E.tokenize("") == []


def test_tokenize_punctuation_detached():
    assert E.tokenize("Oh, the Rome deal sounds much better!") == [
        "oh", ",", "the", "rome", "deal", "sounds", "much", "better", "!"]


def test_tokenize_numbers_intact():
    assert E.tokenize("13 day trip") == ["13", "day", "trip"]
    assert E.tokenize("$2000") == ["$", "2000"]


def test_tokenize_emoticons_kept():
    assert E.tokenize("great :) thanks") == ["great", ":)", "thanks"]


def test_letter_trigrams_hello():
    assert E.letter_trigrams("hello") == ["#he", "hel", "ell", "llo", "lo#"]


def test_letter_trigrams_short_tokens():
    assert E.letter_trigrams("a") == ["#a#"]
    assert E.letter_trigrams("ny") == ["#ny", "ny#"]


def test_letter_trigrams_length_property():
    rng = np.random.default_rng(0)
    letters = "abcdefghij"
    for _ in range(200):
        n = int(rng.integers(1, 15))
        token = "".join(letters[int(i)] for i in rng.integers(0, 10, n))
        assert len(E.letter_trigrams(token)) == len(token)


# ---------------------------------------------------------------------------
# dictionaries


def test_dictionary_roundtrip(tmp_path, offers):
    d = E.build_dictionaries(offers)
    p = tmp_path / "dicts.json"
    d.save(p)
    again = E.Dictionaries.load(p)
    assert again == d
    assert again.content_hash() == d.content_hash()


def test_dictionary_unknown_maps_to_zero(offers):
    d = E.build_dictionaries(offers)
    assert d.trigram_id("zzz") == 0
    assert d.slot_id("no_such_slot") == 0
    assert d.act_id("no_such_act") == 0
    assert min(d.trigrams.values()) == 1


def test_trigram_cap_by_frequency(offers):
    capped = E.build_dictionaries(offers, trigram_cap=5)
    assert len(capped.trigrams) == 5
    full = E.build_dictionaries(offers)
    counts = {}
    for d in offers:
        for t in d.turns:
            texts = [t.utterance] if t.author == "user" else []
            for act in t.acts:
                texts.extend(a.value for a in act.args if a.value)
            for text in texts:
                for tok in E.tokenize(text):
                    for tri in E.letter_trigrams(tok):
                        counts[tri] = counts.get(tri, 0) + 1
    keep = sorted(counts, key=lambda t: (-counts[t], t))[:5]
    assert sorted(capped.trigrams) == sorted(keep)
    assert len(full.trigrams) == len(counts)


# ---------------------------------------------------------------------------
# frame encoding


def _frame(histories, fid=1):
    cons = tuple((slot, tuple(SlotValue(slot, v, neg, turn=k)
                              for k, (v, neg) in enumerate(values)))
                 for slot, values in histories)
    return Frame(fid, "user", 0, cons)


def test_encode_frame_most_recent_non_negated(offers_dicts):
    f = _frame([("dst_city", [("NY", True), ("Rome", False)])])
    enc = E.encode_frame(f, offers_dicts)
    assert len(enc) == 1
    slot_id, tokens = enc[0]
    assert slot_id == offers_dicts.slot_id("dst_city")
    assert tokens == E.encode_tokens("rome", offers_dicts)


def test_encode_frame_empty(offers_dicts):
    assert E.encode_frame(_frame([]), offers_dicts) == ()


def test_encode_frame_drops_all_negated(offers_dicts):
    f = _frame([("dst_city", [("NY", True)]), ("budget", [("2000", False)])])
    enc = E.encode_frame(f, offers_dicts)
    assert len(enc) == 1
    assert enc[0][0] == offers_dicts.slot_id("budget")


def test_encode_frame_constraint_order(offers_dicts):
    f = _frame([("budget", [("2000", False)]), ("seat", [("economy", False)])])
    enc = E.encode_frame(f, offers_dicts)
    assert [s for s, _ in enc] == [offers_dicts.slot_id("budget"), offers_dicts.slot_id("seat")]


# ---------------------------------------------------------------------------
# similarity


def test_similarity_identical_and_case():
    assert E.similarity("NY", "ny") == 1.0


def test_similarity_rome_roma():
    assert E.similarity("Rome", "Roma") == pytest.approx(0.75)


def test_similarity_matrix_missing_slot_and_empty_value():
    frames = [_frame([("dst_city", [("rome", False)])])]
    S = E.similarity_matrix([("budget", "2000"), ("dst_city", "")], frames)
    assert S.shape == (2, 1)
    assert S[0, 0] == 0.0 and S[1, 0] == 0.0


def test_similarity_symmetry_and_dp_oracle():
    rng = np.random.default_rng(7)
    alphabet = "abcdefg "
    for _ in range(300):
        a = "".join(alphabet[int(i)] for i in rng.integers(0, len(alphabet), int(rng.integers(0, 15))))
        b = "".join(alphabet[int(i)] for i in rng.integers(0, len(alphabet), int(rng.integers(0, 15))))
        sa = E.similarity(a.strip() or "x", b.strip() or "y")
        sb = E.similarity(b.strip() or "y", a.strip() or "x")
        assert sa == sb
        if a and b:
            expect = 1.0 - brute_levenshtein(a.lower(), b.lower()) / max(len(a), len(b))
            assert E.similarity(a, b) == pytest.approx(expect, abs=0)


def test_similarity_sum_norm():
    # dist(ab, cd) = 2, denominator 4
    assert E.similarity("ab", "cd", norm="sum") == pytest.approx(0.5)
    with pytest.raises(E.ConfigError):
        E.similarity("a", "b", norm="mean")


# ---------------------------------------------------------------------------
# recency / one-hots


def test_recency_fresh_offer_is_one(offers):
    d = offers[0]
    h_c, h_d = E.recency_vectors(d, 2, gamma=0.9)
    # frames 2 and 3 were offered in the immediately preceding wizard turn
    assert h_d[1] == 1.0 and h_d[2] == 1.0
    assert h_d[0] == pytest.approx(0.9)  # seed frame, one tick old
    assert h_c[0] == 1.0                 # seed frame still active entering the turn
    assert h_c[1] == 0.0 and h_c[2] == 0.0


def test_recency_decay_steps(offers):
    d = offers[0]
    h_c, h_d = E.recency_vectors(d, 4, gamma=0.9)
    assert h_c[0] == pytest.approx(0.9)   # frame 1 last active entering the previous user turn
    assert h_c[1] == 1.0                  # frame 2 active entering this turn
    assert h_d[0] == pytest.approx(0.81)  # frame 1 created two user ticks back


def test_recency_two_ticks_since_active():
    from frametrack.corpus import parse_corpus

    def user(active, city=None, ref=None):
        acts = []
        if city:
            acts = [{"name": "switch_frame", "args": [{"key": "dst_city", "val": city, "ref": ref}]}]
        return {"author": "user", "text": city or "ok",
                "labels": {"active_frame": active, "acts": acts}}

    d = parse_corpus([{"id": "r", "turns": [
        {"author": "user", "text": "rome please",
         "labels": {"active_frame": 1, "acts": [
             {"name": "inform", "args": [{"key": "dst_city", "val": "rome", "ref": 1}]}]}},
        {"author": "wizard", "text": "offer",
         "labels": {"acts": [{"name": "offer", "args": [{"key": "dst_city", "val": "oslo"}]}]}},
        user(2, "oslo", 2),
        user(2),
        user(2),
    ]}])[0]
    # frame 1 was active entering user turn 1; now = user turn 4
    h_c, _ = E.recency_vectors(d, d.turns[4].index, gamma=0.9)
    assert h_c[0] == pytest.approx(0.9 ** 2)


def test_recency_gamma_validated(offers):
    with pytest.raises(E.ConfigError):
        E.recency_vectors(offers[0], 0, gamma=1.5)


def test_recency_nonincreasing_property(offers):
    d = offers[0]
    prev = {}
    for t in d.user_turns:
        h_c, h_d = E.recency_vectors(d, t.index, gamma=0.9)
        frames = frames_before_turn(d, t.index)
        for j, f in enumerate(frames):
            assert 0.0 <= h_c[j] <= 1.0 and 0.0 <= h_d[j] <= 1.0
            if f.id in prev and f.id != t.active_frame_before:
                pc, pd = prev[f.id]
                assert h_d[j] <= pd
                assert h_c[j] <= pc
            prev[f.id] = (h_c[j], h_d[j])


def test_frame_onehots_layout():
    f_c, f_n = E.frame_onehots([1, 2, 3], 2)
    assert f_c.tolist() == [0, 1, 0, 0]
    assert f_n.tolist() == [0, 0, 0, 1]
    f_c, f_n = E.frame_onehots([1], 1)
    assert f_c.tolist() == [1, 0] and f_n.tolist() == [0, 1]
    f_c, _ = E.frame_onehots(list(range(1, 9)), 8)
    assert f_c[7] == 1.0 and f_c.shape == (9,)


def test_frame_onehots_unknown_active():
    with pytest.raises(ValueError):
        E.frame_onehots([1, 2], 5)


def test_encode_turn_lesions(offers, offers_dicts):
    d = offers[0]
    turn = d.turns[2]
    full = E.encode_turn(d, turn, offers_dicts)
    assert full.S_L.max() == 1.0
    lesioned = E.encode_turn(d, turn, offers_dicts,
                             lesions=("s_l", "text", "frames", "h_c", "f_n"))
    assert lesioned.S_L.max() == 0.0
    assert lesioned.utt_tokens == ()
    assert all(fe == () for fe in lesioned.frames_enc)
    assert lesioned.h_c.max() == 0.0
    assert lesioned.f_n.max() == 0.0
    assert lesioned.h_d.max() == 1.0  # untouched
    with pytest.raises(E.ConfigError):
        E.encode_turn(d, turn, offers_dicts, lesions=("nope",))
