"""The frame tracking model.

Pipeline per user turn: letter-trigram hashes are summed per token, a
shared bidirectional GRU summarizes the utterance and every value string,
a second bi-GRU runs over the (act, slot, value) triples and a third over
each frame's (slot, value-summary) constraint list. Triple and frame
summaries are projected to a shared space where their dot products give a
learned similarity matrix, fused linearly with the precomputed string
similarity. Two learned per-triple gates extend the fused matrix with
active-frame and new-frame columns before a row softmax. A separate
two-layer head scores, for every (act, candidate-frame) pair including the
hypothetical new frame, the probability that the act references the
candidate; 1 - max of a row is the implicit-active-reference score.

Training targets rewrite references to the within-turn active frame to a
special column 0 (except for switch_frame and frame-creating acts), the
loss pools column-0 and active-column mass for non-penalized triples, and
prediction redistributes column-0 mass back over real frames (switch
distribution / new-frame fraction / previously active frame).
"""

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .encoding import LESIONS, ConfigError

NEW_FRAME = "new"


@dataclass(frozen=True)
class ModelConfig:
    trigram_embed_dim: int = 64
    slot_embed_dim: int = 64
    act_embed_dim: int = 64
    token_gru_hidden: int = 128
    triple_gru_hidden: int = 128
    frame_gru_hidden: int = 128
    summary_dim: int = 256
    gate_hidden: int = 128
    act_head_hidden: int = 128
    gamma: float = 0.9
    similarity_norm: str = "max"
    trigram_cap: int = 8192
    act_match_feature: bool = True
    lesions: tuple = ()

    def __post_init__(self):
        for f in fields(self):
            if f.type is int and getattr(self, f.name) < 1:
                raise ConfigError(f"model.{f.name} must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"model.gamma must be in (0, 1), got {self.gamma}")
        if self.similarity_norm not in ("max", "sum"):
            raise ConfigError(f"model.similarity_norm must be 'max' or 'sum'")
        bad = set(self.lesions) - set(LESIONS)
        if bad:
            raise ConfigError(f"unknown lesion name(s): {sorted(bad)}")
        object.__setattr__(self, "lesions", tuple(self.lesions))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {sorted(unknown)}")
        return cls(**obj)


def init_params(cfg, dicts, seed):
    """Named parameter tensors, drawn in a fixed order from one seeded rng."""
    rng = np.random.default_rng(seed)
    Et, Es, Ea = cfg.trigram_embed_dim, cfg.slot_embed_dim, cfg.act_embed_dim
    Ht, Ha, Hf = cfg.token_gru_hidden, cfg.triple_gru_hidden, cfg.frame_gru_hidden
    S = cfg.summary_dim
    p = {}

    def emb(name, rows, dim):
        p[name] = ad.parameter(ad.init_embedding(rng, rows, dim), name)

    def gru(prefix, in_dim, hidden):
        W, U, b = ad.init_gru(rng, in_dim, hidden)
        p[f"{prefix}_W"] = ad.parameter(W, f"{prefix}_W")
        p[f"{prefix}_U"] = ad.parameter(U, f"{prefix}_U")
        p[f"{prefix}_b"] = ad.parameter(b, f"{prefix}_b")

    def linear(prefix, out_dim, in_dim):
        p[f"{prefix}_W"] = ad.parameter(ad.init_dense(rng, out_dim, in_dim), f"{prefix}_W")
        p[f"{prefix}_b"] = ad.parameter(np.zeros(out_dim), f"{prefix}_b")

    emb("emb_trigram", dicts.n_trigrams, Et)
    emb("emb_slot", dicts.n_slots, Es)
    emb("emb_act", dicts.n_acts, Ea)
    gru("rt_f", Et, Ht)
    gru("rt_b", Et, Ht)
    gru("rasv_f", Ea + Es + 2 * Ht, Ha)
    gru("rasv_b", Ea + Es + 2 * Ht, Ha)
    gru("rf_f", Es + 2 * Ht, Hf)
    gru("rf_b", Es + 2 * Ht, Hf)
    linear("proj_asv", S, 2 * Ha + 2 * Ht)
    linear("proj_f", S, 2 * Hf)
    p["fuse_wm"] = ad.parameter(np.array(0.05), "fuse_wm")
    p["fuse_wl"] = ad.parameter(np.array(1.0), "fuse_wl")
    p["fuse_b"] = ad.parameter(np.array(0.0), "fuse_b")
    linear("gate_h", cfg.gate_hidden, 2 + 2 * Ht)
    linear("gate_o", 2, cfg.gate_hidden)
    linear("act_h", cfg.act_head_hidden, Ea + 5 + 2 * Ht)
    linear("act_o", 1, cfg.act_head_hidden)
    return p


@dataclass
class ForwardOutput:
    """Model outputs for one turn; numpy views plus the tape tensors the
    loss needs (t_probs for triples, act_logits for the act head)."""
    frame_ids: tuple
    active_pos: int
    m_asv: np.ndarray
    m_F: np.ndarray
    S_M: np.ndarray
    S: np.ndarray
    g_c: np.ndarray
    g_n: np.ndarray
    p_asv: np.ndarray
    p_aF: np.ndarray
    p_a0: np.ndarray
    t_probs: object = None
    act_logits: object = None


def _bigru(X, params, prefix):
    return ad.bigru_encode(X, params[f"{prefix}_f_W"], params[f"{prefix}_f_U"], params[f"{prefix}_f_b"],
                           params[f"{prefix}_b_W"], params[f"{prefix}_b_U"], params[f"{prefix}_b_b"])


def _bigru_states(X, params, prefix):
    return ad.bigru_states(X, params[f"{prefix}_f_W"], params[f"{prefix}_f_U"], params[f"{prefix}_f_b"],
                           params[f"{prefix}_b_W"], params[f"{prefix}_b_U"], params[f"{prefix}_b_b"])


def forward(turn, cfg, params):
    """Run the tracker on an encoded turn.

    Frame-axis reductions stay order-independent throughout (see the
    autodiff module), so permuting the turn's frames permutes the frame
    columns of every output bit-for-bit.
    """
    Ht2 = 2 * cfg.token_gru_hidden
    F = turn.n_frames
    N = turn.n_triples
    A = len(turn.act_ids)
    les = turn.lesions
    no_acts = "full_acts" in les
    no_act_emb = no_acts or "only_acts" in les

    def token_hashes(tokens):
        return ad.bag_rows(params["emb_trigram"], [list(t) for t in tokens])

    def value_summary(tokens):
        if not tokens:
            return ad.constant(np.zeros(Ht2))
        return _bigru(token_hashes(tokens), params, "rt")

    utt = value_summary(turn.utt_tokens)

    # frame summaries, one frame at a time (keeps them order-independent)
    mf_rows = []
    for entries in turn.frames_enc:
        if not entries:
            summary = ad.constant(np.zeros(2 * cfg.frame_gru_hidden))
        else:
            rows = [ad.concat_vec([ad.row(ad.embedding_lookup(params["emb_slot"], [sid]), 0),
                                   value_summary(vt)])
                    for sid, vt in entries]
            summary = _bigru(ad.stack_rows(rows), params, "rf")
        mf_rows.append(ad.affine_vec(summary, params["proj_f_W"], params["proj_f_b"]))
    m_F = ad.stack_rows(mf_rows)

    if N > 0:
        if no_act_emb:
            act_e = ad.constant(np.zeros((N, cfg.act_embed_dim)))
        else:
            act_e = ad.embedding_lookup(params["emb_act"], [t.act_id for t in turn.triples])
        if no_acts:
            slot_e = ad.constant(np.zeros((N, cfg.slot_embed_dim)))
            val_s = ad.constant(np.zeros((N, Ht2)))
        else:
            slot_e = ad.embedding_lookup(params["emb_slot"], [t.slot_id for t in turn.triples])
            val_s = ad.stack_rows([value_summary(t.value_tokens) for t in turn.triples])
        states = _bigru_states(ad.concat_cols([act_e, slot_e, val_s]), params, "rasv")
        m_asv = ad.affine_rows(ad.concat_cols([states, ad.broadcast_rows(utt, N)]),
                               params["proj_asv_W"], params["proj_asv_b"])
        S_M = ad.pairwise_dot(m_asv, m_F)
        S = ad.add_scalar(ad.add(ad.mul_scalar(S_M, params["fuse_wm"]),
                                 ad.mul_scalar(ad.constant(turn.S_L), params["fuse_wl"])),
                          params["fuse_b"])
        if "f_c" in les:
            prev_match = ad.constant(np.zeros(N))
        else:
            prev_match = ad.column(S, turn.active_pos)
        gate_in = ad.concat_cols([ad.stack_cols([ad.row_max(S), prev_match]),
                                  ad.broadcast_rows(utt, N)])
        gates = ad.affine_rows(ad.tanh(ad.affine_rows(gate_in, params["gate_h_W"], params["gate_h_b"])),
                               params["gate_o_W"], params["gate_o_b"])
        g_c, g_n = ad.column(gates, 0), ad.column(gates, 1)
        logits = ad.concat_cols([ad.stack_cols([g_c]), S, ad.stack_cols([g_n])])
        t_probs = ad.softmax_rows(logits)
        m_asv_np, S_M_np, S_np = m_asv.data, S_M.data, S.data
        g_c_np, g_n_np, p_asv_np = g_c.data, g_n.data, t_probs.data
    else:
        t_probs = None
        m_asv_np = np.zeros((0, cfg.summary_dim))
        S_M_np = np.zeros((0, F))
        S_np = np.zeros((0, F))
        g_c_np = np.zeros(0)
        g_n_np = np.zeros(0)
        p_asv_np = np.zeros((0, F + 2))

    # act head: one row per (act, candidate) pair, candidates are the
    # existing frames plus the hypothetical new frame. The fifth scalar is
    # the act's best string match against the candidate (from S_L), without
    # which references carried by slot values are unlearnable at act level.
    if A > 0:
        C = F + 1
        hc = np.append(turn.h_c, 0.0)
        hd = np.append(turn.h_d, 0.0)
        match = np.zeros((A, C))
        if cfg.act_match_feature and not no_acts:
            for i, t in enumerate(turn.triples):
                np.maximum(match[t.act_pos, :F], turn.S_L[i], out=match[t.act_pos, :F])
        scalars = np.empty((A * C, 5))
        for c in range(C):
            scalars[c::C, 0] = hc[c]
            scalars[c::C, 1] = hd[c]
            scalars[c::C, 2] = turn.f_c[c]
            scalars[c::C, 3] = turn.f_n[c]
            scalars[c::C, 4] = match[:, c]
        if no_act_emb:
            act_rows = ad.constant(np.zeros((A * C, cfg.act_embed_dim)))
        else:
            act_rows = ad.embedding_lookup(params["emb_act"], np.repeat(turn.act_ids, C))
        feats = ad.concat_cols([act_rows, ad.constant(scalars), ad.broadcast_rows(utt, A * C)])
        act_logits = ad.affine_rows(ad.tanh(ad.affine_rows(feats, params["act_h_W"], params["act_h_b"])),
                                    params["act_o_W"], params["act_o_b"])
        p_pairs = ad.sigmoid(act_logits)
        p_aF = p_pairs.data.reshape(A, C).copy()
        p_a0 = 1.0 - p_aF.max(axis=1)
    else:
        act_logits = None
        p_aF = np.zeros((0, F + 1))
        p_a0 = np.zeros(0)

    return ForwardOutput(
        frame_ids=turn.frame_ids,
        active_pos=turn.active_pos,
        m_asv=m_asv_np,
        m_F=m_F.data,
        S_M=S_M_np,
        S=S_np,
        g_c=g_c_np,
        g_n=g_n_np,
        p_asv=p_asv_np,
        p_aF=p_aF,
        p_a0=p_a0,
        t_probs=t_probs,
        act_logits=act_logits,
    )


@dataclass(frozen=True)
class Targets:
    """Training targets for one turn, in model column coordinates.

    triple_cols: per triple, the gold column in {0, 1..|F|, |F|+1} after
    rewriting within-turn active references to column 0. pooled_cols: the
    columns whose mass counts as correct (column 0 pooled with the dynamic
    active frame's column for non-penalized triples). act_labels: binary
    (acts x |F|+1) over existing frames plus the new-frame candidate.
    """
    triple_cols: tuple
    pooled_cols: tuple
    penalize: tuple
    act_labels: np.ndarray
    eval_triple_cols: tuple
    eval_act_sets: tuple
    has_switch: bool
    switch_triple_index: int | None
    active_pos: int


def build_targets(gold, encoded):
    """Map a TurnGold reference plan onto model columns for an EncodedTurn."""
    ids = list(encoded.frame_ids)
    F = len(ids)
    n_before = gold.n_before

    def softmax_col(ref):
        return F + 1 if ref > n_before else ids.index(ref) + 1

    def cand_col(ref):
        return F if ref > n_before else ids.index(ref)

    triple_cols = []
    pooled = []
    penalize = []
    eval_cols = []
    for tg in gold.triples:
        if tg.ref <= n_before and tg.ref not in ids:
            raise ValueError(f"gold reference {tg.ref} not among frames {ids}")
        penalize.append(tg.penalize)
        eval_cols.append(cand_col(tg.ref))
        if not tg.penalize and tg.ref == tg.dynamic_active:
            triple_cols.append(0)
            pooled.append((0, softmax_col(tg.dynamic_active)))
        else:
            triple_cols.append(softmax_col(tg.ref))
            pooled.append((softmax_col(tg.ref),))

    A = len(gold.acts)
    act_labels = np.zeros((A, F + 1))
    eval_sets = []
    for ag in gold.acts:
        effective = set(ag.gold_set) or {gold.active_before}
        eval_sets.append(tuple(sorted({NEW_FRAME if r > n_before else r for r in effective}, key=str)))
        if effective != {gold.active_before}:
            for r in effective:
                act_labels[ag.act_pos, cand_col(r)] = 1.0

    return Targets(
        triple_cols=tuple(triple_cols),
        pooled_cols=tuple(pooled),
        penalize=tuple(penalize),
        act_labels=act_labels,
        eval_triple_cols=tuple(eval_cols),
        eval_act_sets=tuple(eval_sets),
        has_switch=gold.has_switch,
        switch_triple_index=gold.switch_triple_index,
        active_pos=encoded.active_pos,
    )


def loss(out, tgt):
    """Masked cross-entropy over triples plus binary cross-entropy over
    (act, candidate) pairs; sum over a turn."""
    parts = []
    if out.t_probs is not None and tgt.pooled_cols:
        parts.append(ad.nll_rows(out.t_probs, list(tgt.pooled_cols)))
    if out.act_logits is not None and tgt.act_labels.size:
        parts.append(ad.bce_with_logits(out.act_logits, ad.constant(tgt.act_labels.reshape(-1, 1))))
    if not parts:
        return ad.constant(np.array(0.0))
    return parts[0] if len(parts) == 1 else ad.add_n(parts)


def redistribute(p_asv, active_pos, switch_row=None, mode="conserving"):
    """Reassign column-0 (implicit active) mass over real frames.

    Returns (N, |F|+1): frame columns then the new-frame column. With a
    switch_frame triple present its row's frame mass (renormalized) carries
    the column-0 mass; otherwise the row's own new-frame fraction goes to
    the new column and the remainder to the previously active frame.

    mode="displayed" reproduces the non-conserving variant that adds
    p0*((1-g_s)*p_new + g_s*p_switch) to every frame column; rows then do
    not generally sum to 1. Kept for comparison only.
    """
    p_asv = np.asarray(p_asv, dtype=np.float64)
    N = p_asv.shape[0]
    F = p_asv.shape[1] - 2
    out = np.empty((N, F + 1))
    out[:, :F] = p_asv[:, 1:F + 1]
    out[:, F] = p_asv[:, F + 1]
    if N == 0:
        return out
    mass = p_asv[:, 0]

    sdist = None
    if switch_row is not None:
        q = p_asv[switch_row, 1:F + 1]
        qs = math.fsum(q)
        if qs > 0.0:
            sdist = q / qs

    if mode == "displayed":
        if sdist is not None:
            out[:, :F] += mass[:, None] * sdist[None, :]
        else:
            out[:, :F] += (mass * p_asv[:, F + 1])[:, None]
        return out
    if mode != "conserving":
        raise ConfigError(f"unknown redistribute mode {mode!r}")

    if sdist is not None:
        out[:, :F] += mass[:, None] * sdist[None, :]
    else:
        p_new = p_asv[:, F + 1]
        out[:, F] += mass * p_new
        out[:, active_pos] += mass * (1.0 - p_new)
    return out


@dataclass(frozen=True)
class TriplePrediction:
    act_name: str
    slot: str
    value: str
    predicted: object          # frame id or NEW_FRAME
    distribution: tuple        # over frames then the new-frame column


@dataclass(frozen=True)
class ActPrediction:
    name: str
    refs: tuple                # frame ids / NEW_FRAME, sorted


@dataclass(frozen=True)
class ReferencePrediction:
    dialogue_id: str
    turn_index: int
    frame_ids: tuple
    triples: tuple
    acts: tuple

    def to_dict(self):
        return {
            "dialogue_id": self.dialogue_id,
            "turn_index": self.turn_index,
            "frames": list(self.frame_ids),
            "triples": [{"act": t.act_name, "slot": t.slot, "value": t.value,
                         "predicted_frame": t.predicted,
                         "distribution": list(t.distribution)} for t in self.triples],
            "acts": [{"act": a.name, "referenced_frames": list(a.refs)} for a in self.acts],
        }


def predict(turn, cfg, params, out=None):
    """Deterministic predictions for an encoded turn.

    Per triple: argmax of the redistributed distribution. Per act: every
    candidate with p >= 1/2; an empty set falls back to the active frame
    (that is p_a0 = 1 - max exceeding 1/2).
    """
    if out is None:
        out = forward(turn, cfg, params)
    ids = turn.frame_ids
    F = len(ids)
    switch_row = next((i for i, t in enumerate(turn.triples) if t.act_name == "switch_frame"), None)
    dist = redistribute(out.p_asv, turn.active_pos, switch_row)
    triples = []
    for i, t in enumerate(turn.triples):
        arg = int(np.argmax(dist[i]))
        triples.append(TriplePrediction(t.act_name, t.slot, t.value,
                                        NEW_FRAME if arg == F else ids[arg],
                                        tuple(dist[i])))
    acts = []
    active_id = ids[turn.active_pos]
    for a, name in enumerate(turn.act_names):
        chosen = [NEW_FRAME if c == F else ids[c] for c in np.nonzero(out.p_aF[a] >= 0.5)[0]]
        if not chosen:
            chosen = [active_id]
        acts.append(ActPrediction(name, tuple(sorted(chosen, key=str))))
    return ReferencePrediction(turn.dialogue_id, turn.turn_index, ids, tuple(triples), tuple(acts))


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointMismatch(RuntimeError):
    """Checkpoint was produced against different dictionaries."""


def save_model(path, params, cfg, dicts_hash):
    ad.save_tensors(path, {k: p.data for k, p in params.items()},
                    meta={"config": cfg.to_dict(), "dict_hash": dicts_hash})


def load_model(path, expected_dicts_hash=None):
    arrays, meta = ad.load_tensors(path)
    if expected_dicts_hash is not None and meta.get("dict_hash") != expected_dicts_hash:
        raise CheckpointMismatch(
            f"{path}: checkpoint dictionaries {meta.get('dict_hash')!r} do not match {expected_dicts_hash!r}")
    cfg_dict = dict(meta["config"])
    cfg_dict["lesions"] = tuple(cfg_dict.get("lesions", ()))
    cfg = ModelConfig.from_dict(cfg_dict)
    params = {k: ad.parameter(v, k) for k, v in arrays.items()}
    return params, cfg, meta
