"""Training protocol, metrics, breakdowns, and the lesion harness.

Protocol: 10 folds over dialogues; per fold, 20% of the non-test dialogues
are withheld for validation, dictionaries are built from the non-test
portion, Adam minimizes the summed triple + act loss, and training stops
when the minimum validation loss has not improved for `patience` epochs
(the best-validation parameters are kept). Everything is seeded; two runs
with the same seed produce bit-identical parameters.

Metrics: slot-based accuracy is the fraction of act-slot-value triples
whose redistributed argmax equals the gold frame; act-based accuracy is
the fraction of acts whose predicted reference set (cutoff 1/2, active
frame by default) equals the gold set exactly. Both are also reported for
the rule baseline on the same folds.
"""

import dataclasses
import math
from dataclasses import dataclass, field, fields
from multiprocessing import get_context

import numpy as np

from . import autodiff as ad
from .baseline import BaselineRules, baseline_predict_turn
from .corpus import gold_plan
from .encoding import LESIONS, ConfigError, build_dictionaries, encode_turn
from .model import (NEW_FRAME, ModelConfig, build_targets, forward,
                    init_params, loss, predict)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {value}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    folds: int = 10
    val_fraction: float = 0.2
    seed: int = 0
    shuffle_constraints: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.folds < 1 or self.workers < 1:
            raise ConfigError("batch_size, max_epochs, folds and workers must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in (0, 1)")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj):
        unknown = set(obj) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown training config key(s): {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True)
class FoldSpec:
    """Partition of dialogue ids into test folds plus per-fold validation
    subsets of the remaining dialogues."""
    n_folds: int
    seed: int
    assignments: dict          # dialogue id -> fold
    val_ids: dict              # fold -> tuple of dialogue ids

    def test_ids(self, fold):
        return tuple(sorted(i for i, f in self.assignments.items() if f == fold))

    def train_ids(self, fold):
        val = set(self.val_ids[fold])
        return tuple(sorted(i for i, f in self.assignments.items() if f != fold and i not in val))


def make_folds(dialogue_ids, n_folds=10, seed=0, val_fraction=0.2):
    ids = sorted(dialogue_ids)
    if len(ids) < n_folds:
        raise ConfigError(f"cannot split {len(ids)} dialogues into {n_folds} folds")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    assignments = {did: k % n_folds for k, did in enumerate(order)}
    val_ids = {}
    for fold in range(n_folds):
        pool = sorted(i for i in ids if assignments[i] != fold)
        n_val = max(1, int(round(val_fraction * len(pool))))
        pick = np.random.default_rng(seed * 7919 + fold + 1).permutation(len(pool))[:n_val]
        val_ids[fold] = tuple(sorted(pool[i] for i in pick))
    return FoldSpec(n_folds, seed, assignments, val_ids)


@dataclass
class Example:
    """One user turn, encoded and paired with its training targets."""
    encoded: object
    gold: object
    targets: object


def encode_examples(dialogues, dicts, cfg):
    out = []
    for d in dialogues:
        for t in d.user_turns:
            enc = encode_turn(d, t, dicts, gamma=cfg.gamma, norm=cfg.similarity_norm,
                              lesions=cfg.lesions)
            gold = gold_plan(d, t)
            out.append(Example(enc, gold, build_targets(gold, enc)))
    return out


def _shuffled_frames(encoded, rng):
    frames_enc = tuple(
        tuple(entries[i] for i in rng.permutation(len(entries))) if len(entries) > 1 else entries
        for entries in encoded.frames_enc)
    return dataclasses.replace(encoded, frames_enc=frames_enc)


def _dataset_loss(examples, cfg, params):
    if not examples:
        return 0.0
    total = 0.0
    for ex in examples:
        total += loss(forward(ex.encoded, cfg, params), ex.targets).item()
    return total / len(examples)


@dataclass
class TrainResult:
    params: dict
    history: list
    best_epoch: int
    epochs_run: int


def train(train_examples, val_examples, cfg, tcfg, dicts, epoch_callback=None):
    """Adam on the summed loss with early stopping on validation loss.

    val_examples may be None (no early stopping; last parameters kept).
    epoch_callback(epoch, params) -> truthy stops training early (used by
    overfitting probes).
    """
    params = init_params(cfg, dicts, tcfg.seed)
    adam = ad.Adam(params, lr=tcfg.lr, beta1=tcfg.beta1, beta2=tcfg.beta2, eps=tcfg.eps)
    rng = np.random.default_rng(tcfg.seed + 104729)
    history = []
    best_val = math.inf
    best_params = None
    best_epoch = 0
    bad_epochs = 0
    epochs_run = 0

    for epoch in range(1, tcfg.max_epochs + 1):
        epochs_run = epoch
        order = rng.permutation(len(train_examples))
        batch_losses = []
        for b0 in range(0, len(order), tcfg.batch_size):
            batch = order[b0:b0 + tcfg.batch_size]
            with ad.Tape() as tape:
                parts = []
                for i in batch:
                    ex = train_examples[int(i)]
                    enc = _shuffled_frames(ex.encoded, rng) if tcfg.shuffle_constraints else ex.encoded
                    parts.append(loss(forward(enc, cfg, params), ex.targets))
                total = ad.scale_const(ad.add_n(parts), 1.0 / len(parts))
                value = total.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(epoch, b0 // tcfg.batch_size, value)
                tape.backward(total)
            try:
                adam.step()
            except ad.NonFiniteGradient as exc:
                raise TrainingDiverged(epoch, b0 // tcfg.batch_size, str(exc)) from exc
            adam.zero_grad()
            batch_losses.append(value)

        entry = {"epoch": epoch, "train_loss": float(np.mean(batch_losses))}
        if val_examples is not None:
            val = _dataset_loss(val_examples, cfg, params)
            entry["val_loss"] = val
            if val < best_val:
                best_val = val
                best_params = {k: p.data.copy() for k, p in params.items()}
                best_epoch = epoch
                bad_epochs = 0
            else:
                bad_epochs += 1
        history.append(entry)
        if epoch_callback is not None and epoch_callback(epoch, params):
            break
        if val_examples is not None and bad_epochs >= tcfg.patience:
            break

    if best_params is not None:
        for k, p in params.items():
            p.data = best_params[k]
    else:
        best_epoch = epochs_run
    return TrainResult(params, history, best_epoch, epochs_run)


# ---------------------------------------------------------------------------
# evaluation

# The 11 turn classes (overlapping). "New value" means some triple value
# that no existing frame holds for the same slot. The offer-conditioned
# classes look at the immediately preceding wizard turn.
CLASSES_11 = (
    "frame_change_new_value",
    "no_frame_change_new_value",
    "frame_change_no_offer",
    "frame_change_offer",
    "switch_frame_no_values",
    "request_compare",
    "switch_frame_with_values",
    "frame_change_multiple_offers",
    "frame_change_single_offer",
    "new_frame_created",
    "no_frame_change_no_new_value",
)

# change x new-value grid: a full partition of user turns, used by the
# accuracy-decomposition invariant
PARTITION_CLASSES = (
    "frame_change_new_value",
    "frame_change_no_new_value",
    "no_frame_change_new_value",
    "no_frame_change_no_new_value",
)


def classify_turn(dialogue, turn, plan):
    """Class tags for one user turn (CLASSES_11 plus the partition tag)."""
    frames = {f.id: f for f in dialogue.frames}
    existing = [frames[i].as_of(turn.index) for i in range(1, plan.n_before + 1)]
    changed = turn.active_frame_after != turn.active_frame_before

    def is_new_value(slot, value):
        return value and all((f.latest_value(slot) or "").lower() != value.lower() for f in existing)

    new_value = any(is_new_value(t.slot, t.value) for t in plan.triples)
    prev = next((t for t in reversed(dialogue.turns[:turn.index]) if t.author == "wizard"), None)
    offers = sum(1 for a in prev.acts if a.name == "offer") if prev is not None else 0

    tags = set()
    if changed:
        tags.add("frame_change_new_value" if new_value else "frame_change_no_new_value")
        tags.add("frame_change_offer" if offers else "frame_change_no_offer")
        if offers == 1:
            tags.add("frame_change_single_offer")
        elif offers >= 2:
            tags.add("frame_change_multiple_offers")
    else:
        tags.add("no_frame_change_new_value" if new_value else "no_frame_change_no_new_value")
    for act in turn.acts:
        if act.name == "request_compare":
            tags.add("request_compare")
        if act.name == "switch_frame":
            tags.add("switch_frame_with_values" if any(a.value for a in act.args)
                     else "switch_frame_no_values")
    if any(t.ref > plan.n_before for t in plan.triples) or any(a.creates for a in plan.acts):
        tags.add("new_frame_created")
    return tags


@dataclass
class TurnRecord:
    dialogue_id: str
    turn_index: int
    tags: frozenset
    triples: tuple      # (act, slot, gold_label, predicted_label)
    acts: tuple         # (act, gold_set, predicted_set)


def _gold_labels(plan):
    triple_gold = [NEW_FRAME if t.ref > plan.n_before else t.ref for t in plan.triples]
    act_gold = []
    for ag in plan.acts:
        eff = set(ag.gold_set) or {plan.active_before}
        act_gold.append(tuple(sorted({NEW_FRAME if r > plan.n_before else r for r in eff}, key=str)))
    return triple_gold, act_gold


def _record(dialogue, turn, plan, prediction):
    triple_gold, act_gold = _gold_labels(plan)
    triples = tuple((tp.act_name, tp.slot, g, tp.predicted)
                    for g, tp in zip(triple_gold, prediction.triples))
    acts = tuple((ap.name, g, ap.refs) for g, ap in zip(act_gold, prediction.acts))
    return TurnRecord(dialogue.id, turn.index, frozenset(classify_turn(dialogue, turn, plan)),
                      triples, acts)


def evaluate_model(dialogues, dicts, cfg, params):
    """TurnRecords for the tracker on `dialogues` (pure, deterministic)."""
    records = []
    for d in dialogues:
        for t in d.user_turns:
            enc = encode_turn(d, t, dicts, gamma=cfg.gamma, norm=cfg.similarity_norm,
                              lesions=cfg.lesions)
            plan = gold_plan(d, t)
            records.append(_record(d, t, plan, predict(enc, cfg, params)))
    return records


def evaluate_baseline(dialogues, rules=None):
    """TurnRecords for the rule baseline on `dialogues`."""
    rules = rules or BaselineRules()
    records = []
    for d in dialogues:
        for t in d.user_turns:
            plan = gold_plan(d, t)
            records.append(_record(d, t, plan, baseline_predict_turn(d, t, rules)))
    return records


def slot_accuracy(records):
    pairs = [(g, p) for r in records for (_, _, g, p) in r.triples]
    return (100.0 * sum(g == p for g, p in pairs) / len(pairs), len(pairs)) if pairs else (0.0, 0)


def act_accuracy(records):
    pairs = [(g, p) for r in records for (_, g, p) in r.acts]
    return (100.0 * sum(set(g) == set(p) for g, p in pairs) / len(pairs), len(pairs)) if pairs else (0.0, 0)


def class_breakdown(records, baseline_records=None, classes=CLASSES_11):
    """Per-class accuracy over turns carrying each tag."""
    out = {}
    base_by_key = {}
    if baseline_records is not None:
        base_by_key = {(r.dialogue_id, r.turn_index): r for r in baseline_records}
    for cls in classes:
        subset = [r for r in records if cls in r.tags]
        sacc, n_triples = slot_accuracy(subset)
        aacc, n_acts = act_accuracy(subset)
        row = {"turns": len(subset), "triples": n_triples, "slot_accuracy": sacc,
               "acts": n_acts, "act_accuracy": aacc}
        if baseline_records is not None:
            bsub = [base_by_key[(r.dialogue_id, r.turn_index)] for r in subset
                    if (r.dialogue_id, r.turn_index) in base_by_key]
            row["baseline_slot_accuracy"] = slot_accuracy(bsub)[0]
            row["baseline_act_accuracy"] = act_accuracy(bsub)[0]
        out[cls] = row
    return out


def act_slot_breakdown(records, baseline_records=None, min_count=10):
    """Accuracy per (act, slot) pair, filtered to pairs with more than
    `min_count` occurrences."""
    def collect(recs):
        hits = {}
        for r in recs:
            for act, slot, g, p in r.triples:
                key = (act, slot)
                n, c = hits.get(key, (0, 0))
                hits[key] = (n + 1, c + (g == p))
        return hits

    ours = collect(records)
    base = collect(baseline_records) if baseline_records is not None else {}
    out = {}
    for key in sorted(ours):
        n, c = ours[key]
        if n <= min_count:
            continue
        row = {"count": n, "accuracy": 100.0 * c / n}
        if key in base:
            bn, bc = base[key]
            row["baseline_accuracy"] = 100.0 * bc / bn if bn else 0.0
        out[f"{key[0]}({key[1]})"] = row
    return out


# ---------------------------------------------------------------------------
# fold orchestration


@dataclass
class FoldOutcome:
    fold: int
    slot_accuracy: float
    act_accuracy: float
    baseline_slot_accuracy: float
    baseline_act_accuracy: float
    n_triples: int
    n_acts: int
    best_epoch: int
    epochs_run: int
    records: list = field(repr=False, default_factory=list)
    baseline_records: list = field(repr=False, default_factory=list)


def run_fold(dialogues, fold_spec, fold, cfg, tcfg, out_dir=None, rules=None):
    """Train and evaluate one fold; optionally persist its artifacts."""
    by_id = {d.id: d for d in dialogues}
    train_dlgs = [by_id[i] for i in fold_spec.train_ids(fold)]
    val_dlgs = [by_id[i] for i in fold_spec.val_ids[fold]]
    test_dlgs = [by_id[i] for i in fold_spec.test_ids(fold)]
    dicts = build_dictionaries(train_dlgs + val_dlgs, trigram_cap=cfg.trigram_cap)
    fold_tcfg = dataclasses.replace(tcfg, seed=tcfg.seed + fold)
    result = train(encode_examples(train_dlgs, dicts, cfg),
                   encode_examples(val_dlgs, dicts, cfg),
                   cfg, fold_tcfg, dicts)
    records = evaluate_model(test_dlgs, dicts, cfg, result.params)
    brecords = evaluate_baseline(test_dlgs, rules)
    sacc, n_triples = slot_accuracy(records)
    aacc, n_acts = act_accuracy(records)
    bsacc, _ = slot_accuracy(brecords)
    baacc, _ = act_accuracy(brecords)

    if out_dir is not None:
        import json
        import os

        from .model import save_model

        fold_dir = os.path.join(out_dir, f"fold_{fold:02d}")
        os.makedirs(fold_dir, exist_ok=True)
        dicts.save(os.path.join(fold_dir, "dicts.json"))
        save_model(os.path.join(fold_dir, "checkpoint.ftk"), result.params, cfg,
                   dicts.content_hash())
        with open(os.path.join(fold_dir, "history.json"), "w", encoding="utf-8") as fh:
            json.dump({"history": result.history, "best_epoch": result.best_epoch,
                       "epochs_run": result.epochs_run}, fh, sort_keys=True, indent=2)
            fh.write("\n")

    return FoldOutcome(fold, sacc, aacc, bsacc, baacc, n_triples, n_acts,
                       result.best_epoch, result.epochs_run, records, brecords)


def _fold_job(args):
    dialogues, fold_spec, fold, cfg, tcfg, out_dir, rules = args
    return run_fold(dialogues, fold_spec, fold, cfg, tcfg, out_dir, rules)


@dataclass
class MetricsReport:
    folds: list
    slot_accuracy_mean: float
    slot_accuracy_std: float
    act_accuracy_mean: float
    act_accuracy_std: float
    baseline_slot_accuracy_mean: float
    baseline_slot_accuracy_std: float
    baseline_act_accuracy_mean: float
    baseline_act_accuracy_std: float
    class_breakdown: dict
    act_slot_breakdown: dict

    def to_dict(self):
        return {
            "folds": [{k: getattr(f, k) for k in
                       ("fold", "slot_accuracy", "act_accuracy", "baseline_slot_accuracy",
                        "baseline_act_accuracy", "n_triples", "n_acts", "best_epoch", "epochs_run")}
                      for f in self.folds],
            "slot_accuracy": {"mean": self.slot_accuracy_mean, "std": self.slot_accuracy_std},
            "act_accuracy": {"mean": self.act_accuracy_mean, "std": self.act_accuracy_std},
            "baseline_slot_accuracy": {"mean": self.baseline_slot_accuracy_mean,
                                       "std": self.baseline_slot_accuracy_std},
            "baseline_act_accuracy": {"mean": self.baseline_act_accuracy_mean,
                                      "std": self.baseline_act_accuracy_std},
            "class_breakdown": self.class_breakdown,
            "act_slot_breakdown": self.act_slot_breakdown,
        }

    def to_csv(self):
        lines = ["fold,slot_accuracy,act_accuracy,baseline_slot_accuracy,baseline_act_accuracy"]
        for f in self.folds:
            lines.append(f"{f.fold},{f.slot_accuracy:.4f},{f.act_accuracy:.4f},"
                         f"{f.baseline_slot_accuracy:.4f},{f.baseline_act_accuracy:.4f}")
        lines.append(f"mean,{self.slot_accuracy_mean:.4f},{self.act_accuracy_mean:.4f},"
                     f"{self.baseline_slot_accuracy_mean:.4f},{self.baseline_act_accuracy_mean:.4f}")
        lines.append(f"std,{self.slot_accuracy_std:.4f},{self.act_accuracy_std:.4f},"
                     f"{self.baseline_slot_accuracy_std:.4f},{self.baseline_act_accuracy_std:.4f}")
        return "\n".join(lines) + "\n"

    def to_table(self):
        lines = [
            "                 model            baseline",
            f"slot-based   {self.slot_accuracy_mean:6.2f} +- {self.slot_accuracy_std:5.2f}  "
            f"{self.baseline_slot_accuracy_mean:6.2f} +- {self.baseline_slot_accuracy_std:5.2f}",
            f"act-based    {self.act_accuracy_mean:6.2f} +- {self.act_accuracy_std:5.2f}  "
            f"{self.baseline_act_accuracy_mean:6.2f} +- {self.baseline_act_accuracy_std:5.2f}",
        ]
        return "\n".join(lines)


def aggregate(outcomes):
    outcomes = sorted(outcomes, key=lambda o: o.fold)
    records = [r for o in outcomes for r in o.records]
    brecords = [r for o in outcomes for r in o.baseline_records]

    def ms(values):
        return float(np.mean(values)), float(np.std(values))

    sm, ss = ms([o.slot_accuracy for o in outcomes])
    am, as_ = ms([o.act_accuracy for o in outcomes])
    bsm, bss = ms([o.baseline_slot_accuracy for o in outcomes])
    bam, bas = ms([o.baseline_act_accuracy for o in outcomes])
    return MetricsReport(outcomes, sm, ss, am, as_, bsm, bss, bam, bas,
                         class_breakdown(records, brecords),
                         act_slot_breakdown(records, brecords))


def run_experiment(dialogues, cfg, tcfg, out_dir=None, rules=None):
    """The full protocol: folds, per-fold training, pooled reporting."""
    fold_spec = make_folds([d.id for d in dialogues], tcfg.folds, tcfg.seed, tcfg.val_fraction)
    jobs = [(dialogues, fold_spec, f, cfg, tcfg, out_dir, rules) for f in range(tcfg.folds)]
    if tcfg.workers > 1:
        with get_context("fork").Pool(min(tcfg.workers, tcfg.folds)) as pool:
            outcomes = pool.map(_fold_job, jobs)
    else:
        outcomes = [_fold_job(j) for j in jobs]
    return aggregate(outcomes), fold_spec


# ---------------------------------------------------------------------------
# lesion harness


def lesion_study(dialogues, cfg, tcfg, lesions=LESIONS, rules=None):
    """Retrain with each input removed (fold 0 of the protocol) and report
    both accuracies per lesion next to the intact model."""
    unknown = set(lesions) - set(LESIONS)
    if unknown:
        raise ConfigError(f"unknown lesion name(s): {sorted(unknown)}")
    fold_spec = make_folds([d.id for d in dialogues], tcfg.folds, tcfg.seed, tcfg.val_fraction)

    jobs = [(dialogues, fold_spec, 0, cfg, tcfg, None, rules)]
    for name in lesions:
        jobs.append((dialogues, fold_spec, 0,
                     dataclasses.replace(cfg, lesions=(name,)), tcfg, None, rules))
    if tcfg.workers > 1:
        with get_context("fork").Pool(min(tcfg.workers, len(jobs))) as pool:
            outcomes = pool.map(_fold_job, jobs)
    else:
        outcomes = [_fold_job(j) for j in jobs]

    full = outcomes[0]
    table = {
        "full": {"slot_accuracy": full.slot_accuracy, "act_accuracy": full.act_accuracy},
        "lesions": {name: {"slot_accuracy": o.slot_accuracy, "act_accuracy": o.act_accuracy}
                    for name, o in zip(lesions, outcomes[1:])},
    }
    return table
