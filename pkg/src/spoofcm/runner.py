"""Training, evaluation, and attack-sweep orchestration.

One run directory per invocation; a seed list spawns seed_<n>/
subdirectories plus a best-of summary.  All randomness flows from three
seeded streams (init, episodes, crops) so a resolved config reproduces a
run bit-for-bit, including score files and metric reports.
"""

import csv
import logging
import math
import os
import time
from dataclasses import replace

import numpy as np

from .adversary import EpisodeBatch, disentangled_step, pgd_attack, substitute_bonafide
from .autodiff import (
    Adam,
    Module,
    Tensor,
    bn_fingerprint,
    cosine_lr,
    load_checkpoint,
    no_grad,
    normalize,
    save_checkpoint,
    set_default_dtype,
)
from .config import ConfigError, RunConfig
from .data import build_attack_index, load_batch, parse_protocol, save_wav
from .encoder import SpoofEncoder
from .meta import BONAFIDE_KEY, RelationNet, pair_labels, sample_episode
from .metrics import (
    ScoreSet,
    compute_eer,
    compute_min_tdcf,
    det_points,
    score_histogram,
    tdcf_constants,
    write_scores,
)

log = logging.getLogger("spoofcm")

LOSS_CSV_HEADER = ["step", "epoch", "L_W", "L_M", "L_F", "L_W_adv", "total", "lr"]


class TrainState(Module):
    """Encoder + relation net as one checkpointable unit."""

    def __init__(self, enc_cfg, rng):
        super().__init__()
        self.encoder = SpoofEncoder(enc_cfg, rng)
        self.relation = RelationNet(enc_cfg.embed_dim, rng)


def apply_dtype(cfg: RunConfig) -> None:
    set_default_dtype(np.float32 if cfg["optim.dtype"] == "float32" else np.float64)


def build_state(cfg: RunConfig, seed: int) -> TrainState:
    return TrainState(cfg.encoder_config(), np.random.default_rng(seed))


# -- scoring ---------------------------------------------------------------------

def cm_scores(model, entries, audio_dir: str, batch_size: int):
    """Cosine margin between the genuine and spoof class directions.

    Higher = more bonafide-like.  Eval mode, main BN bank, center crops;
    deterministic for a fixed checkpoint.
    """
    target_len = model.cfg.input_len
    utts, scores = [], []
    for lo in range(0, len(entries), batch_size):
        chunk = entries[lo:lo + batch_size]
        waves, _ = load_batch(chunk, audio_dir, target_len, "center")
        with no_grad():
            emb, _ = model.encode(Tensor(waves), bank="main", train=False)
            cos = normalize(emb, axis=1) @ normalize(Tensor(model.class_vectors.data), axis=0)
        diff = cos.data[:, 1] - cos.data[:, 0]
        utts.extend(e.utt for e in chunk)
        scores.extend(float(v) for v in diff)
    return utts, np.asarray(scores, dtype=np.float64)


def scoreset_for(entries, utts, scores) -> ScoreSet:
    key_by_utt = {e.utt: e.key for e in entries}
    return ScoreSet.from_records(
        (u, s, key_by_utt[u]) for u, s in zip(utts, scores)
    )


# -- training --------------------------------------------------------------------

def _episode_batch(index, entry_by_utt, n_types, k, audio_dir, input_len,
                   episode_rng, crop_rng) -> EpisodeBatch:
    ep = sample_episode(index, n_types, k, episode_rng)
    entries = [entry_by_utt[u] for u in ep.refs()]
    waves, labels = load_batch(entries, audio_dir, input_len, "random_crop", crop_rng)
    return EpisodeBatch(waves=waves, labels=labels, n_support=len(ep.support),
                        match=pair_labels(ep))


def _plain_batch(entries, batch_size, audio_dir, input_len,
                 episode_rng, crop_rng) -> EpisodeBatch:
    n = min(batch_size, len(entries))
    picks = episode_rng.choice(len(entries), size=n, replace=False)
    chunk = [entries[int(i)] for i in picks]
    waves, labels = load_batch(chunk, audio_dir, input_len, "random_crop", crop_rng)
    return EpisodeBatch(waves=waves, labels=labels, n_support=0, match=None)


def train_single(cfg: RunConfig, seed: int, run_dir: str) -> dict:
    """One seed's full training loop; returns the tracking summary."""
    apply_dtype(cfg)
    os.makedirs(run_dir, exist_ok=True)

    train_entries = parse_protocol(cfg.protocol_path("train"))
    if not train_entries:
        raise ConfigError(f"empty train protocol {cfg.protocol_path('train')}")
    dev_path = cfg.protocol_path("dev")
    dev_entries = parse_protocol(dev_path) if dev_path and os.path.exists(dev_path) else []
    audio_dir = cfg.audio_dir()

    index = build_attack_index(train_entries)
    entry_by_utt = {e.utt: e for e in train_entries}
    attack_types = sorted(a for a in index if a != BONAFIDE_KEY)
    n_types = len(attack_types)
    meta_enabled = cfg["meta.enabled"]
    k = cfg["meta.K"]
    if meta_enabled and n_types < 2:
        raise ConfigError("episodic training needs >= 2 attack types in train")

    state = build_state(cfg, seed)
    step_cfg = cfg.step_config()
    named = list(state.named_parameters())
    optimizer = Adam(named, lr=cfg["optim.lr"],
                     betas=(cfg["optim.beta1"], cfg["optim.beta2"]),
                     eps=cfg["optim.eps"])

    episode_rng = np.random.default_rng(seed + 1000)
    crop_rng = np.random.default_rng(seed + 2000)

    input_len = cfg["encoder.input_len"]
    epochs = cfg["optim.epochs"]
    rows_per_step = (n_types * k + 2 * k) if meta_enabled else cfg["optim.batch"]
    steps_per_epoch = max(1, math.ceil(len(train_entries) / rows_per_step))

    best = {"dev_eer": float("inf"), "epoch": -1}
    curves_path = os.path.join(run_dir, "loss_curves.csv")
    t0 = time.time()
    with open(curves_path, "w", newline="") as curves:
        writer = csv.writer(curves)
        writer.writerow(LOSS_CSV_HEADER)
        step = 0
        for epoch in range(epochs):
            lr = cosine_lr(epoch, epochs, cfg["optim.lr"], cfg["optim.lr_min"])
            for _ in range(steps_per_epoch):
                if meta_enabled:
                    batch = _episode_batch(index, entry_by_utt, n_types, k,
                                           audio_dir, input_len, episode_rng, crop_rng)
                else:
                    batch = _plain_batch(train_entries, cfg["optim.batch"], audio_dir,
                                         input_len, episode_rng, crop_rng)
                report = disentangled_step(state.encoder, state.relation, batch,
                                           step_cfg, optimizer, lr)
                step += 1
                writer.writerow([step, epoch] + [
                    "" if report[k2] is None else f"{report[k2]:.8g}"
                    for k2 in ("L_W", "L_M", "L_F", "L_W_adv", "total")
                ] + [f"{lr:.8g}"])

            extra = {"seed": seed, "epoch": epoch}
            if dev_entries:
                utts, scores = cm_scores(state.encoder, dev_entries, audio_dir,
                                         cfg["eval.batch"])
                dev_eer, _ = compute_eer(scoreset_for(dev_entries, utts, scores))
                extra["dev_eer"] = dev_eer
                # <= so dev ties go to the later epoch: small dev sets quantize
                # the EER coarsely, and under the cosine schedule the later
                # checkpoint has trained at the finer learning rate
                if dev_eer <= best["dev_eer"]:
                    best = {"dev_eer": dev_eer, "epoch": epoch}
                    save_checkpoint(os.path.join(run_dir, "best.ckpt"),
                                    state, optimizer, extra)
                log.info("seed %d epoch %d total %.4f dev_eer %.4f (%.1fs)",
                         seed, epoch, report["total"], dev_eer, time.time() - t0)
            else:
                log.info("seed %d epoch %d total %.4f (%.1fs)",
                         seed, epoch, report["total"], time.time() - t0)
            save_checkpoint(os.path.join(run_dir, "last.ckpt"), state, optimizer, extra)

    summary = {
        "seed": seed,
        "best_dev_eer": best["dev_eer"] if dev_entries else None,
        "best_epoch": best["epoch"] if dev_entries else None,
        "last_ckpt": os.path.join(run_dir, "last.ckpt"),
        "best_ckpt": os.path.join(run_dir, "best.ckpt") if dev_entries and best["epoch"] >= 0 else None,
        "seconds": time.time() - t0,
    }
    return summary


def train_run(cfg: RunConfig) -> list:
    """Run every configured seed; write resolved config and best-of summary."""
    out_root = str(cfg["run.out"])
    os.makedirs(out_root, exist_ok=True)
    cfg.dump(os.path.join(out_root, "resolved_config.txt"))
    summaries = []
    for seed in cfg.seeds():
        run_dir = os.path.join(out_root, f"seed_{seed}")
        summaries.append(train_single(cfg, seed, run_dir))
    with open(os.path.join(out_root, "summary.txt"), "w") as f:
        for s in summaries:
            dev = "n/a" if s["best_dev_eer"] is None else f"{s['best_dev_eer']:.6f}"
            f.write(f"seed={s['seed']} best_dev_eer={dev} best_epoch={s['best_epoch']} "
                    f"seconds={s['seconds']:.1f}\n")
        tracked = [s for s in summaries if s["best_dev_eer"] is not None]
        if tracked:
            champ = min(tracked, key=lambda s: s["best_dev_eer"])
            f.write(f"best_of: seed={champ['seed']} dev_eer={champ['best_dev_eer']:.6f}\n")
    return summaries


# -- evaluation --------------------------------------------------------------------

def load_state(cfg: RunConfig, ckpt_path: str) -> TrainState:
    apply_dtype(cfg)
    state = build_state(cfg, seed=0)
    load_checkpoint(ckpt_path, state)
    return state


def evaluate_run(cfg: RunConfig, ckpt_path: str, protocol_path: str | None,
                 out_dir: str) -> dict:
    """Score a protocol, write scores + metrics report + histogram/DET CSVs."""
    state = load_state(cfg, ckpt_path)
    model = state.encoder
    proto = protocol_path or cfg.protocol_path("eval")
    entries = parse_protocol(proto)
    if not entries:
        raise ConfigError(f"empty protocol {proto}")
    os.makedirs(out_dir, exist_ok=True)

    aux_before = bn_fingerprint(model, "aux")
    utts, scores = cm_scores(model, entries, cfg.audio_dir(), cfg["eval.batch"])
    aux_after = bn_fingerprint(model, "aux")
    if not np.array_equal(aux_before, aux_after):
        raise RuntimeError("evaluation is not allowed to touch auxiliary BN stats")

    write_scores(os.path.join(out_dir, "scores.txt"), utts, scores)
    sset = scoreset_for(entries, utts, scores)
    cm = cfg.tdcf_model()
    eer, eer_thr = compute_eer(sset)
    mtdcf, mtdcf_thr = compute_min_tdcf(sset, cm)
    c1, c2 = tdcf_constants(cm)

    by_attack = {}
    system_by_utt = {e.utt: e.system for e in entries}
    attack_ids = sorted({e.system for e in entries if e.system != BONAFIDE_KEY})
    for a in attack_ids:
        sub = [(u, s, k3) for (u, s, k3) in sset.records()
               if k3 == "bonafide" or system_by_utt[u] == a]
        sub_eer, _ = compute_eer(ScoreSet.from_records(sub))
        by_attack[a] = sub_eer

    report_path = os.path.join(out_dir, "metrics_report.txt")
    with open(report_path, "w") as f:
        f.write(f"n_trials={len(entries)}\n")
        f.write(f"n_bonafide={int(np.sum(sset.keys == 'bonafide'))}\n")
        f.write(f"n_spoof={int(np.sum(sset.keys == 'spoof'))}\n")
        f.write(f"eer={eer:.10g}\n")
        f.write(f"eer_threshold={eer_thr:.10g}\n")
        f.write(f"min_tdcf={mtdcf:.10g}\n")
        f.write(f"min_tdcf_threshold={mtdcf_thr:.10g}\n")
        f.write(f"tdcf_c1={c1:.10g}\n")
        f.write(f"tdcf_c2={c2:.10g}\n")
        for key, val in sorted(vars(cm).items()):
            f.write(f"tdcf.{key}={val:.10g}\n")
        for a in attack_ids:
            f.write(f"eer_{a}={by_attack[a]:.10g}\n")

    hist = score_histogram(sset, cfg["metrics.bins"])
    with open(os.path.join(out_dir, "histogram.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bin_lo", "bin_hi", "bonafide", "spoof"])
        for i in range(len(hist["bonafide"])):
            w.writerow([f"{hist['edges'][i]:.10g}", f"{hist['edges'][i + 1]:.10g}",
                        int(hist["bonafide"][i]), int(hist["spoof"][i])])

    with open(os.path.join(out_dir, "det.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["far", "frr", "threshold"])
        for far, frr, thr in det_points(sset):
            w.writerow([f"{far:.10g}", f"{frr:.10g}", f"{thr:.10g}"])

    return {"eer": eer, "eer_threshold": eer_thr, "min_tdcf": mtdcf,
            "min_tdcf_threshold": mtdcf_thr, "per_attack": by_attack,
            "scores_path": os.path.join(out_dir, "scores.txt"),
            "report_path": report_path}


# -- adversarial robustness sweep ----------------------------------------------------

def _predictions(model, waves: np.ndarray) -> np.ndarray:
    with no_grad():
        emb, _ = model.encode(Tensor(waves), bank="main", train=False)
        cos = normalize(emb, axis=1) @ normalize(Tensor(model.class_vectors.data), axis=0)
    return (cos.data[:, 1] > cos.data[:, 0]).astype(np.int64)


def attack_run(cfg: RunConfig, ckpt_path: str, out_dir: str) -> list:
    """Accuracy under a PGD delta sweep; writes report + sample adversarial audio."""
    state = load_state(cfg, ckpt_path)
    model = state.encoder
    entries = parse_protocol(cfg.protocol_path("eval"))
    entries = entries[: cfg["adv.eval_n"]]
    if not entries:
        raise ConfigError("eval protocol has no utterances to attack")
    os.makedirs(out_dir, exist_ok=True)

    waves, labels = load_batch(entries, cfg.audio_dir(), cfg["encoder.input_len"], "center")
    clean_acc = float(np.mean(_predictions(model, waves) == labels))

    margin = cfg.margin_config()
    base_attack = cfg.attack_config()
    if base_attack is None:
        raise ConfigError("attack command needs adv.enabled=true")

    rows = []
    adv_dir = os.path.join(out_dir, "adv_audio")
    os.makedirs(adv_dir, exist_ok=True)
    for delta in cfg.delta_sweep():
        if delta == 0.0:
            x_adv = waves.copy()
        else:
            att = replace(base_attack, delta=delta)
            x_adv = pgd_attack(model, waves, labels, att, margin=margin)
            x_adv = substitute_bonafide(x_adv, waves, labels)
        acc = float(np.mean(_predictions(model, x_adv) == labels))
        max_pert = float(np.max(np.abs(x_adv - waves)))
        rows.append({"delta": delta, "accuracy": acc, "max_perturbation": max_pert})
        for e, row in list(zip(entries, x_adv))[: cfg["adv.dump_n"]]:
            save_wav(os.path.join(adv_dir, f"{e.utt}_delta{delta:g}.wav"),
                     np.asarray(row, dtype=np.float64), cfg["encoder.sample_rate"])

    with open(os.path.join(out_dir, "attack_report.txt"), "w") as f:
        f.write(f"clean_accuracy={clean_acc:.10g}\n")
        for r in rows:
            f.write(f"delta={r['delta']:g} accuracy={r['accuracy']:.10g} "
                    f"max_perturbation={r['max_perturbation']:.10g}\n")
    return rows
