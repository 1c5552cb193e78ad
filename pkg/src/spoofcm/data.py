"""Protocols, audio IO, fixed-length segmenting, and a synthetic corpus.

The synthetic corpus is a desk-scale stand-in for a real spoofing corpus:
bonafide utterances are harmonic complexes with a little pink noise, and
each attack id applies one distinct, easily-learnable artefact family to a
fresh bonafide-like base.  Everything is driven by one seeded generator in
a fixed order, so a given config regenerates byte-identical files.
"""

import csv
import wave
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, default_dtype, no_grad

BONAFIDE_KEY = "-"
ATTACK_IDS = ("A01", "A02", "A03", "A04", "A05", "A06")
SEGMENT_POLICIES = ("random_crop", "center", "repeat_pad")


# -- protocol files --------------------------------------------------------------

@dataclass
class ProtocolEntry:
    speaker: str
    utt: str
    system: str  # "-" for bonafide, else attack id
    key: str     # "bonafide" | "spoof"

    def validate(self) -> None:
        if self.key not in ("bonafide", "spoof"):
            raise ValueError(f"bad key {self.key!r} for {self.utt}")
        if (self.key == "bonafide") != (self.system == BONAFIDE_KEY):
            raise ValueError(
                f"{self.utt}: key {self.key!r} inconsistent with system {self.system!r}"
            )


def parse_protocol(path) -> list:
    """SPEAKER UTTID UNUSED SYSTEMID KEY, one entry per line, file order kept."""
    entries, seen = [], set()
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"{path}:{ln}: expected 5 fields, got {len(parts)}")
            speaker, utt, _unused, system, key = parts
            if utt in seen:
                raise ValueError(f"{path}:{ln}: duplicate utterance id {utt!r}")
            seen.add(utt)
            e = ProtocolEntry(speaker=speaker, utt=utt, system=system, key=key)
            try:
                e.validate()
            except ValueError as err:
                raise ValueError(f"{path}:{ln}: {err}") from None
            entries.append(e)
    return entries


def write_protocol(path, entries) -> None:
    with open(path, "w") as f:
        for e in entries:
            e.validate()
            f.write(f"{e.speaker} {e.utt} - {e.system} {e.key}\n")


def build_attack_index(entries) -> dict:
    """Maps attack id -> [utt ids], bonafide utts under BONAFIDE_KEY."""
    index = {}
    for e in entries:
        index.setdefault(e.system, []).append(e.utt)
    return index


# -- waveform IO and segmenting ---------------------------------------------------

@dataclass
class Waveform:
    samples: np.ndarray
    rate: int = 16000

    def validate(self) -> None:
        if self.samples.ndim != 1:
            raise ValueError("waveforms are mono 1-d arrays")
        if self.samples.size == 0:
            raise ValueError("empty waveform")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("non-finite samples")


def save_wav(path, samples: np.ndarray, rate: int = 16000) -> None:
    """16-bit PCM mono RIFF."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    ints = np.round(x * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(ints.tobytes())


def load_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    ints = np.frombuffer(raw, dtype="<i2")
    wav = Waveform(samples=ints.astype(np.float64) / 32768.0, rate=rate)
    wav.validate()
    return wav


def load_segment(wav: Waveform, target_len: int, policy: str, rng=None) -> np.ndarray:
    """Fixed-length view: tile short inputs, then crop per policy."""
    wav.validate()
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    if policy not in SEGMENT_POLICIES:
        raise ValueError(f"policy must be one of {SEGMENT_POLICIES}")
    x = wav.samples
    if x.size < target_len:
        reps = -(-target_len // x.size)  # ceil
        x = np.tile(x, reps)
    slack = x.size - target_len
    if policy == "random_crop":
        if rng is None:
            raise ValueError("random_crop needs an rng")
        start = int(rng.integers(0, slack + 1))
    elif policy == "center":
        start = slack // 2
    else:  # repeat_pad: deterministic head segment
        start = 0
    return x[start:start + target_len].copy()


def load_batch(entries, audio_dir, target_len: int, policy: str, rng=None):
    """Stack fixed-length segments for a list of protocol entries.

    Returns (waves (B, target_len) in the active training dtype,
    labels (B,) with bonafide=1/spoof=0).
    """
    waves = np.empty((len(entries), target_len), dtype=default_dtype())
    labels = np.empty(len(entries), dtype=np.int64)
    for i, e in enumerate(entries):
        wav = load_wav(f"{audio_dir}/{e.utt}.wav")
        waves[i] = load_segment(wav, target_len, policy, rng)
        labels[i] = 1 if e.key == "bonafide" else 0
    return waves, labels


# -- synthetic corpus --------------------------------------------------------------

@dataclass
class SynthCorpusConfig:
    """Counts, durations, and the held-out attack for the generated corpus."""

    n_attack_types: int = 6
    train_per_attack: int = 32
    dev_per_attack: int = 6
    eval_per_attack: int = 15
    train_bonafide: int = 80
    dev_bonafide: int = 30
    eval_bonafide: int = 30
    holdout_attack: str = "A05"
    dur_min: float = 0.8
    dur_max: float = 1.5
    sample_rate: int = 16000
    n_speakers: int = 12
    seed: int = 1234

    def attack_ids(self):
        if not 2 <= self.n_attack_types <= len(ATTACK_IDS):
            raise ValueError(f"n_attack_types must be in [2, {len(ATTACK_IDS)}]")
        ids = ATTACK_IDS[: self.n_attack_types]
        if self.holdout_attack not in ids:
            raise ValueError(f"holdout {self.holdout_attack!r} not among {ids}")
        return ids

    def validate(self) -> None:
        self.attack_ids()
        counts = (self.train_per_attack, self.dev_per_attack, self.eval_per_attack,
                  self.train_bonafide, self.dev_bonafide, self.eval_bonafide)
        if min(counts) < 1:
            raise ValueError("all per-split counts must be >= 1")
        if not 0 < self.dur_min <= self.dur_max:
            raise ValueError("bad duration range")
        if self.n_speakers < 1:
            raise ValueError("need at least one speaker id")


def _pink_noise(rng, n: int) -> np.ndarray:
    spec = rng.normal(size=n // 2 + 1) + 1j * rng.normal(size=n // 2 + 1)
    f = np.arange(n // 2 + 1, dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n=n)
    return x / (np.abs(x).max() + 1e-12)


def _fricative_bursts(rng, n: int, rate: int) -> np.ndarray:
    """Syllable-rate noise bursts in the 2.5-5.5 kHz band.

    Burst onsets repeat every 150-250 ms with 60-120 ms durations, so any
    window of ~0.31 s or longer is guaranteed to contain one full burst —
    a fixed-length training crop never sees an all-voiced stretch.
    """
    band = _rfft_mask(rng.normal(size=n), rate, lambda f: (f >= 2500) & (f <= 5500))
    band /= np.abs(band).max() + 1e-12
    env = np.zeros(n)
    edge = int(0.01 * rate)
    pos = int(rng.uniform(0.0, 0.1) * rate)
    while pos < n:
        dur = int(rng.uniform(0.06, 0.12) * rate)
        amp = rng.uniform(0.25, 0.5)
        lo, hi = pos, min(pos + dur, n)
        seg = np.full(hi - lo, amp)
        m = min(edge, seg.size // 2)
        if m > 0:
            fade = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, m))
            seg[:m] *= fade
            seg[seg.size - m:] *= fade[::-1]
        env[lo:hi] = np.maximum(env[lo:hi], seg)
        pos += int(rng.uniform(0.15, 0.25) * rate)
    return band * env


def _bonafide_base(rng, n: int, rate: int) -> np.ndarray:
    """Speech-like base: voiced harmonic complex plus fricative noise bursts.

    Random f0 with 3-5 partials carries the voiced part; syllabic bursts add
    the high-frequency consonant energy real speech has, and a little pink
    noise sits under everything.
    """
    t = np.arange(n) / rate
    f0 = rng.uniform(150.0, 300.0)
    n_partials = int(rng.integers(3, 6))
    rolloff = rng.uniform(0.7, 1.6)
    x = np.zeros(n)
    for k in range(1, n_partials + 1):
        x += k ** (-rolloff) * np.sin(2 * np.pi * f0 * k * t + rng.uniform(0, 2 * np.pi))
    x /= np.abs(x).max()
    x = x + _fricative_bursts(rng, n, rate)
    ramp = min(int(0.01 * rate), n // 4)
    env = np.ones(n)
    env[:ramp] = np.linspace(0.0, 1.0, ramp)
    env[n - ramp:] = np.linspace(1.0, 0.0, ramp)
    x = x * env + rng.uniform(0.01, 0.03) * _pink_noise(rng, n)
    return x / np.abs(x).max() * rng.uniform(0.35, 0.6)


def _rfft_mask(x: np.ndarray, rate: int, keep) -> np.ndarray:
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, d=1.0 / rate)
    spec[~keep(freqs)] = 0.0
    return np.fft.irfft(spec, n=x.size)


def apply_attack(attack_id: str, x: np.ndarray, rate: int, rng) -> np.ndarray:
    """One distinct artefact family per attack id."""
    t = np.arange(x.size) / rate
    if attack_id == "A01":  # band-limited resynthesis: low-pass + mid notch
        cutoff = rng.uniform(1800.0, 2400.0)
        notch = rng.uniform(600.0, 900.0)
        y = _rfft_mask(x, rate, lambda f: (f <= cutoff) & ~((f > notch - 60) & (f < notch + 60)))
    elif attack_id == "A02":  # 4-bit amplitude quantization
        y = np.clip(np.round(x * 8.0), -8, 7) / 8.0
    elif attack_id == "A03":  # additive mains hum
        y = x + rng.uniform(0.14, 0.22) * np.sin(2 * np.pi * 50.0 * t + rng.uniform(0, 2 * np.pi))
    elif attack_id == "A04":  # hard clipping
        c = rng.uniform(0.18, 0.32) * np.abs(x).max()
        y = np.clip(x, -c, c)
    elif attack_id == "A05":  # 6-8 kHz band noise
        noise = _rfft_mask(rng.normal(size=x.size), rate, lambda f: (f >= 6000) & (f <= 8000))
        noise /= np.sqrt(np.mean(noise ** 2)) + 1e-12
        y = x + rng.uniform(0.04, 0.09) * noise
    elif attack_id == "A06":  # ring modulation
        y = x * np.sin(2 * np.pi * rng.uniform(500.0, 1200.0) * t + rng.uniform(0, 2 * np.pi))
    else:
        raise ValueError(f"unknown attack id {attack_id!r}")
    return np.clip(y, -1.0, 1.0)


def gen_synthetic_corpus(cfg: SynthCorpusConfig, out_dir) -> dict:
    """Write audio/ plus train/dev/eval protocols under out_dir.

    The held-out attack appears only in the eval split.  Returns the
    protocol paths and entry lists per split.
    """
    import os

    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    attack_ids = cfg.attack_ids()
    audio_dir = os.path.join(str(out_dir), "audio")
    os.makedirs(audio_dir, exist_ok=True)

    split_plan = {
        "train": ("T", cfg.train_bonafide, cfg.train_per_attack,
                  [a for a in attack_ids if a != cfg.holdout_attack]),
        "dev": ("D", cfg.dev_bonafide, cfg.dev_per_attack,
                [a for a in attack_ids if a != cfg.holdout_attack]),
        "eval": ("E", cfg.eval_bonafide, cfg.eval_per_attack, list(attack_ids)),
    }

    out = {}
    for split, (tag, n_bona, n_per_attack, ids) in split_plan.items():
        entries = []
        counter = 0

        def emit(system, key, samples):
            nonlocal counter
            utt = f"SYN_{tag}_{counter:04d}"
            counter += 1
            speaker = f"SP{int(rng.integers(0, cfg.n_speakers)):03d}"
            save_wav(os.path.join(audio_dir, f"{utt}.wav"), samples, cfg.sample_rate)
            entries.append(ProtocolEntry(speaker=speaker, utt=utt, system=system, key=key))

        for _ in range(n_bona):
            n = int(rng.uniform(cfg.dur_min, cfg.dur_max) * cfg.sample_rate)
            emit(BONAFIDE_KEY, "bonafide", _bonafide_base(rng, n, cfg.sample_rate))
        for a in ids:
            for _ in range(n_per_attack):
                n = int(rng.uniform(cfg.dur_min, cfg.dur_max) * cfg.sample_rate)
                base = _bonafide_base(rng, n, cfg.sample_rate)
                emit(a, "spoof", apply_attack(a, base, cfg.sample_rate, rng))

        proto_path = os.path.join(str(out_dir), f"{split}_protocol.txt")
        write_protocol(proto_path, entries)
        out[split] = {"protocol": proto_path, "entries": entries}
    out["audio_dir"] = audio_dir
    return out


# -- embedding dump ----------------------------------------------------------------

def dump_embeddings(model, entries, audio_dir, out_path, batch_size: int = 16) -> None:
    """CSV of eval-mode main-bank embeddings, one row per utterance."""
    dim = model.cfg.embed_dim
    target_len = model.cfg.input_len
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["utt_id"] + [f"e{i:03d}" for i in range(dim)] + ["key"])
        for lo in range(0, len(entries), batch_size):
            chunk = entries[lo:lo + batch_size]
            waves, _ = load_batch(chunk, audio_dir, target_len, "center")
            with no_grad():
                emb, _logits = model.encode(Tensor(waves), bank="main", train=False)
            for e, row in zip(chunk, np.asarray(emb.data, dtype=np.float64)):
                writer.writerow([e.utt] + [f"{v:.8g}" for v in row] + [e.key])
