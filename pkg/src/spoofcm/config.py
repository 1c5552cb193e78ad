"""Flat key=value run configuration with includes and strict key checking.

Every key has a typed, documented default below; unknown keys are rejected
so typos fail loudly.  Values are parsed to the type of the default.  The
only environment override is RUN_DIR (replaces run.out), everything else
comes from config files or explicit CLI flags, keeping runs reproducible
from a single resolved file.
"""

import os

from .adversary import AttackConfig, StepConfig
from .data import SynthCorpusConfig
from .encoder import EncoderConfig
from .losses import MarginConfig
from .metrics import TdcfCostModel


class ConfigError(ValueError):
    pass


# key -> (default, help).  Comma lists are kept as strings and split on use.
DEFAULTS = {
    "run.out": ("runs/run", "run directory root (RUN_DIR env var overrides)"),
    "run.seeds": ("1", "comma list of seeds; each gets a seed_<n>/ subdirectory"),
    "data.dir": ("corpus", "corpus root holding audio/ and the protocol files"),
    "data.train_protocol": ("train_protocol.txt", "train protocol file under data.dir"),
    "data.dev_protocol": ("dev_protocol.txt", "dev protocol under data.dir; empty disables dev tracking"),
    "data.eval_protocol": ("eval_protocol.txt", "eval protocol file under data.dir"),
    "encoder.input_len": (64600, "waveform samples per training segment"),
    "encoder.sample_rate": (16000, "sample rate expected from the corpus"),
    "encoder.num_filters": (70, "band-pass filters in the sinc frontend"),
    "encoder.sinc_kernel_len": (129, "sinc kernel length (odd)"),
    "encoder.sinc_trainable": (False, "learn band edges' kernels as parameters"),
    "encoder.sinc_magnitude": (False, "absolute value after the sinc conv"),
    "encoder.sinc_pool": ("3,3", "frontend max-pool (freq,time)"),
    "encoder.block_channels": ("32,32,64,64,64,64", "residual block output channels"),
    "encoder.gru_hidden": (64, "GRU hidden width"),
    "encoder.embed_dim": (64, "embedding dimension"),
    "encoder.attention": ("simam", "none | se | cbam | simam"),
    "encoder.attention_position": ("auto", "auto | before_bn | after_bn"),
    "encoder.se_reduction": (8, "SE/CBAM bottleneck reduction"),
    "encoder.simam_lambda": (1e-4, "SimAM energy regularizer"),
    "loss.variant": ("waam", "ce | nsl | am | aam | waam"),
    "loss.scale": (32.0, "cosine logit scale"),
    "loss.margin_spoof": (0.2, "margin applied to spoof trials"),
    "loss.margin_genuine": (0.9, "margin applied to genuine trials"),
    "loss.weight_spoof": (0.9, "class weight for spoof"),
    "loss.weight_genuine": (0.1, "class weight for genuine"),
    "loss.fusion_lambda": (0.8, "weight of the classification loss in the fusion"),
    "meta.enabled": (True, "episodic training with the relation head"),
    "meta.K": (2, "samples per attack type in the support set"),
    "adv.enabled": (True, "adversarial branch of the training step"),
    "adv.delta": (0.002, "L-inf perturbation budget"),
    "adv.alpha": (0.0001, "PGD step size"),
    "adv.steps": (12, "PGD iterations"),
    "adv.attack_loss": ("ce", "inner-maximization head: ce | waam"),
    "adv.update_aux_stats": (False, "update aux BN stats during PGD iterations"),
    "adv.sweep": ("0.0001,0.001,0.002,0.01", "delta sweep for the attack command"),
    "adv.eval_n": (32, "utterances attacked by the attack command"),
    "adv.dump_n": (4, "adversarial wavs written per sweep point"),
    "optim.lr": (0.0001, "Adam learning rate"),
    "optim.lr_min": (0.0, "cosine schedule floor"),
    "optim.beta1": (0.9, "Adam beta1"),
    "optim.beta2": (0.999, "Adam beta2"),
    "optim.eps": (1e-8, "Adam epsilon"),
    "optim.epochs": (100, "training epochs"),
    "optim.batch": (16, "batch size when meta.enabled=false"),
    "optim.dtype": ("float64", "float64 | float32 training precision"),
    "eval.batch": (16, "evaluation batch size"),
    "metrics.bins": (40, "score histogram bins"),
    "tdcf.pi_tar": (0.9405, "target-speaker prior"),
    "tdcf.pi_non": (0.0095, "nontarget prior"),
    "tdcf.pi_spoof": (0.05, "spoof prior"),
    "tdcf.c_miss_asv": (1.0, "ASV miss cost"),
    "tdcf.c_fa_asv": (10.0, "ASV false-accept cost"),
    "tdcf.c_miss_cm": (1.0, "CM miss cost"),
    "tdcf.c_fa_cm": (10.0, "CM false-accept cost"),
    "tdcf.p_miss_asv": (0.05, "fixed ASV miss rate"),
    "tdcf.p_fa_asv": (0.05, "fixed ASV false-accept rate"),
    "tdcf.p_miss_spoof_asv": (0.05, "fixed ASV miss rate on spoofs"),
    "synth.n_attack_types": (6, "attack families in the synthetic corpus"),
    "synth.train_per_attack": (32, "train utterances per attack type"),
    "synth.dev_per_attack": (6, "dev utterances per attack type"),
    "synth.eval_per_attack": (15, "eval utterances per attack type"),
    "synth.train_bonafide": (80, "bonafide train utterances"),
    "synth.dev_bonafide": (30, "bonafide dev utterances"),
    "synth.eval_bonafide": (30, "bonafide eval utterances"),
    "synth.holdout_attack": ("A05", "attack absent from train and dev"),
    "synth.dur_min": (0.8, "minimum utterance seconds"),
    "synth.dur_max": (1.5, "maximum utterance seconds"),
    "synth.n_speakers": (12, "speaker-id pool size"),
    "synth.seed": (1234, "corpus generator seed"),
}

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _parse_value(key: str, raw: str):
    default = DEFAULTS[key][0]
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return raw


def parse_config_file(path, _depth: int = 0) -> dict:
    """key=value lines, '#' comments, blank lines, and 'include <path>'."""
    if _depth > 8:
        raise ConfigError(f"{path}: include chain too deep")
    values = {}
    base = os.path.dirname(os.path.abspath(str(path)))
    try:
        lines = open(path).read().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    for ln, line in enumerate(lines, 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("include "):
            inc = stripped[len("include "):].strip()
            if not os.path.isabs(inc):
                inc = os.path.join(base, inc)
            values.update(parse_config_file(inc, _depth + 1))
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{ln}: expected key=value, got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


class RunConfig:
    """Resolved configuration: defaults overlaid with file/CLI overrides."""

    def __init__(self, overrides: dict | None = None):
        self._values = {k: d for k, (d, _) in DEFAULTS.items()}
        for key, val in (overrides or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(val, str):
                val = _parse_value(key, val)
            self._values[key] = val
        if os.environ.get("RUN_DIR"):
            self._values["run.out"] = os.environ["RUN_DIR"]

    def __getitem__(self, key: str):
        try:
            return self._values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self._values[key] = value

    def items(self):
        return sorted(self._values.items())

    def dump(self, path) -> None:
        """Echo the fully resolved configuration, one sorted key=value per line."""
        with open(path, "w") as f:
            for key, val in self.items():
                if isinstance(val, bool):
                    val = "true" if val else "false"
                f.write(f"{key}={val}\n")

    # -- typed views --------------------------------------------------------

    def seeds(self) -> list:
        try:
            seeds = [int(s) for s in str(self["run.seeds"]).split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"run.seeds: bad list {self['run.seeds']!r}") from None
        if not seeds:
            raise ConfigError("run.seeds is empty")
        return seeds

    def delta_sweep(self) -> list:
        try:
            return [float(s) for s in str(self["adv.sweep"]).split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"adv.sweep: bad list {self['adv.sweep']!r}") from None

    def encoder_config(self) -> EncoderConfig:
        try:
            channels = tuple(int(c) for c in str(self["encoder.block_channels"]).split(","))
            pool = tuple(int(c) for c in str(self["encoder.sinc_pool"]).split(","))
        except ValueError:
            raise ConfigError("encoder.block_channels / sinc_pool: expected comma-separated ints") from None
        if len(pool) != 2:
            raise ConfigError("encoder.sinc_pool needs exactly two ints")
        enc = EncoderConfig(
            input_len=self["encoder.input_len"],
            sample_rate=self["encoder.sample_rate"],
            num_filters=self["encoder.num_filters"],
            sinc_kernel_len=self["encoder.sinc_kernel_len"],
            sinc_pool=pool,
            block_channels=channels,
            gru_hidden=self["encoder.gru_hidden"],
            embed_dim=self["encoder.embed_dim"],
            attention=self["encoder.attention"],
            attention_position=self["encoder.attention_position"],
            se_reduction=self["encoder.se_reduction"],
            simam_lambda=self["encoder.simam_lambda"],
            sinc_trainable=self["encoder.sinc_trainable"],
            sinc_magnitude=self["encoder.sinc_magnitude"],
        )
        try:
            enc.validate()
        except ValueError as e:
            raise ConfigError(f"encoder config: {e}") from None
        return enc

    def margin_config(self) -> MarginConfig:
        variant = self["loss.variant"]
        m = MarginConfig(
            variant=variant if variant != "ce" else "waam",
            scale=self["loss.scale"],
            margin_spoof=self["loss.margin_spoof"],
            margin_genuine=self["loss.margin_genuine"],
            weight_spoof=self["loss.weight_spoof"],
            weight_genuine=self["loss.weight_genuine"],
        )
        if variant != "ce":
            try:
                m.validate()
            except ValueError as e:
                raise ConfigError(f"loss config: {e}") from None
        return m

    def attack_config(self) -> AttackConfig | None:
        if not self["adv.enabled"]:
            return None
        a = AttackConfig(
            delta=self["adv.delta"],
            alpha=self["adv.alpha"],
            steps=self["adv.steps"],
            attack_loss=self["adv.attack_loss"],
            class_weights=(self["loss.weight_spoof"], self["loss.weight_genuine"]),
            update_aux_stats_during_attack=self["adv.update_aux_stats"],
        )
        try:
            a.validate()
        except ValueError as e:
            raise ConfigError(f"adv config: {e}") from None
        return a

    def step_config(self) -> StepConfig:
        s = StepConfig(
            variant=self["loss.variant"],
            margin=self.margin_config(),
            fusion_lambda=self["loss.fusion_lambda"],
            meta_enabled=self["meta.enabled"],
            attack=self.attack_config(),
        )
        try:
            s.validate()
        except ValueError as e:
            raise ConfigError(f"step config: {e}") from None
        return s

    def tdcf_model(self) -> TdcfCostModel:
        cm = TdcfCostModel(
            pi_tar=self["tdcf.pi_tar"],
            pi_non=self["tdcf.pi_non"],
            pi_spoof=self["tdcf.pi_spoof"],
            c_miss_asv=self["tdcf.c_miss_asv"],
            c_fa_asv=self["tdcf.c_fa_asv"],
            c_miss_cm=self["tdcf.c_miss_cm"],
            c_fa_cm=self["tdcf.c_fa_cm"],
            p_miss_asv=self["tdcf.p_miss_asv"],
            p_fa_asv=self["tdcf.p_fa_asv"],
            p_miss_spoof_asv=self["tdcf.p_miss_spoof_asv"],
        )
        try:
            cm.validate()
        except ValueError as e:
            raise ConfigError(f"tdcf config: {e}") from None
        return cm

    def synth_config(self) -> SynthCorpusConfig:
        sc = SynthCorpusConfig(
            n_attack_types=self["synth.n_attack_types"],
            train_per_attack=self["synth.train_per_attack"],
            dev_per_attack=self["synth.dev_per_attack"],
            eval_per_attack=self["synth.eval_per_attack"],
            train_bonafide=self["synth.train_bonafide"],
            dev_bonafide=self["synth.dev_bonafide"],
            eval_bonafide=self["synth.eval_bonafide"],
            holdout_attack=self["synth.holdout_attack"],
            dur_min=self["synth.dur_min"],
            dur_max=self["synth.dur_max"],
            sample_rate=self["encoder.sample_rate"],
            n_speakers=self["synth.n_speakers"],
            seed=self["synth.seed"],
        )
        try:
            sc.validate()
        except ValueError as e:
            raise ConfigError(f"synth config: {e}") from None
        return sc

    def protocol_path(self, which: str) -> str:
        name = self[f"data.{which}_protocol"]
        if not name:
            return ""
        if os.path.isabs(name):
            return name
        return os.path.join(str(self["data.dir"]), name)

    def audio_dir(self) -> str:
        return os.path.join(str(self["data.dir"]), "audio")


def load_config(paths, overrides: dict | None = None) -> RunConfig:
    """Overlay config files left to right, then explicit overrides."""
    merged = {}
    for p in paths or []:
        merged.update(parse_config_file(p))
    merged.update(overrides or {})
    if str(merged.get("optim.dtype", DEFAULTS["optim.dtype"][0])) not in ("float32", "float64"):
        raise ConfigError("optim.dtype must be float32 or float64")
    return RunConfig(merged)
