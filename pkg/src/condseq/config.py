"""Flat dotted-key run configuration.

Config files are UTF-8 `key = value` lines with `#` comments; CLI flags
`--key value` override file values. Unknown keys are rejected. Every key
has a documented default (see REGISTRY / `condseq <cmd> --help`).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, ParseError


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass(frozen=True)
class Key:
    default: object
    type: type
    help: str


REGISTRY: dict[str, Key] = {
    "seed": Key(7, int, "master seed for corpus, init, shuffling"),
    # corpus generation
    "corpus.scale": Key(1.0, float, "multiplier on the default per-cell counts"),
    "corpus.vocab_size": Key(24, int, "synthetic symbol inventory size"),
    "corpus.ambiguity": Key(0.5, float, "fraction of symbols with cross-dialect template collisions"),
    "corpus.noise_std": Key(0.15, float, "frame noise stddev"),
    "corpus.dialect_shift": Key(0.25, float, "dialect deviation scale for unambiguous symbols"),
    "corpus.d_feat": Key(16, int, "feature dimension"),
    "corpus.u_min": Key(2, int, "min tokens per utterance"),
    "corpus.u_max": Key(6, int, "max tokens per utterance"),
    "corpus.train_frac": Key(0.75, float, "train split fraction"),
    "corpus.dev_frac": Key(0.1, float, "dev split fraction"),
    # tokenizer
    "bpe.num_merges": Key(64, int, "merge operations to learn"),
    # model
    "model.preset": Key("desk", str, "size preset: desk or paper"),
    "model.injection": Key("none", str, "none | encoder | decoder | both"),
    "model.enc_layers": Key(2, int, "encoder bi-LSTM layers"),
    "model.enc_cells": Key(32, int, "encoder cells per direction"),
    "model.enc_proj": Key(32, int, "encoder projection dim"),
    "model.reduction": Key(2, int, "time reduction factor"),
    "model.att_heads": Key(2, int, "attention heads"),
    "model.att_dim": Key(32, int, "attention output dim"),
    "model.dec_layers": Key(1, int, "decoder LSTM layers"),
    "model.dec_cells": Key(32, int, "decoder cells"),
    "model.emb_dim": Key(8, int, "categorical embedding dim"),
    "model.enc_inj_dim": Key(4, int, "encoder-site injection dim"),
    "model.dec_inj_dim": Key(8, int, "decoder-site injection dim"),
    "model.dtype": Key("fp64", str, "fp64 | fp32"),
    # trainer
    "train.lr": Key(0.025, float, "initial learning rate"),
    "train.lr_decay": Key(0.8, float, "plateau decay factor"),
    "train.lr_floor": Key(1e-4, float, "stop when lr falls below this"),
    "train.label_smoothing": Key(0.05, float, "label smoothing weight"),
    "train.sched_sampling": Key(0.1, float, "scheduled sampling probability"),
    "train.grad_clip": Key(5.0, float, "global gradient-norm clip"),
    "train.epochs": Key(10, int, "CE epochs"),
    "train.batch_size": Key(8, int, "utterances per optimizer step"),
    "train.specaug": Key(True, bool, "enable SpecAugment"),
    "train.specaug_time_masks": Key(1, int, "time masks per utterance"),
    "train.specaug_time_frac": Key(0.1, float, "max time-mask width as fraction of L"),
    "train.specaug_freq_masks": Key(1, int, "frequency masks per utterance"),
    "train.specaug_freq_frac": Key(0.25, float, "max freq-mask width as fraction of d_feat"),
    "train.mwer_epochs": Key(0, int, "expected-risk epochs after CE"),
    "train.mwer_nbest": Key(4, int, "n-best size for expected-risk training"),
    "train.mwer_lambda": Key(0.05, float, "CE interpolation weight during MWER"),
    "train.mwer_beam": Key(4, int, "beam for n-best generation"),
    "train.mwer_lr": Key(0.005, float, "learning rate during MWER"),
    "train.dev_cer_utts": Key(48, int, "dev utterances greedy-scored per epoch (0 = off)"),
    # fine-tuning
    "finetune.epochs": Key(3, int, "fine-tune epochs"),
    "finetune.lr": Key(0.0125, float, "fine-tune initial learning rate"),
    # bmuf
    "bmuf.workers": Key(1, int, "simulated workers (1 = sequential SGD)"),
    "bmuf.block_steps": Key(10, int, "optimizer steps per worker per sync"),
    "bmuf.block_momentum": Key(-1.0, float, "block momentum; -1 = 0.9*(1-1/W)"),
    "bmuf.block_lr": Key(1.0, float, "block learning rate"),
    "bmuf.nesterov": Key(False, bool, "Nesterov-style broadcast"),
    # decoding
    "decode.beam": Key(8, int, "beam size"),
    "decode.len_penalty": Key(0.1, float, "length penalty alpha"),
}


def parse_value(key: str, raw: str):
    spec = REGISTRY.get(key)
    if spec is None:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if spec.type is bool:
            return _bool(raw)
        return spec.type(raw)
    except ValueError:
        raise ConfigError(
            f"config key {key}: cannot parse {raw!r} as {spec.type.__name__}"
        ) from None


def defaults() -> dict:
    return {k: spec.default for k, spec in REGISTRY.items()}


def load_file(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ParseError(f"expected 'key = value', got {stripped!r}", line=n)
            key, raw = (s.strip() for s in stripped.split("=", 1))
            try:
                out[key] = parse_value(key, raw)
            except ConfigError as e:
                raise ConfigError(f"{path}:{n}: {e}") from None
    return out


def resolve(config_path=None, overrides=None) -> tuple[dict, set]:
    """defaults <- file <- flag overrides.

    Returns (full config, set of explicitly-set keys); explicitness
    decides whether a key overrides a non-default model preset.
    """
    cfg = defaults()
    explicit = set()
    if config_path:
        loaded = load_file(config_path)
        cfg.update(loaded)
        explicit |= set(loaded)
    for key, raw in (overrides or []):
        cfg[key] = parse_value(key, raw)
        explicit.add(key)
    return cfg, explicit


def echo(cfg: dict, path) -> None:
    """Write the fully resolved configuration next to an artifact."""
    with open(path, "w", encoding="utf-8") as f:
        for key in sorted(cfg):
            f.write(f"{key} = {cfg[key]}\n")
