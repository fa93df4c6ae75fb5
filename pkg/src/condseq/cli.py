"""Batch command-line entry point.

Commands: gen-corpus, train-bpe, train, finetune, decode, eval,
run-matrix, count-params. Exit codes: 0 success, 1 runtime failure,
2 usage/config error. Any registry key can be passed as `--key value`;
flags win over --config file values. The fully resolved configuration is
echoed next to every artifact. CONDSEQ_THREADS caps worker/decoder
parallelism.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import checkpoint, config, corpus, tokenizer
from .bmuf import BmufConfig, bmuf_train
from .decoding import decode_examples
from .errors import CondseqError, ConfigError, ParseError
from .experiments import (
    SETUP_IDS,
    CerReport,
    ExperimentSetup,
    RunContext,
    aggregate,
    run_setup,
)
from .model import LasModel, ModelConfig, count_params, desk_config, paper_config, param_delta
from .training import (
    SpecAugmentConfig,
    TrainConfig,
    filter_examples,
    finetune,
    make_examples,
    mwer_finetune,
    train_epochs,
)

_MODEL_KEYS = (
    "enc_layers", "enc_cells", "enc_proj", "reduction", "att_heads",
    "att_dim", "dec_layers", "dec_cells", "emb_dim", "enc_inj_dim",
    "dec_inj_dim", "dtype",
)


def _parse_overrides(rest):
    pairs = []
    i = 0
    while i < len(rest):
        flag = rest[i]
        if not flag.startswith("--") or i + 1 >= len(rest):
            raise ConfigError(f"expected '--key value' pairs, got {rest[i:]}")
        pairs.append((flag[2:], rest[i + 1]))
        i += 2
    return pairs


def _train_cfg(cfg, seed) -> TrainConfig:
    return TrainConfig(
        lr=cfg["train.lr"],
        lr_decay=cfg["train.lr_decay"],
        lr_floor=cfg["train.lr_floor"],
        label_smoothing=cfg["train.label_smoothing"],
        sched_sampling=cfg["train.sched_sampling"],
        grad_clip=cfg["train.grad_clip"],
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        seed=seed,
        specaug=SpecAugmentConfig(
            enabled=cfg["train.specaug"],
            time_masks=cfg["train.specaug_time_masks"],
            time_frac=cfg["train.specaug_time_frac"],
            freq_masks=cfg["train.specaug_freq_masks"],
            freq_frac=cfg["train.specaug_freq_frac"],
        ),
        mwer_epochs=cfg["train.mwer_epochs"],
        mwer_nbest=cfg["train.mwer_nbest"],
        mwer_lambda=cfg["train.mwer_lambda"],
        mwer_beam=cfg["train.mwer_beam"],
        mwer_lr=cfg["train.mwer_lr"],
        dev_cer_utts=cfg["train.dev_cer_utts"],
    )


def _finetune_cfg(cfg, seed) -> TrainConfig:
    base = _train_cfg(cfg, seed)
    return replace(base, epochs=cfg["finetune.epochs"], lr=cfg["finetune.lr"])


def _bmuf_cfg(cfg) -> BmufConfig:
    bm = cfg["bmuf.block_momentum"]
    return BmufConfig(
        workers=cfg["bmuf.workers"],
        block_steps=cfg["bmuf.block_steps"],
        block_momentum=None if bm < 0 else bm,
        block_lr=cfg["bmuf.block_lr"],
        nesterov=cfg["bmuf.nesterov"],
    )


def _model_cfg(cfg, explicit, vocab_size, d_feat, injection=None) -> ModelConfig:
    preset = cfg["model.preset"]
    if preset == "paper":
        base = paper_config(vocab_size)
    elif preset == "desk":
        base = desk_config(vocab_size)
    else:
        raise ConfigError(f"unknown model.preset {preset!r}; expected desk or paper")
    kwargs = {"d_feat": d_feat}
    for key in _MODEL_KEYS:
        full = f"model.{key}"
        if preset == "desk" or full in explicit:
            kwargs[key] = cfg[full]
    kwargs["injection"] = injection if injection is not None else cfg["model.injection"]
    return replace(base, **kwargs)


def _profile(cfg) -> corpus.CorpusProfile:
    prof = corpus.default_profile(cfg["corpus.scale"])
    return replace(
        prof,
        vocab_size=cfg["corpus.vocab_size"],
        ambiguity=cfg["corpus.ambiguity"],
        noise_std=cfg["corpus.noise_std"],
        dialect_shift=cfg["corpus.dialect_shift"],
        d_feat=cfg["corpus.d_feat"],
        u_min=cfg["corpus.u_min"],
        u_max=cfg["corpus.u_max"],
        train_frac=cfg["corpus.train_frac"],
        dev_frac=cfg["corpus.dev_frac"],
    )


def _load_data(data_dir, cfg):
    manifest = os.path.join(data_dir, corpus.MANIFEST_NAME)
    utts = corpus.read_corpus(manifest)
    meta = corpus.read_meta(data_dir)
    if meta is not None:
        names = (tuple(meta["dialects"]), tuple(meta["domains"]))
        fracs = (meta.get("train_frac", cfg["corpus.train_frac"]),
                 meta.get("dev_frac", cfg["corpus.dev_frac"]))
    else:
        nd = max((u.dialect for u in utts), default=0) + 1
        no = max((u.domain for u in utts), default=0) + 1
        names = (tuple(f"dialect{i}" for i in range(nd)),
                 tuple(f"domain{i}" for i in range(no)))
        fracs = (cfg["corpus.train_frac"], cfg["corpus.dev_frac"])
    splits = corpus.split_corpus(utts, fracs[0], fracs[1])
    return utts, splits, names


def _resolve_member(name, names, kind):
    if name is None:
        return None
    if name in names:
        return names.index(name)
    try:
        idx = int(name)
    except ValueError:
        raise ConfigError(f"unknown {kind} {name!r}; expected one of {names}") from None
    if not 0 <= idx < len(names):
        raise ConfigError(f"{kind} id {idx} out of range [0, {len(names)})")
    return idx


def _example_splits(splits, bpe):
    return {
        split: make_examples(utts, lambda text: tokenizer.encode(bpe, text))
        for split, utts in splits.items()
    }


def _open_log(out_dir, name):
    f = open(os.path.join(out_dir, name), "w", encoding="utf-8")

    def log(line):
        f.write(line + "\n")
        f.flush()

    return f, log


def _echo(cfg, out_dir, name="resolved.cfg"):
    os.makedirs(out_dir, exist_ok=True)
    config.echo(cfg, os.path.join(out_dir, name))


# ---------------------------------------------------------------------------
# commands


def cmd_gen_corpus(args, cfg, explicit):
    prof = _profile(cfg)
    utts = corpus.generate_corpus(prof, cfg["seed"])
    os.makedirs(args.out, exist_ok=True)
    manifest = corpus.write_corpus(utts, args.out, profile=prof)
    _echo(cfg, args.out)
    print(f"wrote {len(utts)} utterances to {manifest}")
    return 0


def cmd_train_bpe(args, cfg, explicit):
    utts = corpus.read_corpus(os.path.join(args.data, corpus.MANIFEST_NAME))
    meta = corpus.read_meta(args.data) or {}
    tf = meta.get("train_frac", cfg["corpus.train_frac"])
    df = meta.get("dev_frac", cfg["corpus.dev_frac"])
    train = corpus.split_corpus(utts, tf, df)["train"]
    model = tokenizer.train_bpe([u.text for u in train], cfg["bpe.num_merges"])
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    tokenizer.save_model(model, args.out)
    _echo(cfg, os.path.dirname(os.path.abspath(args.out)))
    print(f"trained {len(model.merges)} merges, vocab {model.vocab_size} -> {args.out}")
    return 0


def cmd_train(args, cfg, explicit):
    utts, splits, names = _load_data(args.data, cfg)
    bpe = tokenizer.load_model(args.bpe)
    ex = _example_splits(splits, bpe)
    seed = cfg["seed"]
    d_feat = utts[0].features.shape[1] if utts else cfg["corpus.d_feat"]
    mcfg = _model_cfg(cfg, explicit, bpe.vocab_size, d_feat)
    mcfg = replace(mcfg, cardinalities=(len(names[0]), len(names[1])))
    di = _resolve_member(args.dialect, names[0], "dialect")
    do = _resolve_member(args.domain, names[1], "domain")
    train_ex = filter_examples(ex["train"], di, do)
    dev_ex = filter_examples(ex["dev"], di, do)
    if not train_ex:
        raise ConfigError("no training utterances after filtering")
    if not dev_ex:
        dev_ex = train_ex[: max(1, len(train_ex) // 10)]

    model = LasModel.init(mcfg, seed)
    tcfg = _train_cfg(cfg, seed)
    os.makedirs(args.out, exist_ok=True)
    _echo(cfg, args.out)
    logf, log = _open_log(args.out, "metrics.log")
    try:
        if tcfg.epochs > 0:
            if cfg["bmuf.workers"] > 1:
                bmuf_train(model, train_ex, dev_ex, tcfg, _bmuf_cfg(cfg), log=log)
            else:
                train_epochs(model, train_ex, dev_ex, tcfg, log=log)
        for _ in range(tcfg.mwer_epochs):
            mwer_finetune(model, train_ex, tcfg, log=log)
    finally:
        logf.close()
    ckpt = os.path.join(args.out, "ckpt_best.cseq")
    checkpoint.save(ckpt, model)
    print(f"saved {ckpt}")
    return 0


def cmd_finetune(args, cfg, explicit):
    utts, splits, names = _load_data(args.data, cfg)
    bpe = tokenizer.load_model(args.bpe)
    ex = _example_splits(splits, bpe)
    model = checkpoint.load(args.ckpt)
    di = _resolve_member(args.dialect, names[0], "dialect")
    do = _resolve_member(args.domain, names[1], "domain")
    if di is None and do is None:
        raise ConfigError("finetune needs --dialect and/or --domain")
    os.makedirs(args.out, exist_ok=True)
    _echo(cfg, args.out)
    logf, log = _open_log(args.out, "metrics.log")
    try:
        finetune(model, ex["train"], ex["dev"], _finetune_cfg(cfg, cfg["seed"]),
                 dialect=di, domain=do, log=log)
    finally:
        logf.close()
    ckpt = os.path.join(args.out, "ckpt_best.cseq")
    checkpoint.save(ckpt, model)
    print(f"saved {ckpt}")
    return 0


def cmd_decode(args, cfg, explicit):
    _, splits, names = _load_data(args.data, cfg)
    bpe = tokenizer.load_model(args.bpe)
    model = checkpoint.load(args.ckpt)
    examples = _example_splits(splits, bpe)[args.split]
    decoded = decode_examples(model, examples, cfg["decode.beam"],
                              cfg["decode.len_penalty"])
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as f:
        for uid, ref, hyp in decoded:
            f.write(f"{uid}\t{tokenizer.decode(bpe, ref)}\t{tokenizer.decode(bpe, hyp)}\n")
    print(f"decoded {len(decoded)} utterances -> {args.out}")
    return 0


def _make_context(args, cfg, explicit, names, ex_splits, bpe, out_dir, injection, log):
    d_feat = ex_splits["train"][0].features.shape[1] if ex_splits["train"] else cfg["corpus.d_feat"]
    mcfg = _model_cfg(cfg, explicit, bpe.vocab_size, d_feat, injection=injection)
    mcfg = replace(mcfg, cardinalities=(len(names[0]), len(names[1])))
    return RunContext(
        splits=ex_splits,
        model_cfg=mcfg,
        train_cfg=_train_cfg(cfg, cfg["seed"]),
        finetune_cfg=_finetune_cfg(cfg, cfg["seed"]),
        dialect_names=names[0],
        domain_names=names[1],
        decode_beam=cfg["decode.beam"],
        decode_alpha=cfg["decode.len_penalty"],
        seed=cfg["seed"],
        out_dir=out_dir,
        bpe_decode=lambda ids: tokenizer.decode(bpe, ids),
        log=log,
    )


def cmd_eval(args, cfg, explicit):
    _, splits, names = _load_data(args.data, cfg)
    bpe = tokenizer.load_model(args.bpe)
    ex = _example_splits(splits, bpe)
    model = checkpoint.load(args.ckpt)
    os.makedirs(args.out, exist_ok=True)
    _echo(cfg, args.out)
    ctx = _make_context(args, cfg, explicit, names, ex, bpe, args.out,
                        model.cfg.injection, None)
    from .experiments import cells_present, evaluate_cells

    cells = cells_present(ex[args.split])
    report = CerReport(
        setup=args.setup_id,
        cells=evaluate_cells(ctx, model, cells),
        dialect_names=names[0],
        domain_names=names[1],
    )
    path = os.path.join(args.out, f"report_{args.setup_id}.txt")
    with open(path, "w", encoding="utf-8") as f:
        f.write(report.to_text())
    print(f"wrote {path}")
    return 0


def cmd_run_matrix(args, cfg, explicit):
    setups = [s.strip() for s in args.setups.split(",") if s.strip()]
    for s in setups:
        if s not in SETUP_IDS:
            raise ConfigError(
                f"invalid setup id {s!r}; valid ids: {', '.join(SETUP_IDS)}"
            )
    ordered = [s for s in SETUP_IDS if s in setups]
    _, splits, names = _load_data(args.data, cfg)
    os.makedirs(args.out, exist_ok=True)
    _echo(cfg, args.out)
    if args.bpe:
        bpe = tokenizer.load_model(args.bpe)
    else:
        bpe_path = os.path.join(args.out, "bpe.model")
        bpe = tokenizer.train_bpe(
            [u.text for u in splits["train"]], cfg["bpe.num_merges"]
        )
        tokenizer.save_model(bpe, bpe_path)
    ex = _example_splits(splits, bpe)
    logf, log = _open_log(args.out, "train.log")
    reports = []
    try:
        for sid in ordered:
            setup = ExperimentSetup.of(sid)
            ctx = _make_context(args, cfg, explicit, names, ex, bpe, args.out,
                                setup.injection, log)
            warm = None
            if setup.warmstart is not None:
                base_path = os.path.join(args.out, f"ckpt_{setup.warmstart}.cseq")
                if not os.path.exists(base_path) and args.warmstart_dir:
                    base_path = os.path.join(
                        args.warmstart_dir, f"ckpt_{setup.warmstart}.cseq"
                    )
                if not os.path.exists(base_path):
                    raise ConfigError(
                        f"setup {sid} needs checkpoint ckpt_{setup.warmstart}.cseq; "
                        f"run setup {setup.warmstart} first or pass --warmstart-dir"
                    )
                warm = checkpoint.load(base_path)
            report = run_setup(setup, ctx, warmstart=warm)
            reports.append(report)
            with open(os.path.join(args.out, f"report_{sid}.txt"), "w",
                      encoding="utf-8") as f:
                f.write(report.to_text())
    finally:
        logf.close()
    with open(os.path.join(args.out, "comparison.txt"), "w", encoding="utf-8") as f:
        f.write(aggregate(reports))
    print(f"ran {len(reports)} setups -> {args.out}")
    return 0


def cmd_count_params(args, cfg, explicit):
    vocab = args.vocab if args.vocab else (19000 if args.preset == "paper" else 128)
    over = dict(explicit_model_overrides(cfg, explicit))
    if args.preset == "paper":
        base = paper_config(vocab, **over)
    elif args.preset == "desk":
        base = desk_config(vocab, **over)
    else:
        raise ConfigError("--preset must be desk or paper")
    base = replace(base, injection="none")
    n0 = count_params(base)
    print(f"preset {args.preset}: baseline parameters {n0:,}")
    modes = [args.inject] if args.inject else ["encoder", "decoder", "both"]
    for mode in modes:
        withm = replace(base, injection=mode)
        delta = param_delta(withm, base)
        print(f"injection {mode}: +{delta:,} parameters "
              f"({100.0 * delta / n0:.3f}% increase)")
    return 0


def explicit_model_overrides(cfg, explicit):
    for key in _MODEL_KEYS:
        full = f"model.{key}"
        if full in explicit:
            yield key, cfg[full]


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="condseq",
        description="conditioned sequence recognition toolkit",
    )
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="key = value config file")

    g = sub.add_parser("gen-corpus", help="generate the synthetic corpus")
    g.add_argument("--out", required=True)
    common(g)

    b = sub.add_parser("train-bpe", help="learn a BPE model from the train split")
    b.add_argument("--data", required=True)
    b.add_argument("--out", required=True)
    common(b)

    t = sub.add_parser("train", help="train a recognizer")
    t.add_argument("--data", required=True)
    t.add_argument("--bpe", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--dialect", default=None)
    t.add_argument("--domain", default=None)
    common(t)

    ft = sub.add_parser("finetune", help="continue training on a data slice")
    ft.add_argument("--ckpt", required=True)
    ft.add_argument("--data", required=True)
    ft.add_argument("--bpe", required=True)
    ft.add_argument("--out", required=True)
    ft.add_argument("--dialect", default=None)
    ft.add_argument("--domain", default=None)
    common(ft)

    d = sub.add_parser("decode", help="beam-decode a split to hypotheses")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--bpe", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--split", default="test", choices=("train", "dev", "test"))
    common(d)

    e = sub.add_parser("eval", help="decode and score per-cell CER")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--bpe", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", default="test", choices=("train", "dev", "test"))
    e.add_argument("--setup-id", default="eval", dest="setup_id")
    common(e)

    m = sub.add_parser("run-matrix", help="run experiment setups end to end")
    m.add_argument("--data", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--setups", required=True, help="comma-separated setup ids")
    m.add_argument("--bpe", default=None)
    m.add_argument("--warmstart-dir", default=None, dest="warmstart_dir")
    common(m)

    c = sub.add_parser("count-params", help="symbolic parameter accounting")
    c.add_argument("--preset", required=True)
    c.add_argument("--inject", default=None)
    c.add_argument("--vocab", type=int, default=None)
    common(c)
    return p


_HANDLERS = {
    "gen-corpus": cmd_gen_corpus,
    "train-bpe": cmd_train_bpe,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "run-matrix": cmd_run_matrix,
    "count-params": cmd_count_params,
}


def run(argv) -> int:
    parser = _build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        overrides = _parse_overrides(rest)
        cfg, explicit = config.resolve(getattr(args, "config", None), overrides)
        return _HANDLERS[args.cmd](args, cfg, explicit)
    except (ConfigError, ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CondseqError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
