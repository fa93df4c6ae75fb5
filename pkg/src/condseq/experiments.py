"""Experiment matrix: independent, pooled, feature-injected and
fine-tuned models, with per-cell CER reports and cross-setup comparison.

Setups:
  S0   one model per dialect, trained on that dialect only
  S1   one model per (dialect, domain) cell
  S2   single pooled model, no conditioning
  S3   single pooled model, conditioning into the encoder
  S4   single pooled model, conditioning into the decoder
  S5   single pooled model, conditioning into encoder and decoder
  S2d/S5d  fine-tune the pooled model per dialect
  S2t/S5t  fine-tune the pooled model per (dialect, domain) cell
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint
from .decoding import cer, decode_examples, edit_distance
from .errors import ConfigError, ContractError, InputError
from .model import LasModel, ModelConfig
from .training import (
    TrainConfig,
    filter_examples,
    finetune,
    mwer_finetune,
    train_epochs,
)

_BASE = {"S0": None, "S1": None, "S2": None, "S3": None, "S4": None, "S5": None,
         "S2d": "S2", "S2t": "S2", "S5d": "S5", "S5t": "S5"}

_INJECTION = {"S0": "none", "S1": "none", "S2": "none", "S3": "encoder",
              "S4": "decoder", "S5": "both", "S2d": "none", "S2t": "none",
              "S5d": "both", "S5t": "both"}

_GRANULARITY = {"S0": "dialect", "S1": "cell", "S2": "pooled", "S3": "pooled",
                "S4": "pooled", "S5": "pooled", "S2d": "dialect", "S2t": "cell",
                "S5d": "dialect", "S5t": "cell"}

SETUP_IDS = tuple(_BASE)


@dataclass(frozen=True)
class ExperimentSetup:
    id: str
    injection: str
    granularity: str  # pooled | dialect | cell
    warmstart: str | None

    @classmethod
    def of(cls, setup_id: str) -> "ExperimentSetup":
        if setup_id not in _BASE:
            raise ConfigError(
                f"unknown setup id {setup_id!r}; valid ids: {', '.join(SETUP_IDS)}"
            )
        return cls(
            id=setup_id,
            injection=_INJECTION[setup_id],
            granularity=_GRANULARITY[setup_id],
            warmstart=_BASE[setup_id],
        )


@dataclass
class CerReport:
    setup: str
    cells: dict  # (dialect_id, domain_id) -> cer
    dialect_names: tuple
    domain_names: tuple

    def dialect_mean(self, dialect: int) -> float:
        vals = [v for (d, _), v in self.cells.items() if d == dialect]
        if not vals:
            raise InputError(f"no cells for dialect {dialect}")
        return float(np.mean(vals))

    def dialects(self):
        return sorted({d for d, _ in self.cells})

    def overall_mean(self) -> float:
        return float(np.mean(list(self.cells.values())))

    def to_text(self) -> str:
        doms = sorted({o for _, o in self.cells})
        header = ["dialect".ljust(14)] + [self.domain_names[o].rjust(8) for o in doms]
        lines = [f"setup {self.setup}", "".join(header)]
        for d in self.dialects():
            row = [self.dialect_names[d].ljust(14)]
            for o in doms:
                v = self.cells.get((d, o))
                row.append(("-" if v is None else f"{v:.4f}").rjust(8))
            lines.append("".join(row))
        lines.append("")
        for (d, o), v in sorted(self.cells.items()):
            lines.append(
                f"{self.setup}\t{self.dialect_names[d]}\t{self.domain_names[o]}\t{v:.6f}"
            )
        return "\n".join(lines) + "\n"


def parse_report(text: str, dialect_names, domain_names) -> CerReport:
    """Rebuild a report from its machine-readable lines."""
    cells = {}
    setup = None
    for line in text.split("\n"):
        parts = line.split("\t")
        if len(parts) != 4:
            continue
        setup = parts[0]
        d = dialect_names.index(parts[1])
        o = domain_names.index(parts[2])
        cells[(d, o)] = float(parts[3])
    if setup is None:
        raise InputError("no machine-readable report lines found")
    return CerReport(setup=setup, cells=cells, dialect_names=tuple(dialect_names),
                     domain_names=tuple(domain_names))


def cell_cer(ref_texts, hyp_texts) -> float:
    """Corpus-level CER for one cell: total edits / total reference chars."""
    errs, total = 0, 0
    for ref, hyp in zip(ref_texts, hyp_texts):
        if not ref:
            raise InputError("cer: empty reference")
        errs += edit_distance(ref, hyp)
        total += len(ref)
    return errs / total


@dataclass
class RunContext:
    """Everything a setup run needs besides the setup itself."""
    splits: dict  # split -> list[Example]
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    finetune_cfg: TrainConfig
    dialect_names: tuple
    domain_names: tuple
    decode_beam: int = 8
    decode_alpha: float = 0.1
    seed: int = 7
    out_dir: str = "."
    bpe_decode: object = None  # callable ids -> text
    log: object = None


def _hyp_text(ctx: RunContext, ids) -> str:
    if ctx.bpe_decode is None:
        return "".join(str(i) for i in ids)
    return ctx.bpe_decode(ids).replace(" ", "")


def cells_present(examples):
    return sorted({(ex.dialect, ex.domain) for ex in examples})


def _train_one(ctx: RunContext, setup: ExperimentSetup, examples_train,
               examples_dev, tag: str, warm: LasModel | None) -> LasModel:
    cfg = replace(ctx.model_cfg, injection=setup.injection)
    if warm is not None:
        model = LasModel.from_arrays(cfg, warm.snapshot())
        state = finetune(model, examples_train, examples_dev, ctx.finetune_cfg,
                         log=ctx.log)
    else:
        model = LasModel.init(cfg, ctx.seed)
        state = train_epochs(model, examples_train, examples_dev, ctx.train_cfg,
                             log=ctx.log)
        if ctx.train_cfg.mwer_epochs > 0:
            for _ in range(ctx.train_cfg.mwer_epochs):
                mwer_finetune(model, examples_train, ctx.train_cfg, log=ctx.log)
    path = os.path.join(ctx.out_dir, f"ckpt_{tag}.cseq")
    checkpoint.save(path, model)
    if ctx.log is not None:
        ctx.log(f"setup {setup.id}: saved {path} "
                f"(best dev loss {state.best_val:.4f})")
    return model


def evaluate_cells(ctx: RunContext, model: LasModel, cells) -> dict:
    out = {}
    test = ctx.splits["test"]
    for (d, o) in cells:
        examples = filter_examples(test, d, o)
        if not examples:
            continue
        decoded = decode_examples(model, examples, ctx.decode_beam, ctx.decode_alpha)
        refs = [_hyp_text(ctx, ref) for _, ref, _ in decoded]
        hyps = [_hyp_text(ctx, hyp) for _, _, hyp in decoded]
        out[(d, o)] = cell_cer(refs, hyps)
    return out


def run_setup(setup: ExperimentSetup, ctx: RunContext,
              warmstart: LasModel | None = None) -> CerReport:
    """Train (or fine-tune) the models a setup requires and score every
    covered test cell."""
    train = ctx.splits["train"]
    dev = ctx.splits["dev"]
    cells = cells_present(ctx.splits["test"])
    dialects = sorted({d for d, _ in cells})
    if setup.warmstart is not None and warmstart is None:
        raise ConfigError(
            f"setup {setup.id} needs a warm-start checkpoint from {setup.warmstart}"
        )
    report_cells = {}
    if setup.granularity == "pooled":
        model = _train_one(ctx, setup, train, dev, setup.id, None)
        report_cells = evaluate_cells(ctx, model, cells)
    elif setup.granularity == "dialect":
        for d in dialects:
            tr = filter_examples(train, d)
            if not tr:
                continue
            dv = filter_examples(dev, d) or tr[: max(1, len(tr) // 10)]
            model = _train_one(
                ctx, setup, tr, dv, f"{setup.id}_{ctx.dialect_names[d]}", warmstart
            )
            report_cells.update(
                evaluate_cells(ctx, model, [c for c in cells if c[0] == d])
            )
    elif setup.granularity == "cell":
        for (d, o) in cells:
            tr = filter_examples(train, d, o)
            if not tr:
                continue
            dv = filter_examples(dev, d, o) or tr[: max(1, len(tr) // 10)]
            tag = f"{setup.id}_{ctx.dialect_names[d]}_{ctx.domain_names[o]}"
            model = _train_one(ctx, setup, tr, dv, tag, warmstart)
            report_cells.update(evaluate_cells(ctx, model, [(d, o)]))
    else:
        raise ContractError(f"unknown granularity {setup.granularity}")
    return CerReport(
        setup=setup.id,
        cells=report_cells,
        dialect_names=tuple(ctx.dialect_names),
        domain_names=tuple(ctx.domain_names),
    )


def cerr(cer_a: float, cer_b: float) -> float:
    """Relative error-rate reduction going from system A to system B."""
    return (cer_a - cer_b) / cer_a


def aggregate(reports: list[CerReport]) -> str:
    """Cross-setup comparison: per-dialect unweighted-mean table plus
    pairwise relative reduction lines."""
    if not reports:
        raise InputError("aggregate: no reports")
    base = reports[0]
    for r in reports[1:]:
        if r.dialect_names != base.dialect_names or r.domain_names != base.domain_names:
            raise ContractError(
                "aggregate: reports come from different test definitions"
            )
    dialects = sorted({d for r in reports for d, _ in r.cells})
    lines = ["setup".ljust(8) + "".join(
        base.dialect_names[d].rjust(14) for d in dialects) + "overall".rjust(10)]
    for r in reports:
        row = [r.setup.ljust(8)]
        for d in dialects:
            try:
                row.append(f"{r.dialect_mean(d):.4f}".rjust(14))
            except InputError:
                row.append("-".rjust(14))
        row.append(f"{r.overall_mean():.4f}".rjust(10))
        lines.append("".join(row))
    lines.append("")
    for i, a in enumerate(reports):
        for b in reports[i + 1:]:
            shared = sorted(set(a.cells) & set(b.cells))
            if not shared:
                continue
            ma = float(np.mean([a.cells[c] for c in shared]))
            mb = float(np.mean([b.cells[c] for c in shared]))
            lines.append(
                f"CERR\t{a.setup}->{b.setup}\t{100.0 * cerr(ma, mb):+.2f}%"
            )
    return "\n".join(lines) + "\n"
