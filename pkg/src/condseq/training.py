"""Cross-entropy training with the full recipe, plus MWER fine-tuning.

Recipe: label smoothing, scheduled sampling, SpecAugment on encoder
input, global gradient-norm clipping, plain SGD, plateau learning-rate
decay with best-snapshot restore. Expected-risk (MWER) fine-tuning
rescores beam n-best lists with renormalized probabilities.

Utterances are processed one at a time and batch losses averaged before
each optimizer step, which is equivalent to masked padded batching for
these models and keeps shapes exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .errors import InputError
from .model import InferSession, LasModel

LOG_COLUMNS = "epoch\tsplit\tloss\tcer\tlr"


@dataclass(frozen=True)
class SpecAugmentConfig:
    enabled: bool = True
    time_masks: int = 1
    time_frac: float = 0.1
    freq_masks: int = 1
    freq_frac: float = 0.25


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.025
    lr_decay: float = 0.8
    lr_floor: float = 1e-4
    label_smoothing: float = 0.05
    sched_sampling: float = 0.1
    grad_clip: float = 5.0
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    specaug: SpecAugmentConfig = field(default_factory=SpecAugmentConfig)
    mwer_epochs: int = 0
    mwer_nbest: int = 4
    mwer_lambda: float = 0.05
    mwer_beam: int = 4
    mwer_lr: float = 0.005
    dev_cer_utts: int = 48

    def validate(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise InputError("label_smoothing must be in [0, 1)")
        if not 0.0 <= self.sched_sampling <= 1.0:
            raise InputError("sched_sampling must be in [0, 1]")
        if not 0.0 < self.lr_decay < 1.0:
            raise InputError("lr_decay must be in (0, 1)")
        if self.mwer_lambda < 0:
            raise InputError("mwer_lambda must be >= 0")
        if self.grad_clip <= 0:
            raise InputError("grad_clip must be positive")


@dataclass
class Example:
    """One training/eval item: features plus target token ids."""
    features: np.ndarray
    targets: list[int]
    dialect: int
    domain: int
    id: str = ""


def make_examples(utts, bpe_encode) -> list[Example]:
    """Bind utterances to model targets via a tokenizer encode callable."""
    return [
        Example(
            features=u.features,
            targets=bpe_encode(u.text),
            dialect=u.dialect,
            domain=u.domain,
            id=u.id,
        )
        for u in utts
    ]


@dataclass
class TrainState:
    epoch: int = 0
    lr: float = 0.0
    best_val: float = float("inf")
    best_params: dict | None = None
    log_lines: list = field(default_factory=list)
    mwer_skipped: int = 0


def next_lr(lr: float, improved: bool, decay: float) -> float:
    """Plateau rule: decay only on a non-improving validation epoch."""
    return lr if improved else lr * decay


def ce_loss(step_logits, targets, smoothing: float) -> ag.Tensor:
    """Mean label-smoothed cross entropy over decoder steps.

    Target distribution per step: (1 - eps) on the target plus eps/V
    uniform. With eps = 0 this is the negative mean log-likelihood.
    """
    if len(step_logits) != len(targets):
        raise InputError(
            f"ce_loss: {len(step_logits)} logit rows vs {len(targets)} targets"
        )
    if not targets:
        raise InputError("ce_loss: empty target sequence")
    eps = smoothing
    total = None
    for logits, y in zip(step_logits, targets):
        lp = ag.log_softmax(logits)
        v = logits.shape[-1]
        term = ag.mul(ag.take(lp, y), 1.0 - eps)
        if eps > 0.0:
            term = ag.add(term, ag.mul(ag.tsum(lp), eps / v))
        total = term if total is None else ag.add(total, term)
    return ag.mul(total, -1.0 / len(targets))


@dataclass
class SampledForward:
    """Per-step logits plus bookkeeping of what the decoder was fed."""
    logits: list
    fed_tokens: list
    sampled_steps: int


def forward_teacher_or_sampled(model: LasModel, ex: Example, p: float,
                               rng: np.random.Generator,
                               features=None) -> SampledForward:
    """Teacher forcing with scheduled sampling.

    At each step after the first, with probability p the previous input
    is the model's sampled prediction instead of the ground truth.
    """
    cond_ids = (ex.dialect, ex.domain)
    e_enc = model.combined("enc", cond_ids)
    e_dec = model.combined("dec", cond_ids)
    feats = ex.features if features is None else features
    memory = model.encode(np.asarray(feats, dtype=model.dtype), e_enc)
    keys = model.att_keys(memory)
    state = model.initial_state()
    targets = list(ex.targets) + [model.eos_id]
    prev = model.sos_id
    logits_rows = []
    fed = []
    sampled = 0
    for step, y in enumerate(targets):
        fed.append(prev)
        state, logits, _, _ = model.decode_step(prev, state, memory, keys, e_dec)
        logits_rows.append(logits)
        if p > 0.0 and rng.random() < p:
            probs = ag.softmax(logits.detach()).data
            prev = int(rng.choice(len(probs), p=probs))
            sampled += 1
        else:
            prev = y
    return SampledForward(logits=logits_rows, fed_tokens=fed, sampled_steps=sampled)


def spec_augment(x: np.ndarray, cfg: SpecAugmentConfig, rng) -> np.ndarray:
    """Zero random contiguous time and frequency bands (returns a copy)."""
    if not cfg.enabled or (cfg.time_masks == 0 and cfg.freq_masks == 0):
        return x
    out = x.copy()
    L, d = out.shape
    t_max = int(round(cfg.time_frac * L))
    for _ in range(cfg.time_masks):
        w = int(rng.integers(0, t_max + 1))
        if w > 0:
            start = int(rng.integers(0, L - w + 1))
            out[start:start + w, :] = 0.0
    f_max = int(round(cfg.freq_frac * d))
    for _ in range(cfg.freq_masks):
        w = int(rng.integers(0, f_max + 1))
        if w > 0:
            start = int(rng.integers(0, d - w + 1))
            out[:, start:start + w] = 0.0
    return out


def grad_global_norm(grads) -> float:
    sq = 0.0
    for g in grads.values():
        sq += float((g * g).sum())
    return float(np.sqrt(sq))


def clip_grad_norm(grads, max_norm: float) -> float:
    """Scale gradients in place to global L2 norm <= max_norm.

    Returns the pre-clip norm. Direction is preserved; zero gradients
    pass through unchanged.
    """
    if max_norm <= 0:
        raise InputError("max_norm must be positive")
    norm = grad_global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def sgd_step(model: LasModel, grads, lr: float):
    for name, t in model.params.items():
        g = grads.get(name)
        if g is not None:
            t.data -= lr * g


def collect_grads(model: LasModel):
    return {
        name: t.grad for name, t in model.params.items() if t.grad is not None
    }


def utterance_loss(model: LasModel, ex: Example, cfg: TrainConfig,
                   rng: np.random.Generator) -> ag.Tensor:
    feats = np.asarray(ex.features, dtype=model.dtype)
    if cfg.specaug.enabled:
        feats = spec_augment(feats, cfg.specaug, rng)
    fwd = forward_teacher_or_sampled(model, ex, cfg.sched_sampling, rng, features=feats)
    return ce_loss(fwd.logits, list(ex.targets) + [model.eos_id], cfg.label_smoothing)


def train_batch(model: LasModel, batch, cfg: TrainConfig, lr: float, epoch: int):
    """One optimizer step on a batch of (position, example) pairs."""
    total = None
    for pos, ex in batch:
        rng = np.random.default_rng([cfg.seed, 83, epoch, pos])
        loss = utterance_loss(model, ex, cfg, rng)
        total = loss if total is None else ag.add(total, loss)
    total = ag.mul(total, 1.0 / len(batch))
    ag.backward(total)
    grads = collect_grads(model)
    clip_grad_norm(grads, cfg.grad_clip)
    sgd_step(model, grads, lr)
    model.zero_grad()
    return float(total.data)


def epoch_batches(n: int, cfg: TrainConfig, epoch: int):
    """Seeded shuffle into batches of (position, index) pairs."""
    rng = np.random.default_rng([cfg.seed, 82, epoch])
    perm = rng.permutation(n)
    return [
        [(int(perm[j]), int(perm[j])) for j in range(i, min(i + cfg.batch_size, n))]
        for i in range(0, n, cfg.batch_size)
    ]


def dev_loss(model: LasModel, examples, cfg: TrainConfig) -> float:
    """Teacher-forced smoothed CE on a split (no sampling, no masking)."""
    total, steps = 0.0, 0
    eval_cfg = replace(cfg, sched_sampling=0.0,
                       specaug=replace(cfg.specaug, enabled=False))
    rng = np.random.default_rng(0)
    with ag.no_grad():
        for ex in examples:
            loss = utterance_loss(model, ex, eval_cfg, rng)
            n = len(ex.targets) + 1
            total += float(loss.data) * n
            steps += n
    return total / max(steps, 1)


def quick_cer(model: LasModel, examples, limit: int) -> float:
    """Greedy-decode CER on a capped prefix of a split (monitoring only)."""
    from .decoding import beam_search, edit_distance

    if limit <= 0 or not examples:
        return float("nan")
    errs, total = 0, 0
    for ex in examples[:limit]:
        sess = InferSession(model, ex.features, (ex.dialect, ex.domain))
        hyps = beam_search(sess, beam=1, alpha=0.0,
                           max_len=2 * sess.T + 10, eos_id=model.eos_id,
                           sos_id=model.sos_id)
        hyp = list(hyps[0].tokens[:-1]) if hyps[0].finished else list(hyps[0].tokens)
        errs += edit_distance(ex.targets, hyp)
        total += len(ex.targets)
    return errs / max(total, 1)


def train_epochs(model: LasModel, train_examples, dev_examples,
                 cfg: TrainConfig, log=None) -> TrainState:
    """CE training with plateau decay and best-snapshot restore."""
    cfg.validate()
    if not train_examples or not dev_examples:
        raise InputError("train and dev splits must be non-empty")
    state = TrainState(lr=cfg.lr, best_params=model.snapshot())
    state.best_val = dev_loss(model, dev_examples, cfg)
    _emit(state, log, 0, "dev", state.best_val,
          quick_cer(model, dev_examples, cfg.dev_cer_utts), state.lr)
    for epoch in range(1, cfg.epochs + 1):
        if state.lr < cfg.lr_floor:
            break
        batches = epoch_batches(len(train_examples), cfg, epoch)
        epoch_loss = 0.0
        for batch in batches:
            pairs = [(pos, train_examples[idx]) for pos, idx in batch]
            epoch_loss += train_batch(model, pairs, cfg, state.lr, epoch) * len(batch)
        epoch_loss /= len(train_examples)
        val = dev_loss(model, dev_examples, cfg)
        improved = val < state.best_val
        if improved:
            state.best_val = val
            state.best_params = model.snapshot()
        else:
            model.load_arrays(state.best_params)
        state.lr = next_lr(state.lr, improved, cfg.lr_decay)
        state.epoch = epoch
        _emit(state, log, epoch, "train", epoch_loss, float("nan"), state.lr)
        _emit(state, log, epoch, "dev", val,
              quick_cer(model, dev_examples, cfg.dev_cer_utts), state.lr)
    model.load_arrays(state.best_params)
    return state


def _emit(state: TrainState, log, epoch, split, loss, cer, lr):
    line = f"{epoch}\t{split}\t{loss:.6f}\t{cer:.6f}\t{lr:.6f}"
    state.log_lines.append(line)
    if log is not None:
        log(line)


def mwer_risk(log_probs, errors) -> ag.Tensor:
    """Expected-risk term over an n-best list.

    log_probs: list of scalar tensors; errors: per-hypothesis token error
    counts. Probabilities are renormalized over the list; the baseline is
    the plain n-best mean error, so equal errors give a zero-gradient
    constant.
    """
    w = np.asarray(errors, dtype=np.float64)
    w = w - w.mean()
    rows = [ag.reshape(lp, (1,)) for lp in log_probs]
    p_hat = ag.softmax(ag.concat(rows, axis=0))
    return ag.matmul(p_hat, ag.Tensor(w))


def mwer_finetune(model: LasModel, examples, cfg: TrainConfig, log=None) -> TrainState:
    """One epoch of expected-risk training interpolated with CE."""
    from .decoding import beam_search, edit_distance

    cfg.validate()
    if cfg.mwer_nbest < 2:
        raise InputError("mwer_nbest must be >= 2")
    state = TrainState(lr=cfg.mwer_lr)
    rng = np.random.default_rng([cfg.seed, 97])
    for pos, ex in enumerate(examples):
        sess = InferSession(model, ex.features, (ex.dialect, ex.domain))
        hyps = beam_search(sess, beam=max(cfg.mwer_beam, cfg.mwer_nbest), alpha=0.0,
                           max_len=2 * sess.T + 10, eos_id=model.eos_id,
                           sos_id=model.sos_id)
        finished = [h for h in hyps if h.finished][:cfg.mwer_nbest]
        if len(finished) < 2:
            state.mwer_skipped += 1
            continue
        errors = [
            edit_distance(ex.targets, list(h.tokens[:-1])) for h in finished
        ]
        cond_ids = (ex.dialect, ex.domain)
        feats = np.asarray(ex.features, dtype=model.dtype)
        log_probs = [
            model.sequence_log_prob(feats, list(h.tokens[:-1]), cond_ids)
            for h in finished
        ]
        loss = mwer_risk(log_probs, errors)
        if cfg.mwer_lambda > 0:
            fwd = forward_teacher_or_sampled(model, ex, 0.0, rng, features=feats)
            ce = ce_loss(fwd.logits, list(ex.targets) + [model.eos_id],
                         cfg.label_smoothing)
            loss = ag.add(loss, ag.mul(ce, cfg.mwer_lambda))
        ag.backward(loss)
        grads = collect_grads(model)
        clip_grad_norm(grads, cfg.grad_clip)
        sgd_step(model, grads, cfg.mwer_lr)
        model.zero_grad()
    if log is not None:
        log(f"mwer\tskipped\t{state.mwer_skipped}")
    return state


def filter_examples(examples, dialect=None, domain=None):
    out = [
        ex for ex in examples
        if (dialect is None or ex.dialect == dialect)
        and (domain is None or ex.domain == domain)
    ]
    return out


def finetune(model: LasModel, train_examples, dev_examples, cfg: TrainConfig,
             dialect=None, domain=None, log=None) -> TrainState:
    """Warm-start continuation on a dialect or (dialect, domain) slice."""
    tr = filter_examples(train_examples, dialect, domain)
    dv = filter_examples(dev_examples, dialect, domain)
    if not tr:
        raise InputError(
            f"finetune filter (dialect={dialect}, domain={domain}) matches no "
            "training utterances"
        )
    if not dv:
        dv = tr[: max(1, len(tr) // 10)]
    if cfg.epochs == 0:
        return TrainState(lr=cfg.lr, best_params=model.snapshot())
    return train_epochs(model, tr, dv, cfg, log=log)
