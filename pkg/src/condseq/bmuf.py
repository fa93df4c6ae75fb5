"""Simulated multi-worker block-momentum SGD.

Workers copy the global parameters, run local SGD on their shard for a
block of steps, and a coordinator folds the averaged worker parameters
into a momentum-filtered global update:

    G(t)     = mean_w W_w - W(t-1)
    Delta(t) = eta * Delta(t-1) + zeta * G(t)
    W(t)     = W(t-1) + Delta(t)

With the Nesterov variant, workers start the next block from
W(t) + eta * Delta(t). Workers are executed deterministically and never
share mutable state; the aggregation is a single-threaded reduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InputError
from .model import LasModel
from .training import TrainConfig, TrainState, dev_loss, epoch_batches, next_lr, train_batch


@dataclass(frozen=True)
class BmufConfig:
    workers: int = 1
    block_steps: int = 10
    block_momentum: float | None = None  # None -> 0.9 * (1 - 1/W)
    block_lr: float = 1.0
    nesterov: bool = False

    def momentum(self) -> float:
        if self.block_momentum is None:
            return 0.9 * (1.0 - 1.0 / self.workers)
        return self.block_momentum

    def validate(self):
        if self.workers < 1 or self.block_steps < 1:
            raise InputError("workers and block_steps must be >= 1")
        if not 0.0 <= self.momentum() < 1.0:
            raise InputError("block momentum must be in [0, 1)")
        if self.block_lr <= 0:
            raise InputError("block_lr must be positive")


@dataclass
class GlobalState:
    params: dict
    delta: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, params: dict) -> "GlobalState":
        return cls(
            params={k: v.copy() for k, v in params.items()},
            delta={k: np.zeros_like(v) for k, v in params.items()},
        )


def make_shards(indices, workers: int) -> list[list]:
    """Round-robin deal of (already shuffled) indices to workers."""
    return [list(indices[w::workers]) for w in range(workers)]


def run_block(global_params: dict, worker_tasks, local_step_fn, log=None):
    """Run one block: each worker copies the global parameters and applies
    its tasks in order. Returns the per-worker parameter dicts.

    Workers are mutually independent; an empty task list contributes the
    unchanged copy (logged when a log callback is given).
    """
    if not worker_tasks:
        raise InputError("run_block: need at least one worker")
    results = []
    for w, tasks in enumerate(worker_tasks):
        local = {k: v.copy() for k, v in global_params.items()}
        n = 0
        for item in tasks:
            local_step_fn(local, item)
            n += 1
        if n == 0 and log is not None:
            log(f"block\tworker {w}\tempty shard, parameters unchanged")
        results.append(local)
    return results


def aggregate_block(state: GlobalState, worker_params, cfg: BmufConfig) -> GlobalState:
    """Fold worker results into a new global state (pure; inputs unchanged)."""
    if not worker_params:
        raise ContractError("aggregate_block: no worker parameters")
    names = list(state.params)
    for wp in worker_params:
        for k in names:
            if wp[k].shape != state.params[k].shape:
                raise ContractError(
                    f"aggregate_block: worker tensor {k} has shape {wp[k].shape}, "
                    f"expected {state.params[k].shape}"
                )
    W = len(worker_params)
    eta = cfg.momentum()
    zeta = cfg.block_lr
    new_params, new_delta = {}, {}
    for k in names:
        acc = worker_params[0][k].copy()
        for wp in worker_params[1:]:
            acc += wp[k]
        mean = acc / W
        g = mean - state.params[k]
        d = eta * state.delta[k] + zeta * g
        new_params[k] = state.params[k] + d
        new_delta[k] = d
    return GlobalState(params=new_params, delta=new_delta)


def broadcast_params(state: GlobalState, cfg: BmufConfig) -> dict:
    """Parameters workers start the next block from."""
    if cfg.nesterov:
        eta = cfg.momentum()
        return {k: state.params[k] + eta * state.delta[k] for k in state.params}
    return {k: v.copy() for k, v in state.params.items()}


def _chunk(seq, size):
    return [seq[i:i + size] for i in range(0, len(seq), size)]


def bmuf_train(model: LasModel, train_examples, dev_examples, cfg: TrainConfig,
               bcfg: BmufConfig, log=None) -> TrainState:
    """Epoch loop mirroring training.train_epochs with block-synchronized
    multi-worker updates. With (workers=1, momentum=0, block_lr=1) the
    parameter trajectory degenerates to sequential SGD."""
    cfg.validate()
    bcfg.validate()
    if not train_examples or not dev_examples:
        raise InputError("train and dev splits must be non-empty")
    mcfg = model.cfg

    state = TrainState(lr=cfg.lr, best_params=model.snapshot())
    state.best_val = dev_loss(model, dev_examples, cfg)
    gstate = GlobalState.fresh(model.param_arrays())
    dev_probe = dev_examples[:32]

    block_no = 0
    for epoch in range(1, cfg.epochs + 1):
        if state.lr < cfg.lr_floor:
            break
        rng = np.random.default_rng([cfg.seed, 82, epoch])
        perm = [int(i) for i in rng.permutation(len(train_examples))]
        shard_batches = [
            _chunk(shard, cfg.batch_size) for shard in make_shards(perm, bcfg.workers)
        ]
        n_blocks = max(
            (len(b) + bcfg.block_steps - 1) // bcfg.block_steps for b in shard_batches
        )
        lr = state.lr

        def step(arrays, batch, _epoch=epoch, _lr=lr):
            wm = LasModel.wrap_arrays(mcfg, arrays)
            pairs = [(idx, train_examples[idx]) for idx in batch]
            loss = train_batch(wm, pairs, cfg, _lr, _epoch)
            if log is not None:
                log(f"block\t{block_no}\tworker_loss\t{loss:.6f}")
            return loss

        for blk in range(n_blocks):
            lo, hi = blk * bcfg.block_steps, (blk + 1) * bcfg.block_steps
            tasks = [b[lo:hi] for b in shard_batches]
            start = broadcast_params(gstate, bcfg)
            workers = run_block(start, tasks, step, log=log)
            gstate = aggregate_block(gstate, workers, bcfg)
            block_no += 1
            if log is not None:
                probe_model = LasModel.from_arrays(mcfg, gstate.params)
                log(f"block\t{block_no}\tglobal_dev_loss\t"
                    f"{dev_loss(probe_model, dev_probe, cfg):.6f}")

        model.load_arrays(gstate.params)
        val = dev_loss(model, dev_examples, cfg)
        improved = val < state.best_val
        if improved:
            state.best_val = val
            state.best_params = model.snapshot()
        else:
            model.load_arrays(state.best_params)
            gstate = GlobalState.fresh(state.best_params)
        state.lr = next_lr(state.lr, improved, cfg.lr_decay)
        state.epoch = epoch
        if log is not None:
            log(f"epoch\t{epoch}\tdev\t{val:.6f}\tlr\t{state.lr:.6f}")
    model.load_arrays(state.best_params)
    return state
