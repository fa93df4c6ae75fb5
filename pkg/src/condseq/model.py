"""Attention encoder-decoder recognizer with categorical conditioning.

Encoder: stacked bidirectional LSTM with a single frame-concatenation
time reduction (factor N, applied after the first layer) and a linear
projection after every layer. Decoder: unidirectional LSTM driven by
the previous token embedding and a multi-head additive-attention
context, followed by a one-hidden-layer generation network over
[state, context]. Categorical conditioning is appended to encoder input
frames and/or concatenated with the context vector per the configured
injection mode.

Two forward paths exist: the autograd path used for training and
scoring, and InferSession, a batched numpy path used by beam search.
Tests pin them to each other.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import _kernels as K
from . import autograd as ag
from . import conditioning as cond
from .errors import DimensionError, InputError
from .tokenizer import EOS_ID, SOS_ID

DTYPES = {"fp64": np.float64, "fp32": np.float32}


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_feat: int = 16
    enc_layers: int = 2
    enc_cells: int = 32
    enc_proj: int = 32
    reduction: int = 2
    att_heads: int = 2
    att_dim: int = 32
    dec_layers: int = 1
    dec_cells: int = 32
    injection: str = "none"
    feature_names: tuple[str, ...] = ("dialect", "domain")
    cardinalities: tuple[int, ...] = (4, 6)
    emb_dim: int = 8
    enc_inj_dim: int = 4
    dec_inj_dim: int = 8
    dtype: str = "fp64"

    @property
    def cat_spec(self) -> cond.CategoricalSpec:
        return cond.CategoricalSpec(
            names=self.feature_names,
            cardinalities=self.cardinalities,
            emb_dim=self.emb_dim,
            enc_dim=self.enc_inj_dim,
            dec_dim=self.dec_inj_dim,
        )

    def validate(self):
        dims = (
            self.vocab_size, self.d_feat, self.enc_layers, self.enc_cells,
            self.enc_proj, self.reduction, self.att_heads, self.att_dim,
            self.dec_layers, self.dec_cells,
        )
        if any(d < 1 for d in dims):
            raise InputError("all model dimensions must be positive")
        if self.att_dim % self.att_heads != 0:
            raise InputError("att_dim must be divisible by att_heads")
        if self.reduction > 1 and self.enc_layers < 2:
            raise InputError("time reduction needs at least 2 encoder layers")
        if self.injection not in cond.INJECTION_MODES:
            raise InputError(
                f"unknown injection mode {self.injection!r}; "
                f"expected one of {cond.INJECTION_MODES}"
            )
        if self.dtype not in DTYPES:
            raise InputError(f"dtype must be one of {tuple(DTYPES)}")
        self.cat_spec.validate()


def desk_config(vocab_size: int, **overrides) -> ModelConfig:
    return replace(ModelConfig(vocab_size=vocab_size), **overrides)


def paper_config(vocab_size: int = 19000, **overrides) -> ModelConfig:
    """Full-scale dimensions, used mainly for parameter accounting."""
    base = ModelConfig(
        vocab_size=vocab_size,
        d_feat=80,
        enc_layers=5,
        enc_cells=1200,
        enc_proj=600,
        reduction=4,
        att_heads=4,
        att_dim=1200,
        dec_layers=2,
        dec_cells=800,
        emb_dim=80,
        enc_inj_dim=20,
        dec_inj_dim=160,
    )
    return replace(base, **overrides)


PRESETS = {"desk": desk_config, "paper": paper_config}


def _enc_input_dim(cfg: ModelConfig, layer: int) -> int:
    if layer == 0:
        extra = cfg.enc_inj_dim if cfg.injection in ("encoder", "both") else 0
        return cfg.d_feat + extra
    if layer == 1:
        return cfg.enc_proj * cfg.reduction
    return cfg.enc_proj


def _dec_input_dim(cfg: ModelConfig, layer: int) -> int:
    if layer == 0:
        extra = cfg.dec_inj_dim if cfg.injection in ("decoder", "both") else 0
        return cfg.dec_cells + cfg.att_dim + extra
    return cfg.dec_cells


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Declared shapes of every parameter tensor, in a fixed order.

    Single source of truth for initialization, checkpointing and
    parameter accounting.
    """
    cfg.validate()
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(cfg.enc_layers):
        din = _enc_input_dim(cfg, i)
        for d in ("fwd", "bwd"):
            shapes[f"enc.l{i}.{d}.wx"] = (din, 4 * cfg.enc_cells)
            shapes[f"enc.l{i}.{d}.wh"] = (cfg.enc_cells, 4 * cfg.enc_cells)
            shapes[f"enc.l{i}.{d}.b"] = (4 * cfg.enc_cells,)
        shapes[f"enc.l{i}.proj"] = (2 * cfg.enc_cells, cfg.enc_proj)
    hd = cfg.att_dim // cfg.att_heads
    for a in range(cfg.att_heads):
        shapes[f"att.h{a}.wq"] = (cfg.dec_cells, hd)
        shapes[f"att.h{a}.wm"] = (cfg.enc_proj, hd)
        shapes[f"att.h{a}.b"] = (hd,)
        shapes[f"att.h{a}.v"] = (hd,)
    shapes["att.out.w"] = (cfg.att_heads * cfg.enc_proj, cfg.att_dim)
    shapes["att.out.b"] = (cfg.att_dim,)
    shapes["dec.emb"] = (cfg.vocab_size, cfg.dec_cells)
    for i in range(cfg.dec_layers):
        shapes[f"dec.l{i}.wx"] = (_dec_input_dim(cfg, i), 4 * cfg.dec_cells)
        shapes[f"dec.l{i}.wh"] = (cfg.dec_cells, 4 * cfg.dec_cells)
        shapes[f"dec.l{i}.b"] = (4 * cfg.dec_cells,)
    shapes["gen.hidden.w"] = (cfg.dec_cells + cfg.att_dim, cfg.dec_cells)
    shapes["gen.hidden.b"] = (cfg.dec_cells,)
    shapes["gen.out.w"] = (cfg.dec_cells, cfg.vocab_size)
    shapes["gen.out.b"] = (cfg.vocab_size,)
    shapes.update(cond.param_shapes(cfg.cat_spec, cfg.injection))
    return shapes


def count_params(cfg: ModelConfig) -> int:
    """Exact symbolic parameter count; never allocates."""
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def param_delta(cfg_a: ModelConfig, cfg_b: ModelConfig) -> int:
    return count_params(cfg_a) - count_params(cfg_b)


def _init_array(name: str, shape, rng, dtype, cells_of) -> np.ndarray:
    if name.endswith(".b") and (name.startswith("enc.") or name.startswith("dec.l")):
        b = np.zeros(shape, dtype=dtype)
        h = cells_of(name)
        b[h:2 * h] = 1.0  # forget-gate bias
        return b
    if name.endswith(".b") or name.startswith("cond.b.") or name.endswith(".hidden.b") \
            or name.endswith(".out.b"):
        return np.zeros(shape, dtype=dtype)
    if name == "dec.emb" or name.startswith("cond.E."):
        return (0.1 * rng.standard_normal(shape)).astype(dtype)
    limit = np.sqrt(6.0 / sum(shape)) if len(shape) > 1 else np.sqrt(3.0 / shape[0])
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class LasModel:
    def __init__(self, cfg: ModelConfig, params: dict[str, ag.Tensor]):
        cfg.validate()
        self.cfg = cfg
        self.spec = cfg.cat_spec
        self.params = params
        self.sos_id = SOS_ID if cfg.vocab_size > SOS_ID else 0
        self.eos_id = EOS_ID if cfg.vocab_size > EOS_ID else cfg.vocab_size - 1

    # -- construction ------------------------------------------------------

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int) -> "LasModel":
        dtype = DTYPES[cfg.dtype]
        shapes = param_shapes(cfg)

        def cells_of(name):
            return cfg.enc_cells if name.startswith("enc.") else cfg.dec_cells

        params = {}
        for idx, (name, shape) in enumerate(shapes.items()):
            rng = np.random.default_rng([seed, 7, idx])
            params[name] = ag.Tensor(
                _init_array(name, shape, rng, dtype, cells_of), requires_grad=True
            )
        return cls(cfg, params)

    @classmethod
    def from_arrays(cls, cfg: ModelConfig, arrays: dict[str, np.ndarray]) -> "LasModel":
        shapes = param_shapes(cfg)
        missing = set(shapes) - set(arrays)
        if missing:
            raise InputError(f"missing parameter tensors: {sorted(missing)}")
        dtype = DTYPES[cfg.dtype]
        params = {}
        for name, shape in shapes.items():
            arr = np.asarray(arrays[name], dtype=dtype)
            if arr.shape != shape:
                raise DimensionError(
                    f"parameter {name}: expected shape {shape}, got {arr.shape}"
                )
            params[name] = ag.Tensor(arr.copy(), requires_grad=True)
        return cls(cfg, params)

    @classmethod
    def wrap_arrays(cls, cfg: ModelConfig, arrays: dict[str, np.ndarray]) -> "LasModel":
        """Wrap existing arrays without copying; updates are visible to the
        caller's dict (used by the multi-worker optimizer)."""
        shapes = param_shapes(cfg)
        dtype = DTYPES[cfg.dtype]
        params = {}
        for name, shape in shapes.items():
            arr = arrays[name]
            if arr.shape != shape or arr.dtype != dtype:
                raise DimensionError(
                    f"parameter {name}: expected {shape} {dtype}, "
                    f"got {arr.shape} {arr.dtype}"
                )
            t = ag.Tensor(arr, requires_grad=True)
            params[name] = t
        return cls(cfg, params)

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for name, t in self.params.items():
            src = arrays[name]
            if src.shape != t.data.shape:
                raise DimensionError(f"parameter {name}: shape mismatch")
            t.data = np.asarray(src, dtype=t.data.dtype).copy()

    def zero_grad(self):
        ag.zero_grads(self.params.values())

    def clone(self) -> "LasModel":
        return LasModel.from_arrays(self.cfg, self.snapshot())

    @property
    def dtype(self):
        return DTYPES[self.cfg.dtype]

    # -- conditioning ------------------------------------------------------

    def combined(self, site: str, ids) -> Optional[ag.Tensor]:
        """Combined feature vector for a site, or None when inactive."""
        if site not in cond.active_sites(self.cfg.injection) or ids is None:
            return None
        return cond.combine(self.params, self.spec, site, ids)

    # -- encoder -----------------------------------------------------------

    def encode(self, x, e_enc: Optional[ag.Tensor] = None) -> ag.Tensor:
        """Map features [L, d_feat] to encoder memory [ceil(L/N), proj]."""
        if not isinstance(x, ag.Tensor):
            x = ag.Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim != 2 or x.shape[0] < 1:
            raise InputError(f"encoder input must be [L >= 1, d_feat], got {x.shape}")
        h = cond.inject_encoder(x, e_enc)
        expect = _enc_input_dim(self.cfg, 0)
        if h.shape[1] != expect:
            raise DimensionError(
                f"encoder input width {h.shape[1]} != expected {expect} "
                f"(d_feat plus injection)"
            )
        p = self.params
        for i in range(self.cfg.enc_layers):
            fwd = ag.lstm_seq(h, p[f"enc.l{i}.fwd.wx"], p[f"enc.l{i}.fwd.wh"],
                              p[f"enc.l{i}.fwd.b"])
            bwd = ag.lstm_seq(h, p[f"enc.l{i}.bwd.wx"], p[f"enc.l{i}.bwd.wh"],
                              p[f"enc.l{i}.bwd.b"], reverse=True)
            h = ag.matmul(ag.concat([fwd, bwd], axis=1), p[f"enc.l{i}.proj"])
            if i == 0 and self.cfg.reduction > 1:
                h = self._reduce(h)
        return h

    def _reduce(self, h: ag.Tensor) -> ag.Tensor:
        n = self.cfg.reduction
        length = h.shape[0]
        t_out = -(-length // n)
        h = ag.pad_rows(h, t_out * n - length)
        return ag.reshape(h, (t_out, n * h.shape[1]))

    def memory_length(self, L: int) -> int:
        return -(-L // self.cfg.reduction) if self.cfg.reduction > 1 else L

    # -- attention ---------------------------------------------------------

    def att_keys(self, memory: ag.Tensor) -> list[ag.Tensor]:
        """Per-head projected memory, computed once per utterance."""
        return [
            ag.matmul(memory, self.params[f"att.h{a}.wm"])
            for a in range(self.cfg.att_heads)
        ]

    def attend(self, memory: ag.Tensor, keys: list[ag.Tensor], query: ag.Tensor):
        """Additive multi-head attention.

        Returns (context [att_dim], weights [heads, T] numpy).
        """
        if memory.shape[0] < 1:
            raise InputError("attend: empty memory")
        p = self.params
        T = memory.shape[0]
        contexts = []
        betas = np.empty((self.cfg.att_heads, T), dtype=self.dtype)
        for a in range(self.cfg.att_heads):
            qp = ag.add(ag.matmul(query, p[f"att.h{a}.wq"]), p[f"att.h{a}.b"])
            scores = ag.matmul(ag.tanh(ag.add(keys[a], ag.tile_rows(qp, T))),
                               p[f"att.h{a}.v"])
            w = ag.softmax(scores, axis=-1)
            betas[a] = w.data
            contexts.append(ag.matmul(w, memory))
        c = ag.add(ag.matmul(ag.concat(contexts, axis=0), p["att.out.w"]),
                   p["att.out.b"])
        return c, betas

    # -- decoder -----------------------------------------------------------

    def initial_state(self):
        z = np.zeros((1, self.cfg.dec_cells), dtype=self.dtype)
        return [(ag.Tensor(z), ag.Tensor(z.copy())) for _ in range(self.cfg.dec_layers)]

    def decode_step(self, y_prev: int, state, memory: ag.Tensor,
                    keys: list[ag.Tensor], e_dec: Optional[ag.Tensor] = None):
        """Advance the decoder one step.

        Returns (new_state, logits [vocab], context, attention weights).
        """
        if not 0 <= y_prev < self.cfg.vocab_size:
            raise InputError(
                f"token id {y_prev} out of range [0, {self.cfg.vocab_size})"
            )
        p = self.params
        query = ag.reshape(state[-1][0], (self.cfg.dec_cells,))
        c, betas = self.attend(memory, keys, query)
        emb = ag.gather_rows(p["dec.emb"], y_prev)
        x = ag.concat([emb, cond.inject_decoder(c, e_dec)], axis=0)
        x = ag.reshape(x, (1, x.shape[0]))
        new_state = []
        for i, (h_prev, c_prev) in enumerate(state):
            h_i, c_i = ag.lstm_cell(x, h_prev, c_prev, p[f"dec.l{i}.wx"],
                                    p[f"dec.l{i}.wh"], p[f"dec.l{i}.b"])
            new_state.append((h_i, c_i))
            x = h_i
        s = ag.reshape(new_state[-1][0], (self.cfg.dec_cells,))
        hidden = ag.tanh(ag.add(ag.matmul(ag.concat([s, c], axis=0), p["gen.hidden.w"]),
                                p["gen.hidden.b"]))
        logits = ag.add(ag.matmul(hidden, p["gen.out.w"]), p["gen.out.b"])
        return new_state, logits, c, betas

    # -- scoring -----------------------------------------------------------

    def sequence_log_prob(self, features, tokens, cond_ids=None) -> ag.Tensor:
        """Teacher-forced log P(tokens, <eos> | features, conditioning)."""
        e_enc = self.combined("enc", cond_ids)
        e_dec = self.combined("dec", cond_ids)
        memory = self.encode(features, e_enc)
        keys = self.att_keys(memory)
        state = self.initial_state()
        prev = self.sos_id
        total = None
        for y in list(tokens) + [self.eos_id]:
            state, logits, _, _ = self.decode_step(prev, state, memory, keys, e_dec)
            lp = ag.take(ag.log_softmax(logits), y)
            total = lp if total is None else ag.add(total, lp)
            prev = y
        return total


class InferSession:
    """Batched numpy inference over one utterance (no tape).

    Encoder memory and attention keys are computed once through the
    autograd path under no_grad; per-step decoding is plain numpy so a
    whole beam advances per call. Kept numerically aligned with
    decode_step (pinned by tests).
    """

    def __init__(self, model: LasModel, features, cond_ids=None):
        with ag.no_grad():
            e_enc = model.combined("enc", cond_ids)
            memory = model.encode(features, e_enc)
            keys = model.att_keys(memory)
            e_dec = model.combined("dec", cond_ids)
        self.model = model
        self.memory = memory.data
        self.keys = [k.data for k in keys]
        self.e_dec = None if e_dec is None else e_dec.data
        self.p = model.param_arrays()
        self.T = self.memory.shape[0]

    def start(self, batch: int = 1):
        H = self.model.cfg.dec_cells
        dt = self.model.dtype
        return [
            (np.zeros((batch, H), dtype=dt), np.zeros((batch, H), dtype=dt))
            for _ in range(self.model.cfg.dec_layers)
        ]

    def step(self, tokens, state):
        """Advance all rows one step.

        tokens: int sequence [B]. Returns (logp [B, vocab], new_state,
        betas [B, heads, T]).
        """
        p = self.p
        cfg = self.model.cfg
        tokens = np.asarray(tokens, dtype=np.intp)
        B = tokens.shape[0]
        q = state[-1][0]
        ctxs = []
        betas = np.empty((B, cfg.att_heads, self.T), dtype=q.dtype)
        for a in range(cfg.att_heads):
            qp = q @ p[f"att.h{a}.wq"] + p[f"att.h{a}.b"]
            sc = np.tanh(self.keys[a][None, :, :] + qp[:, None, :]) @ p[f"att.h{a}.v"]
            sc = sc - sc.max(axis=1, keepdims=True)
            w = np.exp(sc)
            w /= w.sum(axis=1, keepdims=True)
            betas[:, a] = w
            ctxs.append(w @ self.memory)
        c = np.concatenate(ctxs, axis=1) @ p["att.out.w"] + p["att.out.b"]
        parts = [p["dec.emb"][tokens], c]
        if self.e_dec is not None and self.e_dec.shape[0] > 0:
            parts.append(np.tile(self.e_dec, (B, 1)))
        x = np.ascontiguousarray(np.concatenate(parts, axis=1))
        new_state = []
        for i, (h, cc) in enumerate(state):
            h2, c2, _ = K.lstm_step_forward(
                x, h, cc, p[f"dec.l{i}.wx"], p[f"dec.l{i}.wh"], p[f"dec.l{i}.b"]
            )
            new_state.append((h2, c2))
            x = h2
        s = new_state[-1][0]
        hid = np.tanh(np.concatenate([s, c], axis=1) @ p["gen.hidden.w"] + p["gen.hidden.b"])
        logits = hid @ p["gen.out.w"] + p["gen.out.b"]
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return logp, new_state, betas

    @staticmethod
    def reorder(state, idx):
        return [(np.ascontiguousarray(h[idx]), np.ascontiguousarray(c[idx]))
                for h, c in state]
