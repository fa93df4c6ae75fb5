"""Categorical feature conditioning.

Sentence-level categorical features (dialect, domain, ...) are embedded
per feature, combined into one vector per injection site through
site-specific affine transforms, and injected by appending to every
encoder input frame and/or concatenating with the decoder context
vector. Embedding tables are shared across sites; only the transforms
are per site.

Parameters live in the model's parameter mapping under the names
cond.E.<feature>, cond.V.<site>.<feature>, cond.b.<site>.<feature>.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import InputError

SITES = ("enc", "dec")

INJECTION_MODES = ("none", "encoder", "decoder", "both")


@dataclass(frozen=True)
class CategoricalSpec:
    names: tuple[str, ...] = ("dialect", "domain")
    cardinalities: tuple[int, ...] = (4, 6)
    emb_dim: int = 8
    enc_dim: int = 4
    dec_dim: int = 8

    @property
    def num_features(self) -> int:
        return len(self.names)

    def validate(self):
        if len(self.names) != len(self.cardinalities) or not self.names:
            raise InputError("need at least one feature with matching cardinalities")
        if any(c < 1 for c in self.cardinalities):
            raise InputError("cardinalities must be >= 1")

    def site_dim(self, site: str) -> int:
        return self.enc_dim if site == "enc" else self.dec_dim


def active_sites(mode: str) -> tuple[str, ...]:
    if mode == "none":
        return ()
    if mode == "encoder":
        return ("enc",)
    if mode == "decoder":
        return ("dec",)
    if mode == "both":
        return SITES
    raise InputError(f"unknown injection mode {mode!r}; expected one of {INJECTION_MODES}")


def param_shapes(spec: CategoricalSpec, mode: str) -> dict[str, tuple[int, ...]]:
    """Conditioning tensor shapes for one injection mode."""
    sites = active_sites(mode)
    shapes: dict[str, tuple[int, ...]] = {}
    if not sites:
        return shapes
    for name, card in zip(spec.names, spec.cardinalities):
        shapes[f"cond.E.{name}"] = (card, spec.emb_dim)
    for site in sites:
        for name in spec.names:
            shapes[f"cond.V.{site}.{name}"] = (spec.emb_dim, spec.site_dim(site))
            shapes[f"cond.b.{site}.{name}"] = (spec.site_dim(site),)
    return shapes


def embed_feature(params, spec: CategoricalSpec, k: int, value: int):
    """Look up embedding row for feature k; differentiable into the table."""
    if not 0 <= k < spec.num_features:
        raise InputError(f"feature index {k} out of range [0, {spec.num_features})")
    if not 0 <= value < spec.cardinalities[k]:
        raise InputError(
            f"feature {spec.names[k]!r}: id {value} out of range "
            f"[0, {spec.cardinalities[k]})"
        )
    return ag.gather_rows(params[f"cond.E.{spec.names[k]}"], value)


def combine(params, spec: CategoricalSpec, site: str, ids):
    """Sum of per-feature affine-transformed embeddings for one site."""
    ids = list(ids)
    if len(ids) != spec.num_features:
        raise InputError(
            f"expected {spec.num_features} feature ids, got {len(ids)}"
        )
    e = None
    for k, value in enumerate(ids):
        ek = embed_feature(params, spec, k, value)
        term = ag.add(
            ag.matmul(ek, params[f"cond.V.{site}.{spec.names[k]}"]),
            params[f"cond.b.{site}.{spec.names[k]}"],
        )
        e = term if e is None else ag.add(e, term)
    return e


def inject_encoder(x, e):
    """Append e to every frame: [L, d] -> [L, d + dim(e)]."""
    if e is None or e.shape[0] == 0:
        return x
    return ag.concat([x, ag.tile_rows(e, x.shape[0])], axis=1)


def inject_decoder(c, e):
    """Concatenate the combined feature with the context vector."""
    if e is None or e.shape[0] == 0:
        return c
    return ag.concat([c, e], axis=0)
