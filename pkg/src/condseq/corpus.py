"""Synthetic multi-dialect / multi-domain paired corpus.

Each utterance is a token sequence drawn from a per-domain bigram
grammar over a shared symbol vocabulary, rendered to feature frames by
per-(token, dialect) templates plus Gaussian noise. Dialect identity is
made informative by construction: a configurable fraction of token
types ("ambiguous" tokens) draw their templates from a pool shared
across dialects through dialect-specific permutations, so the same
acoustic evidence maps to different symbols in different dialects.
Non-ambiguous tokens get a shared base template plus a dialect shift,
which is what lets pooled training transfer to low-resource dialects.

Resource skew across dialects follows the profile's count table. Splits
are derived from a stable hash of the utterance id, so train/dev/test
are disjoint by construction.
"""

from __future__ import annotations

import hashlib
import json
import os
import string
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, ParseError

SYMBOL_POOL = string.ascii_lowercase + string.ascii_uppercase + string.digits

DIALECT_NAMES = ("mandarin", "cantonese", "taiwanese", "shanghainese")
DOMAIN_NAMES = ("ast", "car", "home", "map", "msg", "srch")

# per-(dialect, domain) utterance counts; heavy head dialect with a long
# domain tail, one low-resource dialect restricted to a single domain
_DEFAULT_COUNTS = {
    ("mandarin", "ast"): 1000,
    ("mandarin", "msg"): 600,
    ("mandarin", "home"): 300,
    ("mandarin", "map"): 160,
    ("mandarin", "srch"): 80,
    ("mandarin", "car"): 60,
    ("cantonese", "ast"): 170,
    ("cantonese", "car"): 170,
    ("cantonese", "home"): 170,
    ("cantonese", "map"): 170,
    ("cantonese", "msg"): 170,
    ("cantonese", "srch"): 170,
    ("taiwanese", "ast"): 75,
    ("taiwanese", "car"): 75,
    ("taiwanese", "home"): 75,
    ("taiwanese", "map"): 75,
    ("taiwanese", "msg"): 75,
    ("taiwanese", "srch"): 75,
    ("shanghainese", "msg"): 120,
}


@dataclass
class Utterance:
    id: str
    features: np.ndarray  # [L, d_feat] float32
    tokens: list[int]  # SYMBOL_POOL ids, no specials
    dialect: int
    domain: int

    @property
    def text(self) -> str:
        return " ".join(SYMBOL_POOL[t] for t in self.tokens)


@dataclass(frozen=True)
class CorpusProfile:
    dialects: tuple[str, ...] = DIALECT_NAMES
    domains: tuple[str, ...] = DOMAIN_NAMES
    counts: dict = field(default_factory=lambda: dict(_DEFAULT_COUNTS))
    vocab_size: int = 24
    ambiguity: float = 0.5
    noise_std: float = 0.15
    dialect_shift: float = 0.25
    d_feat: int = 16
    u_min: int = 2
    u_max: int = 6
    frames_min: int = 2
    frames_max: int = 3
    train_frac: float = 0.75
    dev_frac: float = 0.1

    def validate(self):
        if self.vocab_size < 2 or self.vocab_size > len(SYMBOL_POOL):
            raise InputError(f"vocab_size must be in [2, {len(SYMBOL_POOL)}]")
        if not 0.0 <= self.ambiguity <= 1.0:
            raise InputError("ambiguity must be in [0, 1]")
        if any(c < 0 for c in self.counts.values()):
            raise InputError("utterance counts must be >= 0")
        if sum(self.counts.values()) == 0:
            raise InputError("profile has zero total utterances")
        if self.u_min < 1 or self.u_max < self.u_min:
            raise InputError("bad token-length range")
        if self.frames_min < 1 or self.frames_max < self.frames_min:
            raise InputError("bad frames-per-token range")

    def scaled(self, factor: float) -> "CorpusProfile":
        counts = {k: max(1, round(v * factor)) if v > 0 else 0 for k, v in self.counts.items()}
        return replace(self, counts=counts)


def default_profile(scale: float = 1.0) -> CorpusProfile:
    p = CorpusProfile()
    return p if scale == 1.0 else p.scaled(scale)


def _rng(*keys) -> np.random.Generator:
    return np.random.default_rng(list(keys))


class TemplateBank:
    """Deterministic per-(token, dialect) frame templates.

    Token t in [0, V): base template B_t of m_t in [frames_min, frames_max]
    rows. The first ceil(ambiguity * V) tokens form the ambiguous set A;
    for those, template(t, d) = B[perm_d(t)] exactly (cross-dialect
    collisions). Others get B_t + dialect_shift * D_{t,d}.
    """

    def __init__(self, profile: CorpusProfile, seed: int):
        self.profile = profile
        self.seed = seed
        V = profile.vocab_size
        self.n_ambiguous = int(np.ceil(profile.ambiguity * V))
        self.frames = [
            int(_rng(seed, 11, t).integers(profile.frames_min, profile.frames_max + 1))
            for t in range(V)
        ]
        self.base = [
            _rng(seed, 12, t).standard_normal((self.frames[t], profile.d_feat))
            for t in range(V)
        ]
        self.perms = [
            _rng(seed, 13, d).permutation(self.n_ambiguous)
            for d in range(len(profile.dialects))
        ]
        self._cache = {}

    def template(self, token: int, dialect: int) -> np.ndarray:
        key = (token, dialect)
        got = self._cache.get(key)
        if got is not None:
            return got
        if token < self.n_ambiguous:
            tpl = self.base[int(self.perms[dialect][token])]
        else:
            dev = _rng(self.seed, 14, token, dialect).standard_normal(
                self.base[token].shape
            )
            tpl = self.base[token] + self.profile.dialect_shift * dev
        tpl = tpl.astype(np.float32)
        self._cache[key] = tpl
        return tpl


def _domain_grammar(profile: CorpusProfile, seed: int, domain: int):
    """Initial distribution and bigram matrix for one domain.

    Each domain favors a seeded subset of the vocabulary, making domain
    identity informative for the decoder side of a recognizer.
    """
    V = profile.vocab_size
    rng = _rng(seed, 21, domain)
    favored = rng.choice(V, size=max(1, V // 3), replace=False)
    weights = np.full(V, 1.0)
    weights[favored] += 6.0
    bigram = np.tile(weights, (V, 1))
    boost = rng.random((V, V)) < 0.1
    bigram = bigram * (1.0 + 3.0 * boost)
    bigram /= bigram.sum(axis=1, keepdims=True)
    init = weights / weights.sum()
    return init, bigram


def generate_corpus(profile: CorpusProfile, seed: int) -> list[Utterance]:
    """Deterministically generate the full corpus for a profile."""
    profile.validate()
    bank = TemplateBank(profile, seed)
    grammars = {
        do: _domain_grammar(profile, seed, do) for do in range(len(profile.domains))
    }
    utts = []
    for di, dialect in enumerate(profile.dialects):
        for do, domain in enumerate(profile.domains):
            n = profile.counts.get((dialect, domain), 0)
            init, bigram = grammars[do]
            for idx in range(n):
                rng = _rng(seed, 31, di, do, idx)
                u = int(rng.integers(profile.u_min, profile.u_max + 1))
                tokens = [int(rng.choice(profile.vocab_size, p=init))]
                for _ in range(u - 1):
                    tokens.append(int(rng.choice(profile.vocab_size, p=bigram[tokens[-1]])))
                blocks = []
                for t in tokens:
                    tpl = bank.template(t, di)
                    if profile.noise_std > 0:
                        noise = rng.standard_normal(tpl.shape) * profile.noise_std
                        blocks.append((tpl.astype(np.float64) + noise).astype(np.float32))
                    else:
                        blocks.append(tpl)
                feats = np.concatenate(blocks, axis=0)
                utts.append(
                    Utterance(
                        id=f"{dialect}-{domain}-{idx:06d}",
                        features=feats,
                        tokens=tokens,
                        dialect=di,
                        domain=do,
                    )
                )
    return utts


def split_of(utt_id: str, train_frac: float = 0.8, dev_frac: float = 0.1) -> str:
    h = hashlib.md5(utt_id.encode("utf-8")).digest()
    u = int.from_bytes(h[:4], "big") / 2**32
    if u < train_frac:
        return "train"
    if u < train_frac + dev_frac:
        return "dev"
    return "test"


def split_corpus(utts, train_frac: float = 0.8, dev_frac: float = 0.1):
    out = {"train": [], "dev": [], "test": []}
    for u in utts:
        out[split_of(u.id, train_frac, dev_frac)].append(u)
    return out


MANIFEST_NAME = "manifest.tsv"
FEATURES_NAME = "features.bin"
META_NAME = "meta.json"


def write_corpus(utts, out_dir, profile: CorpusProfile | None = None) -> str:
    """Write manifest + packed features; returns the manifest path.

    Manifest line: id, dialect, domain, feature file, byte offset, frame
    count, token text (tab separated). Features are raw little-endian
    float32 rows appended in manifest order.
    """
    os.makedirs(out_dir, exist_ok=True)
    if utts:
        d_feat = utts[0].features.shape[1]
    elif profile is not None:
        d_feat = profile.d_feat
    else:
        d_feat = 0
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    feat_path = os.path.join(out_dir, FEATURES_NAME)
    offset = 0
    with open(manifest_path, "w", encoding="utf-8") as mf, open(feat_path, "wb") as ff:
        mf.write(f"#condseq-manifest v1 d_feat={d_feat}\n")
        for u in utts:
            feats = np.ascontiguousarray(u.features, dtype="<f4")
            ff.write(feats.tobytes())
            mf.write(
                f"{u.id}\t{u.dialect}\t{u.domain}\t{FEATURES_NAME}\t{offset}\t"
                f"{feats.shape[0]}\t{u.text}\n"
            )
            offset += feats.nbytes
    if profile is not None:
        meta = {
            "dialects": list(profile.dialects),
            "domains": list(profile.domains),
            "counts": {f"{d}/{o}": c for (d, o), c in sorted(profile.counts.items())},
            "vocab_size": profile.vocab_size,
            "ambiguity": profile.ambiguity,
            "noise_std": profile.noise_std,
            "dialect_shift": profile.dialect_shift,
            "d_feat": profile.d_feat,
            "train_frac": profile.train_frac,
            "dev_frac": profile.dev_frac,
        }
        with open(os.path.join(out_dir, META_NAME), "w", encoding="utf-8") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
            f.write("\n")
    return manifest_path


def read_meta(corpus_dir) -> dict | None:
    path = os.path.join(corpus_dir, META_NAME)
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def read_corpus(manifest_path) -> list[Utterance]:
    """Load a corpus; inverse of write_corpus on all fields."""
    base = os.path.dirname(manifest_path)
    with open(manifest_path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if not lines or not lines[0].startswith("#condseq-manifest v1 d_feat="):
        raise ParseError("missing or unsupported manifest header", line=1)
    try:
        d_feat = int(lines[0].rsplit("=", 1)[1])
    except ValueError:
        raise ParseError("bad d_feat in manifest header", line=1) from None

    feat_cache = {}
    utts = []
    for k, line in enumerate(lines[1:]):
        lineno = k + 2
        if line == "":
            continue
        parts = line.split("\t")
        if len(parts) != 7:
            raise ParseError(f"expected 7 tab-separated fields, got {len(parts)}", line=lineno)
        uid, dialect_s, domain_s, feat_file, offset_s, frames_s, text = parts
        try:
            dialect, domain = int(dialect_s), int(domain_s)
            offset, frames = int(offset_s), int(frames_s)
        except ValueError:
            raise ParseError("non-integer numeric field", line=lineno) from None
        fpath = os.path.join(base, feat_file)
        if fpath not in feat_cache:
            with open(fpath, "rb") as ff:
                feat_cache[fpath] = ff.read()
        blob = feat_cache[fpath]
        nbytes = frames * d_feat * 4
        if offset + nbytes > len(blob):
            raise InputError(
                f"feature file too short for utterance {uid}: need bytes "
                f"[{offset}, {offset + nbytes}) of {len(blob)}"
            )
        feats = (
            np.frombuffer(blob, dtype="<f4", count=frames * d_feat, offset=offset)
            .reshape(frames, d_feat)
            .copy()
        )
        tokens = []
        for ch in text.split(" "):
            if len(ch) != 1 or ch not in SYMBOL_POOL:
                raise ParseError(f"unknown corpus symbol {ch!r}", line=lineno)
            tokens.append(SYMBOL_POOL.index(ch))
        utts.append(Utterance(id=uid, features=feats, tokens=tokens, dialect=dialect, domain=domain))
    return utts
