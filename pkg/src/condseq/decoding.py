"""Beam-search decoding and error-rate scoring."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .model import InferSession, LasModel


def max_threads() -> int:
    try:
        return max(1, int(os.environ.get("CONDSEQ_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class Hypothesis:
    """A (partial) decode: emitted token ids, raw log-prob, final decoder
    state rows, finished flag. Finished hypotheses end in <eos> and are
    never extended."""

    tokens: tuple
    logp: float
    state: object
    finished: bool

    def score(self, alpha: float) -> float:
        return self.logp / length_penalty(len(self.tokens), alpha)


def length_penalty(n: int, alpha: float) -> float:
    """GNMT-style normalizer ((5 + n) / 6)^alpha; n counts emitted tokens
    including <eos>."""
    return ((5.0 + n) / 6.0) ** alpha


def beam_search(sess: InferSession, beam: int, alpha: float, max_len: int,
                eos_id: int, sos_id: int) -> list[Hypothesis]:
    """Batched beam expansion over one utterance.

    Finished hypotheses are ranked by log-prob / length_penalty; ties
    break on (score, token ids) so results are deterministic. Returns up
    to `beam` finished hypotheses, falling back to the best unfinished
    ones when nothing finished within max_len steps.
    """
    if beam < 1 or max_len < 1:
        raise InputError("beam and max_len must be >= 1")
    active_tokens = [()]
    active_logp = [0.0]
    prev = [sos_id]
    state = sess.start(1)
    finished: list[Hypothesis] = []

    for _ in range(max_len):
        logp, new_state, _ = sess.step(np.asarray(prev), state)
        cands = []
        for row in range(len(active_tokens)):
            base = active_logp[row]
            for tok in range(logp.shape[1]):
                cands.append((base + float(logp[row, tok]), row, tok))
        cands.sort(key=lambda c: (-c[0], c[2], c[1]))
        keep = cands[:beam]
        next_tokens, next_logp, next_prev, next_rows = [], [], [], []
        for score, row, tok in keep:
            toks = active_tokens[row] + (tok,)
            if tok == eos_id:
                st = [(h[row:row + 1].copy(), c[row:row + 1].copy())
                      for h, c in new_state]
                finished.append(Hypothesis(toks, score, st, True))
            else:
                next_tokens.append(toks)
                next_logp.append(score)
                next_prev.append(tok)
                next_rows.append(row)
        if not next_tokens:
            break
        state = InferSession.reorder(new_state, np.asarray(next_rows, dtype=np.intp))
        active_tokens, active_logp, prev = next_tokens, next_logp, next_prev

    if finished:
        ranked = sorted(finished, key=lambda h: (-h.score(alpha), h.tokens))
        return ranked[:beam]
    leftovers = [
        Hypothesis(active_tokens[i], active_logp[i],
                   [(h[i:i + 1].copy(), c[i:i + 1].copy()) for h, c in state], False)
        for i in range(len(active_tokens))
    ]
    leftovers.sort(key=lambda h: (-h.score(alpha), h.tokens))
    return leftovers[:beam]


def edit_distance(a, b) -> int:
    """Levenshtein distance with unit costs over two sequences."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[-1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def cer(ref: str, hyp: str) -> float:
    """Character error rate: edit distance / len(ref)."""
    if len(ref) == 0:
        raise InputError("cer: empty reference")
    return edit_distance(ref, hyp) / len(ref)


def decode_examples(model: LasModel, examples, beam: int, alpha: float,
                    max_len_cap: int = 0):
    """Beam-decode a list of examples; returns [(id, ref_ids, hyp_ids)].

    Parallelism over utterances is capped by CONDSEQ_THREADS; results
    are ordered by input position either way.
    """

    def one(ex):
        sess = InferSession(model, ex.features, (ex.dialect, ex.domain))
        max_len = 2 * sess.T + 10
        if max_len_cap:
            max_len = min(max_len, max_len_cap)
        hyps = beam_search(sess, beam=beam, alpha=alpha, max_len=max_len,
                           eos_id=model.eos_id, sos_id=model.sos_id)
        best = hyps[0]
        toks = list(best.tokens[:-1]) if best.finished else list(best.tokens)
        return ex.id, list(ex.targets), toks

    n = max_threads()
    if n > 1 and len(examples) > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(one, examples))
    return [one(ex) for ex in examples]
