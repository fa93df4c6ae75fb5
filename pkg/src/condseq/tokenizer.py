"""Byte-pair-encoding tokenizer.

Classic construction: input is pre-split on single spaces, every word
gets an end-of-word marker symbol, merges are learned greedily by pair
frequency with a lexicographic tie-break and applied at encode time in
training order. Specials occupy fixed ids: <sos>=0, <eos>=1, <unk>=2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InputError, ParseError

EOW = "</w>"
SOS, EOS, UNK = "<sos>", "<eos>", "<unk>"
SOS_ID, EOS_ID, UNK_ID = 0, 1, 2
UNK_GLYPH = "\N{REPLACEMENT CHARACTER}"


@dataclass(frozen=True)
class BpeModel:
    merges: tuple[tuple[str, str], ...]
    vocab: dict[str, int]
    _id_to_token: tuple[str, ...] = field(init=False, repr=False)

    def __post_init__(self):
        inv = [None] * len(self.vocab)
        for tok, i in self.vocab.items():
            inv[i] = tok
        object.__setattr__(self, "_id_to_token", tuple(inv))

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._id_to_token):
            raise InputError(f"token id {token_id} out of range [0, {len(self._id_to_token)})")
        return self._id_to_token[token_id]


def _word_symbols(word: str) -> list[str]:
    return list(word) + [EOW]


def _pair_counts(word_freqs):
    counts = {}
    for syms, freq in word_freqs.items():
        for a, b in zip(syms, syms[1:]):
            counts[(a, b)] = counts.get((a, b), 0) + freq
    return counts


def _merge_word(syms, pair, joined):
    out = []
    i = 0
    n = len(syms)
    while i < n:
        if i + 1 < n and syms[i] == pair[0] and syms[i + 1] == pair[1]:
            out.append(joined)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return tuple(out)


def train_bpe(corpus, num_merges: int) -> BpeModel:
    """Learn `num_merges` greedy pair merges from an iterable of lines.

    Deterministic: the most frequent pair wins each round, ties broken by
    the lexicographically smallest (left, right) pair. Stops early only
    when no pairs remain.
    """
    lines = list(corpus)
    if not lines:
        raise InputError("train_bpe: empty corpus")
    if num_merges < 0:
        raise InputError(f"train_bpe: num_merges must be >= 0, got {num_merges}")

    word_freqs = {}
    chars = set()
    for line in lines:
        for word in line.split(" "):
            syms = tuple(_word_symbols(word))
            word_freqs[syms] = word_freqs.get(syms, 0) + 1
            chars.update(word)

    merges = []
    for _ in range(num_merges):
        counts = _pair_counts(word_freqs)
        if not counts:
            break
        best_count = max(counts.values())
        pair = min(p for p, c in counts.items() if c == best_count)
        joined = pair[0] + pair[1]
        merges.append(pair)
        word_freqs = {
            _merge_word(list(syms), pair, joined): freq for syms, freq in word_freqs.items()
        }

    vocab = {SOS: SOS_ID, EOS: EOS_ID, UNK: UNK_ID}
    for ch in sorted(chars):
        vocab[ch] = len(vocab)
    vocab[EOW] = len(vocab)
    for a, b in merges:
        tok = a + b
        if tok not in vocab:
            vocab[tok] = len(vocab)
    return BpeModel(merges=tuple(merges), vocab=dict(vocab))


def encode(model: BpeModel, text: str) -> list[int]:
    """Apply merges in training order; unknown characters map to <unk>."""
    if text == "":
        return []
    ids = []
    known = model.vocab
    for word in text.split(" "):
        syms = _word_symbols(word)
        for pair in model.merges:
            if len(syms) < 2:
                break
            syms = list(_merge_word(syms, pair, pair[0] + pair[1]))
        ids.extend(known.get(s, UNK_ID) for s in syms)
    return ids


def decode(model: BpeModel, ids) -> str:
    """Inverse of encode over the training alphabet; specials stripped,
    <unk> rendered as the replacement glyph."""
    pieces = []
    for i in ids:
        tok = model.token(int(i))
        if tok in (SOS, EOS):
            continue
        pieces.append(UNK_GLYPH if tok == UNK else tok)
    flat = "".join(pieces)
    words = flat.split(EOW)
    if flat.endswith(EOW):
        words = words[:-1]
    return " ".join(words)


def save_model(model: BpeModel, path) -> None:
    for tok in model.vocab:
        if "\t" in tok or "\n" in tok:
            raise InputError(f"token {tok!r} contains tab/newline; not serializable")
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#condseq-bpe v1 merges={len(model.merges)} vocab={len(model.vocab)}\n")
        for a, b in model.merges:
            f.write(f"{a}\t{b}\n")
        for tok, i in model.vocab.items():
            f.write(f"{tok}\t{i}\n")


def load_model(path) -> BpeModel:
    with open(path, encoding="utf-8") as f:
        raw = f.read().split("\n")
    if not raw or not raw[0].startswith("#condseq-bpe v1 "):
        raise ParseError("missing or unsupported bpe header", line=1)
    fields = dict(kv.split("=", 1) for kv in raw[0].split(" ")[1:] if "=" in kv)
    try:
        n_merges = int(fields["merges"])
        n_vocab = int(fields["vocab"])
    except (KeyError, ValueError) as e:
        raise ParseError(f"bad bpe header: {e}", line=1) from None

    merges = []
    vocab = {}
    expected = 1 + n_merges + n_vocab
    body = [ln for ln in raw[1:] if ln != ""]
    if len(body) + 1 != expected:
        raise ParseError(
            f"expected {expected - 1} body lines, found {len(body)}", line=len(raw)
        )
    for k, line in enumerate(body):
        lineno = k + 2
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"expected 2 tab-separated fields, got {len(parts)}", line=lineno)
        if k < n_merges:
            merges.append((parts[0], parts[1]))
        else:
            try:
                vocab[parts[0]] = int(parts[1])
            except ValueError:
                raise ParseError(f"bad vocab id {parts[1]!r}", line=lineno) from None
    ids = sorted(vocab.values())
    if ids != list(range(len(vocab))):
        raise ParseError("vocab ids are not dense 0-based")
    return BpeModel(merges=tuple(merges), vocab=vocab)
