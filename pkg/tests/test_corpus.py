import numpy as np
import pytest
from dataclasses import replace

from condseq import corpus as cp
from condseq.errors import InputError, ParseError


def tiny_profile(**kw):
    base = cp.CorpusProfile(
        counts={
            ("mandarin", "ast"): 30,
            ("mandarin", "msg"): 20,
            ("cantonese", "ast"): 15,
            ("shanghainese", "msg"): 8,
        },
        vocab_size=12,
        d_feat=6,
    )
    return replace(base, **kw)


def nearest_template_decode(utt, bank, profile, use_dialect):
    """Oracle: segment frames with true boundaries and classify each block
    against candidate templates by squared error (deterministic ties)."""
    candidates = []
    dialects = range(len(profile.dialects)) if not use_dialect else [utt.dialect]
    for d in dialects:
        for t in range(profile.vocab_size):
            candidates.append((t, d, bank.template(t, d)))
    preds = []
    pos = 0
    for tok in utt.tokens:
        m = bank.template(tok, utt.dialect).shape[0]
        seg = utt.features[pos:pos + m].astype(np.float64)
        pos += m
        best = None
        for t, d, tpl in candidates:
            if tpl.shape[0] != m:
                continue
            dist = float(((seg - tpl.astype(np.float64)) ** 2).sum())
            key = (dist, t, d)
            if best is None or key < best:
                best = key
        preds.append(best[1])
    return preds


class TestGeneration:
    def test_noiseless_features_equal_concatenated_templates(self):
        prof = tiny_profile(
            counts={("mandarin", "ast"): 1}, ambiguity=0.0, noise_std=0.0
        )
        utts = cp.generate_corpus(prof, seed=3)
        assert len(utts) == 1
        u = utts[0]
        bank = cp.TemplateBank(prof, seed=3)
        expect = np.concatenate(
            [bank.template(t, u.dialect) for t in u.tokens], axis=0
        )
        np.testing.assert_array_equal(u.features, expect)

    def test_same_seed_bitwise_identical(self):
        prof = tiny_profile()
        a = cp.generate_corpus(prof, seed=11)
        b = cp.generate_corpus(prof, seed=11)
        assert len(a) == len(b)
        for ua, ub in zip(a, b):
            assert ua.id == ub.id and ua.tokens == ub.tokens
            assert ua.dialect == ub.dialect and ua.domain == ub.domain
            assert ua.features.tobytes() == ub.features.tobytes()

    def test_per_cell_counts_match_profile_exactly(self):
        prof = tiny_profile()
        utts = cp.generate_corpus(prof, seed=5)
        got = {}
        for u in utts:
            key = (prof.dialects[u.dialect], prof.domains[u.domain])
            got[key] = got.get(key, 0) + 1
        assert got == prof.counts

    def test_zero_total_count_rejected(self):
        with pytest.raises(InputError):
            cp.generate_corpus(tiny_profile(counts={("mandarin", "ast"): 0}), seed=1)

    def test_frame_count_bounds(self):
        prof = tiny_profile()
        for u in cp.generate_corpus(prof, seed=2):
            L, U = u.features.shape[0], len(u.tokens)
            assert prof.frames_min * U <= L <= prof.frames_max * U
            assert L >= U >= 1


class TestSeparability:
    def test_zero_ambiguity_noiseless_decodes_perfectly(self):
        prof = tiny_profile(ambiguity=0.0, noise_std=0.0)
        bank = cp.TemplateBank(prof, seed=9)
        errs = 0
        total = 0
        for u in cp.generate_corpus(prof, seed=9):
            preds = nearest_template_decode(u, bank, prof, use_dialect=True)
            errs += sum(p != t for p, t in zip(preds, u.tokens))
            total += len(u.tokens)
        assert total > 0 and errs == 0

    def test_dialect_id_strictly_helps_under_ambiguity(self):
        prof = tiny_profile(ambiguity=0.5, noise_std=0.05)
        bank = cp.TemplateBank(prof, seed=13)
        with_d, without_d, total = 0, 0, 0
        for u in cp.generate_corpus(prof, seed=13):
            truth = u.tokens
            pd = nearest_template_decode(u, bank, prof, use_dialect=True)
            pn = nearest_template_decode(u, bank, prof, use_dialect=False)
            with_d += sum(p != t for p, t in zip(pd, truth))
            without_d += sum(p != t for p, t in zip(pn, truth))
            total += len(truth)
        assert with_d / total < without_d / total


class TestSplits:
    def test_splits_partition_and_are_deterministic(self):
        prof = tiny_profile()
        utts = cp.generate_corpus(prof, seed=4)
        splits = cp.split_corpus(utts)
        ids = [u.id for s in ("train", "dev", "test") for u in splits[s]]
        assert sorted(ids) == sorted(u.id for u in utts)
        again = cp.split_corpus(utts)
        for s in splits:
            assert [u.id for u in splits[s]] == [u.id for u in again[s]]

    def test_split_of_is_pure_function_of_id(self):
        assert cp.split_of("x-1") == cp.split_of("x-1")


class TestRoundTrip:
    def test_read_write_identity_on_all_fields(self, tmp_path):
        prof = tiny_profile()
        utts = cp.generate_corpus(prof, seed=21)[:100]
        manifest = cp.write_corpus(utts, tmp_path, profile=prof)
        back = cp.read_corpus(manifest)
        assert len(back) == len(utts)
        for a, b in zip(utts, back):
            assert a.id == b.id and a.tokens == b.tokens
            assert a.dialect == b.dialect and a.domain == b.domain
            assert a.features.tobytes() == b.features.tobytes()

    def test_empty_corpus(self, tmp_path):
        manifest = cp.write_corpus([], tmp_path, profile=tiny_profile())
        assert cp.read_corpus(manifest) == []

    def test_truncated_feature_file_names_utterance(self, tmp_path):
        prof = tiny_profile(counts={("mandarin", "ast"): 3})
        utts = cp.generate_corpus(prof, seed=2)
        manifest = cp.write_corpus(utts, tmp_path, profile=prof)
        feat = tmp_path / cp.FEATURES_NAME
        feat.write_bytes(feat.read_bytes()[:-8])
        with pytest.raises(InputError, match=utts[-1].id):
            cp.read_corpus(manifest)

    def test_malformed_line_reports_line_number(self, tmp_path):
        prof = tiny_profile(counts={("mandarin", "ast"): 2})
        manifest = cp.write_corpus(cp.generate_corpus(prof, seed=2), tmp_path, prof)
        lines = open(manifest).read().split("\n")
        lines[2] = "busted line"
        open(manifest, "w").write("\n".join(lines))
        with pytest.raises(ParseError, match="line 3"):
            cp.read_corpus(manifest)

    def test_meta_written_and_readable(self, tmp_path):
        prof = tiny_profile()
        cp.write_corpus(cp.generate_corpus(prof, seed=2), tmp_path, profile=prof)
        meta = cp.read_meta(tmp_path)
        assert meta["dialects"] == list(prof.dialects)
        assert meta["vocab_size"] == prof.vocab_size


class TestDefaultProfile:
    def test_default_counts_skewed_and_low_resource_single_domain(self):
        prof = cp.default_profile()
        per_dialect = {}
        for (d, _), c in prof.counts.items():
            per_dialect[d] = per_dialect.get(d, 0) + c
        assert per_dialect["mandarin"] > per_dialect["cantonese"] > \
            per_dialect["taiwanese"] > per_dialect["shanghainese"]
        shang = [k for k in prof.counts if k[0] == "shanghainese"]
        assert shang == [("shanghainese", "msg")]

    def test_total_near_four_thousand(self):
        total = sum(cp.default_profile().counts.values())
        assert 3000 <= total <= 5000
