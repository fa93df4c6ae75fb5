import hashlib
import os

import pytest

from condseq import cli


def run(*argv):
    return cli.run(list(argv))


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


SMALL = [
    "--corpus.scale", "0.02", "--corpus.vocab_size", "12",
    "--train.epochs", "1", "--train.dev_cer_utts", "0",
    "--model.enc_cells", "6", "--model.enc_proj", "6", "--model.att_dim", "8",
    "--model.dec_cells", "8", "--bpe.num_merges", "16",
]


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert run("gen-corpus", "--out", str(d), *SMALL) == 0
    return d


@pytest.fixture(scope="module")
def small_bpe(tmp_path_factory, small_corpus):
    d = tmp_path_factory.mktemp("bpe")
    path = d / "bpe.model"
    assert run("train-bpe", "--data", str(small_corpus), "--out", str(path),
               *SMALL) == 0
    return path


class TestUsageErrors:
    def test_missing_out_is_usage_error(self, capsys):
        assert run("gen-corpus") == 2

    def test_unknown_config_key_rejected(self, tmp_path):
        assert run("gen-corpus", "--out", str(tmp_path), "--nope.key", "1") == 2

    def test_dangling_override_rejected(self, tmp_path):
        assert run("gen-corpus", "--out", str(tmp_path), "--corpus.scale") == 2

    def test_invalid_setup_id_lists_valid(self, tmp_path, small_corpus, capsys):
        code = run("run-matrix", "--data", str(small_corpus), "--out",
                   str(tmp_path), "--setups", "S7")
        assert code == 2
        err = capsys.readouterr().err
        assert "S7" in err and "S2d" in err

    def test_bad_config_value_rejected(self, tmp_path):
        assert run("gen-corpus", "--out", str(tmp_path),
                   "--corpus.scale", "banana") == 2


class TestGenCorpus:
    def test_deterministic_regeneration(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("gen-corpus", "--out", str(a), "--seed", "7", *SMALL) == 0
        assert run("gen-corpus", "--out", str(b), "--seed", "7", *SMALL) == 0
        assert sha(a / "features.bin") == sha(b / "features.bin")
        assert sha(a / "manifest.tsv") == sha(b / "manifest.tsv")

    def test_config_echo_written(self, tmp_path):
        out = tmp_path / "c"
        assert run("gen-corpus", "--out", str(out), *SMALL) == 0
        echo = (out / "resolved.cfg").read_text()
        assert "corpus.scale = 0.02" in echo
        assert "seed = 7" in echo

    def test_seed_flag_changes_content(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run("gen-corpus", "--out", str(a), "--seed", "1", *SMALL)
        run("gen-corpus", "--out", str(b), "--seed", "2", *SMALL)
        assert sha(a / "features.bin") != sha(b / "features.bin")


class TestCountParams:
    def test_paper_encoder_delta(self, capsys):
        assert run("count-params", "--preset", "paper", "--inject", "encoder") == 0
        out = capsys.readouterr().out
        assert "+196,040" in out

    def test_desk_all_modes(self, capsys):
        assert run("count-params", "--preset", "desk") == 0
        out = capsys.readouterr().out
        assert "injection encoder" in out and "injection both" in out

    def test_bad_preset(self, capsys):
        assert run("count-params", "--preset", "giant") == 2


class TestTrainDecodeEval:
    def test_epochs_zero_writes_initial_checkpoint_only(self, tmp_path,
                                                        small_corpus, small_bpe):
        out = tmp_path / "run"
        assert run("train", "--data", str(small_corpus), "--bpe", str(small_bpe),
                   "--out", str(out), *SMALL, "--train.epochs", "0") == 0
        assert (out / "ckpt_best.cseq").exists()
        assert (out / "resolved.cfg").exists()

    def test_train_decode_eval_pipeline(self, tmp_path, small_corpus, small_bpe):
        out = tmp_path / "run"
        assert run("train", "--data", str(small_corpus), "--bpe", str(small_bpe),
                   "--out", str(out), *SMALL) == 0
        ckpt = out / "ckpt_best.cseq"
        hyp = tmp_path / "hyps.tsv"
        assert run("decode", "--ckpt", str(ckpt), "--data", str(small_corpus),
                   "--bpe", str(small_bpe), "--out", str(hyp), *SMALL) == 0
        lines = [l for l in hyp.read_text().split("\n") if l]
        assert all(len(l.split("\t")) == 3 for l in lines)
        ev = tmp_path / "eval"
        assert run("eval", "--ckpt", str(ckpt), "--data", str(small_corpus),
                   "--bpe", str(small_bpe), "--out", str(ev), *SMALL) == 0
        assert (ev / "report_eval.txt").exists()

    def test_metrics_log_format(self, tmp_path, small_corpus, small_bpe):
        out = tmp_path / "run"
        run("train", "--data", str(small_corpus), "--bpe", str(small_bpe),
            "--out", str(out), *SMALL)
        lines = [l for l in (out / "metrics.log").read_text().split("\n") if l]
        assert lines and all(len(l.split("\t")) == 5 for l in lines)

    def test_finetune_requires_filter(self, tmp_path, small_corpus, small_bpe):
        out = tmp_path / "run"
        run("train", "--data", str(small_corpus), "--bpe", str(small_bpe),
            "--out", str(out), *SMALL, "--train.epochs", "0")
        code = run("finetune", "--ckpt", str(out / "ckpt_best.cseq"),
                   "--data", str(small_corpus), "--bpe", str(small_bpe),
                   "--out", str(tmp_path / "ft"), *SMALL)
        assert code == 2

    def test_finetune_by_dialect_name(self, tmp_path, small_corpus, small_bpe):
        out = tmp_path / "run"
        run("train", "--data", str(small_corpus), "--bpe", str(small_bpe),
            "--out", str(out), *SMALL, "--train.epochs", "0")
        code = run("finetune", "--ckpt", str(out / "ckpt_best.cseq"),
                   "--data", str(small_corpus), "--bpe", str(small_bpe),
                   "--out", str(tmp_path / "ft"), "--dialect", "mandarin",
                   *SMALL, "--finetune.epochs", "1")
        assert code == 0
        assert (tmp_path / "ft" / "ckpt_best.cseq").exists()


class TestRunMatrix:
    def test_s2_s5_reports_and_comparison(self, tmp_path, small_corpus):
        out = tmp_path / "m"
        assert run("run-matrix", "--data", str(small_corpus), "--out", str(out),
                   "--setups", "S2,S5", "--seed", "7", *SMALL) == 0
        assert (out / "report_S2.txt").exists()
        assert (out / "report_S5.txt").exists()
        comparison = (out / "comparison.txt").read_text()
        assert "CERR\tS2->S5" in comparison
        assert (out / "bpe.model").exists()

    def test_finetune_without_base_is_config_error(self, tmp_path, small_corpus,
                                                   capsys):
        out = tmp_path / "m2"
        code = run("run-matrix", "--data", str(small_corpus), "--out", str(out),
                   "--setups", "S5d", *SMALL)
        assert code == 2
        assert "ckpt_S5" in capsys.readouterr().err

    def test_matrix_is_reproducible(self, tmp_path, small_corpus):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("run-matrix", "--data", str(small_corpus), "--out",
                       str(out), "--setups", "S2", "--seed", "7", *SMALL) == 0
        assert sha(a / "report_S2.txt") == sha(b / "report_S2.txt")
        assert sha(a / "ckpt_S2.cseq") == sha(b / "ckpt_S2.cseq")
