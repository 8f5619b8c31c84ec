import json
import os

import pytest

from dedsi.cli import main
from dedsi.corpus import write_pairs_tsv
from dedsi.synthetic import synthetic_corpus


@pytest.fixture
def clean_env(monkeypatch):
    monkeypatch.delenv("DEDSI_SEED", raising=False)


@pytest.fixture
def workdir(tmp_path, monkeypatch, clean_env):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def make_input_tsv(workdir, n_docs=6, qpd=10, name="clicks.tsv"):
    corpus = synthetic_corpus(n_docs, qpd, seed=5)
    write_pairs_tsv(corpus.pairs(), str(workdir / name))
    return name


def spec_file(workdir, name="spec.json", **kw):
    spec = dict(experiment="ensemble10", seed=3, n_docs=6,
                queries_per_doc=10, split=[4, 3, 3], model_width=16,
                max_epochs=4, early_stop_window=10, batch_size=16,
                k_list=[1, 5], num_shards=2, lexicon_size=60,
                words_per_doc=6)
    spec.update(kw)
    (workdir / name).write_text(json.dumps(spec))
    return name


class TestHelp:
    @pytest.mark.parametrize("cmd", ["ingest", "train", "simulate",
                                     "evaluate", "report"])
    def test_help_exists(self, cmd, capsys):
        with pytest.raises(SystemExit) as exc:
            main([cmd, "--help"])
        assert exc.value.code == 0
        assert "usage" in capsys.readouterr().out

    def test_unknown_flag_nonzero(self):
        with pytest.raises(SystemExit) as exc:
            main(["ingest", "--nonsense"])
        assert exc.value.code != 0


class TestIngest:
    def test_basic(self, workdir, capsys):
        tsv = make_input_tsv(workdir)
        rc = main(["ingest", "--input", tsv, "--output", "corpus",
                   "--min-queries", "5", "--seed", "7"])
        assert rc == 0
        assert (workdir / "corpus" / "manifest.json").exists()
        assert (workdir / "corpus" / "corpus.tsv").exists()
        assert "6 documents" in capsys.readouterr().out

    def test_select_docs(self, workdir):
        tsv = make_input_tsv(workdir)
        rc = main(["ingest", "--input", tsv, "--output", "c",
                   "--docs", "3", "--min-queries", "8", "--seed", "7"])
        assert rc == 0
        man = json.loads((workdir / "c" / "manifest.json").read_text())
        assert man["num_docs"] == 3

    def test_missing_input(self, workdir, capsys):
        rc = main(["ingest", "--input", "missing.tsv", "--output", "c"])
        assert rc == 1
        assert "missing.tsv" in capsys.readouterr().err

    def test_rerun_identical_manifest(self, workdir):
        tsv = make_input_tsv(workdir)
        args = ["ingest", "--input", tsv, "--output", "c",
                "--docs", "4", "--min-queries", "5", "--seed", "9"]
        assert main(args) == 0
        first = (workdir / "c" / "manifest.json").read_bytes()
        assert main(args) == 0
        assert (workdir / "c" / "manifest.json").read_bytes() == first

    def test_workdir_flag(self, tmp_path, monkeypatch, clean_env):
        sub = tmp_path / "inner"
        sub.mkdir()
        corpus = synthetic_corpus(3, 6, seed=5)
        write_pairs_tsv(corpus.pairs(), str(sub / "clicks.tsv"))
        rc = main(["--workdir", str(sub), "ingest", "--input", "clicks.tsv",
                   "--output", "out"])
        assert rc == 0
        assert (sub / "out" / "manifest.json").exists()


class TestEvaluate:
    def test_metrics_written(self, workdir):
        spec = spec_file(workdir)
        rc = main(["evaluate", "--spec", spec, "--out", "results"])
        assert rc == 0
        header = (workdir / "results" / "metrics.csv").read_text() \
            .splitlines()[0]
        assert header == "arm,shard,pool,k,accuracy,support,seed"
        manifest = json.loads(
            (workdir / "results" / "run_manifest.json").read_text())
        assert "metrics.csv" in manifest["files"]

    def test_idempotent_outputs(self, workdir):
        spec = spec_file(workdir)
        assert main(["evaluate", "--spec", spec, "--out", "a"]) == 0
        assert main(["evaluate", "--spec", spec, "--out", "b"]) == 0
        assert (workdir / "a" / "metrics.csv").read_bytes() == \
            (workdir / "b" / "metrics.csv").read_bytes()
        assert (workdir / "a" / "metrics.json").read_bytes() == \
            (workdir / "b" / "metrics.json").read_bytes()

    def test_env_seed_override(self, workdir, monkeypatch):
        spec = spec_file(workdir, experiment="content_oblivious",
                         n_list=[1], max_epochs=2)
        monkeypatch.setenv("DEDSI_SEED", "99")
        assert main(["evaluate", "--spec", spec, "--out", "r"]) == 0
        blob = json.loads((workdir / "r" / "metrics.json").read_text())
        assert blob["seed"] == 99

    def test_toml_spec(self, workdir):
        toml = "\n".join([
            'experiment = "content_oblivious"', "seed = 3", "n_docs = 5",
            "queries_per_doc = 10", "split = [4, 3, 3]", "model_width = 16",
            "max_epochs = 2", "batch_size = 16", "n_list = [1]",
            "lexicon_size = 60", "words_per_doc = 6",
        ])
        (workdir / "spec.toml").write_text(toml)
        assert main(["evaluate", "--spec", "spec.toml", "--out", "r"]) == 0
        assert (workdir / "r" / "metrics.csv").exists()

    def test_bad_spec_nonzero(self, workdir, capsys):
        (workdir / "bad.json").write_text(json.dumps({"experiment": "nope"}))
        assert main(["evaluate", "--spec", "bad.json"]) == 1
        assert "nope" in capsys.readouterr().err


class TestTrain:
    def test_fit_writes_checkpoint(self, workdir):
        spec = spec_file(workdir, experiment="fit", max_epochs=3)
        rc = main(["train", "--spec", spec, "--out", "t"])
        assert rc == 0
        assert (workdir / "t" / "checkpoint.npz").exists()
        lines = (workdir / "t" / "epochs.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_top1"
        summary = json.loads((workdir / "t" / "fit_summary.json").read_text())
        assert 0.0 <= summary["val_accuracy"] <= 1.0

    def test_sweep(self, workdir):
        spec = spec_file(workdir, experiment="content_oblivious",
                         n_list=[1, 2], max_epochs=2)
        assert main(["train", "--spec", spec, "--out", "t"]) == 0
        assert (workdir / "t" / "seen_queries_curve.csv").exists()

    def test_wrong_experiment_rejected(self, workdir, capsys):
        spec = spec_file(workdir, experiment="decentralized",
                         n_docs=9, num_shards=3, num_peers=6,
                         batch_budget=2, batch_size=8, peer_min_docs=2,
                         peer_max_docs=3, per_shard=2)
        assert main(["train", "--spec", spec]) == 1
        assert "evaluate" in capsys.readouterr().err


class TestSimulate:
    def test_outputs(self, workdir, capsys):
        spec = spec_file(workdir, experiment="decentralized", n_docs=9,
                         num_shards=3, num_peers=6, batch_budget=2,
                         batch_size=8, peer_min_docs=2, peer_max_docs=3,
                         per_shard=2)
        rc = main(["simulate", "--spec", spec, "--out", "sim"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "round 100" in out
        lines = (workdir / "sim" / "loss_traces.csv").read_text().splitlines()
        assert lines[0] == "peer_id,batch_idx,loss"
        assert len(lines) == 1 + 6 * 2
        stats = json.loads(
            (workdir / "sim" / "message_stats.json").read_text())
        assert stats["cross_group_messages"] == 0
        assert (workdir / "sim" / "checkpoints" / "peer0.npz").exists()
        assert (workdir / "sim" / "sim_manifest.json").exists()

    def test_deterministic(self, workdir):
        spec = spec_file(workdir, experiment="decentralized", n_docs=9,
                         num_shards=3, num_peers=6, batch_budget=2,
                         batch_size=8, peer_min_docs=2, peer_max_docs=3,
                         per_shard=2)
        assert main(["simulate", "--spec", spec, "--out", "s1"]) == 0
        assert main(["simulate", "--spec", spec, "--out", "s2"]) == 0
        assert (workdir / "s1" / "loss_traces.csv").read_bytes() == \
            (workdir / "s2" / "loss_traces.csv").read_bytes()


class TestReport:
    def test_prints_records(self, workdir, capsys):
        spec = spec_file(workdir, experiment="content_oblivious",
                         n_list=[1], max_epochs=2)
        assert main(["evaluate", "--spec", spec, "--out", "r"]) == 0
        capsys.readouterr()
        assert main(["report", "--metrics", "r"]) == 0
        out = capsys.readouterr().out
        assert "n=1" in out and "k=1" in out

    def test_missing_dir(self, workdir, capsys):
        assert main(["report", "--metrics", "nowhere"]) == 1
