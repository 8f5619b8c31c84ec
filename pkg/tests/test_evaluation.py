import json

import numpy as np
import pytest

from dedsi.corpus import QueryDocPair
from dedsi.ensemble import EnsembleResult, RankedDoc
from dedsi.evaluation import (ExperimentSpec, METRICS_COLUMNS, MetricsRecord,
                              emit_report, read_metrics_csv, run_experiment,
                              topk_accuracy)


def fixed_ranker(ranking):
    def ranker(query):
        ranked = [RankedDoc(d, 1.0 - 0.1 * i, (0, 0))
                  for i, d in enumerate(ranking)]
        return EnsembleResult(ranked=ranked, k=len(ranked), query=query)
    return ranker


TEST_PAIRS = [QueryDocPair(f"query {i}", "GOLD") for i in range(10)]


class TestTopkAccuracy:
    def test_perfect_ranker(self):
        ranker = fixed_ranker(["GOLD", "other1", "other2"])
        for k in (1, 2, 3, 5):
            rec = topk_accuracy(ranker, TEST_PAIRS, k)
            assert rec.accuracy == 1.0
            assert rec.support == 10

    def test_rank_threshold(self):
        ranker = fixed_ranker(["a", "b", "GOLD", "c"])
        assert topk_accuracy(ranker, TEST_PAIRS, 1).accuracy == 0.0
        assert topk_accuracy(ranker, TEST_PAIRS, 2).accuracy == 0.0
        assert topk_accuracy(ranker, TEST_PAIRS, 3).accuracy == 1.0
        assert topk_accuracy(ranker, TEST_PAIRS, 4).accuracy == 1.0

    def test_monotone_in_k_random_rankers(self):
        rng = np.random.default_rng(0)
        docs = [f"D{i}" for i in range(8)]
        for trial in range(40):
            order = {q.query: list(rng.permutation(docs))
                     for q in TEST_PAIRS}
            # gold present for a random subset of queries
            for q in TEST_PAIRS:
                if rng.random() < 0.5:
                    order[q.query][int(rng.integers(0, 8))] = "GOLD"

            def ranker(query):
                ranked = [RankedDoc(d, -float(i), (0, 0))
                          for i, d in enumerate(order[query])]
                return EnsembleResult(ranked=ranked, k=8, query=query)

            accs = [topk_accuracy(ranker, TEST_PAIRS, k).accuracy
                    for k in range(1, 9)]
            assert all(a <= b for a, b in zip(accs, accs[1:]))
            assert all(0.0 <= a <= 1.0 for a in accs)

    def test_exact_ratio(self):
        ranker = fixed_ranker(["GOLD"])
        rec = topk_accuracy(ranker, TEST_PAIRS[:3], 1)
        assert rec.accuracy == 3 / 3

    def test_errors(self):
        ranker = fixed_ranker(["GOLD"])
        with pytest.raises(ValueError):
            topk_accuracy(ranker, [], 1)
        with pytest.raises(ValueError):
            topk_accuracy(ranker, TEST_PAIRS, 0)


class TestSpec:
    def test_unknown_fields_rejected(self):
        with pytest.raises(ValueError, match="bogus"):
            ExperimentSpec.from_dict({"experiment": "ensemble10",
                                      "bogus": 1})

    def test_unknown_experiment_rejected(self):
        with pytest.raises(ValueError):
            ExperimentSpec(experiment="nope")

    def test_split_consistency(self):
        with pytest.raises(ValueError):
            ExperimentSpec(experiment="ensemble10", queries_per_doc=10,
                           split=(20, 20, 20))

    def test_spec_hash_stable(self):
        a = ExperimentSpec(experiment="ensemble10", seed=5)
        b = ExperimentSpec.from_dict({"experiment": "ensemble10", "seed": 5})
        assert a.spec_hash() == b.spec_hash()
        c = ExperimentSpec(experiment="ensemble10", seed=6)
        assert a.spec_hash() != c.spec_hash()


class TestEmitReport:
    def records(self):
        return [
            MetricsRecord.from_counts("ensemble", 5, 10, k=1, seed=7,
                                      shard=0),
            MetricsRecord.from_counts("singular", 9, 10, k=5, seed=7),
            MetricsRecord.from_counts("decentralized", 1, 3, k=1, seed=7,
                                      shard=2, pool="own_shard"),
        ]

    def test_columns_exact(self, tmp_path):
        files = emit_report(self.records(), str(tmp_path), seed=7)
        header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
        assert header == "arm,shard,pool,k,accuracy,support,seed"

    def test_roundtrip(self, tmp_path):
        recs = self.records()
        emit_report(recs, str(tmp_path), seed=7)
        back = read_metrics_csv(str(tmp_path / "metrics.csv"))
        assert sorted(back, key=lambda r: r.arm) == \
            sorted(recs, key=lambda r: r.arm)

    def test_empty_records(self, tmp_path):
        emit_report([], str(tmp_path))
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines == ["arm,shard,pool,k,accuracy,support,seed"]

    def test_json_embeds_hash_and_seed(self, tmp_path):
        emit_report(self.records(), str(tmp_path), spec_hash="abc123",
                    seed=7)
        blob = json.loads((tmp_path / "metrics.json").read_text())
        assert blob["spec_hash"] == "abc123" and blob["seed"] == 7
        assert len(blob["records"]) == 3

    def test_deterministic_bytes(self, tmp_path):
        emit_report(self.records(), str(tmp_path / "a"), seed=7)
        emit_report(list(reversed(self.records())), str(tmp_path / "b"),
                    seed=7)
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == \
            (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_extras_tables(self, tmp_path):
        extras = {"curve": [{"n_seen": 1, "accuracy": 0.25}],
                  "stats": {"rounds": 3}}
        emit_report([], str(tmp_path), extras)
        assert (tmp_path / "curve.csv").exists()
        assert json.loads((tmp_path / "stats.json").read_text()) == \
            {"rounds": 3}


def tiny_spec(experiment, **kw):
    base = dict(experiment=experiment, seed=3, n_docs=6, queries_per_doc=10,
                split=(4, 3, 3), model_width=16, max_epochs=6,
                early_stop_window=10, batch_size=16, beam_width=5,
                k_list=[1, 5], lexicon_size=60, words_per_doc=6)
    base.update(kw)
    return ExperimentSpec.from_dict(base)


class TestRunners:
    def test_content_oblivious_smoke(self):
        spec = tiny_spec("content_oblivious", n_list=[1, 2])
        records, extras = run_experiment(spec)
        assert [r.arm for r in records] == ["n=1", "n=2"]
        assert all(r.support == 18 for r in records)
        assert all(0.0 <= r.accuracy <= 1.0 for r in records)
        assert [row["n_seen"] for row in extras["seen_queries_curve"]] == [1, 2]

    def test_ensemble10_smoke(self):
        spec = tiny_spec("ensemble10", num_shards=2)
        records, extras = run_experiment(spec)
        arms = {(r.arm, r.shard, r.k) for r in records}
        for k in (1, 5):
            assert ("singular", None, k) in arms
            assert ("ensemble", None, k) in arms
            for s in (0, 1):
                assert ("ensemble", s, k) in arms
                assert ("personal", s, k) in arms
        # top-5 never below top-1 on the same arm
        by = {(r.arm, r.shard, r.k): r.accuracy for r in records}
        for (arm, shard, k), acc in by.items():
            if k == 5:
                assert acc >= by[(arm, shard, 1)]
        assert len(extras["ensemble_summary"]) == 4  # 2 arms x 2 k

    def test_ensemble_single_shard_equals_personal(self):
        spec = tiny_spec("ensemble10", num_shards=1)
        records, _ = run_experiment(spec)
        by = {(r.arm, r.shard, r.k): r.accuracy for r in records}
        for k in (1, 5):
            assert by[("ensemble", 0, k)] == by[("personal", 0, k)]

    def test_decentralized_smoke(self):
        spec = tiny_spec("decentralized", n_docs=9, num_shards=3,
                         num_peers=6, batch_budget=3, batch_size=8,
                         peer_min_docs=2, peer_max_docs=3, per_shard=2)
        records, extras = run_experiment(spec)
        pools = {r.pool for r in records}
        assert pools == {"all_shards", "own_shard"}
        assert all(0.0 <= r.accuracy <= 1.0 for r in records)
        assert extras["sim_stats"]["cross_group_messages"] == 0
        assert extras["peer_accuracies"]

    def test_magnet_compare_smoke(self):
        spec = tiny_spec("magnet_compare", n_docs=4, queries_per_doc=8,
                         split=(4, 2, 2), max_epochs=4)
        records, extras = run_experiment(spec)
        arms = {(r.arm, r.k) for r in records}
        assert arms == {("docid", 1), ("docid", 5),
                        ("magnet", 1), ("magnet", 5)}

    def test_runner_reproducible(self):
        spec = tiny_spec("content_oblivious", n_list=[1], max_epochs=3)
        a, _ = run_experiment(spec)
        b, _ = run_experiment(spec)
        assert a == b

    def test_fit_has_no_runner(self):
        spec = tiny_spec("fit")
        with pytest.raises(ValueError, match="no runner"):
            run_experiment(spec)
