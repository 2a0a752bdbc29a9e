"""Training-loop unit tests: evaluation metrics from confusion counts,
record encoding, deterministic seeded training with best-epoch retention,
repeated-run summaries, the 2-D embedding export, and checkpoint round-trips."""

import csv
import dataclasses
import json

import numpy as np
import pytest
import torch

from imac.corpus import PAD_ID, ArticleRecord, validate_record
from imac.encoder import EncoderConfig
from imac.errors import DomainError, TrainingDivergedError, ValidationError
from imac.fusion import ModelConfig
from imac.losses import LossConfig
from imac.training import (
    LABEL_TO_INDEX,
    METRIC_KEYS,
    EvalReport,
    TrainConfig,
    encode_records,
    evaluate,
    export_embeddings,
    label_index_of,
    load_checkpoint,
    prepare_splits,
    run_repeated,
    save_checkpoint,
    train,
    train_config_from_dict,
)

POSITIVE_TITLES = ["breakthrough results on %s dynamics",
                   "landmark analysis of %s structure"]
NEGATIVE_TITLES = ["incremental notes on %s dynamics",
                   "preliminary look at %s structure"]
TOPICS = ["protein", "galaxy", "polymer", "neuron", "plasma", "graphene"]


def labeled_record(i: int, positive: bool) -> ArticleRecord:
    topic = TOPICS[i % len(TOPICS)]
    templates = POSITIVE_TITLES if positive else NEGATIVE_TITLES
    title = templates[i % 2] % topic
    marker = "decisive evidence widely replicated" if positive else \
        "modest evidence narrowly scoped"
    label = "high_impact" if positive else "others"
    return validate_record({
        "id": f"r{i:03d}",
        "title": title,
        "abstract": f"we report {marker} about {topic} systems in this work",
        "year": 2012 + (i % 8),
        "reference_count": 60 if positive else 15,
        "reference_age": 4.0 if positive else 9.0,
        "impact_reference": 0.8 if positive else 0.2,
        "h_index": 45 if positive else 6,
        "author_cit": 9000 if positive else 200,
        "author_papers": 120 if positive else 20,
        "citations": 400 if positive else 5,
        "journal_id": "jhi" if positive else "jlo",
        "journal_label": label,
        "article_label": label,
    })


def tiny_corpus(n=24):
    return [labeled_record(i, positive=i % 2 == 0) for i in range(n)]


def tiny_config(**overrides) -> TrainConfig:
    base = dict(
        learning_rate=5e-3,
        batch_size=8,
        epochs=3,
        seed=0,
        task="journal_impact",
        num_runs=1,
        model=ModelConfig(
            encoder=EncoderConfig(d=8, vocab_size=128, max_positions=32,
                                  num_layers=1, num_heads=2),
            dropout_rate=0.0,
        ),
        loss=LossConfig(alpha=0.5),
        title_max_len=16,
        abstract_max_len=32,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def tiny_splits():
    records = tiny_corpus(24)
    split_records = {
        "train": records[:16],
        "validation": records[16:20],
        "test": records[20:],
    }
    encoded, tokenizer, normalizer = prepare_splits(split_records, tiny_config())
    return encoded, tokenizer, normalizer


class TestEvalReport:
    def test_hand_confusion_matrix(self):
        report = EvalReport.from_counts(tp=3, fp=1, tn=4, fn=2)
        np.testing.assert_allclose(report.precision, 0.75, atol=1e-12)
        np.testing.assert_allclose(report.recall, 0.6, atol=1e-12)
        np.testing.assert_allclose(report.f1, 0.666667, atol=1e-6)
        np.testing.assert_allclose(report.accuracy, 0.7, atol=1e-12)

    def test_all_correct(self):
        report = EvalReport.from_counts(tp=5, fp=0, tn=5, fn=0)
        assert (report.accuracy, report.precision, report.recall, report.f1) == \
            (1.0, 1.0, 1.0, 1.0)

    def test_never_predicts_positive(self):
        """tp + fp = 0 leaves precision undefined; recall is 0, so f1
        collapses to 0 rather than being undefined."""
        report = EvalReport.from_counts(tp=0, fp=0, tn=6, fn=4)
        assert report.precision is None
        assert report.recall == 0.0
        assert report.f1 == 0.0
        np.testing.assert_allclose(report.accuracy, 0.6, atol=1e-12)

    def test_no_positives_anywhere(self):
        report = EvalReport.from_counts(tp=0, fp=0, tn=6, fn=0)
        assert report.precision is None and report.recall is None
        assert report.f1 is None

    def test_from_predictions(self):
        y_true = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
        y_pred = [1, 1, 1, 0, 0, 1, 0, 0, 0, 0]
        report = EvalReport.from_predictions(y_true, y_pred)
        assert (report.tp, report.fp, report.tn, report.fn) == (3, 1, 4, 2)

    def test_from_predictions_validates(self):
        with pytest.raises(DomainError):
            EvalReport.from_predictions([1, 0], [1])
        with pytest.raises(DomainError):
            EvalReport.from_predictions([], [])

    def test_metrics_keys(self):
        report = EvalReport.from_counts(1, 1, 1, 1)
        assert tuple(report.metrics()) == METRIC_KEYS
        assert set(report.to_dict()) == {"tp", "fp", "tn", "fn", *METRIC_KEYS}


class TestLabelIndexing:
    def test_mapping(self):
        assert LABEL_TO_INDEX == {"others": 0, "high_impact": 1}

    def test_task_selects_label_field(self):
        record = dataclasses.replace(labeled_record(0, True),
                                     journal_label="others",
                                     article_label="high_impact")
        assert label_index_of(record, "journal_impact") == 0
        assert label_index_of(record, "article_impact") == 1

    def test_unlabeled_record_names_the_missing_step(self):
        record = dataclasses.replace(labeled_record(0, True), journal_label=None)
        with pytest.raises(ValidationError, match="labeling step"):
            label_index_of(record, "journal_impact")

    def test_unknown_label_rejected(self):
        record = dataclasses.replace(labeled_record(0, True), journal_label="medium")
        with pytest.raises(ValidationError):
            label_index_of(record, "journal_impact")


class TestEncodeRecords:
    def test_padding_and_shapes(self, tiny_splits):
        encoded, _, _ = tiny_splits
        train = encoded["train"]
        assert train.title_ids.shape[0] == 16
        assert train.title_ids.dtype == torch.long
        # Rows shorter than the widest row are PAD-filled on the right.
        lengths = (train.title_ids != PAD_ID).sum(dim=1)
        assert lengths.min() >= 3
        assert train.metadata.shape == (16, 7)
        assert set(train.labels.tolist()) == {0, 1}

    def test_empty_split_rejected(self, tiny_splits):
        _, tokenizer, normalizer = tiny_splits
        with pytest.raises(DomainError):
            encode_records([], tokenizer, normalizer, "journal_impact")

    def test_subset_selects_rows(self, tiny_splits):
        encoded, _, _ = tiny_splits
        sub = encoded["train"].subset([0, 2])
        assert sub.ids == [encoded["train"].ids[0], encoded["train"].ids[2]]
        assert len(sub) == 2


class TestPrepareSplits:
    def test_tokenizer_fitted_on_train_only(self):
        records = tiny_corpus(12)
        for r in records[:8]:
            assert "xyzzy" not in r.title
        test_record = dataclasses.replace(records[11], title="xyzzy " + records[11].title)
        splits = {"train": records[:8], "test": [test_record]}
        _, tokenizer, _ = prepare_splits(splits, tiny_config())
        assert "xyzzy" not in tokenizer.token_to_id

    def test_missing_train_rejected(self):
        with pytest.raises(DomainError):
            prepare_splits({"test": tiny_corpus(4)}, tiny_config())

    def test_empty_extra_split_skipped(self):
        encoded, _, _ = prepare_splits(
            {"train": tiny_corpus(8), "validation": []}, tiny_config()
        )
        assert "validation" not in encoded


class TestTrain:
    def test_same_seed_reproduces_the_run(self, tiny_splits):
        encoded, _, _ = tiny_splits
        cfg = tiny_config(epochs=2)
        _, first = train(encoded, cfg)
        _, second = train(encoded, cfg)
        assert first.train_losses == second.train_losses
        assert first.val_losses == second.val_losses
        assert first.val_accuracies == second.val_accuracies
        assert first.best_epoch == second.best_epoch
        assert first.reports == second.reports

    def test_different_seeds_differ(self, tiny_splits):
        encoded, _, _ = tiny_splits
        _, a = train(encoded, tiny_config(epochs=2, seed=0))
        _, b = train(encoded, tiny_config(epochs=2, seed=1))
        assert a.train_losses != b.train_losses

    def test_contrastive_weight_changes_the_objective(self, tiny_splits):
        encoded, _, _ = tiny_splits
        _, with_supcon = train(encoded, tiny_config(epochs=2))
        _, without = train(encoded, tiny_config(epochs=2,
                                                loss=LossConfig(alpha=0.0)))
        assert with_supcon.train_losses != without.train_losses

    def test_manifest_tracks_every_epoch(self, tiny_splits):
        encoded, _, _ = tiny_splits
        cfg = tiny_config(epochs=3)
        _, manifest = train(encoded, cfg)
        assert len(manifest.train_losses) == 3
        assert len(manifest.val_losses) == 3
        assert len(manifest.train_accuracies) == 3
        assert len(manifest.val_accuracies) == 3
        assert manifest.wall_time_seconds > 0.0
        assert set(manifest.reports) == {"train", "validation", "test"}

    def test_returned_model_is_the_best_epoch_snapshot(self, tiny_splits):
        encoded, _, _ = tiny_splits
        model, manifest = train(encoded, tiny_config(epochs=3))
        assert manifest.best_epoch == int(np.argmax(manifest.val_accuracies))
        report = evaluate(model, encoded["validation"])
        np.testing.assert_allclose(
            report.accuracy, manifest.val_accuracies[manifest.best_epoch], atol=1e-12
        )

    def test_divergence_raises_with_diagnostics(self, tiny_splits):
        encoded, _, _ = tiny_splits
        cfg = tiny_config(epochs=2, learning_rate=1e18)
        with pytest.raises(TrainingDivergedError, match="epoch"):
            train(encoded, cfg)

    def test_missing_train_split_rejected(self, tiny_splits):
        encoded, _, _ = tiny_splits
        with pytest.raises(DomainError):
            train({"test": encoded["test"]}, tiny_config())


class TestRunRepeated:
    def test_single_run_summary(self, tiny_splits):
        encoded, _, _ = tiny_splits
        summary = run_repeated(encoded, tiny_config(epochs=1, num_runs=1))
        assert summary["num_runs"] == 1
        assert summary["eval_split"] == "test"
        for key in METRIC_KEYS:
            if summary["runs"][0][key] is None:
                assert summary["mean"][key] is None
            else:
                np.testing.assert_allclose(summary["mean"][key],
                                           summary["runs"][0][key], atol=1e-12)
                assert summary["sd"][key] == 0.0

    def test_mean_lies_between_extremes(self, tiny_splits):
        encoded, _, _ = tiny_splits
        summary = run_repeated(encoded, tiny_config(epochs=1, num_runs=2))
        values = [run["accuracy"] for run in summary["runs"]]
        assert min(values) <= summary["mean"]["accuracy"] <= max(values)


class TestExportEmbeddings:
    def _trained(self, tiny_splits):
        encoded, _, _ = tiny_splits
        model, _ = train(encoded, tiny_config(epochs=1))
        return model, encoded["train"]

    def test_row_budget_and_labels(self, tiny_splits):
        model, split = self._trained(tiny_splits)
        rows = export_embeddings(model, split, n_per_class=5, seed=0)
        assert len(rows) == 10
        assert {label for _, label, _, _ in rows} == {0, 1}

    def test_clamps_to_class_size(self, tiny_splits):
        model, split = self._trained(tiny_splits)
        rows = export_embeddings(model, split, n_per_class=500, seed=0)
        assert len(rows) == len(split)

    def test_deterministic_for_a_seed(self, tiny_splits):
        model, split = self._trained(tiny_splits)
        a = export_embeddings(model, split, n_per_class=4, seed=3)
        b = export_embeddings(model, split, n_per_class=4, seed=3)
        assert a == b

    def test_first_axis_carries_at_least_as_much_variance(self, tiny_splits):
        model, split = self._trained(tiny_splits)
        rows = export_embeddings(model, split, n_per_class=8, seed=0)
        xs = np.array([r[2] for r in rows])
        ys = np.array([r[3] for r in rows])
        assert xs.var() >= ys.var() - 1e-12

    def test_csv_header_and_rows(self, tiny_splits, tmp_path):
        model, split = self._trained(tiny_splits)
        path = tmp_path / "embeddings.csv"
        rows = export_embeddings(model, split, n_per_class=3, seed=0, path=path)
        with open(path, newline="") as fh:
            parsed = list(csv.reader(fh))
        assert parsed[0] == ["id", "label", "x", "y"]
        assert len(parsed) == len(rows) + 1

    def test_absent_class_warns(self, tiny_splits):
        model, split = self._trained(tiny_splits)
        only_positive = split.subset(np.flatnonzero(split.labels.numpy() == 1))
        with pytest.warns(UserWarning, match="absent"):
            rows = export_embeddings(model, only_positive, n_per_class=3, seed=0)
        assert {label for _, label, _, _ in rows} == {1}

    def test_rejects_nonpositive_budget(self, tiny_splits):
        model, split = self._trained(tiny_splits)
        with pytest.raises(DomainError):
            export_embeddings(model, split, n_per_class=0)


class TestCheckpoint:
    def test_round_trip_preserves_weights_and_reports(self, tiny_splits, tmp_path):
        encoded, tokenizer, normalizer = tiny_splits
        cfg = tiny_config(epochs=2)
        model, manifest = train(encoded, cfg)
        save_checkpoint(tmp_path / "ckpt", model, manifest, tokenizer, normalizer)

        loaded, manifest_dict, tok2, norm2 = load_checkpoint(tmp_path / "ckpt")
        for key, value in model.state_dict().items():
            assert torch.equal(loaded.state_dict()[key], value), key
        assert tok2.token_to_id == tokenizer.token_to_id
        assert norm2 == normalizer
        before = evaluate(model, encoded["test"])
        after = evaluate(loaded, encoded["test"])
        assert before == after
        assert manifest_dict["reports"] == manifest.reports

    def test_missing_artifact_names_the_producer(self, tmp_path):
        with pytest.raises(ValidationError, match="train command"):
            load_checkpoint(tmp_path / "nowhere")

    def test_config_dict_round_trip(self):
        cfg = tiny_config(epochs=7, seed=13)
        clone = train_config_from_dict(json.loads(json.dumps(
            dataclasses.asdict(cfg))))
        assert clone == cfg
