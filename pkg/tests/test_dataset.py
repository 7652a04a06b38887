"""Tests for the dataset model, injection protocol, label graphs and on-disk format."""

import json

import numpy as np
import pytest

from rankmvml.dataset import (
    InjectionConfig,
    MultiViewDataset,
    build_correlation,
    correlation_for,
    correlation_subset,
    export_correlation_csv,
    inject_missing,
    label_similarity_graph,
    load_dataset,
    save_dataset,
    synth_dataset,
    truncate_correlation,
)
from rankmvml.errors import ArtifactIOError, ContractError, ManifestError


# =============================================================================
# DATA MODEL AND SYNTHESIS
# =============================================================================


def test_dataset_rejects_empty_view_row():
    with pytest.raises(ContractError, match="at least one available view"):
        MultiViewDataset(
            views=(np.zeros((2, 2)),),
            labels=np.zeros((2, 2)),
            view_mask=np.array([[1.0], [0.0]]),
            label_mask=np.ones((2, 2)),
            split=np.array(["train", "test"], dtype=object),
        )


def test_dataset_rejects_labels_outside_known_mask():
    with pytest.raises(ContractError, match="zero wherever G is zero"):
        MultiViewDataset(
            views=(np.zeros((1, 2)),),
            labels=np.array([[1.0, 0.0]]),
            view_mask=np.ones((1, 1)),
            label_mask=np.array([[0.0, 1.0]]),
            split=np.array(["train"], dtype=object),
        )


def test_dataset_rejects_non_binary_masks():
    with pytest.raises(ContractError, match="0/1"):
        MultiViewDataset(
            views=(np.zeros((1, 2)),),
            labels=np.zeros((1, 2)),
            view_mask=np.array([[0.5]]),
            label_mask=np.ones((1, 2)),
            split=np.array(["train"], dtype=object),
        )


def test_dataset_does_not_freeze_caller_arrays():
    labels = np.zeros((1, 2))
    MultiViewDataset(
        (np.zeros((1, 2)),),
        labels,
        np.ones((1, 1)),
        np.ones((1, 2)),
        np.array(["train"]),
    )
    labels[0, 0] = 1.0


def test_synth_is_deterministic():
    a = synth_dataset(30, 2, 3, seed=4)
    b = synth_dataset(30, 2, 3, seed=4)
    c = synth_dataset(30, 2, 3, seed=5)
    assert a.equals(b)
    assert not a.equals(c)


def test_synth_split_sizes():
    ds = synth_dataset(100, 2, 3, seed=0)
    assert [len(ds.rows(s)) for s in ("train", "val", "test")] == [70, 15, 15]


def test_synth_labels_have_one_to_three_positives():
    ds = synth_dataset(50, 1, 6, seed=2)
    counts = ds.labels.sum(axis=1)
    assert counts.min() >= 1 and counts.max() <= 3
    assert np.all(ds.view_mask == 1) and np.all(ds.label_mask == 1)


def test_synth_noiseless_views_are_linear_in_labels():
    ds = synth_dataset(10, 2, 3, noise=0.0, seed=1)
    features = np.hstack(ds.views)
    coef, *_ = np.linalg.lstsq(features, ds.labels, rcond=None)
    predicted = (features @ coef > 0.5).astype(float)
    assert np.array_equal(predicted, ds.labels)


@pytest.mark.parametrize("n, m, c", [(3, 2, 2), (10, 0, 2), (10, 2, 1)])
def test_synth_rejects_invalid_sizes(n, m, c):
    with pytest.raises(ContractError):
        synth_dataset(n, m, c)


# =============================================================================
# INCOMPLETENESS INJECTION
# =============================================================================


def test_injection_with_zero_rates_is_identity(tiny_dataset):
    untouched = inject_missing(tiny_dataset, InjectionConfig(0.0, 0.0, seed=3))
    assert untouched.equals(tiny_dataset)


@pytest.mark.parametrize("rate", [1.0, -0.1])
def test_injection_rejects_bad_rates(rate):
    with pytest.raises(ContractError):
        InjectionConfig(view_missing_rate=rate)


def test_injection_requires_complete_dataset(incomplete_dataset):
    with pytest.raises(ContractError):
        inject_missing(incomplete_dataset, InjectionConfig(0.1, 0.1))


@pytest.mark.parametrize("seed", range(5))
def test_injected_views_keep_one_view_per_row(seed):
    ds = synth_dataset(1000, 2, 4, seed=seed)
    out = inject_missing(ds, InjectionConfig(0.5, 0.5, seed=seed))
    assert np.all(out.view_mask.sum(axis=1) >= 1)
    assert out.view_mask.mean() >= 0.5
    assert np.all(out.labels * (1 - out.label_mask) == 0)


def test_high_view_missing_rate_still_repairs():
    ds = synth_dataset(200, 3, 4, seed=0)
    out = inject_missing(ds, InjectionConfig(0.7, 0.0, seed=9))
    assert np.all(out.view_mask.sum(axis=1) >= 1)


def test_injected_labels_hide_exact_fraction_on_train_rows():
    ds = synth_dataset(400, 2, 5, seed=1)
    out = inject_missing(ds, InjectionConfig(0.0, 0.5, seed=2))
    train = ds.rows("train")
    for j in range(ds.c):
        for value in (1.0, 0.0):
            rows = train[ds.labels[train, j] == value]
            hidden = (out.label_mask[rows, j] == 0).sum()
            assert hidden == int(round(0.5 * len(rows)))
    others = np.concatenate([ds.rows("val"), ds.rows("test")])
    assert np.all(out.label_mask[others] == 1)


def test_missing_view_rows_are_refilled_with_noise():
    ds = synth_dataset(100, 2, 3, seed=1)
    out = inject_missing(ds, InjectionConfig(0.5, 0.0, seed=4))
    for v in range(ds.m):
        missing = out.view_mask[:, v] == 0
        kept = ~missing
        assert np.array_equal(out.views[v][kept], ds.views[v][kept])
        assert not np.allclose(out.views[v][missing], ds.views[v][missing])


# =============================================================================
# LABEL CORRELATION AND GRAPHS
# =============================================================================


def test_build_correlation_hand_example():
    y = np.array([[1, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    expected = np.array([[1, 0.5, 0.5], [0.5, 1, 0], [1, 0, 1]])
    assert np.allclose(build_correlation(y), expected, atol=1e-12)


def test_build_correlation_degenerate_cases():
    assert np.array_equal(build_correlation(np.eye(3)), np.eye(3))
    corr = build_correlation(np.array([[1, 0, 1], [1, 0, 0]], dtype=float))
    assert np.array_equal(corr[1], [0.0, 1.0, 0.0])


def test_build_correlation_is_bounded_with_unit_diagonal():
    y = (np.random.default_rng(0).random((40, 6)) < 0.4).astype(float)
    corr = build_correlation(y)
    assert np.all((corr >= 0) & (corr <= 1))
    assert np.all(np.diag(corr) == 1.0)


def test_truncate_correlation():
    corr = np.array([[1.0, 0.4], [0.2, 1.0]])
    assert np.array_equal(truncate_correlation(corr, 0.3), [[1.0, 0.4], [0.0, 1.0]])
    assert np.array_equal(truncate_correlation(corr, 0.0), corr)
    assert np.array_equal(truncate_correlation(corr, 1.0), np.zeros((2, 2)))
    with pytest.raises(ContractError):
        truncate_correlation(corr, 1.5)


def test_correlation_for_uses_training_rows_only(tiny_dataset):
    train = tiny_dataset.rows("train")
    lc = correlation_for(tiny_dataset, 0.1)
    assert np.array_equal(lc.matrix, build_correlation(tiny_dataset.labels[train]))
    assert np.all((lc.truncated == 0) | (lc.truncated > 0.1))


def test_label_similarity_graph_hand_examples():
    y = np.array([[1, 0], [1, 1]], dtype=float)
    graph, valid = label_similarity_graph(y, np.ones((2, 2)))
    assert np.allclose(graph, [[0.5, 0.5], [0.5, 1.0]])
    assert np.all(valid == 1)

    g = np.array([[1, 0], [1, 1]], dtype=float)
    graph, _ = label_similarity_graph(y * g, g)
    assert np.allclose(graph, [[1.0, 1.0], [1.0, 1.0]])


def test_label_similarity_graph_marks_unknown_pairs_invalid():
    y = np.array([[1, 0], [0, 0]], dtype=float)
    g = np.array([[1, 0], [0, 1]], dtype=float)
    graph, valid = label_similarity_graph(y, g)
    assert valid[0, 1] == 0 and graph[0, 1] == 0
    assert np.array_equal(graph, graph.T)


def test_correlation_structure_survives_label_hiding():
    rng = np.random.default_rng(3)
    base = (rng.random((2000, 6)) < 0.3).astype(float)
    base[:, 1] = np.maximum(base[:, 1], base[:, 0])
    ds = MultiViewDataset(
        views=(rng.standard_normal((2000, 2)),),
        labels=base,
        view_mask=np.ones((2000, 1)),
        label_mask=np.ones_like(base),
        split=np.array(["train"] * 2000, dtype=object),
    )
    masked = inject_missing(ds, InjectionConfig(0.0, 0.5, seed=1))
    full = build_correlation(ds.labels) > 0.1
    partial = build_correlation(masked.labels) > 0.1
    off = ~np.eye(6, dtype=bool)
    assert (full[off] == partial[off]).mean() >= 0.8


def test_correlation_subset_and_export(tmp_path):
    corr = np.arange(16, dtype=float).reshape(4, 4)
    sub, labels = correlation_subset(corr, [1, 3])
    assert labels == [1, 3]
    assert np.array_equal(sub, [[5.0, 7.0], [13.0, 15.0]])
    with pytest.raises(ContractError):
        correlation_subset(corr, [4])

    path = export_correlation_csv(np.eye(2), tmp_path / "c.csv")
    assert path.read_text().splitlines()[0] == "0,1"
    assert len(path.read_text().splitlines()) == 3

    empty = export_correlation_csv(corr, tmp_path / "empty.csv", [])
    assert len(empty.read_text().splitlines()) == 1


# =============================================================================
# ON-DISK FORMAT
# =============================================================================


def test_save_load_round_trip(tmp_path, incomplete_dataset):
    save_dataset(incomplete_dataset, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert loaded.equals(incomplete_dataset)
    save_dataset(loaded, tmp_path / "again")
    for name in ("view_0.csv", "Y.csv", "W.csv", "G.csv", "split.csv", "manifest.json"):
        first = (tmp_path / "ds" / name).read_bytes()
        assert first == (tmp_path / "again" / name).read_bytes()


def test_load_reports_bad_manifest_field(tmp_path, tiny_dataset):
    save_dataset(tiny_dataset, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["view_dims"] = [5]
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ManifestError) as excinfo:
        load_dataset(tmp_path)
    assert excinfo.value.field == "view_dims"


def test_load_rejects_invalid_json(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(ManifestError):
        load_dataset(tmp_path)


def test_load_missing_directory(tmp_path):
    with pytest.raises(ArtifactIOError):
        load_dataset(tmp_path / "nowhere")
