"""Synthetic generator, CIFAR-10 binary loader and the 2:2:1 split"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corefp.corefp_core import DatasetFormatError, InsufficientDataError
from corefp.corefp_data import (CIFAR10_RECORD, OVERLAP_GRID, LabeledDataset, load_cifar10_binary, load_dataset,
                                make_synthetic, overlap_ratio, save_dataset, split_225)


def cifar_bytes(labels, fill=128):
    return b"".join(bytes([label]) + bytes([fill]) * (CIFAR10_RECORD - 1) for label in labels)


class TestDataset:
    def test_rejects_out_of_box_samples(self):
        with pytest.raises(ValueError, match=r"\[0,1\]"):
            LabeledDataset(np.array([[0.5, 1.5]]), np.array([0]), "bad", 2)

    def test_rejects_labels_outside_classes(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((1, 2)), np.array([2]), "bad", 2)

    def test_round_trip(self, tmp_path, tiny_data):
        save_dataset(tiny_data, tmp_path / "d.json")
        loaded = load_dataset(tmp_path / "d.json")
        assert np.array_equal(loaded.xs, tiny_data.xs)
        assert np.array_equal(loaded.ys, tiny_data.ys)
        assert loaded.name == tiny_data.name


class TestSynthetic:
    def test_shape_and_box(self, tiny_data):
        assert tiny_data.xs.shape == (120, 6)
        assert tiny_data.class_counts() == [40, 40, 40]
        assert tiny_data.xs.min() >= 0.0 and tiny_data.xs.max() <= 1.0

    def test_seeded(self):
        a = make_synthetic(3, 4, 10, 0.05, seed=11)
        b = make_synthetic(3, 4, 10, 0.05, seed=11)
        c = make_synthetic(3, 4, 10, 0.05, seed=12)
        assert np.array_equal(a.xs, b.xs)
        assert not np.array_equal(a.xs, c.xs)

    def test_degenerate_parameters(self):
        with pytest.raises(ValueError, match="Degenerate"):
            make_synthetic(1, 4, 10, 0.1, seed=0)
        with pytest.raises(ValueError, match="cannot place"):
            make_synthetic(10, 2, 5, 0.5, seed=0, max_attempts=50)


class TestCifarLoader:
    def test_parses_records(self, tmp_path):
        path = tmp_path / "data_batch_1.bin"
        path.write_bytes(cifar_bytes([3, 9], fill=255))
        data = load_cifar10_binary(path)
        assert data.ys.tolist() == [3, 9]
        assert data.xs.shape == (2, 3072)
        assert np.all(data.xs == 1.0)
        assert data.n_classes == 10

    def test_downsample_averages_blocks(self, tmp_path):
        path = tmp_path / "b.bin"
        path.write_bytes(cifar_bytes([0, 1, 2], fill=51))
        data = load_cifar10_binary(path, downsample=4, limit=2)
        assert data.xs.shape == (2, 192)
        assert np.allclose(data.xs, 0.2)

    def test_truncated_record_reports_offset(self, tmp_path):
        path = tmp_path / "t.bin"
        path.write_bytes(cifar_bytes([1]) + b"\x02" * 10)
        with pytest.raises(DatasetFormatError) as info:
            load_cifar10_binary(path)
        assert info.value.offset == CIFAR10_RECORD

    def test_bad_label_byte(self, tmp_path):
        path = tmp_path / "l.bin"
        path.write_bytes(cifar_bytes([1, 10]))
        with pytest.raises(DatasetFormatError) as info:
            load_cifar10_binary(path)
        assert info.value.offset == CIFAR10_RECORD

    def test_empty_file(self, tmp_path):
        path = tmp_path / "e.bin"
        path.write_bytes(b"")
        with pytest.raises(DatasetFormatError):
            load_cifar10_binary(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_cifar10_binary(tmp_path / "absent.bin")


class TestSplit:
    def test_sizes_are_two_two_one(self, tiny_split):
        assert len(tiny_split.victim) == 48
        assert len(tiny_split.homologous) == 48
        assert len(tiny_split.attacker) == 24
        assert tiny_split.victim.class_counts() == [16, 16, 16]
        assert tiny_split.homologous.class_counts() == [16, 16, 16]

    def test_victim_and_attacker_disjoint(self, tiny_split):
        assert len(np.intersect1d(tiny_split.victim.ids, tiny_split.attacker.ids)) == 0
        assert len(np.intersect1d(tiny_split.homologous.ids, tiny_split.attacker.ids)) == 0

    def test_overlap_is_exact(self, tiny_split):
        assert overlap_ratio(tiny_split.homologous, tiny_split.victim) == 0.5
        assert tiny_split.summary()['measured_overlap'] == 0.5

    @pytest.mark.parametrize("overlap", OVERLAP_GRID)
    def test_overlap_grid(self, tiny_split, overlap):
        plan = tiny_split.with_overlap(overlap)
        expected = np.floor(overlap * 48 + 1e-9) / 48
        assert overlap_ratio(plan.homologous, plan.victim) == expected
        assert len(plan.homologous) == 48
        assert np.array_equal(plan.victim.ids, tiny_split.victim.ids)

    def test_deterministic(self, tiny_data, tiny_split):
        again = split_225(tiny_data, overlap=0.5, seed=0)
        assert np.array_equal(again.homologous.ids, tiny_split.homologous.ids)
        assert np.array_equal(again.attacker.ids, tiny_split.attacker.ids)

    def test_overlap_out_of_range(self, tiny_data):
        with pytest.raises(ValueError):
            split_225(tiny_data, overlap=1.2, seed=0)

    def test_too_few_samples(self):
        data = make_synthetic(3, 4, 4, 0.05, seed=0)
        with pytest.raises(InsufficientDataError):
            split_225(data, overlap=0.5, seed=0)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(5, 30), st.floats(0.0, 1.0))
    def test_any_class_size_splits(self, n_per_class, overlap):
        data = make_synthetic(2, 3, n_per_class, 0.05, seed=n_per_class)
        plan = split_225(data, overlap=overlap, seed=1)
        n_vic = len(plan.victim)
        assert overlap_ratio(plan.homologous, plan.victim) == np.floor(overlap * n_vic + 1e-9) / n_vic
        assert len(plan.homologous) == n_vic
