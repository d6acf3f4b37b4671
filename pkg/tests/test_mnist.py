import gzip
import struct

import numpy as np
import pytest

from kpattern.mnist import (
    BadMagic,
    ChecksumMismatch,
    DEFAULT_CHECKSUMS,
    IdxTensor,
    LabelRule,
    MissingOffline,
    Truncated,
    UnsupportedType,
    build_sequences,
    fetch_mnist,
    load_mnist,
    make_digit_patch,
    make_digit_patches,
    mnist_available,
    parse_idx,
)
from kpattern.numerics import Rng


def synthetic_mnist(count=200, seed=0):
    """Small fake digit set with the official tensor layout."""
    rng = Rng(seed)
    images = np.asarray(rng.integers(0, 256, size=(count, 28, 28)),
                        dtype=np.uint8)
    labels = np.asarray(rng.integers(0, 10, size=count), dtype=np.uint8)
    return images, labels


def write_idx_files(cache_dir, images, labels, prefix, compress=True):
    img_bytes = IdxTensor.from_numpy(images).serialize()
    lab_bytes = IdxTensor.from_numpy(labels).serialize()
    suffix = ".gz" if compress else ""
    img_path = cache_dir / f"{prefix}-images-idx3-ubyte{suffix}"
    lab_path = cache_dir / f"{prefix}-labels-idx1-ubyte{suffix}"
    img_path.write_bytes(gzip.compress(img_bytes) if compress else img_bytes)
    lab_path.write_bytes(gzip.compress(lab_bytes) if compress else lab_bytes)


class TestParseIdx:
    def test_official_image_header_shape(self):
        # images file: magic 0x00000803, rank 3
        images = np.zeros((2, 28, 28), dtype=np.uint8)
        data = IdxTensor.from_numpy(images).serialize()
        assert data[:4] == struct.pack(">I", 0x00000803)
        t = parse_idx(data)
        assert t.dims == (2, 28, 28)

    def test_official_label_header(self):
        labels = np.arange(5, dtype=np.uint8)
        data = IdxTensor.from_numpy(labels).serialize()
        assert data[:4] == struct.pack(">I", 0x00000801)
        assert parse_idx(data).dims == (5,)

    def test_truncated(self):
        with pytest.raises(Truncated):
            parse_idx(b"\x00\x00\x08")
        good = IdxTensor.from_numpy(np.zeros(10, dtype=np.uint8)).serialize()
        with pytest.raises(Truncated):
            parse_idx(good[:-1])

    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            parse_idx(b"\x01\x00\x08\x01" + b"\x00" * 8)

    def test_unsupported_type(self):
        with pytest.raises(UnsupportedType):
            parse_idx(b"\x00\x00\x07\x01" + struct.pack(">I", 1) + b"\x00")

    @pytest.mark.parametrize("dtype", [np.uint8, np.int32, np.float32, np.float64])
    def test_round_trip(self, dtype):
        rng = np.random.default_rng(0)
        arr = (rng.random((3, 4)) * 100).astype(dtype)
        back = parse_idx(IdxTensor.from_numpy(arr).serialize()).to_numpy()
        assert back.dtype.newbyteorder("=") == np.dtype(dtype)
        assert np.array_equal(back.astype(dtype), arr)

    def test_serialize_bit_exact_round_trip(self):
        arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
        t = IdxTensor.from_numpy(arr)
        again = parse_idx(t.serialize())
        assert again.serialize() == t.serialize()


class TestFetch:
    def test_warm_cache_no_network(self, tmp_path):
        images, labels = synthetic_mnist(10)
        write_idx_files(tmp_path, images, labels, "train")
        write_idx_files(tmp_path, images, labels, "t10k")
        # no checksums -> cache accepted as-is; mirrors would fail if touched
        paths = fetch_mnist(tmp_path, mirror_urls=("http://invalid.invalid/",),
                            expected_checksums={}, offline=False)
        assert set(paths) == {
            "train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
            "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz",
        }

    def test_corrupted_cache_checksum(self, tmp_path):
        images, labels = synthetic_mnist(5)
        write_idx_files(tmp_path, images, labels, "train")
        write_idx_files(tmp_path, images, labels, "t10k")
        with pytest.raises(ChecksumMismatch):
            fetch_mnist(tmp_path, expected_checksums=DEFAULT_CHECKSUMS,
                        offline=True)

    def test_offline_empty_cache(self, tmp_path):
        with pytest.raises(MissingOffline):
            fetch_mnist(tmp_path, offline=True)


class TestLoad:
    def test_load_round_trip(self, tmp_path):
        images, labels = synthetic_mnist(30)
        write_idx_files(tmp_path, images, labels, "train")
        got_images, got_labels = load_mnist(tmp_path, "train")
        assert np.array_equal(got_images, images)
        assert np.array_equal(got_labels, labels)

    def test_uncompressed_accepted(self, tmp_path):
        images, labels = synthetic_mnist(8)
        write_idx_files(tmp_path, images, labels, "t10k", compress=False)
        got_images, _ = load_mnist(tmp_path, "test")
        assert got_images.shape == (8, 28, 28)

    def test_availability_probe(self, tmp_path):
        assert not mnist_available(tmp_path)
        images, labels = synthetic_mnist(4)
        write_idx_files(tmp_path, images, labels, "train")
        write_idx_files(tmp_path, images, labels, "t10k")
        assert mnist_available(tmp_path)


class TestDigitPatch:
    def test_all_zero(self):
        patch = make_digit_patch(np.zeros((28, 28), dtype=np.uint8))
        assert patch.shape == (24, 8)
        assert np.all(patch == -1.0)

    def test_all_255(self):
        patch = make_digit_patch(np.full((28, 28), 255, dtype=np.uint8))
        assert np.all(patch == 1.0)

    def test_checkerboard_hand_computed(self):
        img = np.zeros((28, 28), dtype=np.uint8)
        img[::2, ::2] = 255
        img[1::2, 1::2] = 255
        patch = make_digit_patch(img)
        # crop starts at (2, 2): rows/cols of the crop keep the original
        # parity, so crop[0, 0::2] = 255; each pooled triple holds either
        # two or one 255 depending on the column group's start parity
        crop = img[2:26, 2:26].astype(float)
        expect = crop.reshape(24, 8, 3).mean(axis=2) / 127.5 - 1.0
        assert np.array_equal(patch, expect)

    def test_batch_matches_single(self):
        images, _ = synthetic_mnist(12, seed=3)
        batch = make_digit_patches(images)
        for i in range(12):
            assert np.array_equal(batch[i], make_digit_patch(images[i]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            make_digit_patch(np.zeros((28, 27)))


class TestLabelRules:
    def test_central_positions_and_label(self):
        assert LabelRule.CENTRAL_PARITY.positions(5) == (2, 3, 4)
        classes = np.array([7, 3, 4, 5, 0])
        assert LabelRule.CENTRAL_PARITY.label(classes, 5) == 1.0  # 3+4+5 = 12

    def test_ends_middle_positions_and_label(self):
        assert LabelRule.ENDS_MIDDLE_PARITY.positions(5) == (1, 3, 5)
        classes = np.array([1, 9, 2, 9, 2])
        assert LabelRule.ENDS_MIDDLE_PARITY.label(classes, 5) == -1.0  # 1+2+2 = 5

    def test_even_n_rejected(self):
        with pytest.raises(ValueError):
            LabelRule.CENTRAL_PARITY.positions(4)


class TestBuildSequences:
    def test_shapes_and_ranges(self):
        images, labels = synthetic_mnist(50, seed=1)
        ds = build_sequences(images, labels, n=5, rule=LabelRule.CENTRAL_PARITY,
                             count=40, rng=Rng(0))
        assert ds.images.shape == (40, 24, 40)
        assert np.all(ds.images >= -1.0) and np.all(ds.images <= 1.0)
        assert set(np.unique(ds.labels)) <= {-1.0, 1.0}
        ex = ds[0]
        assert ex.image.shape == (24, 40)
        assert len(ex.classes) == 5

    def test_label_consistency(self):
        images, labels = synthetic_mnist(60, seed=2)
        for rule in LabelRule:
            ds = build_sequences(images, labels, n=5, rule=rule, count=64,
                                 rng=Rng(1))
            expect = rule.label(ds.classes, 5)
            assert np.array_equal(ds.labels, expect)

    def test_label_invariance_under_irrelevant_digit_mutation(self):
        images, labels = synthetic_mnist(40, seed=3)
        n = 5
        for rule in LabelRule:
            ds = build_sequences(images, labels, n=n, rule=rule, count=16,
                                 rng=Rng(2))
            relevant = set(rule.positions(n))
            for pos in range(1, n + 1):
                mutated = ds.classes.copy()
                mutated[:, pos - 1] = (mutated[:, pos - 1] + 1) % 10
                changed = rule.label(mutated, n) != ds.labels
                if pos in relevant:
                    assert np.all(changed)  # parity flips when one class +-1
                else:
                    assert not np.any(changed)

    def test_label_balance(self):
        images, labels = synthetic_mnist(500, seed=4)
        ds = build_sequences(images, labels, n=5,
                             rule=LabelRule.CENTRAL_PARITY, count=10_000,
                             rng=Rng(3))
        frac = float(np.mean(ds.labels > 0))
        assert abs(frac - 0.5) < 0.02

    def test_even_n_rejected(self):
        images, labels = synthetic_mnist(10)
        with pytest.raises(ValueError):
            build_sequences(images, labels, n=4, rule=LabelRule.CENTRAL_PARITY,
                            count=2, rng=Rng(0))

    def test_flat_inputs_column_major(self):
        images, labels = synthetic_mnist(10, seed=5)
        ds = build_sequences(images, labels, n=3,
                             rule=LabelRule.CENTRAL_PARITY, count=4, rng=Rng(4))
        flat = ds.flat_inputs()
        assert flat.shape == (4, 24 * 24)
        assert np.array_equal(flat[0, :24], ds.images[0][:, 0])
