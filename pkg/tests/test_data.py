from pathlib import Path

import numpy as np
import pytest

from cmvit import data as D
from cmvit.errors import ContractError, ParseError
from cmvit.lbp import to_gray
from cmvit.spectral import fft_2d, magnitude_spectrum


def fake_manifest(counts):
    samples = [D.Sample(Path(f"c{label}_{i}.ppm"), label) for label, n in enumerate(counts) for i in range(n)]
    return D.DatasetManifest(tuple(samples))


def write_images(root, n, size=8, bad=None):
    samples = []
    rng = np.random.default_rng(0)
    for i in range(n):
        s = size if i != bad else size + 2
        path = root / f"img{i}.ppm"
        path.write_bytes(D.encode_ppm(rng.integers(0, 256, size=(s, s, 3))))
        samples.append(D.Sample(path, i % 2))
    return D.DatasetManifest(tuple(samples))


def test_ppm_two_by_two():
    img = D.load_ppm(b"P6 2 2 255\n" + bytes(range(12)))
    assert img.shape == (2, 2, 3)
    assert img[0, 1].tolist() == [3, 4, 5]
    assert img[1, 0].tolist() == [6, 7, 8]


def test_ppm_with_comment():
    img = D.load_ppm(b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03")
    assert img.tolist() == [[[1, 2, 3]]]


@pytest.mark.parametrize("blob", [
    b"P5 2 2 255\n" + bytes(4),
    b"P6 2 2 255\n" + bytes(11),
    b"P6 2 2 65535\n" + bytes(24),
    b"P6 2",
])
def test_ppm_parse_errors(blob):
    with pytest.raises(ParseError):
        D.load_ppm(blob)


def test_ppm_round_trip(rng):
    img = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    assert np.array_equal(D.load_ppm(D.encode_ppm(img)), img)
    gray = img[..., 0]
    assert np.array_equal(D.load_any(D.encode_pgm(gray)), gray)


def test_normalize_values():
    img = np.array([[[255, 0, 128]]], dtype=np.uint8)
    t = D.normalize(img)
    assert t.shape == (3, 1, 1)
    assert t.data[0, 0, 0] == 1.0
    assert t.data[1, 0, 0] == 0.0
    assert t.data[2, 0, 0] == pytest.approx(0.501961, abs=1e-6)


def test_normalize_range_and_all_ones(rng):
    assert np.all(D.normalize(np.full((4, 4, 3), 255, dtype=np.uint8)).data == 1.0)
    t = D.normalize(rng.integers(0, 256, size=(6, 6, 3), dtype=np.uint8)).data
    assert t.min() >= 0 and t.max() <= 1


def test_balance_to_minority():
    out = D.balance_undersample(fake_manifest([100, 60]), seed=4)
    assert out.class_counts() == [60, 60]
    assert out.provenance[-1].startswith("balance_undersample seed=4")


def test_balance_deterministic_and_order_preserving():
    m = fake_manifest([30, 10])
    a = D.balance_undersample(m, 9)
    assert a.samples == D.balance_undersample(m, 9).samples
    assert a.samples != D.balance_undersample(m, 10).samples
    index = {s: i for i, s in enumerate(m.samples)}
    positions = [index[s] for s in a.samples]
    assert positions == sorted(positions)


def test_balance_idempotent_on_balanced():
    m = fake_manifest([12, 12])
    assert D.balance_undersample(m, 1).samples == m.samples


def test_balance_empty_class():
    with pytest.raises(ContractError):
        D.balance_undersample(fake_manifest([5, 0]), 0)


def test_split_stratified_counts():
    train, val = D.split(fake_manifest([50, 50]), 0.2, seed=3)
    assert len(train) == 80 and len(val) == 20
    assert train.class_counts() == [40, 40]
    assert val.class_counts() == [10, 10]


def test_split_is_partition_and_deterministic():
    m = fake_manifest([23, 17])
    train, val = D.split(m, 0.25, seed=8)
    assert not set(train.samples) & set(val.samples)
    assert set(train.samples) | set(val.samples) == set(m.samples)
    again = D.split(m, 0.25, seed=8)
    assert again[0].samples == train.samples and again[1].samples == val.samples


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
def test_split_fraction_out_of_range(fraction):
    with pytest.raises(ContractError):
        D.split(fake_manifest([4, 4]), fraction, 0)


def test_label_out_of_range():
    with pytest.raises(ContractError):
        D.DatasetManifest((D.Sample(Path("a.ppm"), 2),))


def test_batch_sizes(tmp_path):
    m = write_images(tmp_path, 10)
    store = D.ImageStore(8)
    sizes = [len(y) for _, y in D.batch_iter(m, store, 4, shuffle_seed=0)]
    assert sizes == [4, 4, 2]
    x, _ = next(D.batch_iter(m, store, 4))
    assert x.shape == (4, 3, 8, 8)


def test_batch_default_size_is_64():
    import inspect

    assert inspect.signature(D.batch_iter).parameters["batch_size"].default == 64


def test_epoch_orders():
    assert not np.array_equal(D.epoch_order(50, 7, 0), D.epoch_order(50, 7, 1))
    assert np.array_equal(D.epoch_order(50, 7, 1), D.epoch_order(50, 7, 1))


def test_batch_iter_covers_each_sample_once(tmp_path):
    m = write_images(tmp_path, 11)
    store = D.ImageStore(8)
    seen = []
    for x, _ in D.batch_iter(m, store, 3, shuffle_seed=5, epoch=2):
        pixels = np.rint(x.data.astype(np.float64) * 255).astype(np.uint8).transpose(0, 2, 3, 1)
        seen.extend(img.tobytes() for img in pixels)
    expected = [store.get(s).tobytes() for s in m.samples]
    assert sorted(seen) == sorted(expected)


def test_batch_size_mismatch_names_source(tmp_path):
    m = write_images(tmp_path, 4, bad=2)
    with pytest.raises(ContractError, match="img2.ppm"):
        list(D.batch_iter(m, D.ImageStore(8), 4))


def test_manifest_round_trip(tmp_path):
    (tmp_path / "imgs").mkdir()
    m = write_images(tmp_path / "imgs", 4)
    out = tmp_path / "lists" / "m.csv"
    out.parent.mkdir()
    D.write_manifest(m, out)
    assert out.read_text().splitlines()[0] == "path,label"
    assert out.read_text().splitlines()[1] == "../imgs/img0.ppm,0"
    back = D.read_manifest(out)
    assert [s.label for s in back.samples] == [s.label for s in m.samples]
    assert [s.path.resolve() for s in back.samples] == [s.path.resolve() for s in m.samples]


def test_manifest_bad_header(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("file,class\na.ppm,0\n")
    with pytest.raises(ParseError):
        D.read_manifest(p)


def test_discover_directory_convention(small_corpus):
    root, manifest = small_corpus
    (root / "manifest.csv").rename(root / "hidden.csv")
    try:
        found = D.open_dataset(root)
    finally:
        (root / "hidden.csv").rename(root / "manifest.csv")
    assert found.class_counts() == [8, 8]
    assert {s.path for s in found.samples} == {s.path for s in manifest.samples}


def test_gen_synthetic_counts(small_corpus):
    root, manifest = small_corpus
    assert len(list(root.glob("*/*.ppm"))) == 16
    assert D.read_manifest(root / "manifest.csv").class_counts() == [8, 8]
    assert manifest.class_counts() == [8, 8]


def test_gen_synthetic_deterministic(tmp_path):
    D.gen_synthetic(3, 16, 11, tmp_path / "a")
    D.gen_synthetic(3, 16, 11, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for f in files_a:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_gen_synthetic_rejects_non_power_of_two(tmp_path):
    with pytest.raises(ContractError):
        D.gen_synthetic(1, 24, 0, tmp_path)


def test_synthetic_fake_has_more_high_frequency_energy(small_corpus):
    _, manifest = small_corpus
    store = D.ImageStore(32)
    size = 32
    f = np.minimum(np.arange(size), size - np.arange(size))
    low = (f[:, None] < size // 4) & (f[None, :] < size // 4)
    energy = {0: [], 1: []}
    for s in manifest.samples:
        mag = magnitude_spectrum(fft_2d(to_gray(store.get(s)).astype(np.float64))).data
        energy[s.label].append(np.mean(mag[~low] ** 2))
    assert np.mean(energy[1]) > np.mean(energy[0])
