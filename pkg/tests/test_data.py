import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from curvexpand.captions import validate_record
from curvexpand.data import (
    DatasetError,
    DatasetManifest,
    ToyGenParams,
    check_mask,
    describe_location,
    describe_size,
    describe_trend_shape,
    ingest_dataset,
    load_png,
    mask_thickness,
    rasterize,
    resize_mask,
    save_png,
    split_dataset,
    toy_generate,
    toy_sample,
)


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file() and not p.name.startswith("."):
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    return toy_generate(ToyGenParams(seed=3), 12, root)


def test_toy_corpus_layout(corpus):
    assert len(corpus) == 12
    root = corpus.root
    assert len(list((root / "images").glob("*.png"))) == 12
    assert len(corpus.captions()) == 24
    x, y = corpus.load_arrays()
    assert x.shape == (12, 32, 32) and y.dtype == bool
    assert 0.0 <= x.min() and x.max() <= 1.0


def test_toy_records_are_valid(corpus):
    assert all(validate_record(r) == [] for r in corpus.captions())


def test_toy_captions_are_faithful(corpus):
    records = {(r.pair_id, r.kind): r for r in corpus.captions()}
    for s in corpus.samples:
        mask = load_png(corpus.root / s.mask_path) > 0
        for kind in ("segmap", "image"):
            r = records[(s.pair_id, kind)]
            assert r.location == describe_location(mask)
            assert r.size == describe_size(mask)
            assert r.trend_shape == describe_trend_shape(mask)


def test_toy_generation_is_byte_identical(tmp_path):
    a = toy_generate(ToyGenParams(seed=9), 5, tmp_path / "a")
    b = toy_generate(ToyGenParams(seed=9), 5, tmp_path / "b")
    assert tree_digest(a.root) == tree_digest(b.root)
    c = toy_generate(ToyGenParams(seed=10), 5, tmp_path / "c")
    assert tree_digest(a.root) != tree_digest(c.root)


def test_fixed_width_gives_fixed_thickness():
    params = ToyGenParams(curve_count=(1, 1), curve_width=(3, 3), size=64)
    rng = np.random.default_rng(0)
    for _ in range(30):
        assert abs(mask_thickness(toy_sample(params, rng).mask > 0) - 3) <= 1


@given(st.floats(0.0, np.pi), st.integers(2, 5))
def test_thickness_matches_straight_band_area(angle, width):
    # a long straight band: pixels in a central disc divided by the chord length is the true width
    size, c = 96, 47.3  # off the pixel lattice so the band edges avoid ties
    d = np.array([np.cos(angle), np.sin(angle)])
    line = np.array([c - 60 * d[1], c - 60 * d[0]]), np.array([c + 60 * d[1], c + 60 * d[0]])
    mask = rasterize(np.stack(line), width, size)
    yy, xx = np.mgrid[0:size, 0:size]
    disc = (yy - c) ** 2 + (xx - c) ** 2 <= 30**2
    measured = mask[disc].sum() / 60.0
    assert abs(measured - width) <= 0.5
    assert abs(mask_thickness(mask) - width) <= 1


def test_location_caption_for_top_left_curve():
    mask = np.zeros((32, 32), bool)
    mask[3:10, 2:12] = True
    assert "top left" in describe_location(mask)


def test_toy_params_validation():
    with pytest.raises(ValueError):
        ToyGenParams(size=24)
    with pytest.raises(ValueError):
        ToyGenParams(curve_width=(4, 2))
    with pytest.raises(ValueError):
        toy_generate(ToyGenParams(), 0, "/tmp/never")


# -- masks and resizing --------------------------------------------------------------------


def test_check_mask_rejects_non_binary():
    with pytest.raises(DatasetError, match="non-binary mask"):
        check_mask(np.array([[0, 128, 255]], np.uint8))
    assert check_mask(np.array([[0, 1]], np.uint8)).tolist() == [[0, 255]]


@given(arrays(np.bool_, (12, 12)), st.sampled_from([4, 8, 16, 32, 48]))
def test_mask_resize_stays_binary(fg, size):
    out = resize_mask(np.where(fg, 255, 0).astype(np.uint8), size)
    assert out.shape == (size, size)
    assert set(np.unique(out)) <= {0, 255}


def test_png_roundtrip_preserves_binarity(tmp_path):
    mask = np.zeros((9, 9), np.uint8)
    mask[2:5] = 255
    save_png(tmp_path / "m.png", mask)
    assert np.array_equal(load_png(tmp_path / "m.png"), mask)


# -- ingestion -----------------------------------------------------------------------------


def _copy_corpus(corpus, dest: Path, n=4):
    (dest / "images").mkdir(parents=True)
    (dest / "masks").mkdir()
    keep = {s.pair_id for s in corpus.samples[:n]}
    for s in corpus.samples[:n]:
        (dest / s.image_path).write_bytes((corpus.root / s.image_path).read_bytes())
        (dest / s.mask_path).write_bytes((corpus.root / s.mask_path).read_bytes())
    lines = [r.to_json() for r in corpus.captions() if r.pair_id in keep]
    (dest / "captions.jsonl").write_text("\n".join(lines) + "\n")
    return dest


def test_ingest_four_pairs(corpus, tmp_path):
    m = ingest_dataset(_copy_corpus(corpus, tmp_path / "d"), 32)
    assert len(m) == 4 and (tmp_path / "d" / "manifest.json").exists()


def test_ingest_resizes_to_canonical(corpus, tmp_path):
    root = _copy_corpus(corpus, tmp_path / "d")
    m = ingest_dataset(root, 16)
    x, y = m.load_arrays()
    assert x.shape == (4, 16, 16)
    for s in m.samples:
        assert set(np.unique(load_png(root / s.mask_path))) <= {0, 255}


def test_ingest_reports_unpaired(corpus, tmp_path):
    root = _copy_corpus(corpus, tmp_path / "d")
    (root / "masks" / f"{corpus.samples[0].pair_id}.png").unlink()
    with pytest.raises(DatasetError, match=corpus.samples[0].pair_id):
        ingest_dataset(root)


def test_ingest_rejects_non_binary_mask(corpus, tmp_path):
    root = _copy_corpus(corpus, tmp_path / "d")
    bad = np.zeros((32, 32), np.uint8)
    bad[0, :3] = [0, 128, 255]
    save_png(root / "masks" / f"{corpus.samples[1].pair_id}.png", bad)
    with pytest.raises(DatasetError, match="non-binary mask"):
        ingest_dataset(root)


def test_ingest_roundtrip_records_valid(corpus, tmp_path):
    m = ingest_dataset(_copy_corpus(corpus, tmp_path / "d", n=6))
    assert all(validate_record(r) == [] for r in m.captions())


# -- splits --------------------------------------------------------------------------------


def _manifest(n):
    from curvexpand.data import Sample

    return DatasetManifest("x", 32, Path("."), [Sample(str(i), "", "", str(i)) for i in range(n)])


def test_split_sizes_and_determinism():
    a = split_dataset(_manifest(10), 0.8, 1)
    assert len(a.split("train")) == 8 and len(a.split("val")) == 2
    assert a == split_dataset(_manifest(10), 0.8, 1)


@given(st.integers(2, 60), st.floats(0.05, 0.95), st.integers(0, 100))
def test_split_partition(n, frac, seed):
    try:
        m = split_dataset(_manifest(n), frac, seed)
    except DatasetError:
        assert round(n * frac) in (0, n)
        return
    train = {s.id for s in m.split("train").samples}
    val = {s.id for s in m.split("val").samples}
    assert train | val == {str(i) for i in range(n)} and not train & val


def test_split_rejects_bad_fraction():
    with pytest.raises(ValueError):
        split_dataset(_manifest(4), 1.0, 0)
    with pytest.raises(DatasetError):
        split_dataset(_manifest(2), 0.1, 0)


def test_manifest_json_roundtrip(corpus, tmp_path):
    path = corpus.save(tmp_path / "m.json")
    loaded = DatasetManifest.load(path)
    assert loaded.samples == corpus.samples and loaded.name == corpus.name
    assert json.loads(path.read_text())["resolution"] == 32
