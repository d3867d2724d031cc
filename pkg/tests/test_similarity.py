import json
import math

import numpy as np
import pytest

from mono3dkit.embfile import EmbeddingBundle, write_bundle
from mono3dkit.errors import MaskMismatch, ShapeMismatch, ZeroNormRow
from mono3dkit.similarity import (
    corpus_similarity,
    cosine_similarity,
    euclidean_similarity,
)


def _pair(a_rows, b_rows, mask=None, cid="p"):
    a = np.asarray(a_rows, dtype=np.float32)
    b = np.asarray(b_rows, dtype=np.float32)
    if mask is None:
        mask = np.ones(a.shape[0], dtype=np.uint8)
    mask = np.asarray(mask, dtype=np.uint8)
    return (
        EmbeddingBundle(cid, mask, a),
        EmbeddingBundle(cid, mask.copy(), b),
    )


def test_identical_bundles_score_one():
    a, b = _pair([[0.3, -1.2], [4.0, 0.5]], [[0.3, -1.2], [4.0, 0.5]])
    assert abs(euclidean_similarity(a, b) - 1.0) < 1e-12
    assert abs(cosine_similarity(a, b) - 1.0) < 1e-12


def test_euclidean_two_token_hand_case():
    # difference rows (0,0) and (1,0): distances 0 and 1, mean 0.5
    a, b = _pair([[1.0, 2.0], [3.0, 4.0]], [[1.0, 2.0], [2.0, 4.0]])
    assert abs(euclidean_similarity(a, b) - 0.5) < 1e-12


def test_padding_rows_do_not_matter():
    base_a = [[1.0, 2.0], [3.0, 4.0]]
    base_b = [[1.5, 2.0], [3.0, 3.5]]
    a1, b1 = _pair(base_a + [[0.0, 0.0]], base_b + [[0.0, 0.0]], mask=[1, 1, 0])
    a2, b2 = _pair(base_a + [[900.0, -3e4]], base_b + [[-7e5, 123.0]], mask=[1, 1, 0])
    assert abs(euclidean_similarity(a1, b1) - euclidean_similarity(a2, b2)) < 1e-12
    assert abs(cosine_similarity(a1, b1) - cosine_similarity(a2, b2)) < 1e-12


def test_cosine_orthogonal_rows():
    a, b = _pair([[1.0, 0.0]], [[0.0, 1.0]])
    assert abs(cosine_similarity(a, b)) < 1e-12


def test_cosine_closed_form():
    a, b = _pair([[1.0, 0.0]], [[1.0 / math.sqrt(2), 1.0 / math.sqrt(2)]])
    assert abs(cosine_similarity(a, b) - 1.0 / math.sqrt(2)) < 1e-7  # float32 inputs


def test_scores_are_symmetric():
    rng = np.random.default_rng(8)
    a, b = _pair(rng.standard_normal((5, 3)), rng.standard_normal((5, 3)))
    assert euclidean_similarity(a, b) == pytest.approx(euclidean_similarity(b, a), abs=1e-12)
    assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-12)


def test_cosine_invariant_to_row_scaling_euclidean_not():
    rng = np.random.default_rng(21)
    rows_a = rng.standard_normal((4, 6))
    rows_b = rng.standard_normal((4, 6))
    scales = rng.uniform(0.5, 3.0, (4, 1))
    a, b = _pair(rows_a, rows_b)
    a_scaled, b_same = _pair(rows_a * scales, rows_b)
    assert cosine_similarity(a_scaled, b_same) == pytest.approx(
        cosine_similarity(a, b), abs=1e-6
    )
    assert abs(euclidean_similarity(a_scaled, b_same) - euclidean_similarity(a, b)) > 1e-4


def test_normalize_rows_flag_makes_euclidean_scale_invariant():
    rng = np.random.default_rng(3)
    rows_a = rng.standard_normal((4, 6))
    rows_b = rng.standard_normal((4, 6))
    scales = rng.uniform(0.5, 3.0, (4, 1))
    a, b = _pair(rows_a, rows_b)
    a_scaled, b_same = _pair(rows_a * scales, rows_b)
    assert euclidean_similarity(a_scaled, b_same, normalize_rows=True) == pytest.approx(
        euclidean_similarity(a, b, normalize_rows=True), abs=1e-6
    )


def test_appending_padding_tokens_changes_neither_score():
    rng = np.random.default_rng(44)
    rows_a = rng.standard_normal((3, 5))
    rows_b = rng.standard_normal((3, 5))
    a, b = _pair(rows_a, rows_b)
    junk_a = rng.uniform(-1e6, 1e6, (2, 5))
    junk_b = rng.uniform(-1e6, 1e6, (2, 5))
    a_pad, b_pad = _pair(
        np.vstack([rows_a, junk_a]), np.vstack([rows_b, junk_b]), mask=[1, 1, 1, 0, 0]
    )
    assert abs(euclidean_similarity(a_pad, b_pad) - euclidean_similarity(a, b)) < 1e-12
    assert abs(cosine_similarity(a_pad, b_pad) - cosine_similarity(a, b)) < 1e-12


def test_masked_mean_divides_by_masked_count():
    # one real token with distance 1: mean must be 1 regardless of padding rows
    a, b = _pair([[0.0, 0.0], [5.0, 5.0]], [[1.0, 0.0], [-5.0, 2.0]], mask=[1, 0])
    assert euclidean_similarity(a, b) == pytest.approx(0.0, abs=1e-12)


def test_shape_and_mask_mismatches():
    a, _ = _pair([[1.0, 0.0]], [[1.0, 0.0]])
    b_wide, _ = _pair([[1.0, 0.0, 2.0]], [[1.0, 0.0, 2.0]])
    with pytest.raises(ShapeMismatch):
        euclidean_similarity(a, b_wide)
    a2, b2 = _pair([[1.0, 0.0], [2.0, 2.0]], [[1.0, 0.0], [2.0, 2.0]])
    b2.mask = np.array([0, 1], dtype=np.uint8)
    with pytest.raises(MaskMismatch):
        cosine_similarity(a2, b2)


def test_zero_norm_row_raises_for_cosine_only():
    a, b = _pair([[0.0, 0.0]], [[1.0, 1.0]])
    with pytest.raises(ZeroNormRow):
        cosine_similarity(a, b)
    assert euclidean_similarity(a, b) == pytest.approx(1.0 - math.sqrt(2.0), abs=1e-7)


# --------------------------------------------------------------------------
# corpus reports

def _write_manifest(tmp_path, pairs):
    lines = []
    for cid, a, b in pairs:
        pa = tmp_path / f"{cid}_a.emb"
        pb = tmp_path / f"{cid}_b.emb"
        write_bundle(a, pa)
        write_bundle(b, pb)
        lines.append(json.dumps({"id": cid, "original": pa.name, "augmented": pb.name}))
    manifest = tmp_path / "pairs.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def test_corpus_identical_pairs(tmp_path):
    rng = np.random.default_rng(0)
    pairs = []
    for i in range(3):
        rows = rng.standard_normal((4, 5)).astype(np.float32)
        a = EmbeddingBundle(f"c{i}", np.ones(4, dtype=np.uint8), rows)
        b = EmbeddingBundle(f"c{i}", np.ones(4, dtype=np.uint8), rows.copy())
        pairs.append((f"c{i}", a, b))
    report = corpus_similarity(_write_manifest(tmp_path, pairs))
    assert report.n_pairs == 3
    assert report.mean_euclidean == pytest.approx(1.0, abs=1e-12)
    assert report.mean_cosine == pytest.approx(1.0, abs=1e-12)
    assert [p.id for p in report.pairs] == ["c0", "c1", "c2"]


def test_corpus_empty_manifest(tmp_path):
    manifest = tmp_path / "pairs.jsonl"
    manifest.write_text("")
    report = corpus_similarity(manifest)
    assert report.n_pairs == 0
    assert report.mean_euclidean is None
    assert report.mean_cosine is None


def test_corpus_means_match_hand_average(tmp_path):
    rng = np.random.default_rng(5)
    pairs = []
    expected_e, expected_c = [], []
    for i in range(5):
        a_rows = rng.standard_normal((3, 4))
        b_rows = rng.standard_normal((3, 4))
        a, b = _pair(a_rows, b_rows, cid=f"s{i}")
        pairs.append((f"s{i}", a, b))
        expected_e.append(euclidean_similarity(a, b))
        expected_c.append(cosine_similarity(a, b))
    report = corpus_similarity(_write_manifest(tmp_path, pairs))
    assert report.mean_euclidean == pytest.approx(float(np.mean(expected_e)), abs=1e-12)
    assert report.mean_cosine == pytest.approx(float(np.mean(expected_c)), abs=1e-12)


def test_corpus_records_failures_and_continues(tmp_path):
    rows = np.ones((2, 2), dtype=np.float32)
    good_a, good_b = _pair(rows, rows, cid="ok")
    manifest = _write_manifest(tmp_path, [("ok", good_a, good_b)])
    extra = json.dumps({"id": "bad", "original": "missing_a.emb", "augmented": "missing_b.emb"})
    manifest.write_text(manifest.read_text() + extra + "\n")
    report = corpus_similarity(manifest)
    assert report.n_pairs == 1
    assert [fid for fid, _ in report.failures] == ["bad"]
    assert report.mean_euclidean == pytest.approx(1.0, abs=1e-12)
