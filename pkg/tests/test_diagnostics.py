import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from musicssl import diagnostics as dg
from musicssl.coder import SegmentConfig
from musicssl.errors import UsageError


def random_code(rng, n, s, ds):
    z = rng.standard_normal((n, s, ds))
    e = np.exp(z - z.max(axis=2, keepdims=True))
    return e / e.sum(axis=2, keepdims=True)


def test_marginals_of_balanced_onehot():
    code = dg.ideal_codes(SegmentConfig(2, 2))
    m, dev = dg.marginal_uniformity(code)
    assert m.tolist() == [[0.5, 0.5], [0.5, 0.5]]
    assert dev == 0.0
    np.testing.assert_allclose(dg.marginal_entropy(code), [math.log(2)] * 2, atol=1e-15)


def test_marginals_of_collapsed_code():
    code = np.zeros((5, 2, 3))
    code[:, :, 1] = 1.0
    _, dev = dg.marginal_uniformity(code)
    assert dev == pytest.approx(2 / 3, abs=1e-15)
    assert dg.collapse_fraction(code).tolist() == [1.0, 1.0]


def test_collapse_fraction_balanced():
    assert dg.collapse_fraction(dg.ideal_codes(SegmentConfig(3, 4))).tolist() == [0.25] * 3


def test_mutual_information_zero_at_ideal():
    mi = dg.segment_mutual_information(dg.ideal_codes(SegmentConfig(3, 3)))
    off = mi[~np.eye(3, dtype=bool)]
    assert np.abs(off).max() < 1e-9
    np.testing.assert_allclose(np.diag(mi), math.log(3), atol=1e-12)


def test_mutual_information_of_copied_segments():
    one = dg.ideal_codes(SegmentConfig(1, 4))
    code = np.concatenate([one, one], axis=1)
    assert dg.segment_mutual_information(code)[0, 1] == pytest.approx(math.log(4), abs=1e-12)


def test_mutual_information_of_independent_random_codes_is_small():
    code = random_code(np.random.default_rng(0), 100_000, 3, 4)
    mi = dg.segment_mutual_information(code)
    assert np.abs(mi[~np.eye(3, dtype=bool)]).max() < 5e-4


def test_cross_view_mutual_information_uses_both_codes():
    rng = np.random.default_rng(1)
    a, b = random_code(rng, 50, 2, 3), random_code(rng, 50, 2, 3)
    mi = dg.segment_mutual_information(a, b)
    joint = a[:, 0].T @ b[:, 0] / 50
    h = lambda p: -np.sum(p * np.log(p))  # noqa: E731
    assert mi[0, 0] == pytest.approx(h(a[:, 0].mean(0)) + h(b[:, 0].mean(0)) - h(joint), abs=1e-12)
    with pytest.raises(UsageError):
        dg.segment_mutual_information(a, b[:10])


@pytest.mark.parametrize("s, ds", [(2, 2), (2, 3), (3, 4)])
def test_covariance_structure_at_ideal(s, ds):
    cov = dg.code_covariance(dg.ideal_codes(SegmentConfig(s, ds)))
    for a in range(s):
        for b in range(s):
            block = cov[a * ds:(a + 1) * ds, b * ds:(b + 1) * ds]
            if a == b:
                off = block[~np.eye(ds, dtype=bool)]
                np.testing.assert_allclose(off, -1.0 / ds**2, atol=1e-9)
                np.testing.assert_allclose(np.diag(block), (ds - 1) / ds**2, atol=1e-9)
            else:
                assert np.abs(block).max() < 1e-12


def test_covariance_two_by_two_example():
    cov = dg.code_covariance(dg.ideal_codes(SegmentConfig(2, 2)))
    assert cov[0, 1] == pytest.approx(-0.25, abs=1e-15)
    assert cov[0, 2] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.integers(1, 3), st.integers(2, 5), st.integers(0, 2**31))
def test_covariance_psd_and_segment_rows_sum_to_zero(n, s, ds, seed):
    cov = dg.code_covariance(random_code(np.random.default_rng(seed), n, s, ds))
    assert np.linalg.eigvalsh(cov).min() > -1e-10
    # each segment sums to 1, so its block rows sum to 0
    for a in range(s):
        np.testing.assert_allclose(cov[:, a * ds:(a + 1) * ds].sum(axis=1), 0.0, atol=1e-12)


def test_theory_report_flags_collapse():
    code = np.zeros((4, 2, 2))
    code[:, :, 0] = 1.0
    report = dg.theory_report(code)
    assert report.collapse_flag
    assert not dg.theory_report(dg.ideal_codes(SegmentConfig(2, 2))).collapse_flag
    assert report.as_dict()["num_samples"] == 4


def test_diagnostics_need_two_samples():
    with pytest.raises(UsageError):
        dg.code_covariance(np.full((1, 1, 2), 0.5))
    with pytest.raises(UsageError):
        dg.marginals(np.zeros((3, 4)))


def test_encoding_capacity_is_exact():
    cap = dg.encoding_capacity(SegmentConfig(102, 80))
    assert cap == 80**102
    assert len(str(cap)) == 195


def test_ideal_codes_enumerate_every_combination():
    code = dg.ideal_codes(SegmentConfig(3, 2), repeats=2)
    assert code.shape == (16, 3, 2)
    keys = {tuple(row.argmax(axis=1)) for row in code}
    assert len(keys) == 8


def test_entropy_reference_records_the_counterexample():
    ref = dg.entropy_reference(SegmentConfig(2, 2))
    assert ref["onehot_ideal"] == pytest.approx(-1.5 * math.log(2), abs=1e-12)
    assert ref["soft_witness"] == pytest.approx(-1 / math.e - math.log(2), abs=1e-12)
    assert ref["soft_witness"] < ref["onehot_ideal"]
    assert ref["lower_bound"] <= ref["soft_witness"] + 1e-12
    assert not ref["onehot_is_minimizer"]
    assert dg.entropy_reference(SegmentConfig(2, 4))["onehot_is_minimizer"]


# -- linear probe -------------------------------------------------------------------

def test_probe_on_separable_features_is_perfect():
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(4), 50)
    feats = np.eye(4)[labels] * 5 + 0.1 * rng.standard_normal((200, 4))
    out = dg.linear_probe(feats, labels)
    assert out["train_acc"] == 1.0 and out["test_acc"] == 1.0
    assert (out["n_train"], out["n_test"], out["classes"]) == (160, 40, 4)


def test_probe_on_onehot_class_features_is_perfect():
    labels = np.repeat(np.arange(3), 10)
    assert dg.linear_probe(np.eye(3)[labels], labels)["test_acc"] == 1.0


def test_probe_with_shuffled_labels_is_near_chance():
    rng = np.random.default_rng(1)
    labels = np.repeat(np.arange(4), 500)
    feats = rng.standard_normal((2000, 8))
    acc = dg.linear_probe(feats, rng.permutation(labels))["test_acc"]
    assert abs(acc - 0.25) < 3 * math.sqrt(0.25 * 0.75 / 400)


def test_probe_is_deterministic_per_split_seed():
    rng = np.random.default_rng(2)
    labels = np.repeat(np.arange(2), 30)
    feats = rng.standard_normal((60, 3)) + labels[:, None]
    assert dg.linear_probe(feats, labels, split_seed=4) == dg.linear_probe(feats, labels, split_seed=4)


def test_probe_rejects_single_class_and_mismatch():
    with pytest.raises(UsageError):
        dg.linear_probe(np.ones((4, 2)), np.zeros(4, dtype=int))
    with pytest.raises(UsageError):
        dg.linear_probe(np.ones((4, 2)), np.arange(3))
