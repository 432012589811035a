import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anytime_svm.dataio import (ConfigError, Dataset, ParseError, SparseVector, SplitSpec,
                                labeling_rule, make_synthetic, parse_binarize, parse_libsvm,
                                scale_unit, split, split_sizes, to_libsvm)


class TestParse:
    def test_two_lines(self):
        ds = parse_libsvm("+1 1:0.5 3:2.0\n-1 2:1.0")
        assert len(ds) == 2
        assert ds.dimension == 3
        assert ds.labels == [1, -1]
        assert ds.example(0) == SparseVector((1, 3), (0.5, 2.0))

    def test_non_increasing_index(self):
        with pytest.raises(ParseError, match="non-increasing index at line 1"):
            parse_libsvm("1 2:1.0 1:1.0")

    def test_zero_label_is_negative(self):
        assert parse_libsvm("0 1:1.0").labels == [-1]

    @pytest.mark.parametrize("text", ["1 1:abc", "1 x:1", "1 1:inf", "1 0:1.0", "foo 1:1"])
    def test_malformed(self, text):
        with pytest.raises(ParseError, match="line 1"):
            parse_libsvm(text)

    def test_line_number_counts_comments_and_blanks(self):
        with pytest.raises(ParseError, match="line 4"):
            parse_libsvm("# header\n1 1:1\n\n1 1:nan\n")

    def test_crlf_and_comments(self):
        ds = parse_libsvm("1 1:1 # trailing\r\n-1 2:3\r\n")
        assert ds.labels == [1, -1] and ds.dimension == 2

    def test_stream_input(self):
        assert len(parse_libsvm(io.StringIO("1 1:1\n-1 1:2\n"))) == 2

    def test_one_vs_rest(self):
        ds = parse_libsvm("3 1:1\n1 1:2\n3 1:3\n", positive_class=parse_binarize("one-vs-rest:3"))
        assert ds.labels == [1, -1, 1]

    def test_bad_binarize(self):
        with pytest.raises(ConfigError):
            parse_binarize("pairs:1")

    def test_empty(self):
        with pytest.raises(ParseError):
            parse_libsvm("# nothing\n")


rows = st.lists(
    st.dictionaries(st.integers(1, 12), st.floats(-1e6, 1e6, allow_nan=False).filter(lambda v: v != 0),
                    max_size=6),
    min_size=1, max_size=10)


@settings(max_examples=60, deadline=None)
@given(rows, st.lists(st.sampled_from([-1, 1]), min_size=10, max_size=10))
def test_round_trip(entries, labels):
    text = "\n".join(f"{labels[i]} " + " ".join(f"{k}:{v!r}" for k, v in sorted(e.items()))
                     for i, e in enumerate(entries))
    ds = parse_libsvm(text)
    again = parse_libsvm(to_libsvm(ds))
    assert again == ds
    assert again.examples == ds.examples


class TestSplit:
    @pytest.mark.parametrize("n,sizes", [(8, (4, 2, 2)), (9, (5, 2, 2)), (4, (2, 1, 1))])
    def test_sizes(self, n, sizes):
        assert split_sizes(n, SplitSpec((2, 1, 1))) == sizes

    def test_empty_part(self):
        with pytest.raises(ConfigError):
            split_sizes(3, SplitSpec((2, 1, 1)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(4, 200), st.integers(0, 2**63 - 1))
    def test_partition(self, n, seed):
        X = np.arange(n, dtype=float)[:, None]
        y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        parts = split(Dataset(X, y, "d"), SplitSpec((2, 1, 1), seed))
        ids = np.concatenate([p.X[:, 0] for p in parts])
        assert sorted(ids) == list(range(n))
        again = split(Dataset(X, y, "d"), SplitSpec((2, 1, 1), seed))
        for a, b in zip(parts, again):
            assert np.array_equal(a.X, b.X)

    def test_ratios_normalised(self):
        assert SplitSpec((4, 2, 2)).normalized == pytest.approx((0.5, 0.25, 0.25))


class TestSynthetic:
    def test_two_gaussians_balanced_separable(self):
        ds = make_synthetic("two-gaussians", 100, 0.0, 1)
        assert ds.labels.count(1) == 50
        # separated by the x0 = 0 hyperplane
        assert np.all(np.sign(ds.X[:, 0]) == ds.y)

    def test_checkerboard_noise_matches_rule(self):
        ds = make_synthetic("checkerboard", 1000, 0.05, 7)
        disagreement = np.mean(labeling_rule("checkerboard")(ds.X) != ds.y)
        assert disagreement == pytest.approx(0.05, abs=0.002)

    def test_xor_rings_tiny(self):
        assert sorted(make_synthetic("xor-rings", 4, 0.0, 0).labels) == [-1, -1, 1, 1]

    @pytest.mark.parametrize("kind", ["two-gaussians", "checkerboard", "xor-rings"])
    def test_reproducible_and_balanced(self, kind):
        a = make_synthetic(kind, 101, 0.1, 3)
        b = make_synthetic(kind, 101, 0.1, 3)
        assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()
        assert abs(a.labels.count(1) - a.labels.count(-1)) <= 1

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_synthetic("spirals", 10)

    def test_scale_unit(self):
        ds = scale_unit(make_synthetic("two-gaussians", 50, 0.0, 0))
        assert ds.X.min() == 0.0 and ds.X.max() == 1.0
