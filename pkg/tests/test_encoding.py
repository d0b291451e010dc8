"""Tests for signed residue encoding, quantisation, and feature CSV IO."""

import pytest
from hypothesis import given, strategies as st

from pura.encoding import (
    decode_signed,
    encode_signed,
    quantize,
    quantize_vector,
    read_feature_csv,
    write_feature_csv,
)
from pura.errors import DomainError, RangeError

N_SMALL = 10_007  # prime, comfortably larger than the toy bounds below


def test_encode_signed_exhaustive_small_ring():
    n = 101
    bound = 50
    for value in range(-bound, bound + 1):
        residue = encode_signed(value, n, bound)
        assert 0 <= residue < n
        # Independent oracle: the complement mapping, written directly.
        assert residue == (value if value >= 0 else n + value)
        assert decode_signed(residue, n, bound) == value


@given(
    bound=st.integers(min_value=1, max_value=2**64),
    offset=st.integers(min_value=0),
    seed=st.integers(min_value=0, max_value=2**64),
)
def test_encode_decode_roundtrip(bound, offset, seed):
    n = 2 * bound + 1 + offset % (4 * bound + 7)
    value = seed % (2 * bound + 1) - bound
    assert -bound <= value <= bound
    assert decode_signed(encode_signed(value, n, bound), n, bound) == value


def test_encode_rejects_out_of_bound_values():
    with pytest.raises(RangeError):
        encode_signed(51, N_SMALL, 50)
    with pytest.raises(RangeError):
        encode_signed(-51, N_SMALL, 50)


def test_bound_must_fit_inside_ring():
    # Positive and negative windows would overlap: refuse.
    with pytest.raises(DomainError):
        encode_signed(0, 100, 50)
    with pytest.raises(DomainError):
        decode_signed(0, 100, 50)
    with pytest.raises(DomainError):
        encode_signed(0, N_SMALL, 0)


def test_decode_rejects_residues_outside_signed_window():
    n, bound = 1009, 100
    for residue in (bound + 1, n // 2, n - bound - 1):
        with pytest.raises(RangeError):
            decode_signed(residue, n, bound)
    with pytest.raises(RangeError):
        decode_signed(n, n, bound)
    with pytest.raises(RangeError):
        decode_signed(-1, n, bound)


def test_quantize_known_values():
    # Frozen expectations at the default scale of 10,000.
    table = [
        (0.0, 0),
        (1.0, 10_000),
        (0.5, 5_000),
        (0.25, 2_500),
        (0.123, 1_230),
        (0.9999, 9_999),
    ]
    for value, expected in table:
        assert quantize(value) == expected


def test_quantize_rounds_half_away_from_zero():
    # scale=1 makes the .5 cases exactly representable in binary floats.
    assert quantize(0.5, scale=1) == 1
    assert quantize(1.5, scale=1) == 2
    assert quantize(2.5, scale=1) == 3
    assert quantize(-0.5, scale=1) == -1
    assert quantize(-1.5, scale=1) == -2
    assert quantize(-2.5, scale=1) == -3


def test_quantize_vector_and_scale_validation():
    assert quantize_vector([0.0, 0.5, 1.0]) == [0, 5_000, 10_000]
    with pytest.raises(DomainError):
        quantize(0.5, scale=0)


def test_feature_csv_roundtrip(tmp_path):
    path = str(tmp_path / "features.csv")
    rows = [
        ("alice", [0.0, 0.5, 1.0]),
        ("bob", [0.125, 0.25, 0.375]),
    ]
    write_feature_csv(path, rows)
    read_back = read_feature_csv(path)
    assert [ident for ident, _ in read_back] == ["alice", "bob"]
    for (_, want), (_, got) in zip(rows, read_back):
        assert got == pytest.approx(want, abs=1e-9)


@pytest.mark.parametrize(
    "content,message_part",
    [
        ("alice,0.1\nalice,0.2\n", "duplicate"),
        ("alice,1.5\n", "outside"),
        ("alice,-0.1\n", "outside"),
        ("alice,abc\n", "not a number"),
        ("alice,0.1\nbob,0.1,0.2\n", "expected 1 components"),
        ("alice\n", "no feature components"),
        (",0.5\n", "empty identifier"),
        ("", "no feature rows"),
        ("alice,nan\n", "not finite"),
    ],
)
def test_feature_csv_rejects_malformed_input(tmp_path, content, message_part):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    with pytest.raises(DomainError) as err:
        read_feature_csv(str(path))
    assert message_part in str(err.value)


def test_feature_csv_skips_blank_lines(tmp_path):
    path = tmp_path / "gaps.csv"
    path.write_text("alice,0.5\n\nbob,0.25\n")
    rows = read_feature_csv(str(path))
    assert [ident for ident, _ in rows] == ["alice", "bob"]
