import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urnclt.rng import Role, StreamKey, derive_stream


def test_same_key_same_variates():
    k = StreamKey(123, 4, Role.DRAW)
    assert np.array_equal(derive_stream(k).random(1000), derive_stream(k).random(1000))


def test_replication_id_changes_stream():
    a = derive_stream(StreamKey(123, 0)).random(1000)
    b = derive_stream(StreamKey(123, 1)).random(1000)
    assert np.any(a != b)


def test_uniform_mean_band():
    u = derive_stream(StreamKey(2026, 7, Role.REINFORCEMENT)).random(10**6)
    assert 0.498 <= u.mean() <= 0.502


@pytest.mark.parametrize("other", [
    StreamKey(1, 0, Role.DRAW, 1),
    StreamKey(1, 1, Role.DRAW, 0),
    StreamKey(1, 0, Role.REINFORCEMENT, 0),
    StreamKey(2, 0, Role.DRAW, 0),
])
def test_cross_correlation_of_neighbouring_keys(other):
    a = derive_stream(StreamKey(1, 0, Role.DRAW, 0)).random(10**5)
    b = derive_stream(other).random(10**5)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01


def test_prefix_consistency():
    k = StreamKey(9, 3)
    full = derive_stream(k).random(5000)
    assert np.array_equal(full[:1234], derive_stream(k).random(1234))


def test_negative_ids_rejected():
    with pytest.raises(ValueError):
        StreamKey(1, -1)
    with pytest.raises(ValueError):
        StreamKey(2**64)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(0, 2**32), st.sampled_from(list(Role)), st.integers(0, 2**32))
def test_keys_are_pure_functions(seed, rep, role, branch):
    k = StreamKey(seed, rep, role, branch)
    assert k.philox_key().tolist() == StreamKey(seed, rep, role, branch).philox_key().tolist()
    assert derive_stream(k).random() == derive_stream(k).random()


def test_with_role_keeps_identity():
    k = StreamKey(5, 6).with_role(Role.BRANCH, 7)
    assert (k.master_seed, k.replication_id, k.role, k.branch_id) == (5, 6, Role.BRANCH, 7)
