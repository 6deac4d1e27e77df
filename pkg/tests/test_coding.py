import numpy as np
import pytest

from rdmasim.losstolerance import coding


def test_fwht_all_ones():
    # Direct multiply by the 4x4 Hadamard matrix gives [4,0,0,0]; the
    # orthonormal scaling divides by sqrt(4).
    out = coding.fwht(np.array([1.0, 1.0, 1.0, 1.0]))
    assert np.allclose(out, [2.0, 0.0, 0.0, 0.0])


def test_fwht_hand_computed_vector():
    # Stage 1: [0, 2, 2, -2]; stage 2: [2, 0, -2, 4]; scaled by 1/2.
    out = coding.fwht(np.array([1.0, -1.0, 0.0, 2.0]))
    assert np.allclose(out, [1.0, 0.0, -1.0, 2.0])


def test_fwht_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        coding.fwht(np.zeros(12))


@pytest.mark.parametrize("k", [0, 1, 4, 10, 16])
def test_fwht_involution_and_norm(k):
    n = 1 << k
    rng = np.random.Generator(np.random.PCG64(k))
    x = rng.normal(size=n)
    y = coding.fwht(x)
    assert abs(np.linalg.norm(y) - np.linalg.norm(x)) < 1e-9 * max(1, np.linalg.norm(x))
    assert np.max(np.abs(coding.fwht(y) - x)) < 1e-9


def test_encode_padding_and_fragments():
    payload = coding.encode(np.ones(1000), sign_seed=1, fragment_size=128)
    assert payload.coeffs.size == 1024
    assert payload.fragment_count == 8


def test_encode_zero_vector():
    payload = coding.encode(np.zeros(100), sign_seed=3, fragment_size=64)
    assert not payload.coeffs.any()


def test_encode_energy_preserved():
    rng = np.random.Generator(np.random.PCG64(2))
    g = rng.normal(size=700)
    payload = coding.encode(g, sign_seed=9, fragment_size=64)
    assert abs(np.linalg.norm(payload.coeffs) - np.linalg.norm(g)) < 1e-9


def test_encode_rejects_bad_fragment_size():
    with pytest.raises(ValueError):
        coding.encode(np.ones(100), sign_seed=0, fragment_size=100)


def test_decode_full_mask_roundtrip():
    rng = np.random.Generator(np.random.PCG64(4))
    g = rng.normal(size=900)
    payload = coding.encode(g, sign_seed=11, fragment_size=64)
    out = coding.decode(payload, [True] * payload.fragment_count)
    assert not out.total_loss
    assert np.max(np.abs(out.values - g)) < 1e-9


def test_decode_empty_mask_flags_total_loss():
    payload = coding.encode(np.ones(100), sign_seed=0, fragment_size=32)
    out = coding.decode(payload, [False] * payload.fragment_count)
    assert out.total_loss
    assert not out.values.any()


def test_decode_mask_length_checked():
    payload = coding.encode(np.ones(100), sign_seed=0, fragment_size=32)
    with pytest.raises(ValueError):
        coding.decode(payload, [True] * 3)


def test_decode_monte_carlo_unbiased():
    # Mean over many random ~10% fragment-drop masks approaches the true
    # vector; padding spreads the per-coordinate estimator noise.
    rng = np.random.Generator(np.random.PCG64(7))
    d, fs = 100, 64
    g = rng.uniform(1.0, 2.0, size=d)
    payload = coding.encode(g, sign_seed=21, fragment_size=fs, padded_len=1024)
    count = payload.fragment_count
    trials = 10_000
    acc = np.zeros(d)
    for _ in range(trials):
        mask = rng.random(count) >= 0.10
        if not mask.any():
            mask[0] = True
        acc += coding.decode(payload, mask).values
    mean = acc / trials
    rel = np.abs(mean - g) / np.abs(g)
    assert rel.max() < 0.01


def test_single_fragment_loss_spreads_error():
    # 1-sparse input: losing the fragment holding 1/16 of the coefficients
    # perturbs every coordinate a little instead of erasing the spike.
    n, fs = 1024, 64
    spike = 8.0
    g = np.zeros(n)
    g[37] = spike
    payload = coding.encode(g, sign_seed=5, fragment_size=fs)
    max_coeff = np.max(np.abs(payload.coeffs))
    mask = np.ones(payload.fragment_count, dtype=bool)
    mask[3] = False
    out = coding.decode(payload, mask)
    err = np.abs(out.values - g)
    # bound: n * (fs/n) * max|coeff| = fs * max|coeff|
    assert err.max() <= fs * max_coeff + 1e-9
    # the spike survives mostly intact, unlike dropping its raw fragment,
    # which would erase it outright
    assert err.max() < 0.5 * spike
    # the damage lands across the n/fs Walsh-conjugate coordinates, not on one
    assert np.count_nonzero(err > 1e-12) >= n // fs - 1


def test_xor_parity_duplicates_single_fragment():
    frag = bytes(range(32))
    parity = coding.xor_encode([frag], group_size=1)
    assert parity == [frag]


def test_xor_recovers_single_loss():
    a = bytes(range(16))
    b = bytes(reversed(range(16)))
    parities = coding.xor_encode([a, b], group_size=2)
    restored, residual = coding.xor_recover([a, None], parities, 2, 16)
    assert residual == []
    assert restored == [a, b]


def test_xor_two_losses_reported_as_residual():
    a, b = bytes(16), bytes(range(16))
    parities = coding.xor_encode([a, b], group_size=2)
    restored, residual = coding.xor_recover([None, None], parities, 2, 16)
    assert residual == [0, 1]
    assert restored == [bytes(16), bytes(16)]


def test_xor_lost_parity_with_intact_data_is_fine():
    a, b = bytes(range(16)), bytes(range(16, 32))
    parities = coding.xor_encode([a, b], group_size=2)
    restored, residual = coding.xor_recover([a, b], [None], 2, 16)
    assert residual == []
    assert restored == [a, b]


def test_xor_recover_roundtrip_many_groups():
    rng = np.random.Generator(np.random.PCG64(3))
    frags = [rng.integers(0, 256, 24, dtype=np.uint8).tobytes() for _ in range(12)]
    parities = coding.xor_encode(frags, group_size=4)
    lossy = list(frags)
    lossy[5] = None  # one loss in group 1
    lossy[9] = None  # one loss in group 2
    restored, residual = coding.xor_recover(lossy, parities, 4, 24)
    assert residual == []
    assert restored == frags
