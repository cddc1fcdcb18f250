import numpy as np
import pytest

from mmtcdet.adaptive import PRESETS, FilterBank, train_on_pilots
from mmtcdet.errors import ConfigError
from mmtcdet.listdetect import (AdaptiveDetector, ListTrace, SacConfig, Variant,
                                build_candidate_list, detect_symbol_period, extend_branch,
                                sac_reliable, select_branch, slice_symbol)
from mmtcdet.sysmodel import SystemConfig, draw_frame, snr_to_noise_var, substream

S = np.sqrt(0.5)
P11 = S + 1j * S
VARIANTS = [v.value for v in Variant]


# ----------------------------------------------------------------- slicing

@pytest.mark.parametrize("z,expect", [(0.9 + 0.9j, P11), (0j, 0j), (0.3535 + 0.3535j, 0j),
                                      (-2 - 0.1j, -S - 1j * S)])
def test_slice(z, expect, qpsk):
    assert slice_symbol(z, qpsk) == pytest.approx(expect)


def test_slice_exact_tie_prefers_zero(qpsk):
    z = P11 / 2          # equidistant from 0 and P11
    assert abs(z) == pytest.approx(abs(z - P11))
    assert slice_symbol(z, qpsk) == 0


def test_slice_with_priors(qpsk):
    pri = np.array([0.96, 0.01, 0.01, 0.01, 0.01])
    assert slice_symbol(0.4 + 0.4j, qpsk, pri, zeta2=0.5) == 0
    assert slice_symbol(0.4 + 0.4j, qpsk) == pytest.approx(P11)


# --------------------------------------------------------------------- SAC

def test_sac_examples(qpsk):
    sac = SacConfig(2.0)
    assert sac.zero_radius == 0.5 and sac.active_radius == 0.5
    rel, near = sac_reliable(0.1 + 0.05j, qpsk, sac)
    assert rel and near == 0
    z = 0.55 + 0.05j
    assert abs(z - P11) == pytest.approx(0.676, abs=1e-3)
    rel, near = sac_reliable(z, qpsk, sac)
    assert not rel and near == 0


def test_sac_limit(qpsk):
    sac = SacConfig(1e9)
    rel, near = sac_reliable(0.3, qpsk, sac)
    assert rel and near == 0


def test_sac_active_disk(qpsk):
    rel, near = sac_reliable(P11 * 0.9, qpsk, SacConfig(2.0))
    assert rel and near == pytest.approx(P11)


def test_sac_rejects_lambda():
    with pytest.raises(ConfigError):
        SacConfig(1.0)


# ---------------------------------------------------------- candidate list

def test_candidates_examples(qpsk):
    np.testing.assert_allclose(build_candidate_list(0.55 + 0.05j, qpsk, 2), [0, P11])
    full = build_candidate_list(0.55 + 0.05j, qpsk, 5)
    assert sorted(map(complex, full), key=lambda c: (c.real, c.imag)) == \
        sorted(map(complex, qpsk.points), key=lambda c: (c.real, c.imag))
    np.testing.assert_allclose(build_candidate_list(P11, qpsk, 1), [P11])


def test_candidates_sorted_by_distance(qpsk, rng):
    for z in rng.standard_normal(20) + 1j * rng.standard_normal(20):
        c = build_candidate_list(z, qpsk, 5)
        d = np.abs(z - c)
        assert np.all(np.diff(d) >= 0)
        assert len(set(map(complex, c))) == 5


def test_candidates_bad_k(qpsk):
    with pytest.raises(ConfigError):
        build_candidate_list(0j, qpsk, 6)


# ------------------------------------------------------------ branches

def _zf_bank(H):
    M, N = H.shape
    bank = FilterBank(M, N, PRESETS["std"], feedback=True)
    bank.weights[:, :M] = np.linalg.pinv(H).conj()
    return bank


def test_extend_branch_noiseless_orthogonal(qpsk):
    H = np.array([[1, 0], [0, 2j]], dtype=complex)
    x = np.array([P11, -S + 1j * S])
    y = H @ x
    bank = _zf_bank(H)
    b = extend_branch(y, H, bank, [1, 0], 1, x[1], [], qpsk)
    np.testing.assert_allclose(b, x, atol=1e-12)


def test_extend_branch_last_stage(qpsk):
    H = np.eye(3, dtype=complex)
    b = extend_branch(np.zeros(3), H, _zf_bank(H), [2, 0, 1], 3, P11, [0j, -P11], qpsk)
    np.testing.assert_allclose(b, [-P11, P11, 0])


def test_extend_branch_all_inactive(qpsk):
    H = np.array([[1, 0.3], [0.2, 1]], dtype=complex)
    b = extend_branch(np.zeros(2), H, _zf_bank(H), [0, 1], 1, 0j, [], qpsk)
    np.testing.assert_array_equal(b, [0, 0])


def test_select_branch_examples():
    H = np.eye(2, dtype=complex)
    x = np.array([1, 1j])
    assert select_branch(H @ x, H, [np.zeros(2), x, -x]) == 1
    assert select_branch(H @ x, H, [x]) == 0
    y = np.array([0.8 ** 0.5, 0])
    assert select_branch(y, H, [np.zeros(2), np.array([0.8 ** 0.5 - 0.3 ** 0.5, 0])]) == 1
    with pytest.raises(ValueError):
        select_branch(y, H, [])


# ------------------------------------------------------------- detection

def _noiseless_setup(qpsk, rng, feedback):
    H = np.array([[1, 0], [0, 1j]], dtype=complex)
    Xp = qpsk.active_points[rng.integers(0, 4, (2, 64))]
    bank = FilterBank(2, 2, PRESETS["std"], feedback=feedback)
    train_on_pilots(bank, Xp, H @ Xp)
    return H, bank


@pytest.mark.parametrize("variant", VARIANTS)
def test_detect_noiseless_orthogonal(variant, qpsk, rng):
    H, bank = _noiseless_setup(qpsk, rng, Variant(variant).feedback)
    for _ in range(20):
        x = qpsk.points[rng.integers(0, 5, 2)]
        sym, soft = detect_symbol_period(H @ x, bank, H, qpsk, SacConfig(), 3, variant)
        np.testing.assert_allclose(sym, x, atol=1e-12)


def test_detect_variant_bank_mismatch(qpsk):
    bank = FilterBank(2, 2, PRESETS["std"], feedback=False)
    with pytest.raises(ConfigError):
        detect_symbol_period(np.zeros(2), bank, np.eye(2), qpsk, SacConfig(), 2, "AA_CL_DF")


def _frame(seed, **kw):
    from mmtcdet.sysmodel import build_alphabet
    cfg = SystemConfig(**{**dict(N=8, M=4, pilot_len=64, data_len=16), **kw})
    return draw_frame(cfg, build_alphabet(), substream(seed, 0, "frame"))


@pytest.mark.parametrize("base", ["AA_RLS", "AA_RLS_DF"])
def test_k1_list_equals_plain(base, qpsk):
    listed = base.replace("AA_RLS", "AA_CL_RLS") if base == "AA_RLS" else "AA_CL_DF"
    for seed in range(5):
        f = _frame(seed, noise_var=0.3)
        outs = []
        for v in (base, listed):
            det = AdaptiveDetector(v, qpsk, hyper=PRESETS["desk"], K=1)
            det.prepare(f)
            outs.append(det.detect(f))
        np.testing.assert_array_equal(outs[0].decisions, outs[1].decisions)
        np.testing.assert_array_equal(outs[0].soft, outs[1].soft)


@pytest.mark.parametrize("variant", VARIANTS)
def test_all_inactive_high_snr(variant, qpsk):
    N = 8
    nv = snr_to_noise_var(10.0, N)
    zeros = total = 0
    for seed in range(20):
        f = _frame(seed, activity_prob=1e-12, noise_var=nv)
        assert not f.active_mask.any()
        det = AdaptiveDetector(variant, qpsk, hyper=PRESETS["desk"])
        det.prepare(f)
        dec = det.detect(f).decisions
        zeros += int(np.sum(dec == 0))
        total += dec.size
    assert zeros / total >= 0.99


def test_trace_selected_never_worse(qpsk):
    tr = ListTrace()
    for seed in range(5):
        f = _frame(seed, noise_var=0.5, activity_prob=0.5)
        det = AdaptiveDetector("AA_CL_DF", qpsk, hyper=PRESETS["desk"])
        det.prepare(f)
        det.detect(f, trace=tr)
    assert tr.n[0] > 0
    assert np.all(tr.selected <= tr.first)
    assert np.all((tr.list_sizes >= 1) & (tr.list_sizes <= 3))


def test_force_reliable_disables_list(qpsk):
    f = _frame(3, noise_var=0.5)
    outs = []
    for v, force in (("AA_CL_DF", "reliable"), ("AA_RLS_DF", None)):
        det = AdaptiveDetector(v, qpsk, hyper=PRESETS["desk"], force_sac=force)
        det.prepare(f)
        outs.append(det.detect(f).decisions)
    np.testing.assert_array_equal(*outs)


def test_detect_requires_prepare(qpsk):
    with pytest.raises(RuntimeError):
        AdaptiveDetector("AA_RLS", qpsk).detect(_frame(0))


def test_restart_makes_detect_repeatable(qpsk):
    f = _frame(1, noise_var=0.4)
    det = AdaptiveDetector("AA_CL_DF", qpsk, hyper=PRESETS["desk"])
    det.prepare(f)
    a, b = det.detect(f), det.detect(f)
    np.testing.assert_array_equal(a.decisions, b.decisions)
