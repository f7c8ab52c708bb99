import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccus.data import (
    AlsConfig,
    Dictionary,
    SynthSpec,
    als_baseline,
    als_iterate,
    als_objective,
    calcium_kernel,
    make_circulant,
    read_dictionary,
    read_traces,
    synth_instance,
    write_benchmark_csv,
    write_dictionary,
    write_traces,
)
from ccus.exceptions import TraceFormatError


def test_circulant_examples():
    np.testing.assert_array_equal(make_circulant(np.eye(5)[0]).matrix, np.eye(5))
    ones = make_circulant(np.ones(4)).matrix
    assert np.all(ones == 1.0)
    k = np.random.default_rng(0).standard_normal(7)
    D = make_circulant(k).matrix
    np.testing.assert_array_equal(D[:, 0], k)
    for j in range(7):
        np.testing.assert_array_equal(D[:, j], np.roll(k, j))
    i, j = np.indices((7, 7))
    np.testing.assert_array_equal(D, k[(i - j) % 7])


def test_calcium_kernel_shape():
    k = calcium_kernel(121)
    assert k.shape == (121,) and np.linalg.norm(k) == pytest.approx(1.0)
    assert np.all(k > 0)
    peak = int(np.argmax(k))
    assert 0 < peak < 10
    assert np.all(np.diff(k[peak:]) < 0)
    jittered = calcium_kernel(121, jitter=0.01)
    assert np.max(np.abs(jittered - k)) < 0.05 * k.max()
    np.testing.assert_array_equal(jittered, calcium_kernel(121, jitter=0.01))


def test_dictionary_roundtrip(tmp_path):
    circ = make_circulant(calcium_kernel(9))
    write_dictionary(tmp_path / "c.json", circ)
    back = read_dictionary(tmp_path / "c.json")
    assert back.structure == "circulant"
    np.testing.assert_array_equal(back.matrix, circ.matrix)
    dense = Dictionary(np.random.default_rng(1).standard_normal((4, 6)))
    write_dictionary(tmp_path / "d.json", dense)
    np.testing.assert_array_equal(read_dictionary(tmp_path / "d.json").matrix, dense.matrix)
    with pytest.raises(ValueError):
        Dictionary.from_dict({"structure": "toeplitz"})


def test_synth_shared_and_disjoint_supports():
    shared = synth_instance(SynthSpec(seed=0, support_mode="shared", k_per_channel=3))
    assert np.array_equal(shared.supports[0], shared.supports[1])
    assert shared.union_support.size == 3
    disj = synth_instance(SynthSpec(seed=0, support_mode="disjoint", k_per_channel=3))
    assert disj.union_support.size == 6
    over = synth_instance(SynthSpec(seed=0, support_mode="overlapping", shared_count=1,
                                    k_per_channel=3))
    assert over.union_support.size == 5


def test_synth_noiseless_and_noisy():
    inst = synth_instance(SynthSpec(seed=4))
    np.testing.assert_array_equal(inst.x, inst.dictionary.matrix @ inst.betas)
    noisy = synth_instance(SynthSpec(seed=4, snr_db=20.0))
    noise = noisy.x - noisy.clean
    snr = 10 * np.log10(np.mean(noisy.clean**2) / np.mean(noise**2))
    assert abs(snr - 20.0) < 1.5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["shared", "disjoint"]), st.booleans())
def test_synth_hypotheses_hold(seed, mode, positive):
    spec = SynthSpec(seed=seed, support_mode=mode, positive=positive, dictionary_mode="gaussian",
                     n=20, p=40, k_per_channel=2)
    inst = synth_instance(spec)
    nz = inst.betas[inst.betas != 0]
    assert np.all((np.abs(nz) >= 0.5) & (np.abs(nz) <= 2.0))
    for ch, s in enumerate(inst.supports):
        assert np.array_equal(np.flatnonzero(inst.betas[:, ch]), s)
    total = inst.betas.sum(axis=1)
    assert np.count_nonzero(total) == inst.union_support.size
    assert not np.allclose(inst.x[:, 0], inst.x[:, 1])
    again = synth_instance(spec)
    np.testing.assert_array_equal(inst.x, again.x)


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(p=100)  # circulant needs p == n
    with pytest.raises(ValueError):
        SynthSpec(n=10, p=10, support_mode="disjoint", k_per_channel=6)
    with pytest.raises(ValueError):
        SynthSpec(k_per_channel=0)


def test_als_constant_signal():
    y = np.full(50, 3.25)
    z, corrected = als_baseline(y, AlsConfig(smoothness_lambda=10.0))
    np.testing.assert_allclose(z, y, atol=1e-10)
    np.testing.assert_allclose(corrected, 0.0, atol=1e-10)


def test_als_recovers_ramp_under_spikes():
    rng = np.random.default_rng(2)
    n = 300
    ramp = 2.0 + np.linspace(0.0, 1.0, n)
    spikes = np.zeros(n)
    idx = rng.choice(n, 15, replace=False)
    spikes[idx] = rng.uniform(1.0, 3.0, 15)
    z, _ = als_baseline(ramp + spikes, AlsConfig(smoothness_lambda=1e7, asymmetry_p=0.01))
    away = np.ones(n, dtype=bool)
    for i in idx:
        away[max(0, i - 3):i + 4] = False
    assert np.max(np.abs(z[away] - ramp[away]) / ramp[away]) < 0.05


def test_als_large_lambda_is_weighted_line():
    rng = np.random.default_rng(3)
    n = 80
    t = np.arange(n, dtype=float)
    y = 0.5 + 0.02 * t + 0.3 * np.sin(t / 5) + (rng.random(n) < 0.1) * 2.0
    # much larger lambda loses accuracy to the conditioning of the sparse solve
    steps = list(als_iterate(y, AlsConfig(smoothness_lambda=1e9, n_iter=10)))
    z, w = steps[-1]
    X = np.column_stack([np.ones(n), t])
    sw = np.sqrt(w)
    coef = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
    np.testing.assert_allclose(z, X @ coef, atol=1e-4)


def test_als_objective_decreases_per_solve():
    rng = np.random.default_rng(4)
    y = np.cumsum(rng.standard_normal(100)) + (rng.random(100) < 0.1) * 5
    cfg = AlsConfig(smoothness_lambda=100.0)
    prev = None
    for z, w in als_iterate(y, cfg):
        if prev is not None:
            # the solve minimizes the objective for its own weights
            assert als_objective(y, z, w, cfg.smoothness_lambda) <= als_objective(
                y, prev, w, cfg.smoothness_lambda) + 1e-9
        perturbed = z + 1e-3 * rng.standard_normal(100)
        assert als_objective(y, z, w, cfg.smoothness_lambda) <= als_objective(
            y, perturbed, w, cfg.smoothness_lambda)
        prev = z


def test_als_config_validation():
    with pytest.raises(ValueError):
        AlsConfig(asymmetry_p=1.0)
    with pytest.raises(ValueError):
        als_baseline(np.ones(2))


def test_traces_roundtrip(tmp_path):
    x = np.random.default_rng(5).standard_normal((40, 3)) * 10.0 ** np.arange(-3, 0)
    x[0, 0] = 1e-300
    x[1, 1] = -0.0
    p = tmp_path / "x.csv"
    write_traces(p, x)
    back = read_traces(p)
    assert back.tobytes() == x.tobytes()
    assert p.read_text().splitlines()[0] == "t,ch1,ch2,ch3"


def test_single_sample_file(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text("t,ch1\n0,2.5\n")
    np.testing.assert_array_equal(read_traces(p), [[2.5]])


@pytest.mark.parametrize("body,line", [
    ("t,ch1,ch2\n0,1,2\n1,nan,3\n", 3),
    ("t,ch1,ch2\n0,1,2\n1,abc,3\n", 3),
    ("t,ch1,ch2\n0,1\n", 2),
    ("time,a\n0,1\n", 1),
])
def test_malformed_traces_report_line(tmp_path, body, line):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(TraceFormatError) as err:
        read_traces(p)
    assert err.value.lineno == line
    assert f"line {line}" in str(err.value)


def test_benchmark_csv_columns(tmp_path):
    p = tmp_path / "b.csv"
    rows = [{"seed": 0, "fraction": 0.1, "r2": 0.5, "wa": 1.0, "rss": 2.0, "iters": 1,
             "wall_ms": 3.0, "ls_r2": math.nan}]
    write_benchmark_csv(p, rows, ("ls_r2",))
    lines = p.read_text().splitlines()
    assert lines[0] == "seed,fraction,r2,wa,rss,iters,wall_ms,ls_r2"
    assert lines[1] == "0,0.10000000000000001,0.5,1,2,1,3,nan"
