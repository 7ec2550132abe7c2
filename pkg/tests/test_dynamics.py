
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from djump.coupling import NO_COUPLING, CrossCoupling, Geometry, TransitionRates
from djump.dynamics import (
    SimulationParams,
    build_conditional_generator,
    build_model,
    channel_probabilities,
    collapse,
    exact_propagator,
    jump_channels,
    run_trajectory,
    sample_jump,
    step_no_jump,
    trajectory_rng,
)
from djump.errors import ConfigError, DegenerateCollapseError, NumericalError, TimestepTooLargeError
from djump.hilbert import DIM, norm_sq, normalize, product_state, swap_atoms
from djump.oracle import integrate, pure_density

DEFAULT = SimulationParams()


def ket(n, m):
    return product_state(n, m)


def labels(channels):
    return [ch.label for ch in channels]


# --- parameters -------------------------------------------------------------


def test_dt_bound_rejects_large_steps():
    with pytest.raises(ConfigError):
        SimulationParams(dt=0.05, rabi=8.0)
    SimulationParams(dt=0.05 / 16, rabi=8.0)


def test_unknown_stepper_rejected():
    with pytest.raises(ConfigError):
        SimulationParams(stepper="rk45")


def test_initial_state_is_normalized_and_frozen():
    p = SimulationParams(initial_state=2 * ket(1, 2))
    assert norm_sq(p.initial_state) == pytest.approx(1.0)
    assert not p.initial_state.flags.writeable


# --- generator ----------------------------------------------------------------


def test_generator_without_drive_or_shelving_is_diagonal():
    p = SimulationParams(rates=TransitionRates(1.0, 0.0, 0.0), rabi=0.0)
    k = build_conditional_generator(p, NO_COUPLING).matrix
    np.testing.assert_array_equal(k, np.diag(np.diag(k)))
    excited = [(ket(n, m), (n == 1) + (m == 1)) for n in (1, 2, 3) for m in (1, 2, 3)]
    for psi, count in excited:
        assert np.vdot(psi, k @ psi) == pytest.approx(1.0 * count)
    assert k[0, 0] == 2.0


def test_pure_drive_is_anti_hermitian_and_nearly_norm_preserving():
    p = SimulationParams(rates=TransitionRates(0.0, 0.0, 0.0), rabi=8.0)
    gen = build_conditional_generator(p, NO_COUPLING)
    np.testing.assert_allclose(gen.matrix, -gen.matrix.conj().T)
    psi = normalize(np.arange(DIM) + 1j)
    dt = 1e-3
    loss = norm_sq(psi) - norm_sq(step_no_jump(psi, gen, dt))
    assert abs(loss) <= dt**2 * np.linalg.norm(gen.matrix, 2) ** 2


@pytest.mark.parametrize("r", [0.05, 0.3, 1.0, 4.0])
@pytest.mark.parametrize("optical", [False, True])
def test_damping_matches_channel_dissipator(r, optical):
    p = SimulationParams(geom=Geometry(r=r), optical_cross_terms=optical)
    model = build_model(p)
    diss = sum(ch.rate * ch.operator.conj().T @ ch.operator for ch in model.channels)
    np.testing.assert_allclose(model.generator.damping, 0.5 * diss, atol=1e-14)


def test_hamiltonian_is_hermitian():
    h = build_model(DEFAULT).generator.hamiltonian
    np.testing.assert_allclose(h, h.conj().T)


def test_exchange_amplitude_after_one_step():
    model = build_model(DEFAULT)
    c = model.c12
    dt = 1e-4
    out = step_no_jump(ket(1, 2), model.generator, dt)
    assert out[3] == pytest.approx(-(c.gamma_dd + 1j * c.omega_dd) * dt, rel=1e-12)


def test_exchange_grows_quadratically_without_jumps():
    model = build_model(DEFAULT)
    for t in (1e-2, 1e-3, 1e-4):
        psi = exact_propagator(model.generator, t) @ ket(1, 2)
        ratio = abs(psi[3]) ** 2 / (model.c12.abs_sq * t**2)
        assert abs(ratio - 1) < 0.05 if t < 1e-2 else abs(ratio - 1) < 0.1


# --- channels -----------------------------------------------------------------


def test_default_channel_set():
    model = build_model(DEFAULT)
    assert labels(model.channels) == ["det1_13", "det2_13", "a1_23", "a2_23", "coll12_sym", "coll12_asym"]
    r = DEFAULT.rates
    rates = [ch.rate for ch in model.channels]
    g = model.c12.gamma_dd
    assert rates == pytest.approx([2 * r.gamma13] * 2 + [2 * r.gamma23] * 2 + [2 * (r.gamma12 + g), 2 * (r.gamma12 - g)])


def test_collective_rates_without_coupling():
    ch = jump_channels(DEFAULT, NO_COUPLING)
    assert ch[4].rate == ch[5].rate == 2 * DEFAULT.rates.gamma12


def test_dicke_limit():
    g = DEFAULT.rates.gamma12
    ch = jump_channels(DEFAULT, CrossCoupling(g, 0.0))
    assert ch[4].rate == pytest.approx(4 * g)
    assert ch[5].rate == 0.0


def test_negative_collective_rate_is_rejected():
    with pytest.raises(NumericalError):
        jump_channels(DEFAULT, CrossCoupling(2 * DEFAULT.rates.gamma12, 0.0))


def test_per_atom_channels_require_zero_gamma_dd():
    with pytest.raises(NumericalError):
        jump_channels(DEFAULT, CrossCoupling(1e-3, 0.0), collective=False)
    ch = jump_channels(DEFAULT, CrossCoupling(0.0, 1e-2), collective=False)
    assert labels(ch)[-2:] == ["a1_12", "a2_12"]


def test_optical_cross_terms_replace_per_atom_optical_channels():
    model = build_model(DEFAULT.with_(optical_cross_terms=True))
    assert labels(model.channels) == [
        "coll13_sym", "coll13_asym", "coll23_sym", "coll23_asym", "coll12_sym", "coll12_asym",
    ]


# --- single-step operations -----------------------------------------------------


def test_detector_probabilities_on_bright_dark_state():
    model = build_model(DEFAULT)
    dt = 1e-3
    p = channel_probabilities(ket(1, 2), model.channels, dt)
    assert p[0] == pytest.approx(2 * DEFAULT.rates.gamma13 * dt)
    assert p[1] == 0.0


def test_step_examples():
    zero = SimulationParams(rates=TransitionRates(0.0, 0.0, 0.0), rabi=0.0)
    gen0 = build_conditional_generator(zero, NO_COUPLING)
    psi = normalize(np.arange(DIM) + 0.5j)
    np.testing.assert_array_equal(step_no_jump(psi, gen0, 1e-3), psi)

    dt = 1e-3
    gen = build_model(DEFAULT).generator
    out = step_no_jump(ket(3, 3), gen, dt)
    assert abs(norm_sq(out) - 1.0) <= dt**2 * np.linalg.norm(gen.matrix, 2) ** 2
    assert out[2] == pytest.approx(1j * DEFAULT.rabi * dt)

    r = TransitionRates(1.0, 0.02, 0.0)
    p = SimulationParams(rates=r, rabi=0.0)
    out = step_no_jump(ket(1, 2), build_conditional_generator(p, NO_COUPLING), dt)
    assert out[1] == pytest.approx(1 - (r.gamma13 + r.gamma12) * dt)


complex_vectors = arrays(
    np.complex128, DIM, elements=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False)
).filter(lambda v: norm_sq(v) > 1e-3)


@given(complex_vectors, st.sampled_from([0.05, 0.3, 2.0]), st.sampled_from([1e-3, 1e-4]))
@settings(max_examples=60, deadline=None)
def test_norm_bookkeeping(psi, r, dt):
    model = build_model(DEFAULT.with_(geom=Geometry(r=r)))
    before = norm_sq(psi)
    after = norm_sq(step_no_jump(psi, model.generator, dt))
    p = channel_probabilities(psi, model.channels, dt)
    c = np.linalg.norm(model.generator.matrix, 2) ** 2
    assert abs(before - after - p.sum() * before) <= c * dt**2 * before * (1 + 1e-9) + 1e-15


def test_sample_jump_examples():
    model = build_model(DEFAULT)
    assert sample_jump(ket(3, 3), model.channels, 1e-3, 0.0) is None
    assert sample_jump(ket(1, 2), model.channels, 1e-3, 0.0).label == "det1_13"
    assert sample_jump(ket(1, 2), model.channels, 1e-3, 0.5) is None


def test_sample_jump_partition_order():
    model = build_model(DEFAULT)
    dt = 1e-3
    psi = normalize(ket(1, 2) + ket(2, 1))
    p = channel_probabilities(psi, model.channels, dt)
    edges = np.cumsum(p)
    for i, ch in enumerate(model.channels):
        if p[i] > 1e-12:  # coll12_asym only carries rounding noise here
            u = edges[i] - 0.5 * p[i]
            assert sample_jump(psi, model.channels, dt, u) is ch


def test_sample_jump_rejects_large_total_probability():
    model = build_model(DEFAULT)
    with pytest.raises(TimestepTooLargeError):
        sample_jump(ket(1, 1), model.channels, 1.0, 0.5)


def test_collapse_examples():
    ch = {c.label: c for c in build_model(DEFAULT).channels}
    np.testing.assert_allclose(collapse(ket(1, 2), ch["det1_13"]), ket(3, 2))
    mixed = normalize(0.3 * ket(1, 2) + 0.7j * ket(2, 1))
    out = collapse(mixed, ch["coll12_sym"])
    assert abs(out[4]) == pytest.approx(1.0)
    np.testing.assert_allclose(collapse(normalize(ket(1, 2) + ket(2, 1)), ch["det2_13"]), ket(2, 3))
    with pytest.raises(DegenerateCollapseError):
        collapse(ket(3, 3), ch["det1_13"])


# --- trajectories ---------------------------------------------------------------


def reference_euler(params, channels, gen, rng, reprepare=False):
    """Plain-Python first-order unraveling, one uniform per step."""
    psi = np.array(params.initial_state)
    events = []
    for k in range(params.n_steps):
        u = rng.random()
        ch = sample_jump(psi, channels, params.dt, u)
        if ch is None:
            psi = normalize(step_no_jump(psi, gen, params.dt))
            continue
        events.append((k + 1, channels.index(ch)))
        if reprepare and ch.detector is None:
            pre = psi
            shelved1 = sum(abs(pre[3 + m]) ** 2 for m in range(3))
            shelved2 = sum(abs(pre[3 * m + 1]) ** 2 for m in range(3))
            a = np.array(params.initial_state)
            psi = a if shelved2 >= shelved1 else swap_atoms(a)
        else:
            psi = collapse(psi, ch)
    return events, psi


@pytest.mark.parametrize("reprepare", [False, True])
def test_euler_kernel_matches_reference_loop(reprepare):
    p = DEFAULT.with_(t_max=6.0, geom=Geometry(r=0.08), rates=TransitionRates(1.0, 0.05, 1.0))
    model = build_model(p)
    channels = list(model.channels)
    ref_events, ref_psi = reference_euler(p, channels, model.generator, trajectory_rng(5, 0), reprepare)
    res = run_trajectory(p, model.channels, model.generator, trajectory_rng(5, 0), reprepare=reprepare)
    assert len(ref_events) > 10
    assert list(zip(res.event_steps.tolist(), res.event_channels.tolist())) == ref_events
    np.testing.assert_allclose(res.final_state, ref_psi, atol=1e-10)


@pytest.mark.parametrize("stepper", ["euler", "exact"])
def test_empty_run(stepper):
    p = DEFAULT.with_(t_max=0.0, stepper=stepper)
    model = build_model(p)
    res = run_trajectory(p, model.channels, model.generator, trajectory_rng(1))
    assert res.events == []
    np.testing.assert_array_equal(res.final_state, p.initial_state)


@pytest.mark.parametrize("stepper", ["euler", "exact"])
def test_dark_state_never_jumps(stepper):
    p = DEFAULT.with_(rabi=0.0, t_max=50.0, initial_state=ket(3, 3), stepper=stepper)
    model = build_model(p)
    res = run_trajectory(p, model.channels, model.generator, trajectory_rng(1), sample_every=100)
    assert len(res.event_steps) == 0
    np.testing.assert_allclose(res.sample_populations[:, 8], 1.0)


@pytest.mark.parametrize("stepper", ["euler", "exact"])
def test_determinism(stepper):
    p = DEFAULT.with_(t_max=200.0, stepper=stepper)
    model = build_model(p)
    runs = [
        run_trajectory(p, model.channels, model.generator, trajectory_rng(9, 3), sample_every=500, reprepare=True)
        for _ in range(2)
    ]
    np.testing.assert_array_equal(runs[0].event_steps, runs[1].event_steps)
    np.testing.assert_array_equal(runs[0].event_channels, runs[1].event_channels)
    np.testing.assert_array_equal(runs[0].final_state, runs[1].final_state)
    np.testing.assert_array_equal(runs[0].sample_populations, runs[1].sample_populations)
    other = run_trajectory(p, model.channels, model.generator, trajectory_rng(9, 4), reprepare=True)
    assert not np.array_equal(other.event_steps, runs[0].event_steps)


def test_sampling_grid():
    p = DEFAULT.with_(t_max=10.0)
    model = build_model(p)
    res = run_trajectory(p, model.channels, model.generator, trajectory_rng(1), sample_every=1000)
    np.testing.assert_allclose(res.sample_times, np.arange(11.0))
    np.testing.assert_allclose(res.sample_populations.sum(axis=1), 1.0)


def test_max_events_stops_early():
    p = DEFAULT.with_(t_max=100.0)
    model = build_model(p)
    res = run_trajectory(p, model.channels, model.generator, trajectory_rng(1), max_events=1)
    assert len(res.event_steps) == 1
    assert res.steps == res.event_steps[0]


def test_event_buffer_growth():
    # far more events than the initial buffer guess for a short run
    p = DEFAULT.with_(t_max=3000.0, stepper="exact")
    model = build_model(p)
    res = run_trajectory(p, model.channels, model.generator, trajectory_rng(2), reprepare=True)
    assert len(res.event_steps) > 1000
    assert np.all(np.diff(res.event_steps) >= 0)


def _click_counts(p, channels, gen, n, groups, seed=11):
    counts = np.zeros((n, len(groups)))
    for i in range(n):
        res = run_trajectory(p, channels, gen, trajectory_rng(seed, i))
        for j, group in enumerate(groups):
            counts[i, j] = res.channel_mask(*group).sum()
    return counts


def _agree_within(a, b, sigmas):
    diff = a.mean(axis=0) - b.mean(axis=0)
    se = np.sqrt(a.var(axis=0, ddof=1) / len(a) + b.var(axis=0, ddof=1) / len(b))
    assert np.all(np.abs(diff) <= sigmas * se + 1e-12), (diff, se)


def test_channel_representation_invariance():
    p = DEFAULT.with_(t_max=40.0, rates=TransitionRates(1.0, 0.1, 0.1))
    c12 = CrossCoupling(0.0, 0.05)
    gen = build_conditional_generator(p, c12)
    collective = jump_channels(p, c12, collective=True)
    per_atom = jump_channels(p, c12, collective=False)
    groups = [("det1_13",), ("det2_13",), ("a1_23", "a2_23"), ("coll12_sym", "coll12_asym", "a1_12", "a2_12")]
    a = _click_counts(p, collective, gen, 300, groups, seed=21)
    b = _click_counts(p, per_atom, gen, 300, groups, seed=22)
    _agree_within(a, b, 3.0)


def test_euler_and_exact_steppers_agree():
    p = DEFAULT.with_(t_max=20.0, geom=Geometry(r=0.1), rates=TransitionRates(1.0, 0.1, 0.1))
    groups = [("det1_13",), ("det2_13",), ("a1_23", "a2_23"), ("coll12_sym", "coll12_asym")]
    model = build_model(p)
    a = _click_counts(p, model.channels, model.generator, 300, groups, seed=31)
    q = p.with_(stepper="exact")
    b = _click_counts(q, model.channels, model.generator, 300, groups, seed=32)
    _agree_within(a, b, 4.0)


def test_bright_atom_click_rate_matches_driven_steady_state():
    # driven 1<->3 steady state of one atom, computed by the oracle itself
    ss = SimulationParams(rates=TransitionRates(1.0, 0.0, 0.0), t_max=20.0)
    rho = integrate(pure_density(ket(3, 3)), ss, 20.0, dt_ode=1e-3, checkpoint_every=20.0)[-1].rho
    p_upper = np.real(np.trace(rho[:3, :3]))
    assert p_upper == pytest.approx(64 / 129, rel=1e-6)

    p = DEFAULT.with_(t_max=2000.0, stepper="exact")
    model = build_model(p)
    res = run_trajectory(p, model.channels, model.generator, trajectory_rng(3), reprepare=True)
    clicks = res.channel_mask("det1_13", "det2_13").sum()
    expected = 2 * p.rates.gamma13 * p_upper * p.t_max
    assert abs(clicks - expected) < 0.05 * expected
