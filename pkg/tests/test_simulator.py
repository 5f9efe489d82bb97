"""Tests for the Monte-Carlo ensemble simulator."""

import numpy as np
import pytest

from qgbc.core import (
    PulseSequence,
    TimeGrid,
    control_prefix_quats,
    quat_to_matrix,
    state_density,
    unitary_table,
    zero_pulses,
    PAULI,
)
from qgbc.noise import NoiseConfig
from qgbc.simulator import (
    DatasetRecord,
    ExpectationTable,
    SimConfig,
    _final_quats_direct,
    coherence_scan,
    estimate_vo,
    generate_dataset,
    identity_table,
    resimulate_record,
    simulate_ensemble,
    simulate_with_vo,
    trajectory_quaternions,
)

GAMMA = 0.02
T_TOTAL = 3.2


def make_cfg(g, *, omega=0.0, seed=11, n_traj=500, n_steps=1500):
    grid = TimeGrid(T_TOTAL, n_steps)
    return SimConfig(grid, NoiseConfig(gamma=GAMMA, g=g, omega=omega, seed=seed), n_traj)


def random_pulses(seed, a_max=100.0):
    rng = np.random.default_rng(seed)
    return PulseSequence(rng.uniform(-a_max, a_max, (5, 2)), T_TOTAL, a_max=a_max)


def rtn_coherence(g, gamma, t):
    """Free RTN dephasing coherence, from the two-branch conditional ODE.

    W(t) = e^{-gamma t} [cosh(d t) + (gamma / d) sinh(d t)] with
    d = sqrt(gamma^2 - 4 g^2), continued to imaginary d for strong coupling.
    """
    d = np.sqrt(complex(gamma**2 - 4.0 * g**2))
    if d == 0:
        return float(np.exp(-gamma * t) * (1.0 + gamma * t))
    val = np.exp(-gamma * t) * (np.cosh(d * t) + (gamma / d) * np.sinh(d * t))
    return float(val.real)


class TestExpectationTable:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ExpectationTable(np.zeros((3, 6)))
        with pytest.raises(ValueError):
            ExpectationTable.from_flat(np.zeros(17))

    def test_flat_round_trip(self):
        vals = np.arange(18.0).reshape(6, 3)
        table = ExpectationTable(vals)
        assert np.array_equal(ExpectationTable.from_flat(table.flat).values, vals)

    def test_entry_lookup(self):
        vals = np.arange(18.0).reshape(6, 3)
        table = ExpectationTable(vals)
        assert table.entry("x+", "X") == 0.0
        assert table.entry("y-", "Y") == 10.0
        assert table.entry("z-", "Z") == 17.0

    def test_identity_table(self):
        expected = unitary_table(np.eye(2))
        assert np.array_equal(identity_table().values, expected)


class TestNoiselessLimit:
    def test_zero_coupling_zero_drive_is_exact_identity(self):
        cfg = make_cfg(0.0, n_traj=64, n_steps=400)
        table = simulate_ensemble(zero_pulses(T_TOTAL), cfg)
        assert np.array_equal(table.values, identity_table().values)

    def test_zero_coupling_reduces_to_control_unitary(self):
        cfg = make_cfg(0.0, n_traj=64, n_steps=1500)
        pulses = random_pulses(4)
        table = simulate_ensemble(pulses, cfg)
        u_c = quat_to_matrix(control_prefix_quats(pulses, cfg.grid)[-1])
        assert np.max(np.abs(table.values - unitary_table(u_c))) < 1e-12

    def test_zero_coupling_noise_operators_are_identity(self):
        cfg = make_cfg(0.0, n_traj=32, n_steps=800)
        ops = estimate_vo(random_pulses(7), cfg)
        for v in ops.as_list():
            assert np.max(np.abs(v - np.eye(2))) < 1e-12


class TestFreeDephasing:
    def test_sigma_z_sector_is_exact(self):
        # pure-sz evolution leaves the z rows and the Z column exact
        table = simulate_ensemble(zero_pulses(T_TOTAL), make_cfg(0.11))
        assert table.entry("z+", "Z") == 1.0
        assert table.entry("z-", "Z") == -1.0
        assert table.entry("z+", "X") == 0.0
        assert table.entry("x+", "Z") == 0.0

    @pytest.mark.parametrize("g,tol", [(0.005, 0.01), (0.11, 0.015), (0.3, 0.02)])
    def test_matches_conditional_ode_coherence(self, g, tol):
        cfg = make_cfg(g, n_traj=4000, n_steps=1000)
        table = simulate_ensemble(zero_pulses(T_TOTAL), cfg)
        assert table.entry("x+", "X") == pytest.approx(
            rtn_coherence(g, GAMMA, T_TOTAL), abs=tol
        )

    def test_weak_coupling_matches_second_order_coefficient(self):
        # leading dephasing coefficient: -4 * [T/(2 gamma) - (1 - e^{-2 gamma T}) / (4 gamma^2)]
        g = 0.08
        c2 = -4.0 * (
            T_TOTAL / (2.0 * GAMMA) - (1.0 - np.exp(-2.0 * GAMMA * T_TOTAL)) / (4.0 * GAMMA**2)
        )
        cfg = make_cfg(g, n_traj=2000, n_steps=3000)
        table = simulate_ensemble(zero_pulses(T_TOTAL), cfg)
        assert table.entry("x+", "X") == pytest.approx(1.0 + g**2 * c2, abs=0.01)

    def test_free_v_z_is_exact_identity_strong_coupling(self):
        # drive-free evolution commutes with sz, so V_Z stays the identity
        ops = estimate_vo(zero_pulses(T_TOTAL), make_cfg(0.6, n_traj=300, n_steps=800))
        assert np.max(np.abs(ops.v_z - np.eye(2))) < 1e-12

    def test_strong_coupling_vo_far_from_identity(self):
        ops = estimate_vo(zero_pulses(T_TOTAL), make_cfg(0.6, n_traj=600, n_steps=800))
        dist = np.mean([np.linalg.norm(v - np.eye(2)) for v in ops.as_list()])
        assert dist > 0.3


class TestPropagationPaths:
    def test_fast_and_direct_paths_agree_free(self):
        cfg = make_cfg(0.11, n_traj=300)
        q_fast = trajectory_quaternions(zero_pulses(T_TOTAL), cfg)
        q_direct = _final_quats_direct(zero_pulses(T_TOTAL), cfg)
        assert np.max(np.abs(q_fast - q_direct)) < 1e-10

    def test_fast_and_direct_paths_agree_driven(self):
        cfg = make_cfg(0.25, seed=3, n_traj=300)
        pulses = random_pulses(9)
        q_fast = trajectory_quaternions(pulses, cfg)
        q_direct = _final_quats_direct(pulses, cfg)
        assert np.max(np.abs(q_fast - q_direct)) < 1e-10

    def test_propagators_are_unit_quaternions(self):
        cfg = make_cfg(0.4, n_traj=200)
        q = trajectory_quaternions(random_pulses(2), cfg)
        assert np.max(np.abs(np.sum(q * q, axis=-1) - 1.0)) < 1e-9

    def test_repeat_runs_bit_identical(self):
        cfg = make_cfg(0.11, omega=1.0, n_traj=120, n_steps=800)
        pulses = random_pulses(5)
        first = simulate_ensemble(pulses, cfg)
        second = simulate_ensemble(pulses, cfg)
        assert np.array_equal(first.values, second.values)

    def test_modulated_noise_changes_table(self):
        pulses = zero_pulses(T_TOTAL)
        base = simulate_ensemble(pulses, make_cfg(0.3, n_traj=400, n_steps=800))
        mod = simulate_ensemble(pulses, make_cfg(0.3, omega=1.0, n_traj=400, n_steps=800))
        assert abs(base.entry("x+", "X") - mod.entry("x+", "X")) > 0.01


class TestNoiseOperators:
    def test_self_consistency_with_table(self):
        # Tr[rho_s O~ V_O] must reproduce the averaged table on the same ensemble
        cfg = make_cfg(0.3, n_traj=400)
        pulses = random_pulses(12)
        table, ops = simulate_with_vo(pulses, cfg)
        u_c = quat_to_matrix(control_prefix_quats(pulses, cfg.grid)[-1])
        worst = 0.0
        for s_idx, label in enumerate(("x+", "x-", "y+", "y-", "z+", "z-")):
            rho = state_density(label)
            for o_idx, obs in enumerate((PAULI[1], PAULI[2], PAULI[3])):
                o_til = u_c.conj().T @ obs @ u_c
                pred = float(np.real(np.trace(rho @ o_til @ ops.as_list()[o_idx])))
                worst = max(worst, abs(pred - table.values[s_idx, o_idx]))
        assert worst < 1e-9

    def test_o_til_v_product_is_hermitian(self):
        cfg = make_cfg(0.3, n_traj=300)
        pulses = random_pulses(6)
        ops = estimate_vo(pulses, cfg)
        u_c = quat_to_matrix(control_prefix_quats(pulses, cfg.grid)[-1])
        for obs, v in zip((PAULI[1], PAULI[2], PAULI[3]), ops.as_list()):
            o_til = u_c.conj().T @ obs @ u_c
            prod = o_til @ v
            assert np.max(np.abs(prod - prod.conj().T)) < 1e-12


class TestCoherenceScan:
    def test_starts_at_one_and_initially_decreases(self):
        g_values = np.linspace(0.0, 0.6, 8)
        cfg = make_cfg(0.0, n_traj=800, n_steps=1000)
        scan = coherence_scan(g_values, cfg)
        assert scan[0] == 1.0
        assert scan[1] < scan[0] and scan[2] < scan[1] and scan[3] < scan[2]

    def test_matches_ode_closed_form(self):
        g_values = [0.04, 0.12, 0.35, 0.55]
        cfg = make_cfg(0.0, n_traj=3000, n_steps=1000)
        scan = coherence_scan(g_values, cfg)
        for g, w in zip(g_values, scan):
            assert w == pytest.approx(rtn_coherence(g, GAMMA, T_TOTAL), abs=0.02)

    def test_thread_count_invariance(self, monkeypatch):
        g_values = np.linspace(0.0, 0.5, 6)
        cfg = make_cfg(0.0, n_traj=300, n_steps=600)
        monkeypatch.setenv("QGBC_THREADS", "1")
        serial = coherence_scan(g_values, cfg)
        monkeypatch.setenv("QGBC_THREADS", "4")
        threaded = coherence_scan(g_values, cfg)
        assert np.array_equal(serial, threaded)


class TestMonteCarloConvergence:
    def test_error_shrinks_with_ensemble_size(self):
        # sample std over seeds should drop by about 1/2 from K to 4K
        g = 0.3
        pulses = zero_pulses(T_TOTAL)

        def spread(n_traj):
            vals = []
            for seed in range(10):
                cfg = make_cfg(g, seed=100 + seed, n_traj=n_traj, n_steps=500)
                vals.append(simulate_ensemble(pulses, cfg).entry("x+", "X"))
            return np.std(vals)

        ratio = spread(250) / spread(1000)
        assert 1.2 < ratio < 3.4


class TestDatasetGeneration:
    def test_records_reproducible_and_in_bounds(self):
        cfg = make_cfg(0.6, seed=77, n_traj=150, n_steps=500)
        records = generate_dataset(6, cfg, n_pulses=5, a_max=100.0)
        assert [r.index for r in records] == list(range(6))
        seeds = {r.seed for r in records}
        assert len(seeds) == 6
        for rec in records:
            assert rec.amplitudes.shape == (5, 2)
            assert np.max(np.abs(rec.amplitudes)) <= 100.0
            assert rec.expectations.shape == (18,)
            assert np.max(np.abs(rec.expectations)) <= 1.0 + 1e-12
            assert np.array_equal(resimulate_record(rec, cfg), rec.expectations)

    def test_thread_count_invariance(self, monkeypatch):
        cfg = make_cfg(0.6, seed=5, n_traj=100, n_steps=400)
        monkeypatch.setenv("QGBC_THREADS", "1")
        serial = generate_dataset(40, cfg, n_pulses=5)
        monkeypatch.setenv("QGBC_THREADS", "4")
        threaded = generate_dataset(40, cfg, n_pulses=5)
        for a, b in zip(serial, threaded):
            assert np.array_equal(a.expectations, b.expectations)
            assert np.array_equal(a.amplitudes, b.amplitudes)
            assert a.seed == b.seed

    def test_rejects_empty_request(self):
        with pytest.raises(ValueError):
            generate_dataset(0, make_cfg(0.1))

    def test_custom_amplitude_law(self):
        def law(rng, n_pulses, a_max):
            return rng.uniform(-10.0, 10.0, size=(n_pulses, 2))

        cfg = make_cfg(0.01, seed=2, n_traj=60, n_steps=300)
        records = generate_dataset(3, cfg, amplitude_law=law)
        for rec in records:
            assert np.max(np.abs(rec.amplitudes)) <= 10.0
