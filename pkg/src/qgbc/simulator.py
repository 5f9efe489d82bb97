"""Monte-Carlo simulation of the driven qubit under telegraph dephasing.

For each noise realization k the total Hamiltonian

    H_k(t_j) = f_x(t_j) sx + f_y(t_j) sy + g beta_k(t_j) sz

is propagated as a product of closed-form SU(2) steps, and measured
expectation values Tr[U_k rho U_k^dag O] are averaged over the ensemble.
Every trajectory k draws from its own counter-based stream keyed by
(noise.seed, k), and all reductions run in trajectory-index order, so results
are bit-reproducible for any thread count.

Two internal propagation paths produce the per-trajectory propagators:

* unmodulated noise (omega = 0): beta_k(t) only takes the values +-1, so the
  two cumulative step-product sequences for beta = +1 and beta = -1 are
  precomputed once and each trajectory is assembled from O(switches + 1)
  quaternion products.  With gamma * T << 1 almost all trajectories need a
  single lookup.
* modulated noise: the carrier phase differs per trajectory, so steps are
  accumulated directly over the grid with quaternion batches.

Both paths realize the same time-ordered product and agree to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core
from .core import (
    PAULI,
    PulseSequence,
    TimeGrid,
    control_prefix_quats,
    quat_conj,
    quat_identity,
    quat_mul,
    quat_prefix_products,
    quat_rotation,
    quat_to_matrix,
    su2_step_quats,
    unitary_table,
    waveform_eval,
    zero_pulses,
)
from .noise import NoiseConfig, rtn_events, sample_rtn
from .parallel import run_blocks


@dataclass(frozen=True)
class SimConfig:
    """Grid, ensemble size, and noise parameters of one simulation."""

    grid: TimeGrid
    noise: NoiseConfig
    n_realizations: int = 2000

    def __post_init__(self):
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")

    def with_noise(self, **changes) -> "SimConfig":
        fields = {
            "gamma": self.noise.gamma,
            "g": self.noise.g,
            "omega": self.noise.omega,
            "seed": self.noise.seed,
        }
        fields.update(changes)
        return SimConfig(self.grid, NoiseConfig(**fields), self.n_realizations)


@dataclass(frozen=True, eq=False)
class ExpectationTable:
    """18 ensemble-averaged expectation values.

    values has shape (6, 3): rows follow core.STATE_LABELS, columns
    core.OBSERVABLE_LABELS.  Entries of a physical table lie in [-1, 1] up to
    Monte-Carlo rounding.
    """

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (6, 3):
            raise ValueError("expectation table must have shape (6, 3)")
        object.__setattr__(self, "values", vals)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(18)

    @classmethod
    def from_flat(cls, flat) -> "ExpectationTable":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (18,):
            raise ValueError("flat expectation table must have 18 entries")
        return cls(flat.reshape(6, 3))

    def entry(self, state: str, observable: str) -> float:
        i = core.STATE_LABELS.index(state)
        j = core.OBSERVABLE_LABELS.index(observable)
        return float(self.values[i, j])


@dataclass(frozen=True)
class NoiseOperatorSet:
    """Per-observable noise operators V_O (2x2 complex)."""

    v_x: np.ndarray
    v_y: np.ndarray
    v_z: np.ndarray

    def as_list(self):
        return [self.v_x, self.v_y, self.v_z]


@dataclass(frozen=True)
class DatasetRecord:
    """One supervised example: pulse amplitudes -> measured averages."""

    amplitudes: np.ndarray   # (n_pulses, 2)
    expectations: np.ndarray  # (18,)
    g: float
    gamma: float
    omega: float
    seed: int
    index: int


def identity_table() -> ExpectationTable:
    return ExpectationTable(unitary_table(np.eye(2)))


def table_from_mean_rotation(mean_r: np.ndarray) -> ExpectationTable:
    values = np.empty((6, 3))
    for axis in range(3):
        values[2 * axis] = mean_r[:, axis]
        values[2 * axis + 1] = -mean_r[:, axis]
    return ExpectationTable(values)


# ---------------------------------------------------------------------------
# per-trajectory propagators
# ---------------------------------------------------------------------------


def _flip_indices(switch_times: np.ndarray, times: np.ndarray, n_steps: int) -> np.ndarray:
    """First sample index affected by each switch, parity-deduplicated."""
    if switch_times.size == 0:
        return switch_times.astype(np.int64)
    m = np.searchsorted(times, switch_times, side="left")
    m = m[m < n_steps]
    if m.size < 2:
        return m.astype(np.int64)
    uniq, counts = np.unique(m, return_counts=True)
    return uniq[counts % 2 == 1].astype(np.int64)


def _final_quats_unmodulated(pulses: PulseSequence, cfg: SimConfig) -> np.ndarray:
    grid = cfg.grid
    f = waveform_eval(pulses, grid)
    g = cfg.noise.g
    zero = np.zeros(grid.n_steps)
    prefix = {}
    for sign in (1, -1):
        steps = su2_step_quats(f[:, 0], f[:, 1], sign * g + zero, grid.dt)
        scanned = quat_prefix_products(steps)
        padded = np.empty((grid.n_steps + 1, 4))
        padded[0] = quat_identity()
        padded[1:] = scanned
        prefix[sign] = padded

    k_total = cfg.n_realizations
    xi0 = np.empty(k_total, dtype=np.int64)
    flips = []
    for k in range(k_total):
        s0, switches, _ = rtn_events(cfg.noise, grid.t_total, k)
        xi0[k] = s0
        flips.append(_flip_indices(switches, grid.times, grid.n_steps))
    n_flips = np.array([len(fl) for fl in flips])

    out = np.empty((k_total, 4))
    m_end = grid.n_steps

    none = np.nonzero(n_flips == 0)[0]
    for sign in (1, -1):
        sel = none[xi0[none] == sign]
        out[sel] = prefix[sign][m_end]

    single = np.nonzero(n_flips == 1)[0]
    if single.size:
        m1 = np.array([flips[k][0] for k in single])
        for sign in (1, -1):
            sel = xi0[single] == sign
            idx = single[sel]
            m = m1[sel]
            tail = quat_mul(prefix[-sign][m_end], quat_conj(prefix[-sign][m]))
            out[idx] = quat_mul(tail, prefix[sign][m])

    for k in np.nonzero(n_flips >= 2)[0]:
        sign = int(xi0[k])
        acc = quat_identity()
        start = 0
        for m in flips[k]:
            seg = quat_mul(prefix[sign][m], quat_conj(prefix[sign][start]))
            acc = quat_mul(seg, acc)
            sign = -sign
            start = m
        seg = quat_mul(prefix[sign][m_end], quat_conj(prefix[sign][start]))
        out[k] = quat_mul(seg, acc)
    return out


def _final_quats_direct(pulses: PulseSequence, cfg: SimConfig) -> np.ndarray:
    grid = cfg.grid
    f = waveform_eval(pulses, grid)
    g = cfg.noise.g
    k_total = cfg.n_realizations
    beta = np.empty((k_total, grid.n_steps))
    for k in range(k_total):
        beta[k] = sample_rtn(cfg.noise, grid, k).values
    q = quat_identity((k_total,))
    for j in range(grid.n_steps):
        step = su2_step_quats(f[j, 0], f[j, 1], g * beta[:, j], grid.dt)
        q = quat_mul(step, q)
    return q


def trajectory_quaternions(pulses: PulseSequence, cfg: SimConfig) -> np.ndarray:
    """Final-time propagators U_k(T) of the whole ensemble as (K, 4) quaternions."""
    if cfg.noise.omega == 0:
        return _final_quats_unmodulated(pulses, cfg)
    return _final_quats_direct(pulses, cfg)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def simulate_ensemble(pulses: PulseSequence, cfg: SimConfig) -> ExpectationTable:
    """Ensemble-averaged expectation table of the noisy evolution.

    Entry (s, O) is mean_k Tr[U_k rho_s U_k^dag O]; the average runs over the
    Bloch rotations of the trajectory propagators, in index order.
    """
    quats = trajectory_quaternions(pulses, cfg)
    mean_r = quat_rotation(quats).mean(axis=0)
    return table_from_mean_rotation(mean_r)


def _vo_from_quats(pulses: PulseSequence, cfg: SimConfig, quats: np.ndarray) -> NoiseOperatorSet:
    qc = control_prefix_quats(pulses, cfg.grid)[-1]
    uc = quat_to_matrix(qc)
    u_i = quat_to_matrix(quat_mul(quat_conj(qc), quats))
    u_i_dag = np.conj(np.swapaxes(u_i, -1, -2))
    ops = []
    for obs in (PAULI[1], PAULI[2], PAULI[3]):
        o_til = uc.conj().T @ obs @ uc
        left = o_til[None] @ u_i_dag
        right = o_til[None] @ u_i
        ops.append((left @ right).mean(axis=0))
    return NoiseOperatorSet(v_x=ops[0], v_y=ops[1], v_z=ops[2])


def estimate_vo(pulses: PulseSequence, cfg: SimConfig) -> NoiseOperatorSet:
    """Monte-Carlo noise operators V_O = mean_k O~ U_{I,k}^dag O~ U_{I,k}.

    Here O~ = U_c(T)^dag O U_c(T) and U_{I,k} = U_c(T)^dag U_k(T) is the
    interaction-picture propagator of trajectory k.  By construction
    Tr[rho_s O~ V_O] reproduces the simulate_ensemble entry for (s, O) on the
    same trajectory set; for g = 0 every V_O is the identity.
    """
    quats = trajectory_quaternions(pulses, cfg)
    return _vo_from_quats(pulses, cfg, quats)


def simulate_with_vo(pulses: PulseSequence, cfg: SimConfig):
    """One pass over the ensemble returning (table, noise operators)."""
    quats = trajectory_quaternions(pulses, cfg)
    mean_r = quat_rotation(quats).mean(axis=0)
    return table_from_mean_rotation(mean_r), _vo_from_quats(pulses, cfg, quats)


def coherence_scan(g_values, cfg: SimConfig, pulses: PulseSequence | None = None) -> np.ndarray:
    """Free-dephasing coherence <X>(T) from x+ for each coupling value.

    Runs one ensemble per g (zero drive by default) and returns the (x+, X)
    entry; g values are processed independently so the scan parallelizes over
    them without changing any result.
    """
    g_values = np.asarray(list(g_values), dtype=float)
    if pulses is None:
        pulses = zero_pulses(cfg.grid.t_total)

    def block(start, stop):
        vals = []
        for i in range(start, stop):
            table = simulate_ensemble(pulses, cfg.with_noise(g=float(g_values[i])))
            vals.append(table.entry("x+", "X"))
        return vals

    chunks = run_blocks(block, len(g_values), 1)
    return np.array([v for chunk in chunks for v in chunk])


def uniform_amplitude_law(rng: np.random.Generator, n_pulses: int, a_max: float) -> np.ndarray:
    return rng.uniform(-a_max, a_max, size=(n_pulses, 2))


def generate_dataset(
    n_records: int,
    cfg: SimConfig,
    n_pulses: int = 5,
    a_max: float = 100.0,
    sigma: float | None = None,
    amplitude_law=None,
) -> list[DatasetRecord]:
    """Simulate a supervised dataset of pulse sequences and their averages.

    Record i draws its amplitudes (uniform over [-a_max, a_max] per axis by
    default) and a fresh noise-stream seed from a counter-based stream keyed
    by (cfg.noise.seed, i), then simulates the full ensemble.  Re-simulating
    any record from its stored amplitudes and seed reproduces the
    expectations bit-identically.  Records are computed in fixed-index blocks
    (parallel-safe) and returned in order.
    """
    if n_records < 1:
        raise ValueError("n_records must be >= 1")
    if amplitude_law is None:
        amplitude_law = uniform_amplitude_law

    def build(start, stop):
        out = []
        for i in range(start, stop):
            rec_rng = np.random.Generator(np.random.Philox(key=[cfg.noise.seed, i]))
            amps = np.asarray(amplitude_law(rec_rng, n_pulses, a_max), dtype=float)
            noise_seed = int(rec_rng.integers(0, 2**63))
            rec_cfg = cfg.with_noise(seed=noise_seed)
            pulses = PulseSequence(amps, cfg.grid.t_total, sigma=sigma, a_max=a_max)
            table = simulate_ensemble(pulses, rec_cfg)
            out.append(
                DatasetRecord(
                    amplitudes=amps,
                    expectations=table.flat,
                    g=cfg.noise.g,
                    gamma=cfg.noise.gamma,
                    omega=cfg.noise.omega,
                    seed=noise_seed,
                    index=i,
                )
            )
        return out

    blocks = run_blocks(build, n_records, 16)
    return [rec for blk in blocks for rec in blk]


def resimulate_record(record: DatasetRecord, cfg: SimConfig, sigma: float | None = None,
                      a_max: float = 100.0) -> np.ndarray:
    """Expectations recomputed from a record's stored amplitudes and seed."""
    pulses = PulseSequence(record.amplitudes, cfg.grid.t_total, sigma=sigma, a_max=a_max)
    rec_cfg = SimConfig(
        cfg.grid,
        NoiseConfig(gamma=record.gamma, g=record.g, omega=record.omega, seed=record.seed),
        cfg.n_realizations,
    )
    return simulate_ensemble(pulses, rec_cfg).flat
