"""Pulse synthesis by gradient descent on predictive models.

A model handle exposes predict(pulses) -> ExpectationTable (and a batched
variant over amplitude arrays); the gate cost is the summed squared error
between the predicted 18 expectation values and those of the target unitary.
Optimization runs Adam on the flattened amplitude vector with central
finite-difference gradients: with 2 N_p parameters a whole gradient costs one
batched model call, which keeps every model variant optimizable without
differentiating through quadrature or Monte-Carlo code.

Restarts draw independent initial amplitudes from per-restart counter-based
streams and run independently, so they parallelize without changing results;
the driver returns the best solution over restarts together with its
monotone best-so-far cost trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    PAULI,
    PulseSequence,
    TimeGrid,
    default_pulse_width,
    is_unitary,
    pulse_centers,
    quat_chain_product,
    quat_rotation,
    su2_exp,
    su2_step_quats,
    unitary_table,
)
from .noise import NoiseConfig
from .parallel import run_blocks
from .simulator import ExpectationTable
from .whitebox import DEFAULT_FINE_STEPS, DEFAULT_QUAD_POINTS, dyson2_table


@dataclass(frozen=True)
class TargetGate:
    """Named 2x2 unitary target."""

    name: str
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (2, 2) or not is_unitary(m, tol=1e-10):
            raise ValueError(f"target gate {self.name!r} is not a 2x2 unitary")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)


def standard_gates() -> dict[str, TargetGate]:
    """The six benchmark targets: I, X, Y, Z, H, Rx(pi/4)."""
    h = np.array([[1, 1], [1, -1]]) / np.sqrt(2.0)
    rx = su2_exp(PAULI[1], np.pi / 8.0)
    gates = {
        "I": np.eye(2),
        "X": PAULI[1],
        "Y": PAULI[2],
        "Z": PAULI[3],
        "H": h,
        "Rx(pi/4)": rx,
    }
    return {name: TargetGate(name, m) for name, m in gates.items()}


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam accumulator; moments are created on first use."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter array."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.shape:
        raise ValueError("gradient shape does not match parameters")
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradient")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    elif state.m.shape != params.shape:
        raise ValueError("Adam state was created for a different parameter shape")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def central_difference(fn, params: np.ndarray, step: float) -> np.ndarray:
    """Central finite-difference gradient of fn over one batched call.

    fn maps a (B, P) batch of parameter rows to (B,) values.
    """
    p = np.asarray(params, dtype=float).reshape(-1)
    n = p.size
    batch = np.tile(p, (2 * n, 1))
    batch[:n] += step * np.eye(n)
    batch[n:] -= step * np.eye(n)
    values = np.asarray(fn(batch), dtype=float)
    return (values[:n] - values[n:]) / (2.0 * step)


# ---------------------------------------------------------------------------
# model handles
# ---------------------------------------------------------------------------


class PulseModel:
    """Common pulse bookkeeping for the predictive model variants.

    Subclasses implement predict_batch over raw amplitude arrays; the
    Gaussian basis on the fine grid is evaluated once and shared.
    """

    def __init__(self, t_total: float, n_pulses: int = 5, sigma: float | None = None,
                 a_max: float = 100.0, m_fine: int = DEFAULT_FINE_STEPS):
        self.t_total = float(t_total)
        self.n_pulses = int(n_pulses)
        self.sigma = float(sigma) if sigma is not None else default_pulse_width(t_total, n_pulses)
        self.a_max = float(a_max)
        self.grid = TimeGrid(t_total, m_fine)
        centers = pulse_centers(self.t_total, self.n_pulses)
        delta = self.grid.times[:, None] - centers[None, :]
        self.basis = np.exp(-(delta**2) / self.sigma**2)

    def make_pulses(self, amplitudes: np.ndarray) -> PulseSequence:
        return PulseSequence(amplitudes, self.t_total, sigma=self.sigma, a_max=self.a_max)

    def waveforms(self, amps_batch: np.ndarray) -> np.ndarray:
        """(B, n_pulses, 2) amplitudes -> (B, n_steps, 2) sampled waveforms."""
        return np.einsum("mk,bkc->bmc", self.basis, amps_batch)

    def predict(self, pulses: PulseSequence) -> ExpectationTable:
        if pulses.n_pulses != self.n_pulses:
            raise ValueError("pulse count does not match this model")
        if abs(pulses.t_total - self.t_total) > 1e-12:
            raise ValueError("pulse duration does not match this model")
        return ExpectationTable(self.predict_batch(pulses.amplitudes[None])[0])

    def predict_batch(self, amps_batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ClosedSystemModel(PulseModel):
    """Noiseless whitebox: exact control propagator, no environment."""

    variant = "CS-WB"

    def predict_batch(self, amps_batch: np.ndarray) -> np.ndarray:
        f = self.waveforms(np.asarray(amps_batch, dtype=float))
        steps = su2_step_quats(f[..., 0], f[..., 1], np.zeros(f.shape[:2]), self.grid.dt)
        rot = quat_rotation(quat_chain_product(steps))
        out = np.empty((f.shape[0], 6, 3))
        out[:, 0::2, :] = np.swapaxes(rot, -1, -2)
        out[:, 1::2, :] = -out[:, 0::2, :]
        return out


class OpenSystemModel(PulseModel):
    """Second-order Dyson whitebox with the known noise correlator."""

    variant = "OS-WB"

    def __init__(self, noise: NoiseConfig, t_total: float, n_pulses: int = 5,
                 sigma: float | None = None, a_max: float = 100.0,
                 m_d: int = DEFAULT_QUAD_POINTS, m_fine: int = DEFAULT_FINE_STEPS):
        super().__init__(t_total, n_pulses, sigma, a_max, m_fine)
        self.noise = noise
        self.m_d = m_d

    def predict_batch(self, amps_batch: np.ndarray) -> np.ndarray:
        amps_batch = np.asarray(amps_batch, dtype=float)
        out = np.empty((amps_batch.shape[0], 6, 3))
        for b in range(amps_batch.shape[0]):
            out[b] = dyson2_table(
                self.make_pulses(amps_batch[b]), self.noise.g, self.noise,
                m_d=self.m_d, m_fine=self.grid.n_steps,
            )
        return out


# ---------------------------------------------------------------------------
# cost and optimization driver
# ---------------------------------------------------------------------------


def cost_mse(model: PulseModel, pulses: PulseSequence, gate: TargetGate) -> float:
    """Summed squared error of the 18 predicted expectations against the gate."""
    ideal = unitary_table(gate.matrix)
    predicted = model.predict(pulses).values
    return float(np.sum((ideal - predicted) ** 2))


@dataclass(frozen=True)
class OptimizationResult:
    """Best-of-restarts pulse solution with per-restart diagnostics."""

    pulses: PulseSequence
    cost: float
    trace: np.ndarray            # best-so-far cost of the winning restart
    restart_index: int
    restart_costs: np.ndarray    # (restarts,)
    restart_amplitudes: np.ndarray  # (restarts, n_pulses, 2)


def optimize_pulses(model: PulseModel, gate: TargetGate, iters: int = 1000,
                    restarts: int = 10, seed: int = 0, lr: float = 1.0,
                    fd_step: float | None = None,
                    init_scale: float = 0.1) -> OptimizationResult:
    """Adam descent on the amplitude vector, best over independent restarts.

    Restart r draws initial amplitudes uniformly from +-init_scale * a_max
    using the stream keyed by (seed, r).  Each iteration spends one batched
    model call on the current point plus the 4 N_p finite-difference probes;
    the returned trace has iters + 1 entries and is non-increasing.  A
    restart whose cost turns non-finite is abandoned at its best point so
    far; the others continue.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    ideal = unitary_table(gate.matrix)
    n_par = 2 * model.n_pulses
    step = fd_step if fd_step is not None else 1e-3 * model.a_max
    probes = np.concatenate([np.eye(n_par), -np.eye(n_par)]) * step

    def costs_of(params_rows: np.ndarray) -> np.ndarray:
        tables = model.predict_batch(params_rows.reshape(-1, model.n_pulses, 2))
        return np.sum((tables - ideal) ** 2, axis=(1, 2))

    def run_restart(r: int):
        rng = np.random.default_rng([seed, r])
        params = rng.uniform(
            -init_scale * model.a_max, init_scale * model.a_max, size=n_par
        )
        adam = AdamState(lr=lr)
        trace = np.empty(iters + 1)
        best_cost = np.inf
        best_params = params.copy()
        for it in range(iters):
            batch = np.concatenate([params[None], params[None] + probes])
            costs = costs_of(batch)
            if not np.all(np.isfinite(costs)):
                trace[it:] = best_cost
                return best_cost, best_params, trace
            if costs[0] < best_cost:
                best_cost = costs[0]
                best_params = params.copy()
            trace[it] = best_cost
            grads = (costs[1 : 1 + n_par] - costs[1 + n_par :]) / (2.0 * step)
            # projected step keeps every iterate inside the amplitude bound
            params = np.clip(adam_step(adam, params, grads), -model.a_max, model.a_max)
        final = costs_of(params[None])[0]
        if np.isfinite(final) and final < best_cost:
            best_cost = final
            best_params = params.copy()
        trace[iters] = best_cost
        return best_cost, best_params, trace

    results = [out for blk in run_blocks(lambda a, b: [run_restart(r) for r in range(a, b)],
                                         restarts, 1) for out in blk]
    costs = np.array([res[0] for res in results])
    winner = 0
    for r in range(1, restarts):
        if costs[r] < costs[winner]:
            winner = r
    best_cost, best_params, trace = results[winner]
    return OptimizationResult(
        pulses=model.make_pulses(best_params.reshape(model.n_pulses, 2)),
        cost=float(best_cost),
        trace=trace,
        restart_index=winner,
        restart_costs=costs,
        restart_amplitudes=np.stack(
            [res[1].reshape(model.n_pulses, 2) for res in results]
        ),
    )
