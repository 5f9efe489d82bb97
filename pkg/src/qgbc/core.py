"""Qubit algebra, Gaussian pulse waveforms, and SU(2) propagation.

Conventions used throughout the package: hbar = 1, time in microseconds,
energies/amplitudes in MHz (so MHz * us = 1 and all phases are in radians).
A two-axis drive plus a dephasing term gives the Hamiltonian

    H(t) = f_x(t) sigma_x + f_y(t) sigma_y + h_z(t) sigma_z,

and propagators are time-ordered products of per-step closed-form SU(2)
exponentials.  A 2x2 unitary with unit determinant is represented internally
by a real quaternion (w, x, y, z) <-> U = w*I - i*(x*sx + y*sy + z*sz), which
keeps the heavy ensemble code real-valued and makes Bloch rotations cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIGMA_0 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

# Pauli basis indexed 0..3 = I, X, Y, Z.
PAULI = np.stack([SIGMA_0, SIGMA_X, SIGMA_Y, SIGMA_Z])
PAULI_NAMES = ("I", "X", "Y", "Z")

# Canonical enumeration of preparation states and measured observables.  Every
# 18-entry expectation table in the package is laid out row-major over
# STATE_LABELS (rows) x OBSERVABLE_LABELS (columns).
STATE_LABELS = ("x+", "x-", "y+", "y-", "z+", "z-")
OBSERVABLE_LABELS = ("X", "Y", "Z")

_AXIS_OF_LABEL = {"x": 0, "y": 1, "z": 2}


def state_bloch(label: str) -> np.ndarray:
    """Bloch vector of one of the six Pauli eigenstates, e.g. 'y-'."""
    axis, sign = label[0], label[1]
    if axis not in _AXIS_OF_LABEL or sign not in "+-":
        raise ValueError(f"unknown state label {label!r}")
    n = np.zeros(3)
    n[_AXIS_OF_LABEL[axis]] = 1.0 if sign == "+" else -1.0
    return n


def state_density(label: str) -> np.ndarray:
    """Density matrix (I + n.sigma)/2 of a Pauli eigenstate."""
    n = state_bloch(label)
    return 0.5 * (SIGMA_0 + n[0] * SIGMA_X + n[1] * SIGMA_Y + n[2] * SIGMA_Z)


def is_unitary(u: np.ndarray, tol: float = 1e-10) -> bool:
    """True if u^dag u = I and |det u| = 1 within tol (Frobenius norm)."""
    u = np.asarray(u)
    if u.shape != (2, 2):
        return False
    err = np.linalg.norm(u.conj().T @ u - SIGMA_0)
    return bool(err <= tol and abs(abs(np.linalg.det(u)) - 1.0) <= tol)


# ---------------------------------------------------------------------------
# time grid and pulse waveforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling of [0, T] into n_steps piecewise-constant slices.

    The Hamiltonian is sampled at the midpoint of each slice, so
    times[j] = (j + 1/2) * dt with dt = t_total / n_steps.  Propagators
    returned for index j are the cumulative product through slice j, i.e.
    they evolve the state from 0 to (j + 1) * dt.
    """

    t_total: float
    n_steps: int

    def __post_init__(self):
        if self.t_total <= 0:
            raise ValueError("t_total must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")

    @property
    def dt(self) -> float:
        return self.t_total / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.n_steps) + 0.5) * self.dt


def default_pulse_width(t_total: float, n_pulses: int) -> float:
    # +-3 sigma of each Gaussian stays inside its slot of width T/(n+1)
    return t_total / (6.0 * (n_pulses + 1))


def pulse_centers(t_total: float, n_pulses: int) -> np.ndarray:
    return np.arange(1, n_pulses + 1) * t_total / (n_pulses + 1)


@dataclass(frozen=True)
class PulseSequence:
    """Train of Gaussian pulses on the x and y drive axes.

    amplitudes has shape (n_pulses, 2) holding (A_x, A_y) per pulse in MHz.
    Centers are fixed at tau_k = k * T / (n_pulses + 1); sigma defaults to
    T / (6 * (n_pulses + 1)) so neighbouring pulses do not overlap.
    """

    amplitudes: np.ndarray
    t_total: float
    sigma: float | None = None
    a_max: float = 100.0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float)
        if amps.ndim != 2 or amps.shape[1] != 2 or amps.shape[0] < 1:
            raise ValueError("amplitudes must have shape (n_pulses, 2)")
        object.__setattr__(self, "amplitudes", amps)
        if self.t_total <= 0:
            raise ValueError("t_total must be positive")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("pulse width must be positive")
        if self.a_max <= 0:
            raise ValueError("a_max must be positive")
        if np.max(np.abs(amps)) > self.a_max * (1 + 1e-12):
            raise ValueError("pulse amplitude exceeds a_max")

    @property
    def n_pulses(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def width(self) -> float:
        if self.sigma is not None:
            return self.sigma
        return default_pulse_width(self.t_total, self.n_pulses)

    @property
    def centers(self) -> np.ndarray:
        return pulse_centers(self.t_total, self.n_pulses)


def zero_pulses(t_total: float, n_pulses: int = 5, a_max: float = 100.0) -> PulseSequence:
    return PulseSequence(np.zeros((n_pulses, 2)), t_total, a_max=a_max)


def waveform_eval(pulses: PulseSequence, grid: TimeGrid) -> np.ndarray:
    """Sampled drive waveforms f_alpha(t_j) = sum_k A_{k,alpha} * gauss(t_j; tau_k).

    Returns an (n_steps, 2) real array; column 0 drives sigma_x, column 1
    sigma_y.  Linear in the amplitudes by construction.
    """
    t = grid.times
    tau = pulses.centers
    sig = pulses.width
    basis = np.exp(-((t[:, None] - tau[None, :]) ** 2) / sig**2)
    return basis @ pulses.amplitudes


# ---------------------------------------------------------------------------
# quaternion representation of SU(2)
# ---------------------------------------------------------------------------


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Compose SU(2) elements: returns quaternion of U_a @ U_b.

    Inputs are (..., 4) arrays (w, x, y, z); broadcasting applies.  With
    U = w*I - i*(v.sigma) the product rule is
    (w1, v1)*(w2, v2) = (w1*w2 - v1.v2, w1*v2 + w2*v1 + v1 x v2).
    """
    w1, x1, y1, z1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    w2, x2, y2, z2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    out[..., 0] = w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2
    out[..., 1] = w1 * x2 + w2 * x1 + y1 * z2 - z1 * y2
    out[..., 2] = w1 * y2 + w2 * y1 + z1 * x2 - x1 * z2
    out[..., 3] = w1 * z2 + w2 * z1 + x1 * y2 - y1 * x2
    return out


def quat_conj(a: np.ndarray) -> np.ndarray:
    """Quaternion of U^dag (inverse up to accumulated rounding of the norm)."""
    out = a.copy()
    out[..., 1:] *= -1.0
    return out


def quat_identity(shape=()) -> np.ndarray:
    out = np.zeros(shape + (4,))
    out[..., 0] = 1.0
    return out


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Complex (..., 2, 2) matrix w*I - i*(x*sx + y*sy + z*sz)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 0] = w - 1j * z
    out[..., 0, 1] = -y - 1j * x
    out[..., 1, 0] = y - 1j * x
    out[..., 1, 1] = w + 1j * z
    return out


def quat_rotation(q: np.ndarray) -> np.ndarray:
    """Bloch rotation matrices R with U (n.sigma) U^dag = (R n).sigma.

    Accepts (..., 4) quaternions, not necessarily normalized; the result is
    divided by |q|^2 so it is exactly orthogonal up to the rounding of q
    itself.  Zeros in q map to exact zeros in R, which keeps e.g. pure
    sigma_z evolutions giving R[2, 2] = 1 exactly.
    """
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    n2 = w * w + x * x + y * y + z * z
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = w * w + x * x - y * y - z * z
    r[..., 0, 1] = 2.0 * (x * y - w * z)
    r[..., 0, 2] = 2.0 * (x * z + w * y)
    r[..., 1, 0] = 2.0 * (x * y + w * z)
    r[..., 1, 1] = w * w - x * x + y * y - z * z
    r[..., 1, 2] = 2.0 * (y * z - w * x)
    r[..., 2, 0] = 2.0 * (x * z - w * y)
    r[..., 2, 1] = 2.0 * (y * z + w * x)
    r[..., 2, 2] = w * w - x * x - y * y + z * z
    return r / n2[..., None, None]


def su2_step_quats(hx, hy, hz, dt: float) -> np.ndarray:
    """Quaternions of exp(-i*(hx*sx + hy*sy + hz*sz)*dt), elementwise.

    hx, hy, hz broadcast to a common shape S; the result has shape S + (4,).
    Uses cos/sinc so the |h| -> 0 limit is exact.
    """
    hx, hy, hz = np.broadcast_arrays(hx, hy, hz)
    ang = np.sqrt(hx * hx + hy * hy + hz * hz) * dt
    # sin(ang)/ang * dt, finite at ang = 0
    fac = dt * np.sinc(ang / np.pi)
    out = np.empty(np.shape(hx) + (4,))
    out[..., 0] = np.cos(ang)
    out[..., 1] = fac * hx
    out[..., 2] = fac * hy
    out[..., 3] = fac * hz
    return out


def quat_prefix_products(steps: np.ndarray) -> np.ndarray:
    """Inclusive left-product scan of step quaternions along axis -2.

    steps[..., j, :] is the slice-j propagator; output[..., j, :] is the
    quaternion of U_j @ U_{j-1} @ ... @ U_0.  Log-depth doubling scan, so the
    cost is O(M log M) elementwise work with O(log M) numpy calls.
    """
    p = steps.copy()
    m = p.shape[-2]
    offset = 1
    while offset < m:
        p[..., offset:, :] = quat_mul(p[..., offset:, :], p[..., :-offset, :])
        offset *= 2
    return p


def quat_chain_product(steps: np.ndarray) -> np.ndarray:
    """Total time-ordered product of step quaternions along axis -2.

    Equivalent to quat_prefix_products(steps)[..., -1, :] but pads to a power
    of two and halves pairwise, so only O(M) quaternion multiplies are spent
    when just the final propagator is needed.
    """
    steps = np.asarray(steps)
    m = steps.shape[-2]
    size = 1
    while size < m:
        size *= 2
    if size != m:
        padded = np.empty(steps.shape[:-2] + (size, 4))
        padded[..., :m, :] = steps
        padded[..., m:, :] = quat_identity()
        steps = padded
    while steps.shape[-2] > 1:
        steps = quat_mul(steps[..., 1::2, :], steps[..., 0::2, :])
    return steps[..., 0, :]


# ---------------------------------------------------------------------------
# propagation of explicit Hamiltonian samples
# ---------------------------------------------------------------------------


def pauli_coefficients(h: np.ndarray, tol: float = 1e-9):
    """Split Hermitian (..., 2, 2) samples into (a0, ax, ay, az) with
    H = a0*I + a.sigma.  Raises if any sample deviates from Hermiticity by
    more than tol (max absolute entry of H - H^dag)."""
    h = np.asarray(h, dtype=complex)
    herm_err = np.max(np.abs(h - np.conj(np.swapaxes(h, -1, -2))))
    if herm_err > tol:
        raise ValueError(f"Hamiltonian sample not Hermitian (deviation {herm_err:.2e})")
    a0 = 0.5 * np.real(h[..., 0, 0] + h[..., 1, 1])
    ax = np.real(h[..., 0, 1])
    ay = -np.imag(h[..., 0, 1])
    az = 0.5 * np.real(h[..., 0, 0] - h[..., 1, 1])
    return a0, ax, ay, az


def su2_exp(h: np.ndarray, dt: float) -> np.ndarray:
    """Closed-form exp(-i*H*dt) for a single Hermitian 2x2 H.

    exp(-i*(a0*I + a.sigma)*dt) = e^{-i*a0*dt} (cos(|a|dt) I - i sin(|a|dt) ahat.sigma)
    """
    a0, ax, ay, az = pauli_coefficients(h)
    q = su2_step_quats(ax, ay, az, dt)
    return np.exp(-1j * a0 * dt) * quat_to_matrix(q)


def propagate(h_samples: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Cumulative time-ordered propagators for piecewise-constant samples.

    h_samples is (n_steps, 2, 2) Hermitian; entry j of the returned
    (n_steps, 2, 2) array is U_j = exp(-i H_j dt) @ ... @ exp(-i H_0 dt),
    later slices multiplying from the left.  Non-Hermitian samples are
    rejected at tolerance 1e-9.
    """
    h_samples = np.asarray(h_samples, dtype=complex)
    if h_samples.shape != (grid.n_steps, 2, 2):
        raise ValueError("h_samples must have shape (n_steps, 2, 2)")
    steps = np.empty_like(h_samples)
    for j in range(grid.n_steps):
        steps[j] = su2_exp(h_samples[j], grid.dt)
    out = np.empty_like(steps)
    acc = steps[0]
    out[0] = acc
    for j in range(1, grid.n_steps):
        acc = steps[j] @ acc
        out[j] = acc
    return out


def control_hamiltonian(pulses: PulseSequence, grid: TimeGrid) -> np.ndarray:
    """Hermitian samples f_x(t_j) sx + f_y(t_j) sy of the drive alone."""
    f = waveform_eval(pulses, grid)
    return f[:, 0, None, None] * SIGMA_X + f[:, 1, None, None] * SIGMA_Y


def control_prefix_quats(pulses: PulseSequence, grid: TimeGrid) -> np.ndarray:
    """Quaternion scan of the noise-free control propagator on the grid.

    Equivalent to propagate(control_hamiltonian(...)) but real-valued and
    vectorized; used by the model-side code where only U_c is needed.
    """
    f = waveform_eval(pulses, grid)
    steps = su2_step_quats(f[:, 0], f[:, 1], np.zeros(grid.n_steps), grid.dt)
    return quat_prefix_products(steps)


def expectation(rho: np.ndarray, obs: np.ndarray, u: np.ndarray) -> float:
    """Tr[U rho U^dag O] for a single propagator, as a real number."""
    val = np.trace(u @ rho @ u.conj().T @ obs)
    return float(np.real(val))


def bloch_rotation(u: np.ndarray) -> np.ndarray:
    """SO(3) action of a unitary: R[o, a] = Tr[sigma_o U sigma_a U^dag] / 2."""
    u = np.asarray(u, dtype=complex)
    conj = np.einsum("ab,ibc,dc->iad", u, PAULI[1:], u.conj())
    return 0.5 * np.real(np.einsum("oab,iba->oi", PAULI[1:], conj))


def unitary_table(u: np.ndarray) -> np.ndarray:
    """Ideal (6, 3) expectation table Tr[U rho_s U^dag O] of a unitary.

    Rows follow STATE_LABELS, columns OBSERVABLE_LABELS.  Row 2a is +R[:, a]
    and row 2a+1 is -R[:, a] with R the Bloch rotation of u.
    """
    r = bloch_rotation(u)
    table = np.empty((6, 3))
    for axis in range(3):
        table[2 * axis] = r[:, axis]
        table[2 * axis + 1] = -r[:, axis]
    return table


def haar_unitary(seed: int) -> np.ndarray:
    """Haar-distributed SU(2) element, deterministic per seed.

    Samples a uniform point on S^3 (normalized 4D Gaussian) and maps the
    quaternion to a matrix; the push-forward of the sphere measure is the
    Haar measure on SU(2).
    """
    rng = np.random.default_rng(seed)
    v = rng.normal(size=4)
    norm = np.linalg.norm(v)
    while norm < 1e-12:  # pragma: no cover - probability zero in practice
        v = rng.normal(size=4)
        norm = np.linalg.norm(v)
    return quat_to_matrix(v / norm)
