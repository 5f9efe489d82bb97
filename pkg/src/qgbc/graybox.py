"""Learned dynamics model: recurrent blackbox composed with the exact control map.

The blackbox is a stack of gated recurrent layers consuming a time-sampled
description of the control pulse and emitting, per observable O, five
numbers (theta1, theta2, theta3, r1, r2).  Three input representations are
supported behind the same interface: the raw two-channel waveform, the bare
amplitude vector as a short sequence, and (the default) the waveform
augmented with the running integral of the toggling-frame dephasing axis

    Phi(t) = int_0^t R_c(s)^T e_z ds,

which is an exact kinematic functional of the pulse.  Phi matters because
the leading noise effect on the dynamics is a rotation by an angle set by
g|Phi(T)|: the measured attenuation is nearly a trigonometric function of
it, slowly varying in pulse space, whereas the same information expressed
through the raw waveform sits under many windings of the control rotation
and is practically unlearnable at moderate dataset sizes.  The emitted
numbers parameterize a Hermitian noise operator

    V_O = Q diag(tanh r1, tanh r2) Q^dag,   Q = exp(-i theta . sigma),

whose spectrum lies in (-1, 1), so every composed prediction

    <O>_s = Re Tr[rho_s O~ V_O],    O~ = U_c(T)^dag O U_c(T)

is bounded by 1 in magnitude.  Writing mu_bar and mu_delta for the mean and
half-difference of the eigenvalues and u for the rotated z axis Q e_z (as a
Bloch vector), the prediction reduces to

    <O>_s = mu_bar * (n_s . m_O) + mu_delta * (m_O . u),

with n_s the input Bloch vector and m_O row O of the control propagator's
Bloch rotation.  The control rotation is an exact constant of each record, so
training only backpropagates through the recurrent stack, the heads, and
this closed-form assembly; all gradients here are hand-derived and verified
against finite differences.

Everything is float64 and deterministic: initialization and batch order come
from counter-based streams, and the train/validation split hashes each
record's amplitudes (content-keyed), so the split is independent of record
order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .control import AdamState, PulseModel, adam_step
from .core import (
    PAULI,
    PulseSequence,
    TimeGrid,
    quat_chain_product,
    quat_prefix_products,
    quat_rotation,
    su2_step_quats,
    waveform_eval,
)
from .simulator import DatasetRecord, ExpectationTable, NoiseOperatorSet

CHECKPOINT_VERSION = 1

# Bloch vectors of the six input states, row order matching STATE_LABELS
_STATE_BLOCH = np.array(
    [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ]
)


@dataclass(frozen=True)
class GrayboxArchitecture:
    """Shape of the recurrent stack and its output heads."""

    m_in: int = 128
    layers: int = 2
    hidden: int = 60
    head_params: int = 5
    input_mode: str = "toggling"   # or "waveform" / "amplitudes"

    @property
    def d_in(self) -> int:
        return 5 if self.input_mode == "toggling" else 2

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1 or self.m_in < 1:
            raise ValueError("architecture sizes must be positive")
        if self.head_params != 5:
            raise ValueError("output heads carry exactly 5 noise-operator params")
        if self.input_mode not in ("toggling", "waveform", "amplitudes"):
            raise ValueError(
                "input_mode must be 'toggling', 'waveform' or 'amplitudes'"
            )


@dataclass
class GrayboxModel:
    """Architecture, weight tensors, and training metadata."""

    architecture: GrayboxArchitecture
    weights: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def freeze(self) -> "GrayboxModel":
        for arr in self.weights.values():
            arr.flags.writeable = False
        return self


def _weight_shapes(arch: GrayboxArchitecture) -> dict[str, tuple]:
    shapes = {}
    d_in = arch.d_in
    for layer in range(arch.layers):
        h = arch.hidden
        shapes[f"gru{layer}_wx"] = (d_in, 3 * h)
        shapes[f"gru{layer}_uzr"] = (h, 2 * h)
        shapes[f"gru{layer}_un"] = (h, h)
        shapes[f"gru{layer}_b"] = (3 * h,)
        d_in = h
    shapes["head_w"] = (3, arch.hidden, arch.head_params)
    shapes["head_b"] = (3, arch.head_params)
    return shapes


def init_model(arch: GrayboxArchitecture, seed: int = 0) -> GrayboxModel:
    """Fresh model: weights uniform in +-1/sqrt(hidden), biases zero."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(arch.hidden)
    weights = {}
    for name, shape in _weight_shapes(arch).items():
        if name.endswith("_b") or name == "head_b":
            weights[name] = np.zeros(shape)
        else:
            weights[name] = rng.uniform(-bound, bound, size=shape)
    return GrayboxModel(arch, weights)


# ---------------------------------------------------------------------------
# recurrent stack
# ---------------------------------------------------------------------------


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _gru_layer_forward(weights, layer, x):
    """Run one recurrent layer over (B, T, D) input.

    Gate convention: z = sig(.), r = sig(.), n = tanh(x W_n + (r*h) U_n + .),
    h' = (1 - z) * h + z * n.  Returns the full hidden sequence and the
    per-step cache needed for the backward pass.
    """
    wx = weights[f"gru{layer}_wx"]
    uzr = weights[f"gru{layer}_uzr"]
    un = weights[f"gru{layer}_un"]
    b = weights[f"gru{layer}_b"]
    n_b, n_t, _ = x.shape
    h_dim = un.shape[0]
    xp = x @ wx + b                       # all input projections at once
    hs = np.empty((n_b, n_t, h_dim))
    cache = []
    h = np.zeros((n_b, h_dim))
    for t in range(n_t):
        zr = h @ uzr
        z = _sigmoid(xp[:, t, :h_dim] + zr[:, :h_dim])
        r = _sigmoid(xp[:, t, h_dim : 2 * h_dim] + zr[:, h_dim:])
        rh = r * h
        n = np.tanh(xp[:, t, 2 * h_dim :] + rh @ un)
        cache.append((h, z, r, n, rh))
        h = (1.0 - z) * h + z * n
        hs[:, t] = h
    return hs, (x, cache)


def _gru_layer_backward(weights, layer, fwd_cache, dh_seq):
    """Backpropagate (B, T, H) output gradients through one layer."""
    x, cache = fwd_cache
    wx = weights[f"gru{layer}_wx"]
    uzr = weights[f"gru{layer}_uzr"]
    un = weights[f"gru{layer}_un"]
    n_b, n_t, _ = x.shape
    h_dim = un.shape[0]
    dxp = np.empty((n_b, n_t, 3 * h_dim))
    duzr = np.zeros_like(uzr)
    dun = np.zeros_like(un)
    dh = np.zeros((n_b, h_dim))
    for t in range(n_t - 1, -1, -1):
        dh = dh + dh_seq[:, t]
        h_prev, z, r, n, rh = cache[t]
        dz = dh * (n - h_prev)
        dn = dh * z
        dh_prev = dh * (1.0 - z)
        dn_pre = dn * (1.0 - n**2)
        drh = dn_pre @ un.T
        dun += rh.T @ dn_pre
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r
        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        dzr = np.concatenate([dz_pre, dr_pre], axis=1)
        dh_prev = dh_prev + dzr @ uzr.T
        duzr += h_prev.T @ dzr
        dxp[:, t, :h_dim] = dz_pre
        dxp[:, t, h_dim : 2 * h_dim] = dr_pre
        dxp[:, t, 2 * h_dim :] = dn_pre
        dh = dh_prev
    d_flat = dxp.reshape(n_b * n_t, 3 * h_dim)
    x_flat = x.reshape(n_b * n_t, -1)
    grads = {
        f"gru{layer}_wx": x_flat.T @ d_flat,
        f"gru{layer}_uzr": duzr,
        f"gru{layer}_un": dun,
        f"gru{layer}_b": d_flat.sum(axis=0),
    }
    dx = dxp @ wx.T
    return dx, grads


def _stack_forward(model, x):
    caches = []
    out = x
    for layer in range(model.architecture.layers):
        out, cache = _gru_layer_forward(model.weights, layer, out)
        caches.append(cache)
    return out[:, -1, :], (caches, out.shape)


def _stack_backward(model, stack_cache, dh_final):
    caches, out_shape = stack_cache
    dh_seq = np.zeros(out_shape)
    dh_seq[:, -1, :] = dh_final
    grads = {}
    for layer in range(model.architecture.layers - 1, -1, -1):
        dh_seq, layer_grads = _gru_layer_backward(model.weights, layer, caches[layer], dh_seq)
        grads.update(layer_grads)
    return grads


# ---------------------------------------------------------------------------
# noise-operator heads
# ---------------------------------------------------------------------------


def _axis_from_theta(theta):
    """Bloch image u = R(exp(-i theta.sigma)) e_z with derivative pieces cached.

    theta is (..., 3); returns u (..., 3) and the cache for _axis_backward.
    """
    n = np.linalg.norm(theta, axis=-1)
    w = np.cos(n)
    sinc = np.sinc(n / np.pi)            # sin(n)/n, exact at n = 0
    a = sinc[..., None] * theta
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    u = np.stack(
        [
            2.0 * (ax * az + w * ay),
            2.0 * (ay * az - w * ax),
            w**2 - ax**2 - ay**2 + az**2,
        ],
        axis=-1,
    )
    return u, (theta, n, w, sinc, a)


def _axis_backward(du, cache):
    """Chain du (..., 3) back to dtheta (..., 3)."""
    theta, n, w, sinc, a = cache
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    dux, duy, duz = du[..., 0], du[..., 1], du[..., 2]
    dw = 2.0 * (ay * dux - ax * duy + w * duz)
    da = np.stack(
        [
            2.0 * (az * dux - w * duy - ax * duz),
            2.0 * (w * dux + az * duy - ay * duz),
            2.0 * (ax * dux + ay * duy + az * duz),
        ],
        axis=-1,
    )
    # a = sinc(n) theta: da/dtheta_i = sinc * delta + G theta_i theta_j,
    # G = (cos n - sinc n) / n^2, series-expanded where cancellation bites
    small = n < 1e-3
    n2 = n**2
    g = np.where(small, -1.0 / 3.0 + n2 / 30.0, (w - sinc) / np.where(small, 1.0, n2))
    theta_dot_da = np.sum(theta * da, axis=-1)
    return (
        -a * dw[..., None]
        + sinc[..., None] * da
        + g[..., None] * theta_dot_da[..., None] * theta
    )


def _heads_forward(model, h_final):
    """Final hidden state -> (B, 3, 5) head outputs."""
    w = model.weights["head_w"]
    b = model.weights["head_b"]
    return np.einsum("bh,ohp->bop", h_final, w) + b


def _predict_from_heads(params, r_c):
    """Assemble (B, 6, 3) expectation predictions from head outputs.

    params is (B, 3, 5) = (theta1..3, r1, r2) per observable; r_c is the
    (B, 3, 3) control Bloch rotation.  Returns predictions and the cache for
    the backward pass.
    """
    theta = params[..., :3]
    mu = np.tanh(params[..., 3:])        # (B, 3, 2)
    mu_bar = 0.5 * (mu[..., 0] + mu[..., 1])
    mu_delta = 0.5 * (mu[..., 0] - mu[..., 1])
    u, axis_cache = _axis_from_theta(theta)
    offs = np.sum(r_c * u, axis=-1)      # (B, 3): m_O . u per observable
    closed = np.einsum("sa,boa->bso", _STATE_BLOCH, r_c)
    pred = mu_bar[:, None, :] * closed + (mu_delta * offs)[:, None, :]
    return pred, (mu, mu_bar, mu_delta, u, axis_cache, offs, closed, r_c)


def _heads_backward(model, h_final, params, pred_cache, dpred):
    """Gradients of the head weights and the final hidden state."""
    mu, _, mu_delta, u, axis_cache, offs, closed, r_c = pred_cache
    dsum = dpred.sum(axis=1)             # (B, 3): state-independent part
    dmu_bar = np.einsum("bso,bso->bo", dpred, closed)
    dmu_delta = offs * dsum
    doffs = mu_delta * dsum
    du = doffs[..., None] * r_c
    dtheta = _axis_backward(du, axis_cache)
    dmu0 = 0.5 * (dmu_bar + dmu_delta)
    dmu1 = 0.5 * (dmu_bar - dmu_delta)
    dr = np.stack([dmu0, dmu1], axis=-1) * (1.0 - mu**2)
    dparams = np.concatenate([dtheta, dr], axis=-1)      # (B, 3, 5)
    w = model.weights["head_w"]
    grads = {
        "head_w": np.einsum("bh,bop->ohp", h_final, dparams),
        "head_b": dparams.sum(axis=0),
    }
    dh_final = np.einsum("bop,ohp->bh", dparams, w)
    return grads, dh_final


def vo_matrices(params_row: np.ndarray) -> NoiseOperatorSet:
    """Reconstruct the three Hermitian V_O matrices from one head output (3, 5)."""
    ops = []
    for o in range(3):
        theta = params_row[o, :3]
        mu = np.tanh(params_row[o, 3:])
        u, _ = _axis_from_theta(theta[None])
        mu_bar = 0.5 * (mu[0] + mu[1])
        mu_delta = 0.5 * (mu[0] - mu[1])
        v = mu_bar * np.eye(2) + mu_delta * np.einsum("a,aij->ij", u[0], PAULI[1:])
        ops.append(v)
    return NoiseOperatorSet(v_x=ops[0], v_y=ops[1], v_z=ops[2])


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingData:
    """Model-ready arrays for a dataset: inputs, targets, control rotations."""

    x: np.ndarray        # (N, m_in, 2) normalized inputs
    y: np.ndarray        # (N, 6, 3) measured expectations
    r_c: np.ndarray      # (N, 3, 3) control Bloch rotations at T
    fingerprint: str     # content hash of (amplitudes, expectations)
    val_mask: np.ndarray  # (N,) bool, content-keyed split


def record_split_mask(records, val_fraction: float) -> np.ndarray:
    """Validation-set membership by hashing each record's amplitudes.

    Content-keyed, so the split is invariant under record reordering and
    stable across runs.
    """
    mask = np.empty(len(records), dtype=bool)
    for i, rec in enumerate(records):
        digest = hashlib.sha256(np.ascontiguousarray(rec.amplitudes).tobytes()).digest()
        mask[i] = int.from_bytes(digest[:8], "big") < val_fraction * 2**64
    return mask


def dataset_fingerprint(records) -> str:
    acc = hashlib.sha256()
    for rec in records:
        acc.update(np.ascontiguousarray(rec.amplitudes).tobytes())
        acc.update(np.ascontiguousarray(rec.expectations).tobytes())
    return acc.hexdigest()


def control_rotations(amplitudes: np.ndarray, t_total: float,
                      sigma: float | None, a_max: float,
                      m_fine: int = 3000) -> np.ndarray:
    """Batched (N, 3, 3) control Bloch rotations at final time."""
    helper = PulseModel(t_total, amplitudes.shape[1], sigma, a_max, m_fine)
    out = np.empty((amplitudes.shape[0], 3, 3))
    block = 256
    for start in range(0, amplitudes.shape[0], block):
        amps = amplitudes[start : start + block]
        f = helper.waveforms(amps)
        steps = su2_step_quats(f[..., 0], f[..., 1], np.zeros(f.shape[:2]), helper.grid.dt)
        out[start : start + block] = quat_rotation(quat_chain_product(steps))
    return out


def _toggling_channels(f_fine: np.ndarray, dt: float, t_total: float,
                       m_in: int):
    """Phi(t)/T read out at the end of each coarse slice, plus final rotations.

    f_fine is the (B, m_fine, 2) waveform on the fine grid.  Phi is the
    running integral of the toggling-frame dephasing axis R_c(t)^T e_z,
    accumulated on the fine grid (the axis itself winds far too fast to
    sample at m_in, but its integral is 1-Lipschitz).
    """
    m_fine = f_fine.shape[1]
    steps = su2_step_quats(
        f_fine[..., 0], f_fine[..., 1], np.zeros(f_fine.shape[:2]), dt
    )
    prefix = quat_prefix_products(steps)
    rots = quat_rotation(prefix)
    phi = np.cumsum(rots[..., 2, :], axis=1) * dt
    idx = (np.arange(1, m_in + 1) * m_fine) // m_in - 1
    return phi[:, idx, :] / t_total, rots[:, -1]


def toggling_inputs(amplitudes: np.ndarray, t_total: float,
                    sigma: float | None, a_max: float,
                    m_in: int, m_fine: int = 3000):
    """Model inputs for the toggling representation, plus the final rotations.

    Channels 0-1 are the waveform over the m_in grid, normalized by a_max;
    channels 2-4 are the Phi(t)/T integral channels of _toggling_channels.
    Returns (x, r_final) with x (N, m_in, 5) and r_final (N, 3, 3), so
    callers need no separate control_rotations pass.
    """
    amplitudes = np.asarray(amplitudes, dtype=float)
    helper = PulseModel(t_total, amplitudes.shape[1], sigma, a_max, m_fine)
    coarse = PulseModel(t_total, amplitudes.shape[1], sigma, a_max, m_fine=m_in)
    n = amplitudes.shape[0]
    x = np.empty((n, m_in, 5))
    r_final = np.empty((n, 3, 3))
    block = 256
    for start in range(0, n, block):
        amps = amplitudes[start : start + block]
        x[start : start + block, :, :2] = coarse.waveforms(amps) / a_max
        f = helper.waveforms(amps)
        x[start : start + block, :, 2:], r_final[start : start + block] = (
            _toggling_channels(f, helper.grid.dt, t_total, m_in)
        )
    return x, r_final


def prepare_training_data(records, arch: GrayboxArchitecture, t_total: float,
                          sigma: float | None = None, a_max: float = 100.0,
                          val_fraction: float = 0.1,
                          m_fine: int = 3000) -> TrainingData:
    """Turn simulated records into normalized model inputs and targets."""
    if len(records) == 0:
        raise ValueError("dataset is empty")
    amplitudes = np.stack([np.asarray(r.amplitudes, dtype=float) for r in records])
    y = np.stack([np.asarray(r.expectations, dtype=float).reshape(6, 3) for r in records])
    if arch.input_mode == "toggling":
        x, r_c = toggling_inputs(
            amplitudes, t_total, sigma, a_max, arch.m_in, m_fine
        )
    elif arch.input_mode == "amplitudes":
        if arch.m_in != amplitudes.shape[1]:
            raise ValueError("amplitude-mode m_in must equal the pulse count")
        x = amplitudes / a_max
        r_c = control_rotations(amplitudes, t_total, sigma, a_max, m_fine)
    else:
        helper = PulseModel(t_total, amplitudes.shape[1], sigma, a_max, m_fine=arch.m_in)
        x = helper.waveforms(amplitudes) / a_max
        r_c = control_rotations(amplitudes, t_total, sigma, a_max, m_fine)
    return TrainingData(
        x=x,
        y=y,
        r_c=r_c,
        fingerprint=dataset_fingerprint(records),
        val_mask=record_split_mask(records, val_fraction),
    )


# ---------------------------------------------------------------------------
# forward / loss / training
# ---------------------------------------------------------------------------


def predict_batch(model: GrayboxModel, x: np.ndarray, r_c: np.ndarray) -> np.ndarray:
    """(B, m_in, d_in) inputs + (B, 3, 3) control rotations -> (B, 6, 3) tables."""
    arch = model.architecture
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[1:] != (arch.m_in, arch.d_in):
        raise ValueError(
            f"input shape {x.shape} does not match "
            f"(m_in, d_in)=({arch.m_in}, {arch.d_in})"
        )
    h_final, _ = _stack_forward(model, x)
    params = _heads_forward(model, h_final)
    pred, _ = _predict_from_heads(params, r_c)
    return pred


def loss_and_gradients(model: GrayboxModel, x, y, r_c):
    """Mean squared error over all 18 outputs and its weight gradients."""
    h_final, stack_cache = _stack_forward(model, x)
    params = _heads_forward(model, h_final)
    pred, pred_cache = _predict_from_heads(params, r_c)
    resid = pred - y
    loss = float(np.sum(resid**2) / resid.size)
    dpred = 2.0 * resid / resid.size
    head_grads, dh_final = _heads_backward(model, h_final, params, pred_cache, dpred)
    grads = _stack_backward(model, stack_cache, dh_final)
    grads.update(head_grads)
    return loss, grads


def _mse_per_record(model, x, y, r_c, batch: int = 512) -> np.ndarray:
    out = np.empty(x.shape[0])
    for start in range(0, x.shape[0], batch):
        sl = slice(start, start + batch)
        pred = predict_batch(model, x[sl], r_c[sl])
        out[sl] = np.mean((pred - y[sl]) ** 2, axis=(1, 2))
    return out


@dataclass(frozen=True)
class TrainingHyper:
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 200
    patience: int = 20
    seed: int = 0


@dataclass(frozen=True)
class TrainingHistory:
    train_curve: np.ndarray
    val_curve: np.ndarray
    best_epoch: int
    epochs_run: int


def train(model: GrayboxModel, data: TrainingData,
          hyper: TrainingHyper = TrainingHyper()) -> tuple[GrayboxModel, TrainingHistory]:
    """Adam descent on the batch MSE with early stopping on validation loss.

    Deterministic for a given (model, data, hyper): batch order comes from
    per-epoch counter-based streams and updates are single-threaded.  Weights
    of the best validation epoch are restored into the returned model, which
    is frozen read-only.  A non-finite loss aborts with diagnostics.
    """
    train_idx = np.nonzero(~data.val_mask)[0]
    val_idx = np.nonzero(data.val_mask)[0]
    if train_idx.size == 0 or val_idx.size == 0:
        raise ValueError("both training and validation splits must be non-empty")
    weights = {k: v.copy() for k, v in model.weights.items()}
    work = GrayboxModel(model.architecture, weights, dict(model.metadata))
    adam = {name: AdamState(lr=hyper.lr) for name in weights}
    train_curve, val_curve = [], []
    best_val = np.inf
    best_weights = {k: v.copy() for k, v in weights.items()}
    best_epoch = -1
    for epoch in range(hyper.epochs):
        order = np.random.default_rng([hyper.seed, epoch]).permutation(train_idx)
        sq_sum = 0.0
        for start in range(0, order.size, hyper.batch_size):
            batch = order[start : start + hyper.batch_size]
            loss, grads = loss_and_gradients(
                work, data.x[batch], data.y[batch], data.r_c[batch]
            )
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}, batch start {start}"
                )
            sq_sum += loss * batch.size
            for name in weights:
                weights[name] = adam_step(adam[name], weights[name], grads[name])
        train_curve.append(sq_sum / order.size)
        val_mse = float(np.mean(_mse_per_record(work, data.x[val_idx], data.y[val_idx],
                                                data.r_c[val_idx])))
        if not np.isfinite(val_mse):
            raise RuntimeError(f"non-finite validation loss at epoch {epoch}")
        val_curve.append(val_mse)
        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best_weights = {k: v.copy() for k, v in weights.items()}
        elif epoch - best_epoch >= hyper.patience:
            break
    metadata = dict(model.metadata)
    metadata.update(
        dataset_fingerprint=data.fingerprint,
        epochs_run=len(train_curve),
        best_epoch=best_epoch,
        best_val_mse=best_val,
        final_train_mse=train_curve[-1],
        lr=hyper.lr,
        batch_size=hyper.batch_size,
        patience=hyper.patience,
        train_seed=hyper.seed,
        n_train=int(train_idx.size),
        n_val=int(val_idx.size),
    )
    trained = GrayboxModel(model.architecture, best_weights, metadata).freeze()
    history = TrainingHistory(
        train_curve=np.array(train_curve),
        val_curve=np.array(val_curve),
        best_epoch=best_epoch,
        epochs_run=len(train_curve),
    )
    return trained, history


def evaluate(model: GrayboxModel, data: TrainingData) -> dict:
    """Per-record MSE summary for each split (violin-plot material)."""
    stats = {}
    for name, mask in (("train", ~data.val_mask), ("validation", data.val_mask)):
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            stats[name] = {"count": 0}
            continue
        mse = _mse_per_record(model, data.x[idx], data.y[idx], data.r_c[idx])
        mse.sort()   # stats exactly invariant under record order
        stats[name] = {
            "count": int(idx.size),
            "min": float(np.min(mse)),
            "median": float(np.median(mse)),
            "max": float(np.max(mse)),
            "mean": float(np.mean(mse)),
        }
    return stats


# ---------------------------------------------------------------------------
# single-pulse interface and optimization handle
# ---------------------------------------------------------------------------


def gb_forward(model: GrayboxModel, pulses: PulseSequence,
               m_fine: int = 3000) -> tuple[ExpectationTable, NoiseOperatorSet]:
    """Predicted expectation table and noise operators for one pulse sequence."""
    arch = model.architecture
    if arch.input_mode == "toggling":
        x_batch, r_c = toggling_inputs(
            pulses.amplitudes[None], pulses.t_total, pulses.sigma,
            pulses.a_max, arch.m_in, m_fine,
        )
        x = x_batch[0]
    else:
        if arch.input_mode == "amplitudes":
            if arch.m_in != pulses.n_pulses:
                raise ValueError("amplitude-mode m_in must equal the pulse count")
            x = pulses.amplitudes / pulses.a_max
        else:
            x = waveform_eval(pulses, TimeGrid(pulses.t_total, arch.m_in)) / pulses.a_max
        r_c = control_rotations(
            pulses.amplitudes[None], pulses.t_total, pulses.sigma, pulses.a_max, m_fine
        )
    h_final, _ = _stack_forward(model, x[None])
    params = _heads_forward(model, h_final)
    pred, _ = _predict_from_heads(params, r_c)
    return ExpectationTable(pred[0]), vo_matrices(params[0])


class GrayboxPulseModel(PulseModel):
    """Optimizer-facing handle: batched graybox predictions over amplitudes."""

    variant = "GB"

    def __init__(self, model: GrayboxModel, t_total: float, n_pulses: int = 5,
                 sigma: float | None = None, a_max: float = 100.0,
                 m_fine: int = 3000):
        super().__init__(t_total, n_pulses, sigma, a_max, m_fine)
        self.model = model
        arch = model.architecture
        if arch.input_mode in ("waveform", "toggling"):
            self._input_helper = PulseModel(t_total, n_pulses, sigma, a_max, m_fine=arch.m_in)
        elif arch.m_in != n_pulses:
            raise ValueError("amplitude-mode m_in must equal the pulse count")

    def predict_batch(self, amps_batch: np.ndarray) -> np.ndarray:
        amps_batch = np.asarray(amps_batch, dtype=float)
        arch = self.model.architecture
        if arch.input_mode == "toggling":
            x = np.empty((amps_batch.shape[0], arch.m_in, 5))
            x[..., :2] = self._input_helper.waveforms(amps_batch) / self.a_max
            f = self.waveforms(amps_batch)
            x[..., 2:], r_c = _toggling_channels(
                f, self.grid.dt, self.t_total, arch.m_in
            )
            return predict_batch(self.model, x, r_c)
        if arch.input_mode == "amplitudes":
            x = amps_batch / self.a_max
        else:
            x = self._input_helper.waveforms(amps_batch) / self.a_max
        f = self.waveforms(amps_batch)
        steps = su2_step_quats(f[..., 0], f[..., 1], np.zeros(f.shape[:2]), self.grid.dt)
        r_c = quat_rotation(quat_chain_product(steps))
        return predict_batch(self.model, x, r_c)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: GrayboxModel, path) -> None:
    """Write a self-describing JSON checkpoint (bit-exact round trip)."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "architecture": {
            "m_in": model.architecture.m_in,
            "layers": model.architecture.layers,
            "hidden": model.architecture.hidden,
            "head_params": model.architecture.head_params,
            "input_mode": model.architecture.input_mode,
        },
        "weights": {name: arr.tolist() for name, arr in model.weights.items()},
        "metadata": model.metadata,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> GrayboxModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version: {version!r}")
    arch = GrayboxArchitecture(**doc["architecture"])
    shapes = _weight_shapes(arch)
    weights = {}
    for name, shape in shapes.items():
        if name not in doc["weights"]:
            raise ValueError(f"checkpoint is missing weight tensor {name!r}")
        arr = np.asarray(doc["weights"][name], dtype=float)
        if arr.shape != shape:
            raise ValueError(f"weight {name!r} has shape {arr.shape}, expected {shape}")
        weights[name] = arr
    return GrayboxModel(arch, weights, doc.get("metadata", {})).freeze()
