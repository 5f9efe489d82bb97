"""Command-line orchestration: every experiment as a subcommand.

Each subcommand reads a config (JSON file or the literal "default"), runs the
corresponding pipeline, and writes versioned artifacts carrying the resolved
config so runs can be reproduced bit-identically.  Exit codes: 0 on success,
2 on configuration or input-file problems, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .control import (
    ClosedSystemModel,
    OpenSystemModel,
    TargetGate,
    optimize_pulses,
    standard_gates,
)
from .core import PulseSequence, TimeGrid, haar_unitary
from .graybox import (
    GrayboxArchitecture,
    GrayboxPulseModel,
    TrainingHyper,
    evaluate,
    init_model,
    load_checkpoint,
    prepare_training_data,
    save_checkpoint,
    train,
)
from .noise import NoiseConfig, corr4, empirical_correlator_check, empirical_moments
from .persist import (
    ConfigError,
    DatasetFormatError,
    load_config,
    read_dataset,
    read_report,
    write_csv,
    write_dataset,
    write_report,
)
from .simulator import SimConfig, coherence_scan, generate_dataset, simulate_with_vo
from .tomography import chi_from_table, chi_target, process_fidelity, vo_distance
from .whitebox import classify_regimes

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def _noise_config(cfg: dict, g: float | None = None) -> NoiseConfig:
    n = cfg["noise"]
    return NoiseConfig(
        g=float(n["g_mhz"] if g is None else g),
        gamma=float(n["gamma_mhz"]),
        omega=float(n["omega_mhz"]),
        seed=int(cfg["sim"]["seed"]),
    )


def _sim_config(cfg: dict, g: float | None = None) -> SimConfig:
    s = cfg["sim"]
    return SimConfig(
        grid=TimeGrid(float(s["T_us"]), int(s["steps"])),
        noise=_noise_config(cfg, g),
        n_realizations=int(s["realizations"]),
    )


def _pulse_args(cfg: dict) -> tuple:
    p = cfg["pulses"]
    sigma = p["sigma_us"]
    return (
        float(cfg["sim"]["T_us"]),
        int(p["n"]),
        float(sigma) if sigma is not None else None,
        float(p["a_max_mhz"]),
        int(cfg["sim"]["steps"]),
    )


def _make_model(kind: str, cfg: dict, gb_checkpoint=None, g: float | None = None):
    t_total, n_pulses, sigma, a_max, m_fine = _pulse_args(cfg)
    if kind == "cs":
        return ClosedSystemModel(t_total, n_pulses, sigma, a_max, m_fine)
    if kind == "os":
        return OpenSystemModel(_noise_config(cfg, g), t_total, n_pulses, sigma,
                               a_max, m_fine=m_fine)
    if kind == "gb":
        if gb_checkpoint is None:
            raise ConfigError("the gb model needs --gb-checkpoint")
        return GrayboxPulseModel(load_checkpoint(gb_checkpoint), t_total, n_pulses,
                                 sigma, a_max, m_fine)
    raise ConfigError(f"unknown model kind {kind!r} (expected cs, os, or gb)")


def _gate(name: str) -> TargetGate:
    gates = standard_gates()
    if name not in gates:
        raise ConfigError(f"unknown gate {name!r}; choose from {sorted(gates)}")
    return gates[name]


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated number list, got {text!r}") from exc


def _noisy_fidelity(pulses: PulseSequence, sim_cfg: SimConfig, gate_matrix):
    """Monte-Carlo evaluation of a controller: process fidelity and V_O drift."""
    table, ops = simulate_with_vo(pulses, sim_cfg)
    fid = process_fidelity(chi_from_table(table), chi_target(gate_matrix))
    return fid, vo_distance(ops), table


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_coherence_scan(args) -> int:
    cfg = load_config(args.config)
    gamma = cfg["noise"]["gamma_mhz"]
    ratios = _float_list(args.g_over_gamma)
    g_values = np.array(ratios) * gamma
    coherence = coherence_scan(g_values, _sim_config(cfg))
    rows = [
        [f"{g:.10g}", f"{r:.10g}", f"{c:.17g}"]
        for g, r, c in zip(g_values, ratios, coherence)
    ]
    write_csv(args.out, ["g_mhz", "g_over_gamma", "coherence"], rows,
              kind="coherence-scan", config=cfg)
    print(f"coherence-scan: {len(rows)} points -> {args.out}")
    return EXIT_OK


def _cmd_regimes(args) -> int:
    cfg = load_config(args.config)
    bounds = classify_regimes(
        _noise_config(cfg), float(cfg["sim"]["T_us"]), epsilon=args.epsilon
    )
    payload = {
        "epsilon": bounds.epsilon,
        "gamma_mhz": cfg["noise"]["gamma_mhz"],
        "omega_mhz": cfg["noise"]["omega_mhz"],
        "T_us": cfg["sim"]["T_us"],
        "boundaries_over_gamma": {
            "weak_end": bounds.g_weak_end,
            "intermediate_end": bounds.g_intermediate_end,
            "strong_end": bounds.g_strong_end,
        },
        "raw_crossings_over_gamma": {
            "eps": bounds.eps_crossing,
            "d2": bounds.d2_crossing,
            "d4": bounds.d4_crossing,
        },
    }
    write_report(args.out, "regimes", payload, cfg)
    print(
        "regimes: weak end {:.4f}, intermediate end {:.4f}, strong end {:.4f} "
        "(units of gamma) -> {}".format(
            bounds.g_weak_end, bounds.g_intermediate_end, bounds.g_strong_end, args.out
        )
    )
    return EXIT_OK


def _cmd_correlator_check(args) -> int:
    cfg = load_config(args.config)
    noise = _noise_config(cfg)
    grid = TimeGrid(float(cfg["sim"]["T_us"]), int(cfg["sim"]["steps"]))
    lags = [int(v) for v in _float_list(args.lags)]
    two = empirical_correlator_check(noise, grid, lags, args.n_traj)
    # a modulated process keeps a random phase per trajectory; averaging it
    # out halves the 2-point function and scales the 4-point one by 1/8
    target2 = 1.0 if noise.omega == 0 else 0.5
    target4 = 1.0 if noise.omega == 0 else 0.125
    m = grid.n_steps
    quads = [
        (m - 1, 2 * m // 3, m // 3, 0),
        (3 * m // 4, m // 2, m // 4, 0),
        (m // 2, m // 3, m // 6, 0),
    ]
    mean4, se4 = empirical_moments(noise, grid, quads, args.n_traj)
    t = grid.times
    analytic4 = np.array([corr4(t[a], t[b], t[c], t[d], noise) for a, b, c, d in quads])
    z2 = np.abs(two["empirical"] - target2 * two["analytic"]) / np.maximum(
        two["std_error"], 1e-30
    )
    z4 = np.abs(mean4 - target4 * analytic4) / np.maximum(se4, 1e-30)
    payload = {
        "n_traj": args.n_traj,
        "expected_ratio_2pt": target2,
        "expected_ratio_4pt": target4,
        "two_point": {
            "lag_steps": two["lag_steps"],
            "analytic": two["analytic"],
            "empirical": two["empirical"],
            "std_error": two["std_error"],
            "ratio": two["ratio"],
            "max_z": float(z2.max()),
        },
        "four_point": {
            "index_quadruples": [list(q) for q in quads],
            "analytic": analytic4,
            "empirical": mean4,
            "std_error": se4,
            "max_z": float(z4.max()),
        },
    }
    write_report(args.out, "correlator-check", payload, cfg)
    print(
        f"correlator-check: max |z| = {z2.max():.2f} (2-point), "
        f"{z4.max():.2f} (4-point) over {args.n_traj} trajectories -> {args.out}"
    )
    return EXIT_OK


def _cmd_dataset(args) -> int:
    cfg = load_config(args.config)
    if args.n < 1:
        raise ConfigError("--n must be at least 1")
    records = generate_dataset(
        args.n,
        _sim_config(cfg),
        n_pulses=int(cfg["pulses"]["n"]),
        a_max=float(cfg["pulses"]["a_max_mhz"]),
    )
    write_dataset(args.out, records, cfg)
    print(f"dataset: {len(records)} records -> {args.out}")
    return EXIT_OK


def _arch_from_config(cfg: dict) -> GrayboxArchitecture:
    g = cfg["graybox"]
    return GrayboxArchitecture(
        m_in=int(g["m_in"]), layers=int(g["layers"]), hidden=int(g["hidden"]),
        input_mode=str(g["input_mode"]),
    )


def _prepared_data(cfg: dict, records):
    t_total, _, sigma, a_max, m_fine = _pulse_args(cfg)
    return prepare_training_data(
        records,
        _arch_from_config(cfg),
        t_total,
        sigma=sigma,
        a_max=a_max,
        val_fraction=1.0 - float(cfg["graybox"]["split"]),
        m_fine=m_fine,
    )


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    records, _ = read_dataset(args.dataset)
    data = _prepared_data(cfg, records)
    g = cfg["graybox"]
    model = init_model(_arch_from_config(cfg), seed=int(cfg["sim"]["seed"]))
    trained, history = train(
        model,
        data,
        TrainingHyper(
            lr=float(g["lr"]),
            batch_size=int(g["batch"]),
            epochs=int(g["epochs"]),
            seed=int(cfg["sim"]["seed"]),
        ),
    )
    trained.metadata.update(
        config=cfg,
        train_curve=list(map(float, history.train_curve)),
        val_curve=list(map(float, history.val_curve)),
    )
    save_checkpoint(trained, args.out)
    print(
        f"train: {history.epochs_run} epochs, best validation MSE "
        f"{trained.metadata['best_val_mse']:.4g} (epoch {history.best_epoch}) "
        f"-> {args.out}"
    )
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    records, _ = read_dataset(args.dataset)
    model = load_checkpoint(args.model)
    data = _prepared_data(cfg, records)
    stats = evaluate(model, data)
    payload = {
        "stats": stats,
        "dataset_fingerprint": data.fingerprint,
        "model_dataset_fingerprint": model.metadata.get("dataset_fingerprint"),
        "same_dataset": model.metadata.get("dataset_fingerprint") == data.fingerprint,
    }
    write_report(args.out, "evaluate", payload, cfg)
    val = stats["validation"]
    if val["count"]:
        print(
            "evaluate: validation MSE min {:.4g} / median {:.4g} / max {:.4g} -> {}".format(
                val["min"], val["median"], val["max"], args.out
            )
        )
    else:
        print(f"evaluate: validation split is empty -> {args.out}")
    return EXIT_OK


def _control_params(cfg: dict, args) -> tuple[int, int, float | None]:
    c = cfg["control"]
    iters = args.iters if args.iters is not None else int(c["iters"])
    restarts = args.restarts if args.restarts is not None else int(c["restarts"])
    fd = c["fd_step"]
    return iters, restarts, float(fd) if fd is not None else None


def _cmd_optimize(args) -> int:
    cfg = load_config(args.config)
    gate = _gate(args.gate)
    model = _make_model(args.model, cfg, args.gb_checkpoint)
    iters, restarts, fd_step = _control_params(cfg, args)
    result = optimize_pulses(
        model, gate, iters=iters, restarts=restarts,
        seed=int(cfg["sim"]["seed"]), fd_step=fd_step,
    )
    if not np.isfinite(result.cost):
        raise RuntimeError("optimization produced a non-finite cost")
    payload = {
        "gate": gate.name,
        "model": model.variant,
        "cost": result.cost,
        "amplitudes": result.pulses.amplitudes,
        "restart_index": result.restart_index,
        "restart_costs": result.restart_costs,
        "trace": result.trace,
        "iters": iters,
        "restarts": restarts,
    }
    write_report(args.out, "optimize", payload, cfg)
    print(
        f"optimize: {gate.name} via {model.variant}, cost {result.cost:.4g} "
        f"(best of {restarts} restarts) -> {args.out}"
    )
    return EXIT_OK


def _cmd_tomo(args) -> int:
    cfg = load_config(args.config)
    t_total, n_pulses, sigma, a_max, _ = _pulse_args(cfg)
    if args.pulses is not None:
        doc = read_report(args.pulses)
        if "amplitudes" not in doc:
            raise ConfigError(f"{args.pulses} does not contain pulse amplitudes")
        amps = np.asarray(doc["amplitudes"], dtype=float)
    else:
        amps = np.zeros((n_pulses, 2))
    pulses = PulseSequence(amps, t_total, sigma=sigma, a_max=a_max)
    table, ops = simulate_with_vo(pulses, _sim_config(cfg))
    chi = chi_from_table(table)
    payload = {
        "table": table.values,
        "chi_real": chi.real,
        "chi_imag": chi.imag,
        "vo_distance": vo_distance(ops),
        "amplitudes": amps,
    }
    if args.gate is not None:
        gate = _gate(args.gate)
        payload["gate"] = gate.name
        payload["fidelity"] = process_fidelity(chi, chi_target(gate.matrix))
    write_report(args.out, "tomo", payload, cfg)
    line = f"tomo: vo_distance {payload['vo_distance']:.4g}"
    if "fidelity" in payload:
        line += f", fidelity({payload['gate']}) = {payload['fidelity']:.4f}"
    print(line + f" -> {args.out}")
    return EXIT_OK


def _cmd_fig3(args) -> int:
    cfg = load_config(args.config)
    gamma = float(cfg["noise"]["gamma_mhz"])
    gate_names = [tok.strip() for tok in args.gates.split(",") if tok.strip()]
    gates = [_gate(name) for name in gate_names]
    ratios = _float_list(args.g_over_gamma)
    kinds = ["cs", "os"] + (["gb"] if args.gb_checkpoint else [])
    iters, restarts, fd_step = _control_params(cfg, args)
    rows = []
    for gate in gates:
        for ratio in ratios:
            g = ratio * gamma
            sim_cfg = _sim_config(cfg, g)
            for kind in kinds:
                model = _make_model(kind, cfg, args.gb_checkpoint, g)
                result = optimize_pulses(
                    model, gate, iters=iters, restarts=restarts,
                    seed=int(cfg["sim"]["seed"]), fd_step=fd_step,
                )
                fid, _, _ = _noisy_fidelity(result.pulses, sim_cfg, gate.matrix)
                rows.append([gate.name, f"{ratio:.10g}", model.variant, f"{fid:.6f}"])
                print(f"fig3: {gate.name} g/gamma={ratio:g} {model.variant} "
                      f"fidelity {fid:.4f}")
    write_csv(args.out, ["gate", "g_over_gamma", "model", "fidelity"], rows,
              kind="fig3", config=cfg)
    print(f"fig3: {len(rows)} rows -> {args.out}")
    return EXIT_OK


def _cmd_fig4(args) -> int:
    cfg = load_config(args.config)
    model = load_checkpoint(args.gb_checkpoint)
    records, _ = read_dataset(args.dataset)
    data = _prepared_data(cfg, records)
    stats = evaluate(model, data)
    mse_rows = [
        [split, s["count"], f"{s['min']:.6g}", f"{s['median']:.6g}",
         f"{s['max']:.6g}", f"{s['mean']:.6g}"]
        for split, s in stats.items()
    ]
    mse_path = f"{args.out_prefix}_mse.csv"
    write_csv(mse_path, ["split", "count", "min", "median", "max", "mean"],
              mse_rows, kind="fig4-mse", config=cfg)

    t_total, n_pulses, sigma, a_max, m_fine = _pulse_args(cfg)
    gb = GrayboxPulseModel(model, t_total, n_pulses, sigma, a_max, m_fine)
    sim_cfg = _sim_config(cfg)
    iters, restarts, fd_step = _control_params(cfg, args)
    fid_rows = []
    for k in range(args.n_unitaries):
        gate = TargetGate(f"haar-{k}", haar_unitary(k))
        result = optimize_pulses(
            gb, gate, iters=iters, restarts=restarts,
            seed=int(cfg["sim"]["seed"]), fd_step=fd_step,
        )
        fid, dist, _ = _noisy_fidelity(result.pulses, sim_cfg, gate.matrix)
        fid_rows.append([k, f"{fid:.6f}", f"{dist:.6f}"])
        print(f"fig4: unitary {k} fidelity {fid:.4f} vo_distance {dist:.4f}")
    fid_path = f"{args.out_prefix}_fidelity.csv"
    write_csv(fid_path, ["unitary_index", "fidelity", "vo_distance"], fid_rows,
              kind="fig4-fidelity", config=cfg)
    print(f"fig4: {len(mse_rows)} MSE rows -> {mse_path}; "
          f"{len(fid_rows)} unitary rows -> {fid_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qgbc",
        description="Driven-qubit telegraph-noise experiments: simulate, model, control.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default="default",
                       help="JSON config file, or 'default' for built-ins")
        p.set_defaults(func=func)
        return p

    p = add("coherence-scan", _cmd_coherence_scan,
            "free-dephasing coherence versus coupling strength")
    p.add_argument("--g-over-gamma", default="0,0.5,1,1.5,2,3,4,5,6,8,10")
    p.add_argument("--out", default="coherence_scan.csv")

    p = add("regimes", _cmd_regimes, "coupling-regime boundaries from Dyson truncations")
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--out", default="regimes.json")

    p = add("correlator-check", _cmd_correlator_check,
            "empirical telegraph correlators against the analytic forms")
    p.add_argument("--n-traj", type=int, default=10000)
    p.add_argument("--lags", default="1,10,100,500,1000")
    p.add_argument("--out", default="correlator_check.json")

    p = add("dataset", _cmd_dataset, "generate a supervised pulse->expectations dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", default="dataset.jsonl")

    p = add("train", _cmd_train, "train the recurrent surrogate on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default="model.json")

    p = add("evaluate", _cmd_evaluate, "per-split MSE statistics of a trained model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default="evaluate.json")

    p = add("optimize", _cmd_optimize, "synthesize pulses for a target gate")
    p.add_argument("--gate", required=True)
    p.add_argument("--model", choices=["cs", "os", "gb"], default="cs")
    p.add_argument("--gb-checkpoint")
    p.add_argument("--iters", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--out", default="optimize.json")

    p = add("tomo", _cmd_tomo, "process tomography of a pulse sequence under noise")
    p.add_argument("--pulses", help="optimize report supplying the amplitudes")
    p.add_argument("--gate", help="target gate for a fidelity readout")
    p.add_argument("--out", default="tomo.json")

    p = add("fig3", _cmd_fig3, "controller fidelity versus coupling strength (CSV)")
    p.add_argument("--gates", default="I,X,Y,Z,H,Rx(pi/4)")
    p.add_argument("--g-over-gamma", default="2,10,20,30")
    p.add_argument("--gb-checkpoint")
    p.add_argument("--iters", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--out", default="fig3.csv")

    p = add("fig4", _cmd_fig4, "surrogate MSE and Haar-target control summary (CSV)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--gb-checkpoint", required=True)
    p.add_argument("--n-unitaries", type=int, default=20)
    p.add_argument("--iters", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--out-prefix", default="fig4")

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    # LinAlgError subclasses ValueError, so numerical failures go first
    except (RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DatasetFormatError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
