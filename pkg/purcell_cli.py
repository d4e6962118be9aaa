#!/usr/bin/env python3
import argparse
import json
import sys
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import structlog
from rich.console import Console
from rich.table import Table

from acceptance import BREATHING_MODE_GHZ, generate_report, run_acceptance_suite
from cavity_optics import (
    C_LINE_THZ,
    CAVITY_PRESETS,
    CoupledOpticalSystem,
    Emitter,
    OpticalCavity,
    fit_reflectance,
    reflectance,
)
from coupling_regime_map import COUPLING_REGIME_BEHAVIOR
from datasets import (
    DatasetKind,
    PlotSeries,
    decay_curve_series,
    emit_plot_data,
    histogram_series,
    load_dataset,
)
from errors import FitFailureError, PurcellError
from fit_core import fit_angle_amplitude, fit_exponential_decay, scan_peaks
from logging_setup import configure_logging
from measurement_sim import PulseSequence, RateModel, build_decay_curve, extract_population, simulate_histogram
from optomechanics import fit_backaction_pair, lasing_threshold_power
from run_config import RunConfig, derive_seed, load_run_config
from siv_model import calibrate_conversion
from spin_phonon import (
    TUNING_LINEWIDTHS_MHZ,
    ModeTable,
    broadband_decay_spectrum,
    damping_q_for_linewidth,
    reference_grid,
    strain_quenching_factor,
)
from thermometry import (
    SpinState,
    bose_occupancy,
    orbital_ground_fraction,
    spin_steady_populations,
    temperature_from_decay_fit,
    temperature_from_saturation,
    ThermalState,
)

logger = structlog.get_logger(__name__)
console = Console(stderr=True)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_FIT = 4


class NonConvergedError(FitFailureError):
    """A fit report came back non-converged where the command needs convergence"""


class UsageError(Exception):
    """Argument combination argparse cannot express"""


def write_json(document: Dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def save_output(summary: Dict, title: str):
    """Print a result summary"""
    table = Table(title=title, show_header=True)
    table.add_column("quantity")
    table.add_column("value", justify="right")
    for k, v in summary.items():
        table.add_row(k, f"{v:.6g}" if isinstance(v, float) else str(v))
    console.print(table)


def log_run(config: RunConfig, out_dir: Path, command: str, argv: List[str], outputs: List[Path], summary: Dict, exit_code: int):
    """Markdown run log kept next to, not inside, the output directory"""
    log_dir = Path(config.log_dir)
    if not log_dir.is_absolute():
        log_dir = out_dir.resolve().parent / log_dir
    log_dir.mkdir(parents=True, exist_ok=True)
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
    path = log_dir / f"{timestamp}_{command}.md"
    lines = [
        f"# Run log: {command}\n",
        f"Time: {datetime.now().isoformat()}",
        f"Seed: {config.seed}",
        f"Exit code: {exit_code}\n",
        "## Arguments\n```",
        " ".join(argv),
        "```\n",
        "## Outputs\n",
        *[f"- {p}" for p in outputs],
        "\n## Summary\n",
        *[f"- {k}: {v:.6g}" if isinstance(v, float) else f"- {k}: {v}" for k, v in summary.items()],
    ]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return path


def _require_converged(report, what: str):
    if not report.converged:
        raise NonConvergedError(
            f"{what} did not converge ({', '.join(report.flags) or 'no flags'})",
            residual_norm=report.residual_norm,
        )


def cmd_calibrate(args, config: RunConfig, out: Path):
    dataset = load_dataset(args.lines, DatasetKind.FOUR_LINE)
    fields, lines = dataset.payload
    estimate = calibrate_conversion(fields, lines)
    result = {
        "conversion_ghz_per_kg": estimate.slope,
        "sigma_ghz_per_kg": estimate.sigma,
        "n_fields": int(len(fields)),
    }
    return result, [write_json(result, out / "calibration.json")]


def _system_from_args(args) -> CoupledOpticalSystem:
    if args.preset:
        preset = CAVITY_PRESETS[args.preset]
        cavity = OpticalCavity.from_rates(
            args.omega_o if args.omega_o is not None else preset.omega_o,
            args.kappa if args.kappa is not None else preset.kappa_total,
            args.kappa_e if args.kappa_e is not None else preset.kappa_e,
        )
    else:
        cavity = OpticalCavity.from_rates(
            args.omega_o if args.omega_o is not None else C_LINE_THZ,
            args.kappa if args.kappa is not None else 15.0,
            args.kappa_e if args.kappa_e is not None else 4.0,
        )
    return CoupledOpticalSystem(cavity=cavity, emitter=Emitter(args.omega_a, args.gamma_o), g_so=args.g_so)


def cmd_reflectance(args, config: RunConfig, out: Path):
    system = _system_from_args(args)
    probe = system.cavity.omega_o + np.linspace(-args.span_ghz, args.span_ghz, args.points) / 1000.0
    values = reflectance(system, probe)
    path = emit_plot_data(
        [PlotSeries("reflectance", {"freq_thz": probe, "reflectance": values})],
        out / f"reflectance.{args.format}",
        args.format,
    )
    result = {
        "c_o": system.cooperativity,
        "quality_factor": system.cavity.quality_factor,
        "min_reflectance": float(np.min(values)),
        "max_reflectance": float(np.max(values)),
    }
    return result, [path]


def cmd_fit_reflectance(args, config: RunConfig, out: Path):
    dataset = load_dataset(args.spectrum, DatasetKind.SPECTRUM)
    init = _system_from_args(args)
    fit = fit_reflectance(dataset.payload, init, args.regime, tolerances=config.fit_tolerances())
    result = fit.to_dict()
    summary = {k: v for k, v in result.items() if isinstance(v, float)}
    return summary, [write_json(result, out / "reflectance_fit.json")]


def _damping_q(args, table: ModeTable) -> Optional[float]:
    """Damping Q from --q-damp, or from a tuning preset applied to the mode nearest --damping-ref-ghz"""
    if args.damping is None:
        return args.q_damp
    if args.q_damp is not None:
        raise UsageError("--damping and --q-damp are mutually exclusive")
    reference = min(table, key=lambda mode: abs(mode.omega_q - args.damping_ref_ghz))
    return damping_q_for_linewidth(reference.omega_q, TUNING_LINEWIDTHS_MHZ[args.damping], reference.q_factor)


def cmd_purcell_scan(args, config: RunConfig, out: Path):
    if args.grid_start is not None:
        grid = args.grid_start + args.grid_step * np.arange(int(round((args.grid_stop - args.grid_start) / args.grid_step)) + 1)
    else:
        grid = reference_grid()
    quench = 1.0
    if args.delta_gs is not None:
        quench = strain_quenching_factor(args.delta_gs, config.siv.lambda_so_gs)
    series, peaks_doc, summary = [], {}, {}
    for path in args.modes:
        table = load_dataset(path, DatasetKind.MODE_TABLE).payload
        q_damp = _damping_q(args, table)
        spectrum = broadband_decay_spectrum(table, grid, quench=quench, q_damp=q_damp, workers=args.workers)
        label = Path(path).stem
        series.append(PlotSeries(label, {"freq_ghz": spectrum.abscissa, "gamma_khz": spectrum.values}))
        peak = int(np.argmax(spectrum.values))
        summary[f"{label}_max_khz"] = float(spectrum.values[peak])
        summary[f"{label}_max_at_ghz"] = float(spectrum.abscissa[peak])
        if args.prominence is not None:
            peaks = scan_peaks(spectrum, args.prominence, args.min_separation, tolerances=config.fit_tolerances())
            peaks_doc[label] = [p.to_dict() for p in peaks]
    outputs = [emit_plot_data(series, out / f"purcell_scan.{args.format}", args.format, {"quench": repr(quench)})]
    if args.prominence is not None:
        outputs.append(write_json(peaks_doc, out / "purcell_peaks.json"))
    return summary, outputs


def cmd_t1_fit(args, config: RunConfig, out: Path):
    curve = load_dataset(args.curve, DatasetKind.DECAY_CURVE).payload
    report = fit_exponential_decay(curve, tolerances=config.fit_tolerances())
    result = report.to_dict()
    _require_converged(report, "decay fit")
    if args.omega_ghz is not None:
        result["temperature_k"] = temperature_from_decay_fit(
            report, args.omega_ghz, args.addressed, constants=config.physical_constants()
        )
    path = write_json(result, out / "t1_fit.json")
    summary = {"gamma_s_khz": report.value("gamma_khz"), "sigma_khz": report.sigma("gamma_khz"), "iterations": report.iterations}
    return summary, [path]


def _rate_model(args) -> RateModel:
    return RateModel(
        pump_rate=args.pump_rate,
        gamma_s=args.gamma_s,
        p_thermal_up=args.p_thermal_up,
        detect_rate_max=args.detect_rate,
        background=args.background,
        init_fidelity=args.init_fidelity,
        addressed_state=SpinState(args.addressed),
    )


def cmd_simulate_histogram(args, config: RunConfig, out: Path):
    seq = PulseSequence(
        repump_duration=args.repump_us,
        pump_duration=args.pump_us,
        wait_tau=args.tau_us,
        probe_duration=args.probe_us,
        bin_width=args.bin_width_ns,
        repetitions=args.repetitions,
    )
    model = _rate_model(args)
    hist = simulate_histogram(seq, model, derive_seed(config.seed, "simulate-histogram"), analytic=args.analytic)
    estimate = extract_population(hist, args.window_ns)
    hist_series, hist_meta = histogram_series(hist)
    outputs = [emit_plot_data([hist_series], out / "histogram.csv", "csv", hist_meta)]
    summary = {"population": estimate.population, "sigma": estimate.sigma, "effective_tau_us": hist.effective_tau_us}
    if args.decay_taus:
        curve = build_decay_curve(
            seq, args.decay_taus, model, derive_seed(config.seed, "simulate-histogram:decay"),
            window=args.window_ns, analytic=args.analytic,
        )
        outputs.append(emit_plot_data([decay_curve_series(curve)], out / "decay_curve.csv", "csv"))
        summary["decay_points"] = len(curve)
    return summary, outputs


def cmd_thermometry(args, config: RunConfig, out: Path):
    constants = config.physical_constants()
    result: Dict = {"omega_ghz": args.omega_ghz}
    if args.temp_k is not None:
        p_up, p_down = spin_steady_populations(ThermalState(args.temp_k, args.omega_ghz), constants)
        result.update({
            "temperature_k": args.temp_k,
            "p_up": p_up,
            "p_down": p_down,
            "n_th": bose_occupancy(args.omega_ghz, args.temp_k, constants),
            "n_th_12ghz": bose_occupancy(12.06, args.temp_k, constants),
        })
    if args.p_saturation is not None:
        temperature = temperature_from_saturation(args.p_saturation, args.omega_ghz, constants)
        result.update({
            "p_saturation": args.p_saturation,
            "temperature_k": temperature,
            "n_th_12ghz": bose_occupancy(12.06, temperature, constants),
        })
    if "temperature_k" not in result:
        raise UsageError("thermometry needs --temp-k or --p-saturation")
    if args.delta_gs is not None:
        result["orbital_ground_fraction"] = orbital_ground_fraction(args.delta_gs, result["temperature_k"], constants)
    summary = {k: v for k, v in result.items() if isinstance(v, float)}
    return summary, [write_json(result, out / "thermometry.json")]


def cmd_backaction(args, config: RunConfig, out: Path):
    red = load_dataset(args.red, DatasetKind.SIDEBAND_SERIES).payload
    blue = load_dataset(args.blue, DatasetKind.SIDEBAND_SERIES).payload
    shared = fit_backaction_pair(red, blue, shared_slope=True)
    independent = fit_backaction_pair(red, blue, shared_slope=False)
    result = {
        "shared_slope": shared.to_dict(),
        "independent_slopes": independent.to_dict(),
        "lasing_threshold_uw": lasing_threshold_power(shared),
    }
    summary = {
        "kappa_intrinsic_khz": shared.kappa_intrinsic,
        "slope_khz_per_uw": shared.slope,
        "lasing_threshold_uw": result["lasing_threshold_uw"],
    }
    return summary, [write_json(result, out / "backaction.json")]


def cmd_angle_fit(args, config: RunConfig, out: Path):
    theta, gamma, sigma = load_dataset(args.points, DatasetKind.ANGLE_SERIES).payload
    estimate = fit_angle_amplitude(theta, gamma, sigma)
    result = {"amplitude_khz": estimate.slope, "sigma_khz": estimate.sigma, "n_angles": int(len(theta))}
    return result, [write_json(result, out / "angle_fit.json")]


class AcceptanceFailed(PurcellError):
    """One or more acceptance criteria failed"""


def cmd_repro(args, config: RunConfig, out: Path):
    results = run_acceptance_suite(config.seed)
    report_path = out / "acceptance_report.md"
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(generate_report(results, config.seed), encoding="utf-8")
    document = {
        "seed": config.seed,
        "criteria": [
            {"number": r.number, "name": r.name, "passed": r.passed, "measured": r.measured, "reason": r.reason}
            for r in results
        ],
    }
    outputs = [report_path, write_json(document, out / "acceptance.json")]
    summary = {f"{r.number:02d} {r.name}": "PASS" if r.passed else "FAIL" for r in results}
    failed = [r.number for r in results if not r.passed]
    if failed:
        save_output(summary, "repro")
        raise AcceptanceFailed(f"acceptance criteria failed: {failed}")
    return summary, outputs


def _add_system_arguments(p: argparse.ArgumentParser):
    p.add_argument("--preset", choices=sorted(CAVITY_PRESETS), help="Named cavity state")
    p.add_argument("--omega-o", type=float, help="Cavity frequency (THz)")
    p.add_argument("--omega-a", type=float, default=C_LINE_THZ, help="Emitter frequency (THz)")
    p.add_argument("--kappa", type=float, help="Total cavity loss rate (GHz)")
    p.add_argument("--kappa-e", type=float, help="Extrinsic loss rate (GHz)")
    p.add_argument("--g-so", type=float, default=3.6, help="Emitter-photon coupling (GHz)")
    p.add_argument("--gamma-o", type=float, default=0.11, help="Emitter linewidth (GHz)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="purcell", description="Acoustic Purcell toolkit")
    parser.add_argument("--config", help="Run configuration JSON (else $PURCELL_CONFIG)")
    parser.add_argument("--seed", type=int, help="Global seed override")
    parser.add_argument("--out", help="Output directory override")
    parser.add_argument("--format", choices=["csv", "json"], default="csv", help="Plot-data format")
    parser.add_argument("--log-level", default="WARNING", help="Log level")
    parser.add_argument("--json-logs", action="store_true", help="Emit JSON log lines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="Four-line CSV to conversion constant")
    p.add_argument("--lines", required=True, help="Four-line CSV")
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("reflectance", help="Forward reflection spectrum")
    _add_system_arguments(p)
    p.add_argument("--span-ghz", type=float, default=40.0, help="Half span around the cavity (GHz)")
    p.add_argument("--points", type=int, default=401)
    p.set_defaults(handler=cmd_reflectance)

    p = sub.add_parser("fit-reflectance", help="Fit a reflection spectrum")
    _add_system_arguments(p)
    p.add_argument("--spectrum", required=True, help="Spectrum CSV (freq_thz, reflectance[, sigma])")
    p.add_argument("--regime", choices=sorted(COUPLING_REGIME_BEHAVIOR), default="under")
    p.set_defaults(handler=cmd_fit_reflectance)

    p = sub.add_parser("purcell-scan", help="Mode tables to broadband decay spectra")
    p.add_argument("--modes", nargs="+", required=True, help="One or more mode-table CSVs")
    p.add_argument("--grid-start", type=float, help="GHz (default: reference grid)")
    p.add_argument("--grid-stop", type=float, default=28.0)
    p.add_argument("--grid-step", type=float, default=0.01)
    p.add_argument("--q-damp", type=float, help="Phenomenological damping Q")
    p.add_argument(
        "--damping",
        choices=sorted(TUNING_LINEWIDTHS_MHZ),
        help="Damping Q that broadens the reference mode to the linewidth seen after this tuning step",
    )
    p.add_argument("--damping-ref-ghz", type=float, default=BREATHING_MODE_GHZ, help="Reference mode for --damping")
    p.add_argument("--delta-gs", type=float, help="Ground orbital splitting (GHz) for strain quenching")
    p.add_argument("--prominence", type=float, help="Also scan peaks above median + prominence (kHz)")
    p.add_argument("--min-separation", type=float, default=0.05, help="GHz")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_purcell_scan)

    p = sub.add_parser("t1-fit", help="Decay-curve CSV to gamma_s")
    p.add_argument("--curve", required=True)
    p.add_argument("--omega-ghz", type=float, help="Spin frequency; adds a temperature estimate")
    p.add_argument("--addressed", choices=[s.value for s in SpinState], default="down")
    p.set_defaults(handler=cmd_t1_fit)

    p = sub.add_parser("simulate-histogram", help="Pump-probe photon-count histogram")
    p.add_argument("--tau-us", type=float, default=50.0)
    p.add_argument("--repump-us", type=float, default=20.0)
    p.add_argument("--pump-us", type=float, default=50.0)
    p.add_argument("--probe-us", type=float, default=50.0)
    p.add_argument("--bin-width-ns", type=float, default=100.0)
    p.add_argument("--repetitions", type=int, default=100_000)
    p.add_argument("--pump-rate", type=float, default=2.0, help="1/us")
    p.add_argument("--gamma-s", type=float, default=10.0, help="kHz")
    p.add_argument("--p-thermal-up", type=float, default=0.0656)
    p.add_argument("--detect-rate", type=float, default=0.5, help="Counts/us at unit population")
    p.add_argument("--background", type=float, default=0.01, help="Counts/us")
    p.add_argument("--init-fidelity", type=float, default=0.95)
    p.add_argument("--addressed", choices=[s.value for s in SpinState], default="down")
    p.add_argument("--window-ns", type=float, default=1000.0)
    p.add_argument("--decay-taus", type=float, nargs="*", help="Also build a decay curve at these waits (us)")
    p.add_argument("--analytic", action="store_true", help="Expected counts instead of Poisson draws")
    p.set_defaults(handler=cmd_simulate_histogram)

    p = sub.add_parser("thermometry", help="Thermal populations and temperatures")
    p.add_argument("--omega-ghz", type=float, required=True)
    p.add_argument("--temp-k", type=float)
    p.add_argument("--p-saturation", type=float, help="Saturated up population")
    p.add_argument("--delta-gs", type=float, help="Also report the lower-orbital fraction")
    p.set_defaults(handler=cmd_thermometry)

    p = sub.add_parser("backaction", help="Joint red/blue sideband linewidth fit")
    p.add_argument("--red", required=True)
    p.add_argument("--blue", required=True)
    p.set_defaults(handler=cmd_backaction)

    p = sub.add_parser("angle-fit", help="Fit Gamma = A sin^2(theta)")
    p.add_argument("--points", required=True, help="Angle CSV (theta_deg, gamma_khz[, sigma_khz])")
    p.set_defaults(handler=cmd_angle_fit)

    p = sub.add_parser("repro", help="Run the acceptance suite")
    p.set_defaults(handler=cmd_repro)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    configure_logging(args.log_level, args.json_logs)

    try:
        config = load_run_config(args.config)
    except PurcellError as e:
        console.print(f"[red]Error:[/red] {e}")
        return EXIT_DATA
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    out = Path(args.out or config.output_dir)

    handler: Callable = args.handler
    logger.info("command_started", command=args.command, seed=config.seed, out=str(out))
    summary: Dict = {}
    outputs: List[Path] = []
    try:
        summary, outputs = handler(args, config, out)
        exit_code = EXIT_OK
    except UsageError as e:
        console.print(f"[red]Usage error:[/red] {e}")
        summary = {"error": str(e)}
        exit_code = EXIT_USAGE
    except FitFailureError as e:
        console.print(f"[red]Fit failure:[/red] {e}")
        summary = {"error": str(e)}
        exit_code = EXIT_FIT
    except AcceptanceFailed as e:
        console.print(f"[red]Acceptance failed:[/red] {e}")
        summary = {"error": str(e)}
        exit_code = EXIT_FIT
    except (PurcellError, OSError) as e:
        console.print(f"[red]Error:[/red] {e}")
        summary = {"error": str(e)}
        exit_code = EXIT_DATA
    else:
        save_output(summary, args.command)
    log_run(config, out, args.command, argv, outputs, summary, exit_code)
    logger.info("command_finished", command=args.command, exit_code=exit_code)
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
