"""Command-line front end: one subcommand per dataset plus the trace pipeline.

Exit codes: 0 success, 2 configuration error, 3 numerical error, 4 I/O error.
Set ``PONDEROMOTIVE_LOG`` (e.g. ``DEBUG``) for verbose logging on stderr.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .core_model import TWO_PI, ParameterError, PoleError, gain
from .detection import detected_relative, detuning_average_cross
from .dsp import (
    DEFAULT_IQ_RATE,
    RECORD_IF,
    RECORD_SAMPLE_RATE,
    IQTrace,
    Tone,
    demodulate_if,
    phase_drift_correct,
    synthesize,
    synthesize_iq,
    tone_amplitude_for_snr,
    welch_psd,
)
from .fitting import FitError, fit_brownian, fit_network, fit_pm_spectrum, fit_residual_table
from .io import ConfigError, RunConfig, read_csv, read_trace, write_csv, write_json, write_trace
from .network_drive import drive_responses, network_dataset
from .scattering import map_from_cross_spectrum

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

log = logging.getLogger("ponderomotive")


def _emit(args, cfg: RunConfig, columns: dict, command: str, extra=None, path=None):
    path = path or args.out
    fmt = args.format
    if fmt == "json":
        write_json(path, {"columns": columns, **(extra or {})}, command, cfg.format_version)
    else:
        write_csv(path, columns, command, cfg.format_version, extra)
    log.info("wrote %s", path)


def cmd_gain(args, cfg: RunConfig):
    p = cfg.system()
    w = cfg.freqs()
    g = gain(p, w, cfg.gain_mode)
    cols = {
        "freq_hz": w / TWO_PI,
        "gain_abs": np.abs(g),
        "gain_phase_deg": np.degrees(np.angle(g)),
        "gain_re": g.real,
        "gain_im": g.imag,
    }
    _emit(args, cfg, cols, "gain", {"gain_mode": cfg.gain_mode})


def cmd_network(args, cfg: RunConfig):
    p = cfg.system()
    data = network_dataset(p, cfg.freqs(), cfg.gain_mode)
    _emit(args, cfg, data, "network", {"gain_mode": cfg.gain_mode})


def cmd_squeeze(args, cfg: RunConfig):
    p, chain, jitter = cfg.system(), cfg.chain(), cfg.jitter()
    w, thetas = cfg.freqs(), cfg.thetas()
    cross = detuning_average_cross(p, jitter, w, cfg.gain_mode)
    am = detected_relative(np.real(cross[:, 0, 0]), chain.eps)
    pm = detected_relative(np.real(cross[:, 1, 1]), chain.eps)
    cols = {"freq_hz": w / TWO_PI, "am_rel": am, "pm_rel": pm}
    smap = map_from_cross_spectrum(w, thetas, cross)
    smap = type(smap)(smap.freqs, smap.thetas, detected_relative(smap.values, chain.eps))
    k = int(np.argmin(am))
    summary = {"am_min_rel": float(am[k]), "am_min_freq_hz": float(w[k] / TWO_PI)}
    value, theta, freq = smap.minimum()
    summary.update(map_min_rel=float(value), map_min_theta_deg=float(np.degrees(theta)),
                   map_min_freq_hz=float(freq / TWO_PI))
    map_cols = {
        "theta_deg": np.repeat(np.degrees(thetas), w.size),
        "freq_hz": np.tile(w / TWO_PI, thetas.size),
        "psd_rel": smap.values.ravel(),
    }
    if args.format == "json":
        write_json(args.out, {"spectra": cols, "map": map_cols, "summary": summary}, "squeeze", cfg.format_version)
    else:
        out = Path(args.out)
        write_csv(out, cols, "squeeze", cfg.format_version, summary)
        write_csv(out.with_name(out.stem + "_map" + out.suffix), map_cols, "squeeze-map", cfg.format_version)
    print(" ".join(f"{k}={v:.6g}" for k, v in summary.items()))


def _synth_one(job):
    p, chain, jitter, mode, syn, seed = job
    kind = syn.get("kind", "raw")
    duration = syn.get("duration_s", 5e-3)
    drive = None
    if "drive_hz" in syn:
        bw = syn.get("iq_rate_hz", DEFAULT_IQ_RATE) / syn.get("segment_length", 2000)
        drive = Tone(TWO_PI * syn["drive_hz"], tone_amplitude_for_snr(chain, syn.get("drive_snr_db", 40.0), bw))
    if kind == "iq":
        return synthesize_iq(p, chain, duration, seed, syn.get("iq_rate_hz", DEFAULT_IQ_RATE), jitter, drive, mode)
    return synthesize(p, chain, duration, seed, drive, syn.get("sample_rate_hz", RECORD_SAMPLE_RATE),
                      syn.get("f_if_hz", RECORD_IF), jitter, mode)


def cmd_synth(args, cfg: RunConfig):
    syn = cfg.section("synthesis")
    trace = _synth_one((cfg.system(), cfg.chain(), cfg.jitter(), cfg.gain_mode, syn, args.seed))
    trace.metadata["format_version"] = cfg.format_version
    path = write_trace(args.out, trace)
    log.info("wrote %s", path)


def _psd_columns(iq: IQTrace, sn: float, segment_length=None):
    am = welch_psd(iq.am, iq.sample_rate, segment_length)
    pm = welch_psd(iq.pm, iq.sample_rate, segment_length)
    return am, {"freq_hz": am.freqs_hz, "am_psd": am.psd, "pm_psd": pm.psd, "am_rel": am.psd / sn,
                "pm_rel": pm.psd / sn}


def cmd_demod(args, cfg: RunConfig):
    if args.input is None:
        raise ConfigError("demod needs --input TRACE")
    syn = cfg.section("synthesis")
    trace = read_trace(args.input)
    if not isinstance(trace, IQTrace):
        rate = syn.get("iq_rate_hz", DEFAULT_IQ_RATE)
        trace = demodulate_if(trace, trace.metadata.get("f_if", syn.get("f_if_hz", RECORD_IF)), out_rate=rate)
    iq = phase_drift_correct(trace)
    _, cols = _psd_columns(iq, cfg.chain().shot_noise_level, syn.get("segment_length"))
    _emit(args, cfg, cols, "demod")


def _average_pm(cfg: RunConfig, workers: int, seed0: int):
    syn = dict(cfg.section("synthesis"), kind="iq")
    syn.pop("drive_hz", None)
    p, chain, jitter = cfg.system(), cfg.chain(), cfg.jitter()
    n = syn.get("n_seeds", 200)
    jobs = [(p, chain, jitter, cfg.gain_mode, syn, seed0 + k) for k in range(n)]
    acc = None
    est = None
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        traces = pool.map(_synth_one, jobs, chunksize=16) if pool else map(_synth_one, jobs)
        for tr in traces:
            est = welch_psd(phase_drift_correct(tr).pm, tr.sample_rate, syn.get("segment_length"))
            acc = est.psd if acc is None else acc + est.psd
    finally:
        if pool:
            pool.shutdown()
    return est, acc / n / chain.shot_noise_level, n


def cmd_fit(args, cfg: RunConfig):
    fit_cfg = cfg.section("fit")
    kind = fit_cfg.get("kind", "pm")
    lo, hi = TWO_PI * fit_cfg.get("f_min_hz", 60e3), TWO_PI * fit_cfg.get("f_max_hz", 300e3)
    exclude = [(TWO_PI * a, TWO_PI * b) for a, b in fit_cfg.get("exclude_hz", [])]
    p = cfg.system()
    if kind == "pm":
        if "input" in fit_cfg:
            data = read_csv(fit_cfg["input"])
            w, y, est, n = TWO_PI * data["freq_hz"], data["pm_rel"], None, 1
            sigma = None
        else:
            est, y, n = _average_pm(cfg, args.workers, args.seed)
            w = est.omega
            sigma = y * est.relative_error(n)
        mask = (w >= lo) & (w <= hi)
        res = fit_pm_spectrum(w, y, p, cfg.chain(), mask=mask, exclude=exclude, sigma=sigma,
                              fit_amplitude=fit_cfg.get("fit_amplitude", False), jitter=cfg.jitter(),
                              mode=cfg.gain_mode, resolution=est)
        report = res.to_dict()
        report.pop("mask", None)
        report["derived"] = {"omega_s_hz": res["omega_s"] / TWO_PI, "gamma_m_hz": res["gamma_m"] / TWO_PI,
                             "n_records": n}
        table = fit_residual_table(w, res)
    elif kind == "network":
        from .network_drive import DriveResponse

        if "input" in fit_cfg:
            data = read_csv(fit_cfg["input"])
            w = TWO_PI * data["drive_freq_hz"]
            am = 10 ** (data["am_gain_db"] / 20) * np.exp(-1j * np.radians(data["am_phase_deg"]))
            pm = 10 ** (data["pm_gain_db"] / 20) * np.exp(-1j * np.radians(data["pm_phase_deg"]))
        else:
            w = cfg.freqs()
            am, pm = drive_responses(p, w, cfg.gain_mode)
        keep = (w >= lo) & (w <= hi)
        responses = [DriveResponse(float(a), complex(b), complex(c)) for a, b, c in zip(w[keep], am[keep], pm[keep])]
        res = fit_network(responses, p, mode=cfg.gain_mode)
        report = res.to_dict()
        report["derived"] = {"omega_s_hz": res["omega_s"] / TWO_PI, "gamma_m_hz": res["gamma_m"] / TWO_PI}
        table = {"index": np.arange(res.residuals.size), "residual": res.residuals}
    elif kind == "brownian":
        if "input" not in fit_cfg:
            raise ConfigError("fit.kind = 'brownian' needs fit.input (a PSD CSV)")
        data = read_csv(fit_cfg["input"])
        column = "pm_psd" if "pm_psd" in data else "psd"
        nu = data["freq_hz"]
        mask = (nu >= lo / TWO_PI) & (nu <= hi / TWO_PI)
        res = fit_brownian(nu, data[column], mask=mask, exclude=[(a / TWO_PI, b / TWO_PI) for a, b in exclude])
        report = res.to_dict()
        table = {"freq_hz": nu[mask][: res.residuals.size], "residual": res.residuals}
    else:
        raise ConfigError(f"unknown fit.kind {kind!r}; expected 'pm', 'network' or 'brownian'")
    write_json(args.out, {"fit": report, "kind": kind}, "fit", cfg.format_version)
    out = Path(args.out)
    write_csv(out.with_name(out.stem + "_residuals.csv"), table, "fit-residuals", cfg.format_version)
    print(" ".join(f"{k}={v['value']:.6g}+-{v['error']:.2g}" for k, v in report["parameters"].items()))


COMMANDS = {
    "gain": (cmd_gain, "closed-loop gain G(omega), magnitude and phase"),
    "network": (cmd_network, "AM/PM response to a classical AM drive"),
    "squeeze": (cmd_squeeze, "detected AM/PM spectra and the quadrature-angle map"),
    "synth": (cmd_synth, "synthesize a heterodyne trace file"),
    "demod": (cmd_demod, "demodulate a trace file and estimate quadrature PSDs"),
    "fit": (cmd_fit, "fit PM spectrum, network response or Brownian background"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ponderomotive", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", required=True, help="output file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        if name == "demod":
            sp.add_argument("--input", help="trace file to demodulate")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PONDEROMOTIVE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        cfg = RunConfig.load(args.config)
        func(args, cfg)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PoleError, FitError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
