"""Command-line front end: ``qmem efficiency|source|simulate|analyze``.

Exit codes: 0 success, 2 configuration error, 3 domain or regime error,
4 I/O or tag-format error.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import afc, analysis, montecarlo, spdc
from .errors import ConfigError, QmemError, RunIOError, TagFormatError
from .scenario import AnalysisDefaults, Scenario, load
from .tags import TimeTags

EXIT_OK, EXIT_CONFIG, EXIT_DOMAIN, EXIT_IO = 0, 2, 3, 4

NS = 1e-9


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def _report(rows: list[tuple[str, object]]) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in rows)


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def _emit(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise RunIOError(f"cannot write {out}: {exc}") from exc


def _range(spec: str) -> np.ndarray:
    """Inclusive ``start:stop:step`` grid."""
    try:
        start, stop, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ConfigError(f"range {spec!r} must be start:stop:step") from None
    if not step > 0 or stop < start:
        raise ConfigError(f"range {spec!r} needs step > 0 and stop >= start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def _scenario(args) -> Scenario:
    if args.scenario is None:
        raise ConfigError("this command needs --scenario (a file or a preset: nd_yso, pr_yso)")
    return load(args.scenario, tuple(args.set))


# efficiency

def _budget_rows(spec: afc.MemorySpec) -> list[tuple[str, object]]:
    b = afc.total_efficiency(spec)
    comb = spec.comb
    return [
        ("tooth_shape", comb.kind.value),
        ("direction", spec.direction.value),
        ("d_eff", b.d_eff),
        ("eta_deph", b.eta_deph),
        ("eta_afc", b.eta_afc),
        ("eta_spin", b.eta_spin),
        ("eta_control", b.eta_control),
        ("eta_total", b.eta_total),
        ("transmission", afc.transmission(comb)),
        ("echo_time_s", afc.echo_times(comb, spec.spin_wave_time)[0]),
        ("multimode_capacity", afc.multimode_capacity(comb)),
    ]


def cmd_efficiency(args) -> int:
    spec = _scenario(args).afc()
    if args.sweep is None:
        _emit(_report(_budget_rows(spec)), args.out)
        return EXIT_OK
    var, sep, rng = args.sweep.partition("=")
    if not sep:
        raise ConfigError("--sweep must look like d_eff=0:6:0.05")
    grid = _range(rng)
    if var == "d_eff":
        deph = afc.dephasing_factor(spec.comb)
        rows = [(x, afc.forward_efficiency(x, deph), afc.backward_efficiency(x, deph)) for x in grid]
        text = _csv(("d_eff", "eta_forward", "eta_backward"), rows)
    elif var == "finesse":
        rows = []
        for f in grid:
            s = replace(spec, comb=replace(spec.comb, finesse=float(f), width=None))
            b = afc.total_efficiency(s)
            rows.append((f, b.d_eff, b.eta_deph, b.eta_total))
        text = _csv(("finesse", "d_eff", "eta_deph", "eta_total"), rows)
    elif var == "spin_wave_time_us":
        rows = []
        for t in grid:
            b = afc.total_efficiency(replace(spec, spin_wave_time=float(t) * 1e-6))
            rows.append((t, b.eta_spin, b.eta_total))
        text = _csv(("spin_wave_time_us", "eta_spin", "eta_total"), rows)
    else:
        raise ConfigError(f"cannot sweep {var!r}; choose d_eff, finesse or spin_wave_time_us")
    _emit(text, args.out)
    return EXIT_OK


# source

def cmd_source(args) -> int:
    sc = _scenario(args)
    src = sc.source
    window = sc.experiment().slot
    if args.stats:
        powers = [float(x) for x in args.powers.split(",")] if args.powers else [src.pump_power]
        rows = []
        for P in powers:
            p = spdc.pair_probability(replace(src, pump_power=P), window=window)
            st = spdc.tmss_statistics(p)
            rows.append((P, st.p, st.mean_signal_photons, st.g2_cross, st.g2_auto_signal))
        _emit(_csv(("pump_power_mw", "p", "mean_photons", "g2_cross", "g2_auto"), rows), args.out)
        return EXIT_OK
    p = spdc.pair_probability(src, window=window)
    if args.curve == "g2":
        taus = _range(args.tau_range) * NS
        if src.n_modes_per_cluster > 1:
            curve = spdc.normalize_multimode(spdc.multimode_g2_cross(src, taus), src, p)
        else:
            curve = spdc.single_mode_g2(src, p, taus)
        _emit(_csv(("tau_s", "value", "error"), ((t, v, 0.0) for t, v in zip(curve.taus, curve.values))), args.out)
        return EXIT_OK
    st = spdc.tmss_statistics(p)
    rows = [
        ("pair_probability", p),
        ("window_s", window),
        ("mean_signal_photons", st.mean_signal_photons),
        ("g2_cross", st.g2_cross),
        ("g2_auto", st.g2_auto_signal),
        ("coherence_time_signal_s", spdc.coherence_time(src.signal_linewidth)),
        ("coherence_time_idler_s", spdc.coherence_time(src.idler_linewidth)),
        ("correlation_fwhm_s", spdc.two_sided_fwhm(src.signal_linewidth, src.idler_linewidth)),
    ]
    if src.fsr_signal != src.fsr_idler:
        clusters = spdc.cluster_structure(src)
        rows += [("vernier_period_hz", spdc.vernier_period(src.fsr_signal, src.fsr_idler)), ("n_clusters", len(clusters))]
    _emit(_report(rows), args.out)
    return EXIT_OK


# simulate

def cmd_simulate(args) -> int:
    sc = _scenario(args)
    if args.out is None:
        raise ConfigError("simulate needs --out for the tag file")
    config = sc.experiment(seed=args.seed)
    result = montecarlo.run(config, args.out, workers=args.workers)
    rows = [(k, result.manifest[k]) for k in result.manifest if not k.startswith("config.")]
    rows.append(("manifest", str(result.manifest_path)))
    sys.stdout.write(_report(rows))
    return EXIT_OK


# analyze

def _tags(args) -> TimeTags:
    if args.tagfile is None:
        raise ConfigError(f"analyze {args.analysis} needs a tag file")
    try:
        return TimeTags.read(args.tagfile)
    except OSError as exc:
        raise RunIOError(f"cannot read {args.tagfile}: {exc}") from exc


def _defaults(args) -> AnalysisDefaults:
    return _scenario(args).analysis if args.scenario is not None else AnalysisDefaults()


def _pick(value, default):
    return default if value is None else value


def _histogram(args, tags: TimeTags, d: AnalysisDefaults) -> analysis.CoincidenceHistogram:
    bin_w = _pick(args.bin_ns, None)
    bin_w = d.bin_width if bin_w is None else bin_w * NS
    lo = d.tau_min if args.tau_min_ns is None else args.tau_min_ns * NS
    hi = d.tau_max if args.tau_max_ns is None else args.tau_max_ns * NS
    return analysis.histogram(tags, "idler", "signal", bin_w, (lo, hi))


def _analyze_g2(args) -> int:
    d = _defaults(args)
    tags = _tags(args)
    hist = _histogram(args, tags, d)
    if args.curve:
        c = hist.as_curve()
        _emit(_csv(("tau_s", "value", "error"), zip(c.taus, c.values, c.errors)), args.out)
        return EXIT_OK
    window = d.window if args.window_ns is None else args.window_ns * NS
    norm = _pick(args.normalization, d.g2_normalization)
    floor_offset = d.floor_offset if args.floor_offset_ns is None else args.floor_offset_ns * NS
    centers = args.center_ns or [0.0]
    rows: list[tuple[str, object]] = [("window_s", window), ("normalization", norm)]
    for c in centers:
        r = analysis.g2_windowed(hist, window, c * NS, norm, floor_offset, d.floor_width)
        tag = f"g2[{_fmt(c)}ns]"
        rows += [(tag, r.value), (f"{tag}.error", r.statistical_error), (f"{tag}.violated", r.violated)]
    rows.append(("classical_bound", analysis.G2_CLASSICAL))
    _emit(_report(rows), args.out)
    return EXIT_OK


def _analyze_fit(args) -> int:
    d = _defaults(args)
    fit = analysis.fit_two_sided_exponential(_histogram(args, _tags(args), d))
    rows = [
        ("delta_nu_plus_hz", fit.delta_nu_plus),
        ("delta_nu_plus_error_hz", fit.delta_nu_plus_error),
        ("delta_nu_minus_hz", fit.delta_nu_minus),
        ("delta_nu_minus_error_hz", fit.delta_nu_minus_error),
        ("fwhm_s", fit.fwhm),
        ("tau_peak_s", fit.tau_peak),
        ("floor_counts", fit.floor),
        ("amplitude_counts", fit.amplitude),
    ]
    _emit(_report(rows), args.out)
    return EXIT_OK


def _witness_rows(r: analysis.WitnessResult) -> list[tuple[str, object]]:
    return [
        ("value", r.value),
        ("statistical_error", r.statistical_error),
        ("classical_bound", r.classical_bound),
        ("violated", r.violated),
        ("significance_sigma", r.significance),
    ]


def _analyze_cs(args) -> int:
    d = _defaults(args)
    window = d.window if args.window_ns is None else args.window_ns * NS
    r = analysis.cauchy_schwarz_from_tags(_tags(args), window, (args.center_ns or [0.0])[0] * NS, split_seed=args.split_seed)
    _emit(_report([("window_s", window)] + _witness_rows(r)), args.out)
    return EXIT_OK


def _analyze_chsh(args) -> int:
    r = analysis.chsh_from_visibility(args.visibility, args.visibility_error)
    _emit(_report([("visibility", args.visibility)] + _witness_rows(r)), args.out)
    return EXIT_OK


def _analyze_concurrence(args) -> int:
    c = analysis.concurrence(args.visibility, args.p00, args.p01, args.p10, args.p11)
    _emit(_report([("concurrence", c.value), ("concurrence_raw", c.raw)]), args.out)
    return EXIT_OK


def _analyze_mu1(args) -> int:
    m = analysis.mu1(args.noise_prob, args.eta)
    rows: list[tuple[str, object]] = [("mu1", m)]
    if args.eta_herald is not None:
        h = analysis.herald_compatibility(m, args.eta_herald)
        rows += [("mu1_over_eta_herald", h.ratio), ("herald_compatible", h.compatible)]
    _emit(_report(rows), args.out)
    return EXIT_OK


ANALYSES = {
    "g2": _analyze_g2,
    "fit": _analyze_fit,
    "witness-cs": _analyze_cs,
    "witness-chsh": _analyze_chsh,
    "concurrence": _analyze_concurrence,
    "mu1": _analyze_mu1,
}


def cmd_analyze(args) -> int:
    return ANALYSES[args.analysis](args)


# parser

def _global_options(defaults: bool) -> argparse.ArgumentParser:
    sup = None if defaults else argparse.SUPPRESS
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--scenario", default=sup, help="scenario TOML file or preset name (nd_yso, pr_yso)")
    p.add_argument("--seed", type=int, default=sup, help="override run.seed")
    p.add_argument("--out", default=sup, help="output path (tag file for simulate, report/CSV otherwise)")
    p.add_argument("--set", action="append", default=[] if defaults else sup, metavar="SECTION.KEY=VALUE",
                   help="override one scenario value; may be repeated")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_options(defaults=False)
    parser = argparse.ArgumentParser(prog="qmem", description=__doc__.splitlines()[0], parents=[_global_options(True)])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("efficiency", parents=[common], help="AFC efficiency budget or sweep")
    p.add_argument("--sweep", help="VAR=start:stop:step with VAR in d_eff, finesse, spin_wave_time_us")
    p.set_defaults(func=cmd_efficiency)

    p = sub.add_parser("source", parents=[common], help="pair-source statistics and correlation curves")
    p.add_argument("--curve", choices=["g2"], help="emit the normalised cross-correlation as CSV")
    p.add_argument("--tau-range", default="-300:300:0.5", help="start:stop:step in ns (default -300:300:0.5)")
    p.add_argument("--stats", action="store_true", help="p, mean photon number and g2 versus pump power")
    p.add_argument("--powers", help="comma-separated pump powers in mW for --stats")
    p.set_defaults(func=cmd_source)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo run writing a tag file and manifest")
    p.add_argument("--workers", type=int, default=None, help="worker threads (QMEM_THREADS caps it)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", parents=[common], help="estimators on a tag file, or witness formulas")
    asub = p.add_subparsers(dest="analysis", required=True)
    for name in ("g2", "fit", "witness-cs"):
        a = asub.add_parser(name, parents=[common])
        a.add_argument("tagfile", nargs="?")
        a.add_argument("--bin-ns", type=float)
        a.add_argument("--tau-min-ns", type=float)
        a.add_argument("--tau-max-ns", type=float)
        a.add_argument("--window-ns", type=float)
        a.add_argument("--center-ns", type=float, action="append")
        if name == "g2":
            a.add_argument("--normalization", choices=["singles", "floor"])
            a.add_argument("--floor-offset-ns", type=float)
            a.add_argument("--curve", action="store_true", help="emit the normalised histogram as CSV")
        if name == "witness-cs":
            a.add_argument("--split-seed", type=int, default=0, help="seed of the 50:50 splitter emulation")
    a = asub.add_parser("witness-chsh", parents=[common])
    a.add_argument("tagfile", nargs="?")
    a.add_argument("--visibility", type=float, required=True)
    a.add_argument("--visibility-error", type=float, default=0.0)
    a = asub.add_parser("concurrence", parents=[common])
    a.add_argument("tagfile", nargs="?")
    a.add_argument("--visibility", type=float, required=True)
    for k in ("p00", "p01", "p10", "p11"):
        a.add_argument(f"--{k}", type=float, required=True)
    a = asub.add_parser("mu1", parents=[common])
    a.add_argument("tagfile", nargs="?")
    a.add_argument("--noise-prob", type=float, required=True, help="noise detection probability per window")
    a.add_argument("--eta", type=float, required=True, help="memory efficiency")
    a.add_argument("--eta-herald", type=float, help="heralding efficiency for the compatibility check")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"qmem: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunIOError, TagFormatError) as exc:
        print(f"qmem: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (QmemError, ValueError) as exc:
        print(f"qmem: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
