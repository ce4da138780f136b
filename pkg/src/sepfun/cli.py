"""Command line pipeline: estimate, analyze, contrib, report, univariance.

Options come from an optional JSON ``--config`` file; explicit flags win.
``SEPFUN_OUT`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis as an
from .estimator import (
    ISO_BASES,
    SPECTRAL_LAWS,
    SamplingPlan,
    atomic_write_text,
    checkpoint_load,
    default_edges,
    estimate_curve,
    fmt17,
    is_complete,
    read_curve_csv,
    write_curve_csv,
)
from .measures import CONTRIB_HEADER, PAPER_SIGMA_HALF, Metric, upper_range_contribution
from .plots import line_plot, symmetric_limit
from .qstate import Ensemble, ValidationError

log = logging.getLogger("sepfun")

EXIT_USAGE = 2
EXIT_INCOMPLETE = 3

DEFAULTS = {
    "estimate": dict(
        n_spectra=100_000,
        orbits_per_spectrum=1,
        bins=100,
        law="uniform-simplex",
        chunk_size=4096,
        workers=1,
        c_range=[0.0, 1.0],
        iso_c=None,
        iso_base="uniform-simplex",
        qmc=False,
        resume=None,
        checkpoint=None,
        stop_after=None,
    ),
    "analyze": dict(sigma_half_real=None, sigma_half_complex=None),
    "contrib": dict(metric=None, beta=None, sigma_half=None, n=1_000_000, seed=0, normalization="region"),
    "report": dict(),
    "univariance": dict(c=0.7, k=20, n=10_000, seed=0, iso_base="uniform-simplex"),
}


def _out_dir(value) -> Path:
    return Path(value or os.environ.get("SEPFUN_OUT", "out"))


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def _write_json(path: Path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x)}")


def _resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(cfg, dict):
            parser.error("config must be a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    opts = dict(DEFAULTS[args.command])
    opts.update({k: v for k, v in cfg.items() if k in opts or k in vars(args)})
    opts.update({k: v for k, v in vars(args).items() if v is not None and k not in ("config", "func")})
    return opts


def _require(opts, parser, *names):
    missing = [n for n in names if opts.get(n) is None]
    if missing:
        parser.error("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


# -- subcommands ----------------------------------------------------------------


def cmd_estimate(opts, parser) -> int:
    _require(opts, parser, "seed", "beta")
    out = _out_dir(opts.get("out_dir"))
    try:
        plan = SamplingPlan(
            seed=int(opts["seed"]),
            ensemble=Ensemble.parse(opts["beta"]),
            spectral_law=opts["law"],
            n_spectra=int(opts["n_spectra"]),
            orbits_per_spectrum=int(opts["orbits_per_spectrum"]),
            bin_edges=default_edges(1.0 / int(opts["bins"])),
            chunk_size=int(opts["chunk_size"]),
            iso_c=None if opts["iso_c"] is None else float(opts["iso_c"]),
            c_range=tuple(opts["c_range"]),
            qmc=bool(opts["qmc"]),
            iso_base=opts["iso_base"],
        )
    except ValidationError as exc:
        parser.error(str(exc))
    beta = int(plan.ensemble)
    ckpt = Path(opts["checkpoint"]) if opts["checkpoint"] else out / f"curve_beta{beta}.ckpt.json"
    resume = None
    if opts["resume"]:
        resume = checkpoint_load(opts["resume"], plan)
    curve = estimate_curve(
        plan,
        workers=int(opts["workers"]),
        resume=resume,
        checkpoint_path=ckpt,
        stop_after=None if opts["stop_after"] is None else int(opts["stop_after"]),
    )
    if not is_complete(curve, plan):
        log.warning("stopped after %d of %d chunks; resume with --resume %s", len(curve.chunks), plan.n_chunks, ckpt)
        return EXIT_INCOMPLETE
    write_curve_csv(curve, out / f"curve_beta{beta}.csv")
    _write_json(out / f"curve_beta{beta}.plan.json", {"fingerprint": plan.fingerprint(), "plan": plan.to_dict()})
    empty = int(curve.empty_bins.sum())
    if empty:
        log.warning("%d empty bins (sigma_hat reported as nan)", empty)
    return 0


def _normalized_rows(nc: an.NormalizedCurve):
    for lo, hi, v, s in zip(nc.c_lo, nc.c_hi, nc.values, nc.stderr):
        yield [nc.beta, fmt17(lo), fmt17(hi), fmt17(v), fmt17(s)]


def _cp_dict(rep: an.ChangepointReport) -> dict:
    return {
        "changepoints": [vars(cp) for cp in rep.changepoints],
        "kinks": rep.kinks,
        "segments": [vars(s) for s in rep.segments],
    }


def analyze_curves(real, cplx, sigma_half_real=None, sigma_half_complex=None) -> tuple[dict, dict]:
    """Run every post-processing step; returns the JSON summary and the tables."""
    if not np.array_equal(real.edges, cplx.edges):
        raise ValidationError("real and complex curves are on different bin grids")
    plug_r = PAPER_SIGMA_HALF[Ensemble.REAL] if sigma_half_real is None else sigma_half_real
    plug_c = PAPER_SIGMA_HALF[Ensemble.COMPLEX] if sigma_half_complex is None else sigma_half_complex
    rn, cn = an.normalize_at_half(real), an.normalize_at_half(cplx)
    diff = an.dyson_difference_curve(rn, cn)
    fits = {}
    for name, nc in (("real", rn), ("complex", cn)):
        try:
            fits[name] = an.fit_power_form(nc)
        except ValidationError as exc:
            log.warning("%s fit skipped: %s", name, exc)
    lr_r, lr_c = an.left_right_at_half(real), an.left_right_at_half(cplx)
    cps = {name: an.detect_changepoints(c) for name, c in (("real", real), ("complex", cplx))}
    cps_up = {name: an.detect_changepoints(c, (0.55, 1.0)) for name, c in (("real", real), ("complex", cplx))}
    cross = an.intersection_locator(real, cplx)
    summary = {
        "sigma_half": {"real": lr_r[1], "complex": lr_c[1]},
        "sigma_half_left": {"real": lr_r[0], "complex": lr_c[0]},
        "ratio_fresh": an.ratio_statistic(lr_r[1], lr_c[1]),
        "ratio_plugin": an.ratio_statistic(plug_r, plug_c),
        "plugin": {"real": plug_r, "complex": plug_c},
        "difference_sup_norm": diff.sup_norm(),
        "fits": {k: vars(v) for k, v in fits.items()},
        "changepoints": {k: _cp_dict(v) for k, v in cps.items()},
        "changepoints_upper": {k: _cp_dict(v) for k, v in cps_up.items()},
        "intersection": {"location": cross.location, "all": list(cross.locations), "multiple": cross.multiple},
    }
    tables = {
        "normalized_real.csv": (("beta", "c_lo", "c_hi", "value", "stderr"), list(_normalized_rows(rn))),
        "normalized_complex.csv": (("beta", "c_lo", "c_hi", "value", "stderr"), list(_normalized_rows(cn))),
        "difference.csv": (
            ("c_lo", "c_hi", "difference", "stderr"),
            [[fmt17(a), fmt17(b), fmt17(d), fmt17(s)] for a, b, d, s in zip(diff.c_lo, diff.c_hi, diff.diff, diff.stderr)],
        ),
        "fits.csv": (an.FIT_HEADER, [f.csv_row(k) for k, f in fits.items()]),
        "changepoints.csv": (
            ("ensemble", "location", "jump_size", "relative_jump", "relative_jump_right", "z_score"),
            [
                [k, fmt17(cp.location), fmt17(cp.jump_size), fmt17(cp.relative_jump), fmt17(cp.relative_jump_right), fmt17(cp.z_score)]
                for k, rep in cps.items()
                for cp in rep.changepoints
            ],
        ),
    }
    return summary, tables


def cmd_analyze(opts, parser) -> int:
    _require(opts, parser, "real", "complex")
    out = _out_dir(opts.get("out_dir"))
    real, cplx = read_curve_csv(opts["real"]), read_curve_csv(opts["complex"])
    if real.beta != 1 or cplx.beta != 2:
        parser.error("--real must be a beta=1 curve and --complex a beta=2 curve")
    summary, tables = analyze_curves(real, cplx, opts["sigma_half_real"], opts["sigma_half_complex"])
    for name, (header, rows) in tables.items():
        _write_csv(out / name, header, rows)
    _write_json(out / "summary.json", summary)
    return 0


def cmd_contrib(opts, parser) -> int:
    out = _out_dir(opts.get("out_dir"))
    try:
        metrics = [Metric.parse(opts["metric"])] if opts["metric"] else list(Metric)
        ensembles = [Ensemble.parse(opts["beta"])] if opts["beta"] is not None else list(Ensemble)
    except ValidationError as exc:
        parser.error(str(exc))
    rows = []
    for ens in ensembles:
        for metric in metrics:
            res = upper_range_contribution(
                metric, ens, opts["sigma_half"], int(opts["n"]), int(opts["seed"]), normalization=opts["normalization"]
            )
            rows.append(res.csv_row())
            log.info("%s beta=%d: %.6g +- %.2g", metric.short, ens, res.estimate, res.stderr)
    _write_csv(out / "contrib.csv", CONTRIB_HEADER, rows)
    return 0


def _read_table(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]} if rows else {}


REPORT_INPUTS = ("normalized_real.csv", "normalized_complex.csv", "difference.csv")


def cmd_report(opts, parser) -> int:
    src = Path(opts.get("in_dir") or _out_dir(opts.get("out_dir")))
    out = _out_dir(opts.get("out_dir"))
    missing = [n for n in REPORT_INPUTS if not (src / n).exists()]
    if missing:
        log.error("missing analysis outputs in %s: %s", src, ", ".join(missing))
        return 1
    r, c, d = (_read_table(src / n) for n in REPORT_INPUTS)
    up = r["c_lo"] >= 0.5 - 1e-12
    x = 0.5 * (r["c_lo"] + r["c_hi"])[up]
    real_sq = r["value"][up] ** 2
    cplx = c["value"][up]
    s1 = ("(real / real(1/2))^2", x, real_sq)
    s2 = ("complex / complex(1/2)", x, cplx)
    xlim = (0.5, 1.0)
    common = dict(xlabel="maximal concurrence C", xlim=xlim, ylim=(0.0, 1.05))
    atomic_write_text(out / "fig1.svg", line_plot([s1, s2], title="Normalized squared-real and complex curves", ylabel="normalized value", **common))
    dx = 0.5 * (d["c_lo"] + d["c_hi"])
    atomic_write_text(
        out / "fig2.svg",
        line_plot(
            [("squared real - complex", dx, d["difference"])],
            title="Difference of normalized curves",
            xlabel="maximal concurrence C",
            ylabel="difference",
            xlim=xlim,
            ylim=symmetric_limit(d["difference"]),
        ),
    )
    ref = ("(2 - 2C)^3", x, (2.0 - 2.0 * x) ** 3)
    atomic_write_text(out / "fig3.svg", line_plot([s1, s2, ref], title="Normalized curves with (2 - 2C)^3", ylabel="normalized value", **common))
    return 0


def cmd_univariance(opts, parser) -> int:
    _require(opts, parser, "beta")
    out = _out_dir(opts.get("out_dir"))
    res = an.univariance_dispersion(
        float(opts["c"]), int(opts["k"]), int(opts["n"]), Ensemble.parse(opts["beta"]), int(opts["seed"]), base=opts["iso_base"]
    )
    lo, hi = res.null_band()
    _write_json(
        out / f"univariance_beta{int(Ensemble.parse(opts['beta']))}.json",
        {
            "concurrence": res.concurrence,
            "statistic": res.statistic,
            "dof": res.dof,
            "p_value": res.p_value,
            "null_band_99": [lo, hi],
            "n": res.n,
            "iso_base": opts["iso_base"],
            "p_hats": list(res.p_hats),
            "spectra": [list(s.values) for s in res.spectra],
        },
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sepfun", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of option defaults")
        sp.add_argument("--out-dir", help="output directory (default $SEPFUN_OUT or ./out)")

    e = sub.add_parser("estimate", help="binned separability curve")
    common(e)
    e.add_argument("--seed", type=int)
    e.add_argument("--beta", type=int, choices=(1, 2))
    e.add_argument("--bins", type=int, help="number of equal-width bins on [0, 1]")
    e.add_argument("--n-spectra", type=int)
    e.add_argument("--orbits-per-spectrum", type=int)
    e.add_argument("--law", choices=SPECTRAL_LAWS)
    e.add_argument("--iso-c", type=float, help="fixed concurrence for the iso-concurrence law")
    e.add_argument("--c-range", type=float, nargs=2, metavar=("LO", "HI"), help="stratified iso-concurrence range")
    e.add_argument("--iso-base", choices=ISO_BASES, help="simplex law that iso-concurrence spectra are conditioned from")
    e.add_argument("--chunk-size", type=int)
    e.add_argument("--qmc", action="store_true", default=None)
    e.add_argument("--workers", type=int)
    e.add_argument("--checkpoint", help="checkpoint path (default <out>/curve_beta<b>.ckpt.json)")
    e.add_argument("--resume", metavar="CHECKPOINT")
    e.add_argument("--stop-after", type=int, help=argparse.SUPPRESS)
    e.set_defaults(func=cmd_estimate)

    a = sub.add_parser("analyze", help="normalization, fits, ratio, changepoints, crossing")
    common(a)
    a.add_argument("--real", help="beta=1 curve CSV")
    a.add_argument("--complex", help="beta=2 curve CSV")
    a.add_argument("--sigma-half-real", type=float)
    a.add_argument("--sigma-half-complex", type=float)
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("contrib", help="upper half-range separability-probability contributions")
    common(c)
    c.add_argument("--metric", choices=("hs", "bures"))
    c.add_argument("--beta", type=int, choices=(1, 2))
    c.add_argument("--sigma-half", type=float)
    c.add_argument("--n", type=int, help="weighted spectrum samples")
    c.add_argument("--seed", type=int)
    c.add_argument("--normalization", choices=("region", "total"))
    c.set_defaults(func=cmd_contrib)

    r = sub.add_parser("report", help="SVG figures from analyze outputs")
    common(r)
    r.add_argument("--in-dir", help="directory holding analyze outputs (default: --out-dir)")
    r.set_defaults(func=cmd_report)

    u = sub.add_parser("univariance", help="dispersion of orbit probabilities at fixed C")
    common(u)
    u.add_argument("--c", type=float)
    u.add_argument("--k", type=int)
    u.add_argument("--n", type=int)
    u.add_argument("--beta", type=int, choices=(1, 2))
    u.add_argument("--seed", type=int)
    u.add_argument("--iso-base", choices=ISO_BASES)
    u.set_defaults(func=cmd_univariance)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    opts = _resolve(args, parser)
    try:
        return args.func(opts, parser)
    except (ValidationError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
