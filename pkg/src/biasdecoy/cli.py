"""``biasdecoy`` command line: scan, eval, validate.

Exit codes: 0 success, 1 invalid input or failed validation, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from . import __version__
from . import _accel
from . import config as cfgmod
from . import montecarlo as mc
from .channel import ChannelParams, expected_observables
from .config import ConfigError
from .decoy import ProtocolParams, SecurityParams
from .keyrate import StandardAllocation, evaluate_biased, evaluate_standard
from .optimizer import SearchSpace, optimize_at_loss, scan_losses

log = logging.getLogger("biasdecoy")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
SCAN_COLUMNS = (
    "loss_db", "rate_biased", "rate_standard", "improvement_ratio", "pz_opt", "nu_opt",
    "a_mu", "a_nu_z", "a_nu_x", "a_0", "e1pz_u", "theta_x",
)
_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
           "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else "%.17g" % v


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _schemes(cfg):
    s = cfg["run"]["scheme"]
    return ("biased", "standard") if s == "both" else (s,)


def build_channel(cfg) -> ChannelParams:
    ch = cfg["channel"]
    return ChannelParams(1.0, ch["y0"], ch["ed"])


def build_security(cfg) -> SecurityParams:
    s = cfg["security"]
    return SecurityParams(f=s["f"], u_alpha=s["u_alpha"], p_theta_x=s["p_theta_x"])


def build_space(cfg, scheme: str) -> SearchSpace:
    src, opt = cfg["source"], cfg["optimizer"]
    kw = dict(
        mu=src["mu"],
        n_total=cfg["security"]["n_total"],
        grid_points=opt["grid_points"],
        n_starts=opt["n_starts"],
    )
    if src["mu_range"] is not None:
        kw["mu_range"] = tuple(src["mu_range"])
    if src["nu"] != cfgmod.OPT:
        kw["nu_range"] = (src["nu"], src["nu"])
    if src["p_z"] != cfgmod.OPT:
        kw["pz_range"] = (src["p_z"], src["p_z"])
    al = src["allocation"]
    if al != cfgmod.OPT:
        if scheme == "biased":
            kw["allocation"] = (al["a_mu"], al["a_nu_z"], al["a_nu_x"], al["a_0"])
        else:
            kw["allocation"] = (al["a_mu"], al["a_nu_z"] + al["a_nu_x"], al["a_0"])
    try:
        return SearchSpace(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def fixed_params(cfg, scheme: str, n_total: float | None = None):
    """Protocol parameters from a config with no ``optimize`` placeholders."""
    missing = cfgmod.placeholders(cfg)
    if missing:
        raise ConfigError(f"fixed parameters required, found placeholders: {', '.join(missing)}")
    src = cfg["source"]
    al = src["allocation"]
    n = cfg["security"]["n_total"] if n_total is None else n_total
    try:
        if scheme == "biased":
            return ProtocolParams.from_fractions(
                src["mu"], src["nu"], src["p_z"], al["a_mu"], al["a_nu_z"], al["a_nu_x"], al["a_0"], n
            )
        return StandardAllocation.from_fractions(
            src["mu"], src["nu"], al["a_mu"], al["a_nu_z"] + al["a_nu_x"], al["a_0"], n
        )
    except ValueError as exc:
        raise ConfigError(f"infeasible parameters: {exc}") from None


def _scan_rows(points, schemes):
    rows = []
    for pt in points:
        lead = pt.biased if "biased" in schemes else pt.standard
        prm = lead.row if lead.best_rate > 0.0 else {}
        rep = lead.report
        rows.append([
            pt.loss_db,
            pt.biased.best_rate if pt.biased else None,
            pt.standard.best_rate if pt.standard else None,
            pt.improvement,
            prm.get("p_z"), prm.get("nu"),
            prm.get("a_mu"), prm.get("a_nu_z"), prm.get("a_nu_x"), prm.get("a_0"),
            rep.e1_pz_u if prm else None,
            rep.theta_x if prm else None,
        ])
    return rows


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg["run"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(cfg, command, wall):
    return {
        "command": command,
        "version": __version__,
        "backend": _accel.backend_name(),
        "seed": cfg["run"]["seed"],
        "wall_time_s": wall,
        "config": cfg,
    }


def cmd_scan(cfg, args) -> int:
    t0 = time.perf_counter()
    grid = cfgmod.parse_grid(cfg["channel"]["loss_db"])
    schemes = _schemes(cfg)
    ch, s = build_channel(cfg), build_security(cfg)
    spaces = {sc: build_space(cfg, sc) for sc in schemes}
    merged = None
    for sc in schemes:
        log.info("scanning %s over %d losses", sc, len(grid))
        pts = scan_losses(grid, ch, s, spaces[sc], schemes=(sc,))
        if merged is None:
            merged = pts
        else:
            for m, p in zip(merged, pts):
                m.standard = p.standard
    rows = _scan_rows(merged, schemes)
    out = _out_dir(args, cfg)
    with open(out / "scan.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCAN_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    wall = time.perf_counter() - t0
    (out / "manifest.json").write_text(json.dumps(_manifest(cfg, "scan", wall), indent=2) + "\n")
    print(f"wrote {out / 'scan.csv'} ({len(rows)} rows) in {wall:.1f} s")
    return EXIT_OK


def _loss_for(cfg, args) -> float:
    if args.loss is not None:
        return float(args.loss)
    grid = cfgmod.parse_grid(cfg["channel"]["loss_db"])
    if len(grid) != 1:
        raise ConfigError("eval needs a single loss: pass --loss or set channel.loss_db to one value")
    return grid[0]


def cmd_eval(cfg, args) -> int:
    loss = _loss_for(cfg, args)
    ch, s = build_channel(cfg).with_loss(loss), build_security(cfg)
    result = {}
    for sc in _schemes(cfg):
        p = fixed_params(cfg, sc)
        rep = evaluate_biased(p, ch, s) if sc == "biased" else evaluate_standard(p, ch, s)
        result[sc] = dict(loss_db=loss, eta=ch.eta, **rep.to_dict())
    doc = result[next(iter(result))] if len(result) == 1 else result
    text = json.dumps(_jsonable(doc), indent=2)
    print(text)
    if args.out:
        (_out_dir(args, cfg) / "eval.json").write_text(text + "\n")
    return EXIT_OK


def _z(emp, ana, n):
    if n == 0:
        return math.nan, math.nan
    sigma = math.sqrt(ana * (1.0 - ana) / n)
    if sigma == 0.0:
        return sigma, 0.0 if emp == ana else math.inf
    return sigma, (emp - ana) / sigma


def comparison_table(counts: mc.SimCounts, p: ProtocolParams, ch: ChannelParams) -> list[dict]:
    """Empirical vs honest-model observables with binomial z-scores."""
    ex = expected_observables(p, ch)
    e_nu = ex.eq_nu_x / ex.q_nu_x if ex.q_nu_x > 0 else 0.5
    s_mu, d_mu, e_mu = counts.cell("signal", "Z")
    s_nz, d_nz, _ = counts.cell("decoy_z", "Z")
    s_nx, d_nx, e_nx = counts.cell("decoy_x", "X")
    s_0 = sum(counts.cell("vacuum", b)[0] for b in mc.BOB_BASES)
    d_0 = sum(counts.cell("vacuum", b)[1] for b in mc.BOB_BASES)
    spec = [
        ("gain_signal_Z", ex.q_mu_z, d_mu, s_mu),
        ("qber_signal_Z", ex.e_mu_z, e_mu, d_mu),
        ("gain_decoy_Z", ex.q_nu_z, d_nz, s_nz),
        ("gain_decoy_X", ex.q_nu_x, d_nx, s_nx),
        ("qber_decoy_X", e_nu, e_nx, d_nx),
        ("yield_vacuum", ex.y0_obs, d_0, s_0),
    ]
    rows = []
    for name, ana, k, n in spec:
        emp = k / n if n else math.nan
        sigma, z = _z(emp, ana, n)
        rows.append(dict(observable=name, analytic=ana, empirical=emp, trials=n, sigma=sigma, z=z))
    return rows


def cmd_validate(cfg, args) -> int:
    m = cfg["mc"]
    n_pulses = int(m["n_pulses"])
    if n_pulses < 10_000:
        raise ConfigError("mc.n_pulses must be at least 1e4")
    loss = float(args.loss) if args.loss is not None else float(m["loss_db"])
    ch_base, s = build_channel(cfg), build_security(cfg)
    ch = ch_base.with_loss(loss)
    if cfgmod.placeholders(cfg):
        log.info("optimizing biased parameters at %g dB before simulating", loss)
        res = optimize_at_loss(loss, ch_base, s, build_space(cfg, "biased"), "biased")
        if res.best_params is None:
            raise ConfigError(f"no feasible parameters at {loss} dB")
        r = res.row
        p = ProtocolParams.from_fractions(
            r["mu"], r["nu"], r["p_z"], r["a_mu"], r["a_nu_z"], r["a_nu_x"], r["a_0"], float(n_pulses)
        )
    else:
        p = fixed_params(cfg, "biased", n_total=float(n_pulses))
    adv_cfg = dict(m["adversary"])
    adv = mc.AdversaryConfig(
        mode=adv_cfg.pop("mode", "none"),
        **{k: tuple(math.nan if v is None else v for v in vals) for k, vals in adv_cfg.items()},
    )
    counts = mc.simulate(p, ch, adv, seed=cfg["run"]["seed"], n_pulses=n_pulses, workers=m["workers"])
    rows = comparison_table(counts, p, ch)
    thr = m["sigma_threshold"]
    print(f"{'observable':<16}{'analytic':>14}{'empirical':>14}{'trials':>12}{'z':>9}")
    for r in rows:
        print(f"{r['observable']:<16}{r['analytic']:>14.6g}{r['empirical']:>14.6g}{r['trials']:>12d}{r['z']:>9.2f}")
    bad = [r["observable"] for r in rows if not abs(r["z"]) <= thr]
    out = _out_dir(args, cfg)
    mc.write_counts_csv(counts, out / "counts.csv")
    doc = dict(loss_db=loss, adversary=adv.mode, sigma_threshold=thr, params=_params_dict(p), rows=rows, exceeded=bad)
    (out / "validate.json").write_text(json.dumps(_jsonable(doc), indent=2) + "\n")
    if bad:
        print(f"{len(bad)} observable(s) beyond {thr:g} sigma: {', '.join(bad)}")
        return EXIT_INVALID
    print(f"all observables within {thr:g} sigma")
    return EXIT_OK


def _params_dict(p: ProtocolParams) -> dict:
    a_mu, a_nz, a_nx, a_0 = p.fractions
    return dict(mu=p.mu, nu=p.nu, p_z=p.p_z, a_mu=a_mu, a_nu_z=a_nz, a_nu_x=a_nx, a_0=a_0, n_pulses=p.n_total)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="biasdecoy", description="Finite-key rates for biased-basis decoy-state BB84.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration (defaults if omitted)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides run.out)")
    common.add_argument("--seed", type=int, help="random seed (overrides run.seed)")
    common.add_argument("--grid", metavar="START:STOP:STEP", help="loss grid in dB (overrides channel.loss_db)")
    common.add_argument("--scheme", choices=("biased", "standard", "both"))
    sub.add_parser("scan", parents=[common], help="optimize rates over a loss grid, write CSV + manifest")
    p_eval = sub.add_parser("eval", parents=[common], help="evaluate one fully specified parameter set")
    p_eval.add_argument("--loss", type=float, metavar="DB")
    p_val = sub.add_parser("validate", parents=[common], help="Monte Carlo check of the channel model")
    p_val.add_argument("--loss", type=float, metavar="DB", help="overrides mc.loss_db")
    return ap


def _apply_overrides(cfg, args):
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg["run"]["seed"] = args.seed
    if args.grid is not None:
        cfgmod.parse_grid(args.grid)
        cfg["channel"]["loss_db"] = args.grid
    if args.scheme is not None:
        cfg["run"]["scheme"] = args.scheme
    if args.out is not None:
        cfg["run"]["out"] = args.out
    return cfg


def _setup_logging():
    level = _LEVELS.get(os.environ.get("QKD_LOG_LEVEL", "warn").strip().lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


COMMANDS = {"scan": cmd_scan, "eval": cmd_eval, "validate": cmd_validate}


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors, --help, --version
        return int(exc.code or 0)
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.resolve({})
        cfg = _apply_overrides(cfg, args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - the CLI promises exit 2 for any runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
