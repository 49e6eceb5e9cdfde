"""``exinhawkes`` command-line driver.

Every setting is a flat dotted key (``mcmc.iterations=20000``).  Values come
from the built-in defaults, then ``--config FILE`` (a key=value file or a
previous run's ``manifest.txt``), then ``--set key=value`` and explicit flags.
Exit status: 0 on success, 2 for invalid input, 3 for numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, io
from .baselines import SL_NAMES, SelfLimitingParams, SlConfig, SlPrior, sl_fit, sl_simulate
from .inference import McmcConfig, McmcInitializationError, PriorSpec, hpd_interval, run_mcmc
from .likelihood import QuadratureSpec
from .model import ExInParams, Link, ModelVariant, ValidationError
from .scenarios import HORIZON, SL_HORIZON, SL_TRUTH, reference_params
from .simulate import SimulationExplosion, simulate_replicates

log = logging.getLogger("exinhawkes")

THREADS_ENV = "EXINHAWKES_THREADS"

COMMON = {"seed": "0"}
MCMC = {
    "variant": "exc_inh",
    "link": "log",
    "mcmc.iterations": "20000",
    "mcmc.burn_in": "10000",
    "mcmc.thin": "1",
    "mcmc.adapt_window": "5000",
    "mcmc.target_accept": "0.3",
    "mcmc.chains": "1",
    "mcmc.scale.beta": "0.1",
    "mcmc.scale.alpha": "0.3",
    "mcmc.scale.eta": "0.3",
    "mcmc.scale.gamma": "0.3",
    "mcmc.scale.phi": "0.3",
    "prior.beta_variance": "10",
    "prior.slab_mean": "0",
    "prior.slab_sd": "1",
    "prior.inclusion_alpha": "0.5",
    "prior.inclusion_gamma": "0.5",
    "quad.scheme": "simpson",
    "quad.subdivisions": "20",
    "quad.exact_when_uninhibited": "1",
}
DEFAULTS = {
    "simulate": {**COMMON, "variant": "exc_inh", "horizon": "", "params": ""},
    "fit": {**COMMON, **MCMC, "events": "", "cov": "", "horizon": ""},
    "assess": {**COMMON, "events": "", "cov": "", "horizon": "", "posterior": "", "assess.max_draws": "",
               "assess.level": "0.95", "assess.per_mark": "0"},
    "decompose": {**COMMON, "events": "", "cov": "", "horizon": "", "posterior": "", "assess.max_draws": "",
                  "assess.level": "0.95"},
    "report": {**COMMON, "posterior": "", "assess.level": "0.95"},
    "baseline-sl-simulate": {**COMMON, "horizon": str(SL_HORIZON), **{f"sl.{k}": str(v) for k, v in SL_TRUTH.items()}},
    "baseline-sl-fit": {**COMMON, "events": "", "horizon": "", "mcmc.iterations": "20000", "mcmc.burn_in": "10000",
                        "mcmc.thin": "1", "mcmc.adapt_window": "5000", "mcmc.scale": "0.2", "prior.slab_mean": "0",
                        "prior.slab_sd": "1"},
}


class CliError(ValidationError):
    pass


# -- configuration --------------------------------------------------------------


def _resolve(command: str, args) -> dict[str, str]:
    cfg = dict(DEFAULTS[command])
    if args.config:
        path = Path(args.config)
        doc = io.read_kv(path)
        loaded = io.config_from_manifest(path) if any(k.startswith("config.") for k in doc) else doc
        cfg.update(loaded)
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = v.strip()
    for key, value in vars(args).items():
        if key.startswith("cfg_") and value is not None:
            cfg[FLAG_KEYS[key]] = str(value)
    unknown = set(cfg) - set(DEFAULTS[command])
    if unknown:
        raise CliError(f"unknown settings for {command}: {', '.join(sorted(unknown))}")
    return cfg


FLAG_KEYS = {
    "cfg_seed": "seed",
    "cfg_variant": "variant",
    "cfg_horizon": "horizon",
    "cfg_params": "params",
    "cfg_events": "events",
    "cfg_cov": "cov",
    "cfg_posterior": "posterior",
    "cfg_iterations": "mcmc.iterations",
    "cfg_burn_in": "mcmc.burn_in",
    "cfg_thin": "mcmc.thin",
    "cfg_chains": "mcmc.chains",
    "cfg_link": "link",
    "cfg_max_draws": "assess.max_draws",
    "cfg_per_mark": "assess.per_mark",
}


def _i(cfg, key) -> int:
    try:
        return int(cfg[key])
    except ValueError:
        raise CliError(f"{key} must be an integer, got {cfg[key]!r}") from None


def _f(cfg, key) -> float:
    try:
        return float(cfg[key])
    except ValueError:
        raise CliError(f"{key} must be a number, got {cfg[key]!r}") from None


def _horizon(cfg):
    h = cfg.get("horizon", "")
    if not h:
        return None
    try:
        return [float(x) for x in h.split(",")]
    except ValueError:
        raise CliError(f"horizon must be a number or comma-separated numbers, got {h!r}") from None


def _mcmc_config(cfg) -> McmcConfig:
    return McmcConfig(
        iterations=_i(cfg, "mcmc.iterations"),
        burn_in=_i(cfg, "mcmc.burn_in"),
        thin=_i(cfg, "mcmc.thin"),
        seed=_i(cfg, "seed"),
        scales={b: _f(cfg, f"mcmc.scale.{b}") for b in ("beta", "alpha", "eta", "gamma", "phi")},
        adapt_window=_i(cfg, "mcmc.adapt_window"),
        target_accept=_f(cfg, "mcmc.target_accept"),
        chain_count=_i(cfg, "mcmc.chains"),
        quad=QuadratureSpec(
            scheme=cfg["quad.scheme"],
            subdivisions=_i(cfg, "quad.subdivisions"),
            exact_when_uninhibited=cfg["quad.exact_when_uninhibited"] not in ("0", "false", "False"),
        ),
    )


def _prior(cfg) -> PriorSpec:
    return PriorSpec(
        beta_variance=_f(cfg, "prior.beta_variance"),
        slab_mean=_f(cfg, "prior.slab_mean"),
        slab_sd=_f(cfg, "prior.slab_sd"),
        inclusion_prob_alpha=_f(cfg, "prior.inclusion_alpha"),
        inclusion_prob_gamma=_f(cfg, "prior.inclusion_gamma"),
    )


def _require(cfg, *keys):
    for k in keys:
        if not cfg.get(k):
            raise CliError(f"missing required setting {k}")


def _load_data(cfg, mark_labels=None):
    _require(cfg, "events")
    h = _horizon(cfg)
    data = io.ingest_events(cfg["events"], h if h is None or len(h) > 1 else h[0], mark_labels)
    cov = None
    if cfg.get("cov"):
        cov = io.ingest_covariates(cfg["cov"], max(s.horizon for s in data.sequences))
    return data, cov


def _labels_doc(mark_labels, replicate_labels) -> dict:
    doc = {f"mark.{i}": lab for i, lab in enumerate(mark_labels)}
    doc.update({f"replicate.{i}": lab for i, lab in enumerate(replicate_labels)})
    return doc


def _read_labels(directory: Path, K: int) -> list[str]:
    path = directory / "labels.txt"
    if not path.exists():
        return [str(k) for k in range(K)]
    doc = io.read_kv(path)
    return [doc[f"mark.{k}"] for k in range(K)]


# -- commands ---------------------------------------------------------------------


def cmd_simulate(cfg, out: Path):
    variant = ModelVariant(cfg["variant"])
    params = io.read_params(cfg["params"]) if cfg.get("params") else reference_params(variant)
    horizons = _horizon(cfg) or [HORIZON[variant]]
    if params.replicate_count == 1 and len(horizons) > 1:
        params = ExInParams(
            beta=np.repeat(params.beta, len(horizons), axis=0),
            alpha_star=params.alpha_star,
            gamma_star=params.gamma_star,
            include_alpha=params.include_alpha,
            include_gamma=params.include_gamma,
            eta=params.eta,
            phi=params.phi,
            background_link=params.background_link,
        )
    seqs = simulate_replicates(params, horizons, variant, seed=_i(cfg, "seed"))
    io.write_events(out / "events.csv", seqs)
    io.write_manifest(out, "simulate", cfg, {"params": cfg.get("params")}, ["events.csv"])
    for s in seqs:
        print(f"replicate {s.replicate_id}: {len(s)} events on (0, {s.horizon:g}], counts {s.counts().tolist()}")


def cmd_fit(cfg, out: Path):
    data, cov = _load_data(cfg)
    draws = run_mcmc(
        data.sequences,
        ModelVariant(cfg["variant"]),
        prior=_prior(cfg),
        config=_mcmc_config(cfg),
        cov=cov,
        link=Link(cfg["link"]),
    )
    io.write_draws(out, draws)
    io.write_kv(out / "labels.txt", _labels_doc(data.mark_labels, data.replicate_labels))
    outputs = ["posterior.csv", "posterior.meta", "acceptance.txt", "labels.txt"]
    io.write_manifest(out, "fit", cfg, {"events": cfg["events"], "cov": cfg.get("cov")}, outputs)
    print(f"{len(draws)} draws written to {out / 'posterior.csv'}")


def _draws_and_data(cfg):
    _require(cfg, "posterior")
    pdir = Path(cfg["posterior"])
    draws = io.read_draws(pdir)
    labels = _read_labels(pdir, draws.mark_count)
    data, cov = _load_data(cfg, labels)
    max_draws = _i(cfg, "assess.max_draws") if cfg.get("assess.max_draws") else None
    return draws.evenly_spaced(max_draws), data, cov, labels


def cmd_assess(cfg, out: Path):
    draws, data, cov, labels = _draws_and_data(cfg)
    level = _f(cfg, "assess.level")
    seqs = data.sequences
    res = diagnostics.rtct_increments(seqs, draws, cov, level=level)
    header = ["theoretical", "mean", "lo", "hi"]
    io.write_table(out / "qq.csv", header, res.table())
    outputs = ["qq.csv"]
    msd = {"msd": io.fmt(diagnostics.qq_msd(res))}
    if cfg["assess.per_mark"] not in ("0", ""):
        for k, lab in enumerate(labels):
            r = diagnostics.rtct_increments(seqs, draws, cov, mark=k, level=level)
            name = f"qq_mark_{lab}.csv"
            io.write_table(out / name, header, r.table())
            outputs.append(name)
            msd[f"msd.mark.{lab}"] = io.fmt(diagnostics.qq_msd(r))
    io.write_kv(out / "msd.txt", msd)
    pw = diagnostics.pointwise_matrix(seqs, draws, cov)
    lppd, p_waic = diagnostics.waic_components(pw)
    w = -2.0 * (lppd - p_waic)
    io.write_kv(out / "waic.txt", {"waic": io.fmt(w), "waic_1e4": io.fmt(w / 1e4), "lppd": io.fmt(lppd),
                                   "p_waic": io.fmt(p_waic), "draws": len(draws)})
    outputs += ["msd.txt", "waic.txt"]
    io.write_manifest(out, "assess", cfg, {"events": cfg["events"], "cov": cfg.get("cov"),
                                           "posterior": str(Path(cfg["posterior"]) / "posterior.csv")}, outputs)
    print(f"MSD {diagnostics.qq_msd(res):.6g}  WAIC {w:.6g}")


def cmd_decompose(cfg, out: Path):
    draws, data, cov, labels = _draws_and_data(cfg)
    rep = diagnostics.decomposition_report(data.sequences, draws, cov, level=_f(cfg, "assess.level"))
    hpd = rep.hpd()
    mean = rep.mean
    with (out / "decomposition.csv").open("w", encoding="utf-8") as fh:
        fh.write("mark,component,mean,hpd_lo,hpd_hi,observed\n")
        for k, lab in enumerate(labels):
            for c, comp in enumerate(("background", "excitation")):
                fh.write(f"{lab},{comp},{io.fmt(mean[k, c])},{io.fmt(hpd[k, c, 0])},{io.fmt(hpd[k, c, 1])},"
                         f"{int(rep.observed[k])}\n")
    io.write_manifest(out, "decompose", cfg, {"events": cfg["events"], "cov": cfg.get("cov"),
                                              "posterior": str(Path(cfg["posterior"]) / "posterior.csv")},
                      ["decomposition.csv"])
    print(f"decomposition written to {out / 'decomposition.csv'}")


def report_text(draws, labels, level: float = 0.95) -> str:
    """Posterior means and HPD intervals with original mark labels."""
    lines = [f"variant: {draws.variant.value}", f"draws: {len(draws)}", f"{int(level * 100)}% HPD intervals", ""]

    def row(name, x, extra=""):
        lo, hi = hpd_interval(x, level) if x.size >= 2 else (x[0], x[0])
        return f"{name:<28s} {x.mean():>12.4f}  ({lo:.4f}, {hi:.4f}){extra}"

    D, K, P = draws.replicate_count, draws.mark_count, draws.covariate_dim
    for d in range(D):
        for k in range(K):
            for p in range(P):
                lines.append(row(f"beta[{d},{labels[k]},{p}]", draws.column(f"beta.{d}.{k}.{p}")))
    ia, ig = draws.inclusion_probability()
    for kind, prob in (("alpha", ia), ("gamma", ig)):
        for l in range(K):
            for k in range(K):
                x = draws.effective(f"{kind}.{l}.{k}")
                lines.append(row(f"{kind}[{labels[l]},{labels[k]}]", x, f"  P(incl)={prob[l, k]:.3f}"))
    for kind in ("eta", "phi"):
        for l in range(K):
            lines.append(row(f"{kind}[{labels[l]}]", draws.column(f"{kind}.{l}")))
    return "\n".join(lines) + "\n"


def cmd_report(cfg, out: Path, dump_params: str | None):
    _require(cfg, "posterior")
    pdir = Path(cfg["posterior"])
    draws = io.read_draws(pdir)
    labels = _read_labels(pdir, draws.mark_count)
    (out / "report.txt").write_text(report_text(draws, labels, _f(cfg, "assess.level")), encoding="utf-8")
    outputs = ["report.txt"]
    if dump_params:
        io.write_params(dump_params, draws.point_estimate())
    io.write_manifest(out, "report", cfg, {"posterior": str(pdir / "posterior.csv")}, outputs)
    print((out / "report.txt").read_text(encoding="utf-8"), end="")


def cmd_sl_simulate(cfg, out: Path):
    params = SelfLimitingParams(*[_f(cfg, f"sl.{n}") for n in SL_NAMES])
    times = sl_simulate(params, _f(cfg, "horizon"), _i(cfg, "seed"))
    with (out / "events.csv").open("w", encoding="utf-8") as fh:
        fh.write("time,mark,replicate\n")
        for t in times:
            fh.write(f"{io.fmt(t)},0,0\n")
    io.write_manifest(out, "baseline-sl simulate", cfg, {}, ["events.csv"])
    print(f"{times.size} events on (0, {_f(cfg, 'horizon'):g}]")


def cmd_sl_fit(cfg, out: Path):
    h = _horizon(cfg)
    data, _ = _load_data({**cfg, "cov": ""})
    if len(data.sequences) != 1:
        raise CliError("the self-limiting baseline takes a single replicate")
    seq = data.sequences[0]
    horizon = h[0] if h else seq.horizon
    config = SlConfig(
        iterations=_i(cfg, "mcmc.iterations"),
        burn_in=_i(cfg, "mcmc.burn_in"),
        thin=_i(cfg, "mcmc.thin"),
        seed=_i(cfg, "seed"),
        scale=_f(cfg, "mcmc.scale"),
        adapt_window=_i(cfg, "mcmc.adapt_window"),
    )
    draws = sl_fit(seq.times, horizon, SlPrior(_f(cfg, "prior.slab_mean"), _f(cfg, "prior.slab_sd")), config)
    io.write_table(out / "sl_posterior.csv", list(SL_NAMES) + ["loglik"], np.column_stack([draws.values, draws.loglik]))
    summary = {}
    for name, (mean, lo, hi) in draws.summary().items():
        summary[f"{name}.mean"] = io.fmt(mean)
        summary[f"{name}.hpd_lo"] = io.fmt(lo)
        summary[f"{name}.hpd_hi"] = io.fmt(hi)
    io.write_kv(out / "sl_summary.txt", summary)
    io.write_manifest(out, "baseline-sl fit", cfg, {"events": cfg["events"]}, ["sl_posterior.csv", "sl_summary.txt"])
    for name, (mean, lo, hi) in draws.summary().items():
        print(f"{name:<6s} {mean:.4f}  ({lo:.4f}, {hi:.4f})")


# -- argument parsing ---------------------------------------------------------------


def _common(p: argparse.ArgumentParser, *flags: str):
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.add_argument("--config", help="key=value settings file or a previous manifest.txt")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")
    p.add_argument("--seed", dest="cfg_seed", type=int)
    p.add_argument("--threads", type=int, help=f"worker processes for chains (also {THREADS_ENV})")
    table = {
        "variant": dict(dest="cfg_variant", choices=[v.value for v in ModelVariant]),
        "horizon": dict(dest="cfg_horizon", help="horizon, or comma-separated horizons per replicate"),
        "params": dict(dest="cfg_params", help="parameter file (key=value)"),
        "events": dict(dest="cfg_events", help="events CSV with header time,mark[,replicate]"),
        "cov": dict(dest="cfg_cov", help="covariates CSV with header time,value..."),
        "posterior": dict(dest="cfg_posterior", help="directory written by fit"),
        "iterations": dict(dest="cfg_iterations", type=int),
        "burn-in": dict(dest="cfg_burn_in", type=int),
        "thin": dict(dest="cfg_thin", type=int),
        "chains": dict(dest="cfg_chains", type=int),
        "link": dict(dest="cfg_link", choices=[l.value for l in Link]),
        "max-draws": dict(dest="cfg_max_draws", type=int, help="evenly thin the draws to at most this many"),
        "per-mark": dict(dest="cfg_per_mark", action="store_const", const=1, help="also write per-mark Q-Q tables"),
    }
    for f in flags:
        p.add_argument(f"--{f}", **table[f])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exinhawkes", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("simulate", help="simulate event data"), "variant", "horizon", "params")
    _common(sub.add_parser("fit", help="sample the posterior"), "variant", "events", "cov", "horizon", "iterations",
            "burn-in", "thin", "chains", "link")
    _common(sub.add_parser("assess", help="residual Q-Q table, MSD and WAIC"), "events", "cov", "horizon",
            "posterior", "max-draws", "per-mark")
    _common(sub.add_parser("decompose", help="background/excitation count decomposition"), "events", "cov",
            "horizon", "posterior", "max-draws")
    rp = sub.add_parser("report", help="posterior means and HPD intervals")
    _common(rp, "posterior")
    rp.add_argument("--dump-params", help="also write the median-probability point estimate to this file")
    sl = sub.add_parser("baseline-sl", help="univariate self-limiting Hawkes baseline")
    slsub = sl.add_subparsers(dest="verb", required=True)
    _common(slsub.add_parser("simulate"), "horizon")
    _common(slsub.add_parser("fit"), "events", "horizon", "iterations", "burn-in", "thin")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    key = args.command if args.command != "baseline-sl" else f"baseline-sl-{args.verb}"
    if args.threads is not None:
        os.environ[THREADS_ENV] = str(args.threads)
    try:
        cfg = _resolve(key, args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            if key == "simulate":
                cmd_simulate(cfg, out)
            elif key == "fit":
                cmd_fit(cfg, out)
            elif key == "assess":
                cmd_assess(cfg, out)
            elif key == "decompose":
                cmd_decompose(cfg, out)
            elif key == "report":
                cmd_report(cfg, out, args.dump_params)
            elif key == "baseline-sl-simulate":
                cmd_sl_simulate(cfg, out)
            else:
                cmd_sl_fit(cfg, out)
    except (ValidationError, OSError, KeyError) as e:
        print(f"error: invalid input: {e}", file=sys.stderr)
        return 2
    except (McmcInitializationError, SimulationExplosion, FloatingPointError, RuntimeError) as e:
        print(f"error: numerical failure: {e}", file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
