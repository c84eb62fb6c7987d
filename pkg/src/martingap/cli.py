"""Command-line front end.

Every command reads an optional INI config (``--config``), applies
``--set section.key=value`` overrides and the dedicated flags, runs, and
writes its outputs plus ``manifest.json`` into ``--out``.  The manifest
holds the fully resolved config and input digests; ``martingap rerun
manifest.json`` replays a run and reproduces its CSV/JSON byte for byte.

Exit codes: 0 ok, 2 configuration/domain error, 3 predictor/backend error,
4 I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .cotplan import CotParams, plan
from .debias import debias, detect_harmonics
from .errors import BackendError, ConfigError, MartingapError
from .gapstats import (
    GapSeries, SequenceDesign, bootstrap_ci, compare_models, fit_scaling, gap_scan,
    slope_statistic, variance_curve,
)
from .io import digest_bytes, dumps_json, read_csv, write_csv, write_json
from .mdl import efficiency_curve, expected_beta_codelength
from .plots import Figure
from .predictors import (
    BetaBernoulliPredictor, LaplacePredictor, MlePredictor, PositionAwareSurrogate,
    RemoteClientConfig, RemoteLogprobClient, RemotePredictor,
)
from .seqcore import PRNG_ALGORITHM, PeGeometry, binary_entropy

EXIT_OK, EXIT_CONFIG, EXIT_PREDICTOR, EXIT_IO = 0, 2, 3, 4
MANIFEST = "manifest.json"

PREDICTOR_DEFAULTS = {
    "kind": "beta", "alpha0": "1", "beta0": "1",
    "lipschitz": "10", "pe_variance": "0.05316", "period": "64", "statistic": "linear",
    "endpoint": "", "model": "", "cache_dir": ".martingap-cache",
    "api_key_env": "MARTINGAP_API_KEY", "max_concurrency": "10", "max_retries": "3",
    "zero_token": '" 0"', "one_token": '" 1"',
}

COMMAND_DEFAULTS = {
    "gap-scan": {"lengths": "10:198:4", "per_length": "100", "mode": "permutation", "trials": "1"},
    "fit": {"input": "", "resamples": "2000", "level": "0.95"},
    "debias": {"input": "", "period": "64", "trend_form": "lognn", "bandwidth": "", "harmonics": "3"},
    "permavg": {"n": "64", "ks": "1,2,5,10,20,50", "trials": "200", "design": "balanced",
                "p": "0.5", "resamples": "2000", "level": "0.95"},
    "mdl": {"p": "0.5", "lengths": "20,100,200,512", "trials": "100"},
    "cot": {"n": "", "epsilon": "", "h_cot": "", "alpha": "", "b0": "", "b_opt": "0", "k0": "10",
            "beta": "0", "delta": "0.05", "v_max": "50000", "rho": "0.9", "m_b": "1",
            "rope_period": "64", "lipschitz": "", "pe_variance": "",
            "benefit_points": "", "entropy_stream": "", "sample_budget": "100000",
            "j_log_base": "e", "floor_benefit": "false"},
}
USES_PREDICTOR = {"gap-scan", "permavg", "mdl"}
COMMAND_HELP = {
    "gap-scan": "measure permutation or prefix gaps over balanced sequences",
    "fit": "fit log2(n)/n and 1/n scaling laws to a gap series",
    "debias": "remove period-p harmonics from a gap series",
    "permavg": "variance of permutation-averaged predictions versus k",
    "mdl": "sequential code lengths and compression efficiency",
    "cot": "plan a reasoning-token budget",
}
INPUT_KEYS = {"fit": ("input",), "debias": ("input",), "cot": ("benefit_points", "entropy_stream")}


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


def _unquote(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        return value[1:-1]
    return value


def parse_int_list(text: str) -> list[int]:
    """``"10:198:4"`` (inclusive range) or ``"1,2,5"``."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) > 2 else 1
            if step < 1 or len(parts) > 3:
                raise ValueError
            return list(range(start, stop + 1, step))
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse integer list {text!r}") from None


class Section:
    """Typed read access to one resolved config section."""

    def __init__(self, name: str, values: dict):
        self.name = name
        self.values = values

    def raw(self, key: str) -> str:
        return _unquote(self.values[key])

    def str(self, key: str, required: bool = False) -> str:
        v = self.raw(key)
        if required and not v:
            raise ConfigError(f"[{self.name}] {key} is required")
        return v

    def int(self, key: str) -> int:
        try:
            return int(self.str(key, True))
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} must be an integer") from None

    def float(self, key: str, default=None):
        v = self.str(key)
        if not v:
            if default is not None:
                return default
            raise ConfigError(f"[{self.name}] {key} is required")
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} must be a number") from None

    def opt_float(self, key: str):
        return self.float(key) if self.str(key) else None

    def bool(self, key: str) -> bool:
        v = self.str(key).lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off", ""):
            return False
        raise ConfigError(f"[{self.name}] {key} must be a boolean")

    def ints(self, key: str) -> list[int]:
        return parse_int_list(self.str(key, True))


def resolve_config(command: str, config_file: Path | None = None, overrides=(), seed=None,
                   predictor=None, input_path=None) -> dict:
    """Defaults <- config file <- --set overrides <- dedicated flags."""
    cfg = {"run": {"seed": "0"}, command: dict(COMMAND_DEFAULTS[command])}
    if command in USES_PREDICTOR:
        cfg["predictor"] = dict(PREDICTOR_DEFAULTS)

    def assign(section, key, value):
        if section not in cfg or key not in cfg[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        cfg[section][key] = value

    if config_file is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(config_file) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_file}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {config_file}: {exc}") from exc
        for section in parser.sections():
            if section not in cfg:
                continue   # sections for other commands may share a file
            for key, value in parser.items(section):
                assign(section, key, value)
    for item in overrides:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        section, dot, name = key.rpartition(".")
        assign(section if dot else command, name, value)
    if seed is not None:
        cfg["run"]["seed"] = str(seed)
    if predictor is not None:
        assign("predictor", "kind", predictor)
    if input_path is not None:
        assign(command, "input", str(input_path))

    # input paths are recorded absolute so a manifest can be replayed anywhere
    for key in INPUT_KEYS.get(command, ()):
        value = _unquote(cfg[command][key])
        if value:
            cfg[command][key] = str(Path(value).resolve())
    Section("run", cfg["run"]).int("seed")
    return cfg


def build_predictor(sec: Section):
    kind = sec.str("kind")
    base = BetaBernoulliPredictor(sec.float("alpha0"), sec.float("beta0"))
    if kind == "beta":
        return base
    if kind == "laplace":
        return LaplacePredictor()
    if kind == "mle":
        return MlePredictor()
    if kind == "surrogate":
        geo = PeGeometry(sec.float("pe_variance"), sec.int("period"))
        return PositionAwareSurrogate(base, sec.float("lipschitz"), geo, sec.str("statistic"))
    if kind == "remote":
        rc = RemoteClientConfig(
            endpoint=sec.str("endpoint", True), model=sec.str("model", True),
            cache_dir=Path(sec.str("cache_dir", True)), max_concurrency=sec.int("max_concurrency"),
            max_retries=sec.int("max_retries"), api_key_env=sec.str("api_key_env", True),
        )
        return RemotePredictor(RemoteLogprobClient(rc), (sec.raw("zero_token"), sec.raw("one_token")))
    raise ConfigError(f"unknown predictor kind {kind!r}")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


@dataclass
class Context:
    command: str
    config: dict
    out: Path
    seed: int
    input_digest: str

    @property
    def section(self) -> Section:
        return Section(self.command, self.config[self.command])

    @property
    def meta(self) -> dict:
        return {"command": self.command, "seed": self.seed, "input_digest": self.input_digest}

    def path(self, name: str) -> Path:
        return self.out / name

    def json(self, name: str, payload: dict) -> None:
        write_json(self.path(name), {**payload, **self.meta})

    def predictor(self):
        return build_predictor(Section("predictor", self.config["predictor"]))


def _safe_fit(series, form):
    try:
        return fit_scaling(series, form)
    except MartingapError:
        return None


def _gap_figure(series: GapSeries, fits, title: str) -> Figure:
    fig = Figure(title, "context length n", "mean gap (bits)")
    fig.add("observed", series.n, series.mean)
    grid = np.linspace(series.n.min(), series.n.max(), 200)
    for fit in fits:
        if fit is not None:
            fig.add(f"{fit.form}: A={fit.A:.4g} B={fit.B:.3g}", grid, fit.predict(grid), "line")
    return fig


def cmd_gap_scan(ctx: Context) -> str:
    sec = ctx.section
    model = ctx.predictor()
    series = gap_scan(model, sec.ints("lengths"), sec.int("per_length"), sec.str("mode"),
                      ctx.seed, sec.int("trials"))
    series.to_csv(ctx.path("gaps.csv"), {**ctx.meta, "predictor": getattr(model, "name", "model"),
                                         "mode": sec.str("mode")})
    fits = [_safe_fit(series, f) for f in ("lognn", "invn")] if len(series) >= 3 else []
    _gap_figure(series, fits, f"gap scan: {getattr(model, 'name', 'model')}").save(ctx.path("gaps.svg"))
    return f"gap-scan: {len(series)} lengths, mean gap {series.mean.mean():.6g} bits"


def cmd_fit(ctx: Context) -> str:
    sec = ctx.section
    series = GapSeries.from_csv(Path(sec.str("input", True)))
    fits = {f: fit_scaling(series, f) for f in ("lognn", "invn")}
    cmp_ = compare_models(fits["lognn"], fits["invn"])
    intervals = {}
    for form in fits:
        ci = bootstrap_ci(series, slope_statistic(form), sec.int("resamples"), sec.float("level"), ctx.seed)
        intervals[form] = ci.__dict__
    ctx.json("fits.json", {"fits": {f: r.to_dict() for f, r in fits.items()},
                           "comparison": cmp_.to_dict(), "bootstrap_A": intervals})
    write_csv(ctx.path("fit_curves.csv"), ("n", "observed", "lognn", "invn"),
              zip(series.n, series.mean, fits["lognn"].predict(series.n), fits["invn"].predict(series.n)),
              ctx.meta)
    fig = _gap_figure(series, fits.values(), "scaling fits")
    fig.notes.append(f"preferred={cmp_.preferred} LLR={cmp_.llr:.3g}")
    fig.save(ctx.path("fit.svg"))
    return f"fit: preferred={cmp_.preferred} LLR={cmp_.llr:.4g} A_lognn={fits['lognn'].A:.6g}"


def cmd_debias(ctx: Context) -> str:
    sec = ctx.section
    series = GapSeries.from_csv(Path(sec.str("input", True)))
    period, form = sec.int("period"), sec.str("trend_form")
    bandwidth = sec.opt_float("bandwidth")
    before = detect_harmonics(series, period, form)
    result = debias(series, period, form, bandwidth, sec.int("harmonics"))
    after = detect_harmonics(result.series, period, form)
    result.series.to_csv(ctx.path("debiased.csv"), ctx.meta)
    ctx.json("debias.json", {**result.to_dict(), "peaks_before": before.to_dict()["peaks"],
                             "peaks_after": after.to_dict()["peaks"]})
    write_csv(ctx.path("spectrum.csv"), ("period", "power_before", "power_after"),
              zip(before.periods, before.power, after.power), ctx.meta)
    fig = Figure("spectral peaks before/after debiasing", "period (positions)", "power",
                 logx=True, logy=True)
    fig.add("before", before.periods, before.power, "line")
    fig.add("after", after.periods, after.power, "line")
    for p, _ in before.peaks:
        fig.notes.append(f"peak at {p:.1f}")
    fig.save(ctx.path("debias.svg"))
    m = result.metrics
    return (f"debias: peaks {[round(p, 1) for p in before.peak_periods]}, band power reduced "
            f"{m['band_power_reduction_pct']:.1f}%")


def cmd_permavg(ctx: Context) -> str:
    sec = ctx.section
    model = ctx.predictor()
    design = SequenceDesign(sec.int("n"), sec.str("design"), sec.float("p"))
    curve = variance_curve(model, design, sec.ints("ks"), sec.int("trials"), ctx.seed,
                           sec.int("resamples"), sec.float("level"))
    ctx.json("permavg.json", curve.to_dict())
    write_csv(ctx.path("permavg.csv"), ("k", "std"), zip(curve.ks, curve.stds),
              {**ctx.meta, "flagged": curve.flagged or ""})
    fig = Figure("std of permutation-averaged predictions", "k", "std", logx=True, logy=True)
    fig.add("observed", curve.ks, curve.stds)
    if curve.stds[0] > 0:
        fig.add("k^-1/2 reference", curve.ks, [curve.stds[0] * k**-0.5 for k in curve.ks], "line")
    fig.notes.append(curve.flagged or f"exponent={curve.exponent:.3f}")
    fig.save(ctx.path("permavg.svg"))
    if curve.flagged:
        return f"permavg: {curve.flagged}"
    return f"permavg: exponent={curve.exponent:.4f} ci=({curve.ci[0]:.4f}, {curve.ci[1]:.4f})"


def cmd_mdl(ctx: Context) -> str:
    sec = ctx.section
    model = ctx.predictor()
    p = sec.float("p")
    curve = efficiency_curve(model, p, sec.ints("lengths"), sec.int("trials"), ctx.seed)
    h = binary_entropy(p)
    rows = []
    for n, bits in zip(curve.lengths, curve.mean_bits):
        row = {"n": n, "mean_bits": bits, "excess_bits": bits - n * h,
               "excess_bound": 3 * math.sqrt(n * math.log2(n)) if n > 1 else None}
        if isinstance(model, BetaBernoulliPredictor):
            row["expected_bits_exact"] = expected_beta_codelength(n, p, model.alpha0, model.beta0)
        rows.append(row)
    ctx.json("mdl.json", {**curve.to_dict(), "entropy": h, "lengths_detail": rows})
    curve.to_csv(ctx.path("mdl.csv"), ctx.meta)
    fig = Figure(f"compression efficiency: {curve.model}", "n", "H(p) / mean bits per symbol")
    fig.add("efficiency", curve.lengths, curve.efficiency, "line")
    fig.save(ctx.path("mdl.svg"))
    return "mdl: " + " ".join(f"n={n}:{e:.4f}" for n, e in zip(curve.lengths, curve.efficiency))


def _load_benefit_points(path: Path):
    _, rows = read_csv(path)
    try:
        return [(float(r["k"]), float(r["benefit"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: expected columns k, benefit") from exc


def _load_stream(path: Path):
    _, rows = read_csv(path)
    try:
        return [float(r["logprob_bits"]) for r in rows]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: expected column logprob_bits") from exc


def cmd_cot(ctx: Context) -> str:
    sec = ctx.section
    kwargs = dict(n=sec.int("n"), epsilon=sec.float("epsilon"), h_cot=sec.float("h_cot"),
                  alpha=sec.float("alpha"), b0=sec.float("b0"), b_opt=sec.float("b_opt"),
                  k0=sec.float("k0"), delta=sec.float("delta"), v_max=sec.int("v_max"),
                  rho=sec.float("rho"), m_b=sec.float("m_b"), rope_period=sec.int("rope_period"))
    lf, var = sec.opt_float("lipschitz"), sec.opt_float("pe_variance")
    if lf is not None and var is not None:
        params = CotParams.from_architecture(lf, var, **kwargs)
    else:
        params = CotParams(beta=sec.float("beta"), **kwargs)
    points = _load_benefit_points(Path(sec.str("benefit_points"))) if sec.str("benefit_points") else None
    stream = _load_stream(Path(sec.str("entropy_stream"))) if sec.str("entropy_stream") else None
    floor = sec.bool("floor_benefit")
    result = plan(params, benefit_points=points, entropy_stream=stream,
                  sample_budget=sec.int("sample_budget"), j_log_base=sec.str("j_log_base"),
                  floor_benefit=floor)
    ctx.json("plan.json", result.to_dict())
    ks, cost, benefit, penalty = result.cost_table()
    write_csv(ctx.path("cost.csv"), ("k", "total_bits", "benefit_bits", "penalty_bits"),
              zip(ks, cost, benefit, penalty), ctx.meta)
    fig = Figure("reasoning cost F(k)", "k (reasoning tokens)", "bits")
    fig.add("F(k)", ks, cost, "line")
    fig.add("k_final", [result.k_final], [result.costs["final"]])
    fig.notes.append(f"k_closed={result.k_closed:.2f} k_grid={result.k_grid} k_final={result.k_final}")
    fig.save(ctx.path("cot.svg"))
    return "cot: " + result.summary()


COMMANDS = {"gap-scan": cmd_gap_scan, "fit": cmd_fit, "debias": cmd_debias,
            "permavg": cmd_permavg, "mdl": cmd_mdl, "cot": cmd_cot}


# --------------------------------------------------------------------------
# Orchestration
# --------------------------------------------------------------------------


def input_digests(command: str, cfg: dict) -> dict:
    out = {}
    for key in INPUT_KEYS.get(command, ()):
        path = _unquote(cfg[command][key])
        if path:
            try:
                out[path] = digest_bytes(Path(path).read_bytes())
            except FileNotFoundError as exc:
                raise ConfigError(f"input file not found: {path}") from exc
    return out


def execute(command: str, cfg: dict, out: Path) -> tuple[str, dict]:
    inputs = input_digests(command, cfg)
    digest = digest_bytes(dumps_json({"command": command, "config": cfg, "inputs": inputs}).encode())
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(command, cfg, out, int(cfg["run"]["seed"]), digest)
    summary = COMMANDS[command](ctx)
    outputs = {p.name: digest_bytes(p.read_bytes()) for p in sorted(out.iterdir())
               if p.is_file() and p.name != MANIFEST and p.suffix in (".csv", ".json", ".svg")}
    manifest = {"command": command, "config": cfg, "inputs": inputs, "input_digest": digest,
                "seed": ctx.seed, "prng": PRNG_ALGORITHM, "version": __version__,
                "outputs": outputs}
    write_json(out / MANIFEST, manifest)
    return summary, manifest


def rerun(manifest_path: Path, out: Path | None = None) -> tuple[str, dict]:
    try:
        manifest = json.loads(Path(manifest_path).read_text())
        command, cfg = manifest["command"], manifest["config"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{manifest_path} is not a run manifest") from exc
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r} in manifest")
    current = input_digests(command, cfg)
    if current != manifest.get("inputs", {}):
        raise ConfigError("input files changed since the manifest was written")
    return execute(command, cfg, Path(out) if out else Path(manifest_path).parent)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="martingap", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMAND_HELP[name])
        p.add_argument("--config", type=Path, help="INI file; sections [run], [predictor], [%s]" % name)
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value; KEY is section.key or a key of this command")
        if name in USES_PREDICTOR:
            p.add_argument("--predictor", choices=("beta", "surrogate", "laplace", "mle", "remote"))
        if name in ("fit", "debias"):
            p.add_argument("--input", type=Path, help="gap-series CSV")
    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, help="output directory (default: the manifest's)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            summary, _ = rerun(args.manifest, args.out)
        else:
            cfg = resolve_config(args.command, args.config, args.overrides, args.seed,
                                 getattr(args, "predictor", None), getattr(args, "input", None))
            summary, _ = execute(args.command, cfg, args.out)
    except BackendError as exc:
        print(f"error[predictor]: {exc}", file=sys.stderr)
        return EXIT_PREDICTOR
    except (MartingapError, ValueError) as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_IO
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
