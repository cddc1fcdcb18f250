"""Command-line front end.

    mmtcdet run --config cfg.json --out results.csv
    mmtcdet sweep --config cfg.json --out-dir out/
    mmtcdet complexity --config cfg.json --out complexity.csv
    mmtcdet validate-config --config cfg.json --set rls.lambda=0.99

Precedence: defaults < config file < MMTC_SEED < ``--set`` overrides.
"""
import argparse
import copy
import json
import math
import os
import sys
from dataclasses import replace

from .adaptive import PRESETS, RlsHyperParams
from .errors import ConfigError
from .harness import (ExperimentConfig, count_complexity, nser, ber, run_experiment,
                      write_results)
from .sysmodel import SystemConfig, build_alphabet

DEFAULTS = {
    "system": {"N": 64, "M": 32, "activity_prob": 0.2, "symbol_var": 1.0,
               "pilot_len": 128, "data_len": 32},
    "variants": ["ORACLE_LMMSE", "AA_CL_DF", "AA_CL_RLS", "AA_RLS_DF", "AA_RLS", "AA_MF_SIC",
                 "SA_SIC", "LMMSE"],
    "snr_grid_db": [0, 2, 4, 6, 8, 10, 12, 14, 16],
    "trials": 2000,
    "coded": False,
    "idd_iterations": 2,
    "seed": 2024,
    "csi": "perfect",
    "csi_error_ratio": 0.2,
    "list_size": 3,
    "sac_lambda": 2.0,
    "rls": {"preset": "desk"},
    "regularized_order": True,
    "force_sac": None,
    "sic_ordering": "norm",
    "per_vector_baselines": False,
    "idd_restart": True,
    "max_spa_iters": 20,
    "ldpc": {"n": 256, "m": 128, "col_weight": 6, "seed": 7},
    "modulation": "QPSK",
    "workers": 1,
}

_RLS_KEYS = {"lambda": "lam", "gamma": "gamma", "beta": "beta", "delta": "delta",
             "relative_delta": "relative_delta"}


def _merge(base, upd, path=""):
    for k, v in upd.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config field '{where}'")
        if isinstance(base[k], dict) and k != "rls":
            if not isinstance(v, dict):
                raise ConfigError(f"config field '{where}' must be an object")
            _merge(base[k], v, where + ".")
        else:
            base[k] = v


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw, assignment):
    """Apply one ``a.b.c=value`` override to a raw config dict (in place)."""
    if "=" not in assignment:
        raise ConfigError(f"override '{assignment}' is not of the form key=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for i, p in enumerate(parts[:-1]):
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config field '{'.'.join(parts[:i + 1])}'")
        node = node[p]
    last = parts[-1]
    if node is not raw.get("rls") and last not in node:
        raise ConfigError(f"unknown config field '{key}'")
    node[last] = _parse_value(text)


def _rls_from(raw):
    rls = dict(raw)
    preset = rls.pop("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"rls.preset must be one of {sorted(PRESETS)}")
    base = PRESETS[preset]
    kw = {}
    for k, v in rls.items():
        if k not in _RLS_KEYS:
            raise ConfigError(f"unknown config field 'rls.{k}'")
        kw[_RLS_KEYS[k]] = bool(v) if k == "relative_delta" else float(v)
    return replace(base, **kw)


def build_config(raw):
    """ExperimentConfig from a fully merged raw dict; errors name the field."""
    s = raw["system"]
    try:
        system = SystemConfig(N=int(s["N"]), M=int(s["M"]), activity_prob=s["activity_prob"],
                              symbol_var=float(s["symbol_var"]), pilot_len=int(s["pilot_len"]),
                              data_len=int(s["data_len"]))
    except ConfigError as exc:
        raise ConfigError(f"system: {exc}") from None
    try:
        rls = _rls_from(raw["rls"])
    except ConfigError as exc:
        raise ConfigError(f"rls: {exc}") from None
    ld = raw["ldpc"]
    try:
        build_alphabet(raw["modulation"])
    except ValueError as exc:
        raise ConfigError(f"modulation: {exc}") from None
    return ExperimentConfig(
        system=system, variants=tuple(raw["variants"]), snr_grid_db=tuple(raw["snr_grid_db"]),
        trials=int(raw["trials"]), coded=bool(raw["coded"]),
        idd_iterations=int(raw["idd_iterations"]), seed=int(raw["seed"]), csi=raw["csi"],
        csi_error_ratio=float(raw["csi_error_ratio"]), list_size=int(raw["list_size"]),
        sac_lambda=float(raw["sac_lambda"]), rls=rls,
        regularized_order=bool(raw["regularized_order"]), force_sac=raw["force_sac"],
        sic_ordering=raw["sic_ordering"], per_vector_baselines=bool(raw["per_vector_baselines"]),
        idd_restart=bool(raw["idd_restart"]), max_spa_iters=int(raw["max_spa_iters"]),
        ldpc_n=int(ld["n"]), ldpc_m=int(ld["m"]), ldpc_col_weight=int(ld["col_weight"]),
        ldpc_seed=int(ld["seed"]), modulation=raw["modulation"], workers=int(raw["workers"]))


def resolve(config_path=None, overrides=(), env=None):
    """Merged raw dict and validated ExperimentConfig."""
    env = os.environ if env is None else env
    raw = copy.deepcopy(DEFAULTS)
    if config_path is not None:
        try:
            with open(config_path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config parse error in {config_path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        _merge(raw, data)
    if env.get("MMTC_SEED"):
        try:
            raw["seed"] = int(env["MMTC_SEED"])
        except ValueError:
            raise ConfigError("MMTC_SEED must be an integer") from None
    for ov in overrides:
        apply_override(raw, ov)
    try:
        cfg = build_config(raw)
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config value: {exc}") from None
    return raw, cfg


def config_to_raw(cfg):
    """Echo form of a resolved ExperimentConfig (same schema as the file)."""
    s = cfg.system
    p = sorted(set(s.activity_prob))
    return {
        "system": {"N": s.N, "M": s.M,
                   "activity_prob": p[0] if len(p) == 1 else list(s.activity_prob),
                   "symbol_var": s.symbol_var, "pilot_len": s.pilot_len, "data_len": s.data_len},
        "variants": list(cfg.variants), "snr_grid_db": list(cfg.snr_grid_db),
        "trials": cfg.trials, "coded": cfg.coded, "idd_iterations": cfg.idd_iterations,
        "seed": cfg.seed, "csi": cfg.csi, "csi_error_ratio": cfg.csi_error_ratio,
        "list_size": cfg.list_size, "sac_lambda": cfg.sac_lambda,
        "rls": {"lambda": cfg.rls.lam, "gamma": cfg.rls.gamma, "beta": cfg.rls.beta,
                "delta": cfg.rls.delta, "relative_delta": cfg.rls.relative_delta},
        "regularized_order": cfg.regularized_order, "force_sac": cfg.force_sac,
        "sic_ordering": cfg.sic_ordering, "per_vector_baselines": cfg.per_vector_baselines,
        "idd_restart": cfg.idd_restart, "max_spa_iters": cfg.max_spa_iters,
        "ldpc": {"n": cfg.ldpc_n, "m": cfg.ldpc_m, "col_weight": cfg.ldpc_col_weight,
                 "seed": cfg.ldpc_seed},
        "modulation": cfg.modulation, "workers": cfg.workers,
    }


def coded_data_len(cfg):
    """Smallest data length >= the configured one that fills whole codewords."""
    Mc = build_alphabet(cfg.modulation).bits_per_symbol
    bits = cfg.system.data_len * Mc
    n_cw = max(1, math.ceil(bits / cfg.ldpc_n))
    total = n_cw * cfg.ldpc_n
    while total % Mc:
        n_cw += 1
        total = n_cw * cfg.ldpc_n
    return total // Mc


def _summary(result, out):
    w = max(len(r.variant) for r in result.records)
    print(f"{'variant':<{w}}  {'snr_db':>6}  {'nser':>10}  {'ber':>10}  {'cmults/sym':>11}",
          file=out)
    for r in result.records:
        vals = [nser(r), ber(r), count_complexity(r)]
        txt = ["NA" if v is None else f"{v:.4g}" for v in vals]
        print(f"{r.variant:<{w}}  {r.snr_db:>6g}  {txt[0]:>10}  {txt[1]:>10}  {txt[2]:>11}",
              file=out)


def _run_one(cfg, path, diag_path, trace_path, quiet):
    result = run_experiment(cfg)
    write_results(result, path, diag_path, trace_path)
    if not quiet:
        print(f"# {path}")
        _summary(result, sys.stdout)
    return result


def cmd_run(args, cfg):
    base = os.path.splitext(args.out)[0]
    _run_one(cfg, args.out, args.diagnostics or base + ".diag.txt",
             base + ".idd.csv" if cfg.coded else None, args.quiet)


SWEEP_SETS = (("uncoded_perfect", False, "perfect"), ("coded_perfect", True, "perfect"),
              ("uncoded_imperfect", False, "imperfect"), ("coded_imperfect", True, "imperfect"))


def cmd_sweep(args, cfg):
    os.makedirs(args.out_dir, exist_ok=True)
    for name, coded, csi in SWEEP_SETS:
        sub = replace(cfg, coded=False, csi=csi)
        if coded:
            sub = replace(sub, coded=True,
                          system=replace(cfg.system, data_len=coded_data_len(cfg)))
        base = os.path.join(args.out_dir, name)
        _run_one(sub, base + ".csv", base + ".diag.txt",
                 base + ".idd.csv" if coded else None, args.quiet)


def cmd_complexity(args, cfg):
    ratio = cfg.system.M / cfg.system.N
    if len(set(cfg.system.activity_prob)) != 1:
        raise ConfigError("complexity sweeps need a uniform system.activity_prob")
    p = cfg.system.activity_prob[0]
    rows = []
    for N in args.n_list:
        M = N if args.square else max(1, int(round(N * ratio)))
        sub = replace(cfg, coded=False, trials=args.trials, snr_grid_db=(cfg.snr_grid_db[0],),
                      per_vector_baselines=True,
                      system=replace(cfg.system, N=N, M=M, activity_prob=p))
        result = run_experiment(sub)
        for r in result.records:
            rows.append((r.variant, N, M, count_complexity(r)))
    with open(args.out, "w") as fh:
        fh.write("variant,N,M,cmults_per_symbol\n")
        for v, N, M, c in sorted(rows, key=lambda t: (cfg.variants.index(t[0]), t[1])):
            fh.write(f"{v},{N},{M},{c:.6e}\n")
    if not args.quiet:
        for v in cfg.variants:
            vals = "  ".join(f"N={N}:{c:.4g}" for vv, N, M, c in rows if vv == v)
            print(f"{v:<14} {vals}")


def make_parser():
    ap = argparse.ArgumentParser(prog="mmtcdet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (defaults used when omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted override, e.g. system.N=64")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("run", help="one experiment, one CSV")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics")
    p = sub.add_parser("sweep", help="four CSVs: (un)coded x (im)perfect CSI")
    common(p)
    p.add_argument("--out-dir", required=True)
    p = sub.add_parser("complexity", help="complex multiplications per symbol versus N")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-list", type=int, nargs="+", default=[16, 32, 64, 128])
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--square", action="store_true", help="use M = N")
    p = sub.add_parser("validate-config", help="check a config and echo the resolved form")
    common(p)
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        _, cfg = resolve(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.command == "validate-config":
        print(json.dumps(config_to_raw(cfg), indent=2, sort_keys=True))
        return 0
    handler = {"run": cmd_run, "sweep": cmd_sweep, "complexity": cmd_complexity}[args.command]
    try:
        handler(args, cfg)
    except (ConfigError, OSError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
