"""Monte-Carlo experiment engine.

Every trial draws its frame from a substream derived from (seed, trial
index), so the same trial sees the same activity, channel, symbols and
noise shape at every SNR point and CSI setting. All metrics are integer
counters summed over trials, which makes the result independent of how
trials are scheduled across worker processes.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
import csv
import io

import numpy as np

from . import complexity as cx
from .adaptive import PRESETS, RlsHyperParams
from .baselines import BaselineDetector
from .coding import build_ldpc
from .errors import ConfigError, NumericalError
from .idd import idd_run
from .listdetect import AdaptiveDetector, SacConfig, Variant
from .sysmodel import SystemConfig, build_alphabet, draw_frame, snr_to_noise_var, substream

ADAPTIVE = tuple(v.value for v in Variant)
BASELINES = BaselineDetector.NAMES
ALL_VARIANTS = ("ORACLE_LMMSE", "AA_CL_DF", "AA_CL_RLS", "AA_RLS_DF", "AA_RLS", "AA_MF_SIC",
                "SA_SIC", "LMMSE")
CSV_HEADER = ("variant", "snr_db", "csi", "coded", "idd_iter", "trials", "nser", "ber",
              "fa_rate", "miss_rate", "cmults_per_symbol", "seed")
NA = "NA"


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    variants: tuple = ALL_VARIANTS
    snr_grid_db: tuple = (12.0,)
    trials: int = 2000
    coded: bool = False
    idd_iterations: int = 2
    seed: int = 2024
    csi: str = "perfect"
    csi_error_ratio: float = 0.2          # sigma_e^2 / sigma_v^2 when csi == "imperfect"
    list_size: int = 3
    sac_lambda: float = 2.0
    rls: RlsHyperParams = PRESETS["desk"]
    regularized_order: bool = True
    force_sac: str = None                 # None, "reliable" or "unreliable"
    sic_ordering: str = "norm"
    per_vector_baselines: bool = False
    idd_restart: bool = True
    max_spa_iters: int = 20
    ldpc_n: int = 256
    ldpc_m: int = 128
    ldpc_col_weight: int = 6
    ldpc_seed: int = 7
    modulation: str = "QPSK"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(self.variants))
        object.__setattr__(self, "snr_grid_db", tuple(float(s) for s in self.snr_grid_db))
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.snr_grid_db:
            raise ConfigError("snr_grid_db must be nonempty")
        if not self.variants:
            raise ConfigError("variants must be nonempty")
        for v in self.variants:
            if v not in ADAPTIVE + BASELINES:
                raise ConfigError(f"unknown variant {v!r}")
        if self.csi not in ("perfect", "imperfect"):
            raise ConfigError("csi must be 'perfect' or 'imperfect'")
        if self.csi_error_ratio < 0:
            raise ConfigError("csi_error_ratio must be >= 0")
        if not 1 <= self.list_size <= 5:
            raise ConfigError("list_size must be in 1..|A_0|")
        if self.sac_lambda <= 1:
            raise ConfigError("sac_lambda must be > 1")
        if self.force_sac not in (None, "reliable", "unreliable"):
            raise ConfigError("force_sac must be null, 'reliable' or 'unreliable'")
        if self.sic_ordering not in ("norm", "sinr"):
            raise ConfigError("sic_ordering must be 'norm' or 'sinr'")
        if self.idd_iterations < 1:
            raise ConfigError("idd_iterations must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.coded:
            Mc = build_alphabet(self.modulation).bits_per_symbol
            if (self.system.data_len * Mc) % self.ldpc_n or self.system.data_len == 0:
                raise ConfigError(f"coded runs need system.data_len*{Mc} to be a positive "
                                  f"multiple of ldpc_n={self.ldpc_n}")
        if self.system.data_len < 1:
            raise ConfigError("system.data_len must be >= 1")

    @property
    def rate(self):
        return (self.ldpc_n - self.ldpc_m) / self.ldpc_n if self.coded else 1.0


@dataclass
class MetricsRecord:
    """Integer tallies for one (variant, SNR) point."""
    variant: str
    snr_db: float
    symbol_errors: int = 0
    active_symbols: int = 0
    bit_errors: int = 0
    bit_count: int = 0
    false_alarms: int = 0
    inactive_symbols: int = 0
    missed: int = 0
    complex_mults: int = 0
    symbols_detected: int = 0
    trials_run: int = 0
    trials_skipped: int = 0
    resets: int = 0
    raw_bit_errors: int = 0
    raw_bit_count: int = 0
    idd_bit_errors: tuple = ()
    mults_by_kind: tuple = (0,) * cx.N_CATEGORIES

    _COUNTS = ("symbol_errors", "active_symbols", "bit_errors", "bit_count", "false_alarms",
               "inactive_symbols", "missed", "complex_mults", "symbols_detected", "trials_run",
               "trials_skipped", "resets", "raw_bit_errors", "raw_bit_count")

    def merge(self, other):
        for name in self._COUNTS:
            setattr(self, name, getattr(self, name) + getattr(other, name))
        a, b = self.idd_bit_errors, other.idd_bit_errors
        n = max(len(a), len(b))
        a, b = a + (0,) * (n - len(a)), b + (0,) * (n - len(b))
        self.idd_bit_errors = tuple(x + y for x, y in zip(a, b))
        self.mults_by_kind = tuple(x + y for x, y in zip(self.mults_by_kind, other.mults_by_kind))
        return self

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _rate(num, den):
    return num / den if den > 0 else None


def nser(rec):
    return _rate(rec.symbol_errors, rec.active_symbols)


def ber(rec):
    return _rate(rec.bit_errors, rec.bit_count)


def raw_ber(rec):
    return _rate(rec.raw_bit_errors, rec.raw_bit_count)


def false_alarm_rate(rec):
    return _rate(rec.false_alarms, rec.inactive_symbols)


def miss_rate(rec):
    return _rate(rec.missed, rec.active_symbols)


def idd_ber(rec, iteration):
    """BER after outer iteration ``iteration`` (1-based)."""
    return _rate(rec.idd_bit_errors[iteration - 1], rec.bit_count)


def count_complexity(rec):
    """Complex multiplications per detected symbol (device-period)."""
    return _rate(rec.complex_mults, rec.symbols_detected)


# ------------------------------------------------------------ trial engine

class _Context:
    """Per-process immutable resources shared by all trials of one experiment."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.alphabet = build_alphabet(cfg.modulation)
        self.code = (build_ldpc(cfg.ldpc_n, cfg.ldpc_m, cfg.ldpc_col_weight, rng=cfg.ldpc_seed)
                     if cfg.coded else None)
        self.sac = SacConfig(cfg.sac_lambda)
        self.systems = []
        for snr in cfg.snr_grid_db:
            nv = snr_to_noise_var(snr, cfg.system.N, cfg.rate, cfg.system.symbol_var)
            ev = cfg.csi_error_ratio * nv if cfg.csi == "imperfect" else 0.0
            self.systems.append(replace(cfg.system, noise_var=nv, csi_error_var=ev))

    def detector(self, name, system):
        cfg = self.cfg
        if name in ADAPTIVE:
            return AdaptiveDetector(name, self.alphabet, hyper=cfg.rls, sac=self.sac,
                                    K=cfg.list_size, regularized_order=cfg.regularized_order,
                                    force_sac=cfg.force_sac, restart=cfg.idd_restart,
                                    symbol_var=system.symbol_var)
        return BaselineDetector(name, system, self.alphabet, sac=self.sac, K=cfg.list_size,
                                ordering=cfg.sic_ordering, per_vector=cfg.per_vector_baselines)


def _uncoded_bit_errors(frame, out, alphabet):
    """Bit errors over active devices; a zero decision is demapped to the
    active point nearest the filter output."""
    act = frame.active_mask
    dec = out.decisions[act]
    soft = out.soft[act] / np.where(np.abs(out.mu[act]) > 1e-12, out.mu[act], 1.0)
    nearest = np.argmin(np.abs(soft[..., None] - alphabet.active_points), axis=-1)
    idx = np.where(dec > 0, dec - 1, nearest)
    bits = alphabet.bits01[idx].reshape(dec.shape[0], dec.shape[1] * alphabet.bits_per_symbol)
    return int(np.sum(bits != frame.bit_payload[act])), bits.size


def _score(rec, frame, out):
    act = frame.active_mask
    truth = frame.data_index
    Td = truth.shape[1]
    dec = out.decisions
    rec.symbol_errors += int(np.sum(dec[act] != truth[act]))
    rec.active_symbols += int(act.sum()) * Td
    rec.missed += int(np.sum(dec[act] == 0))
    rec.false_alarms += int(np.sum(dec[~act] != 0))
    rec.inactive_symbols += int((~act).sum()) * Td
    rec.symbols_detected += dec.size


def run_trial(ctx, trial):
    """All (variant, SNR) tallies of one trial; returns (records, diagnostics)."""
    cfg = ctx.cfg
    recs, diags = {}, []
    for si, (snr, system) in enumerate(zip(cfg.snr_grid_db, ctx.systems)):
        frame = draw_frame(system, ctx.alphabet, substream(cfg.seed, trial, "frame"), ctx.code)
        trained = {}
        for name in cfg.variants:
            rec = MetricsRecord(name, snr)
            recs[(name, si)] = rec
            counters = cx.new_counters()
            det = ctx.detector(name, system)
            try:
                with np.errstate(all="ignore"):
                    if name in ADAPTIVE:
                        key = det.variant.feedback
                        if key not in trained:
                            c0 = cx.new_counters()
                            det.prepare(frame, c0, soft=cfg.coded)
                            trained[key] = (det._bank, det._stats, c0)
                        bank, stats, c0 = trained[key]
                        det._bank = bank.copy()
                        det._stats = None if stats is None else stats.copy()
                        counters += c0
                    if cfg.coded:
                        res = idd_run(frame, det, ctx.code, cfg.idd_iterations, system.p,
                                      ctx.alphabet, cfg.max_spa_iters, diagnostics=None,
                                      counters=counters)
                        out_dec = res.decisions
                        rec.bit_errors += res.bit_errors[-1]
                        rec.bit_count += res.bit_count
                        rec.idd_bit_errors = tuple(res.bit_errors)
                        rec.raw_bit_errors += res.raw_bit_errors
                        rec.raw_bit_count += res.raw_bit_count
                        _score(rec, frame, _Decisions(out_dec))
                    else:
                        out = det.detect(frame, counters=counters)
                        e, n = _uncoded_bit_errors(frame, out, ctx.alphabet)
                        rec.bit_errors += e
                        rec.bit_count += n
                        _score(rec, frame, out)
            except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
                fresh = MetricsRecord(name, snr, trials_skipped=1)
                recs[(name, si)] = fresh
                diags.append(f"trial={trial} variant={name} snr_db={snr:g} skipped: {exc}")
                continue
            if name in ADAPTIVE:
                resets = int(det.last_bank.resets[0]) if hasattr(det, "last_bank") else 0
                rec.resets += resets
                if resets:
                    diags.append(f"trial={trial} variant={name} snr_db={snr:g} "
                                 f"rls_resets={resets}")
            rec.complex_mults += int(counters.sum())
            rec.mults_by_kind = tuple(int(c) for c in counters)
            rec.trials_run += 1
    return recs, diags


@dataclass
class _Decisions:
    decisions: np.ndarray


def _run_chunk(cfg, trials):
    ctx = _Context(cfg)
    total, diags = {}, []
    for t in trials:
        recs, d = run_trial(ctx, t)
        diags.extend(d)
        for k, r in recs.items():
            if k in total:
                total[k].merge(r)
            else:
                total[k] = r
    return total, diags


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list            # MetricsRecord, ordered by (variant, snr) as configured
    diagnostics: list

    def get(self, variant, snr_db):
        for r in self.records:
            if r.variant == variant and r.snr_db == float(snr_db):
                return r
        raise KeyError((variant, snr_db))


def run_experiment(cfg, progress=None):
    """Run every (variant, SNR, trial) of ``cfg``.

    With ``cfg.workers > 1`` trials are split into contiguous chunks run in
    separate processes; tallies are merged by integer addition, so the
    result does not depend on the worker count.
    """
    trials = list(range(cfg.trials))
    if cfg.workers == 1:
        parts = [_run_chunk(cfg, trials)]
    else:
        n = min(cfg.workers, len(trials))
        chunks = [c.tolist() for c in np.array_split(np.array(trials), n)]
        with ProcessPoolExecutor(max_workers=n) as pool:
            parts = list(pool.map(_run_chunk, [cfg] * n, chunks))
    merged, diags = {}, []
    for recs, d in parts:
        diags.extend(d)
        for k, r in recs.items():
            if k in merged:
                merged[k].merge(r)
            else:
                merged[k] = r
    ordered = [merged[(v, si)] for v in cfg.variants for si in range(len(cfg.snr_grid_db))]
    return ExperimentResult(cfg, ordered, sorted(diags, key=_diag_key))


def _diag_key(line):
    head = line.split()[0]
    return (int(head.split("=")[1]), line)


# ----------------------------------------------------------- serialization

def _fmt(x):
    return NA if x is None else f"{x:.6e}"


def results_csv(result):
    """CSV text with one row per (variant, SNR)."""
    cfg = result.config
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in result.records:
        w.writerow([r.variant, f"{r.snr_db:g}", cfg.csi, int(cfg.coded),
                    cfg.idd_iterations if cfg.coded else 0, r.trials_run, _fmt(nser(r)),
                    _fmt(ber(r)), _fmt(false_alarm_rate(r)), _fmt(miss_rate(r)),
                    _fmt(count_complexity(r)), cfg.seed])
    return buf.getvalue()


def idd_trace_csv(result):
    """Per-iteration BER of coded runs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("variant", "snr_db", "iteration", "bit_errors", "bit_count", "ber"))
    for r in result.records:
        w.writerow([r.variant, f"{r.snr_db:g}", 0, r.raw_bit_errors, r.raw_bit_count,
                    _fmt(raw_ber(r))])
        for i, e in enumerate(r.idd_bit_errors, 1):
            w.writerow([r.variant, f"{r.snr_db:g}", i, e, r.bit_count, _fmt(idd_ber(r, i))])
    return buf.getvalue()


def write_results(result, path, diagnostics_path=None, idd_trace_path=None):
    with open(path, "w", newline="") as fh:
        fh.write(results_csv(result))
    if diagnostics_path is not None:
        with open(diagnostics_path, "w") as fh:
            fh.writelines(line + "\n" for line in result.diagnostics)
    if idd_trace_path is not None and result.config.coded:
        with open(idd_trace_path, "w", newline="") as fh:
            fh.write(idd_trace_csv(result))
