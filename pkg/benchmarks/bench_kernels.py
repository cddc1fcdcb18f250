"""Time the hot kernels under the numba and pure-numpy backends.

    python3 benchmarks/bench_kernels.py            # both backends, table
    python3 benchmarks/bench_kernels.py --worker   # one backend (internal)

The backend is fixed at import time, so each one runs in its own process.
"""
import argparse
import json
import os
import subprocess
import sys
import time

CASES = ("rls_update", "train_pilots", "detect_aa_cl_df", "aa_mf_sic", "spa_decode")


def _best(fn, repeat):
    fn()                                 # warm-up (includes JIT compilation)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def worker(N, M, repeat):
    import numpy as np

    from mmtcdet import _accel
    from mmtcdet.adaptive import PRESETS, FilterBank, rls_update, train_on_pilots
    from mmtcdet.baselines import aa_mf_sic_detect
    from mmtcdet.coding import build_ldpc, encode, spa_decode
    from mmtcdet.listdetect import AdaptiveDetector
    from mmtcdet.sysmodel import SystemConfig, build_alphabet, draw_frame, substream

    A = build_alphabet()
    cfg = SystemConfig(N=N, M=M, noise_var=N / 10 ** 1.2, pilot_len=64, data_len=16)
    f = draw_frame(cfg, A, substream(0, 0, "bench"))
    rng = np.random.default_rng(0)
    y = rng.standard_normal(M + N) + 1j * rng.standard_normal(M + N)
    bank = FilterBank(M, N, PRESETS["desk"])

    det = AdaptiveDetector("AA_CL_DF", A, hyper=PRESETS["desk"])
    det.prepare(f)
    code = build_ldpc(256, 128, 6, rng=7)
    cw = encode(code, rng.integers(0, 2, (8, 128)))
    llr = 1.0 * (1 - 2.0 * cw) + rng.standard_normal(cw.shape)

    fns = {
        "rls_update": lambda: rls_update(bank, 0, y, 1.0),
        "train_pilots": lambda: train_on_pilots(FilterBank(M, N, PRESETS["desk"]), f.pilots,
                                                f.Y_pilot),
        "detect_aa_cl_df": lambda: det.detect(f),
        "aa_mf_sic": lambda: aa_mf_sic_detect(f.Y_data, f.H_hat, cfg, A),
        "spa_decode": lambda: spa_decode(code, llr, 20),
    }
    out = {"backend": _accel.BACKEND}
    for name in CASES:
        out[name] = _best(fns[name], repeat)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=16)
    ap.add_argument("--M", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--worker", action="store_true")
    args = ap.parse_args(argv)
    if args.worker:
        print(json.dumps(worker(args.N, args.M, args.repeat)))
        return 0
    res = {}
    for backend in ("numba", "numpy"):
        env = {**os.environ, "MMTCDET_BACKEND": backend}
        cmd = [sys.executable, __file__, "--worker", "--N", str(args.N), "--M", str(args.M),
               "--repeat", str(args.repeat)]
        r = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        res[backend] = json.loads(r.stdout)
    print(f"N={args.N} M={args.M}, best of {args.repeat} (seconds)")
    print(f"{'kernel':<18}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for name in CASES:
        a, b = res["numba"][name], res["numpy"][name]
        print(f"{name:<18}{a:>12.2e}{b:>12.2e}{b / a:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
