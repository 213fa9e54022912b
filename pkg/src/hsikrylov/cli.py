"""Command-line entry points.

Exit codes: 0 success, 1 numeric failure, 2 usage or I/O error.  Every
command writes ``manifest.json`` next to its outputs; ``hsikrylov replay``
re-runs a manifest.  The default output directory comes from
``HSIKRYLOV_OUTDIR`` (falling back to ``./hsikrylov_out``).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import aperture as ap
from .baselines import hadamard_acquire_full, rowcol_acquire, rowcol_recover
from .cube import CubeFormatError, HsiCube, load_cube, save_cube, synth_lowrank_scene
from .krylov import KrylovConfig, krism, reconstruct, save_factors
from .optics import BlurKernels, OpticalParams, blur_cube, make_kernels
from .recovery import DeconvConfig, deconv_factors, rsnr, sam_aligned, write_metrics_csv
from .sensing import Instrument, NoiseModel, budget_from_log

ENV_OUTDIR = "HSIKRYLOV_OUTDIR"


class UsageError(Exception):
    pass


def default_outdir() -> Path:
    return Path(os.environ.get(ENV_OUTDIR, "hsikrylov_out"))


# -- artifact writers --------------------------------------------------------


def write_pgm(path, img: np.ndarray) -> Path:
    """8-bit binary PGM (rows = y) plus a sibling JSON with the linear scaling."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    q = np.clip(np.rint((img - lo) * scale), 0, 255).astype(np.uint8)
    rows = q.T  # x across, y down
    header = f"P5\n{rows.shape[1]} {rows.shape[0]}\n255\n".encode()
    path.write_bytes(header + rows.tobytes())
    path.with_suffix(".json").write_text(json.dumps(
        {"min": lo, "max": hi, "scale": scale, "mapping": "pixel = round((value - min) * scale)"}, indent=2))
    return path


def write_manifest(outdir: Path, command: str, argv: list[str], params: dict, seeds: dict,
                   inputs: dict, outputs: list, started: float) -> Path:
    manifest = {
        "command": command,
        "argv": argv,
        "params": params,
        "seeds": seeds,
        "inputs": inputs,
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "started_utc": datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        "wall_clock_s": time.time() - started,
    }
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str))
    return path


def _outdir(args) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else default_outdir()
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- design-code -------------------------------------------------------------


def cmd_design_code(args, argv) -> int:
    started = time.time()
    out = _outdir(args)
    if args.mode == "exhaustive":
        code, score = ap.search_code_exhaustive(
            args.n, args.nlambda, args.alpha, args.objective, args.band_limit,
            args.pitch_um, args.height_mm, force=args.force, workers=args.workers)
    else:
        code, score = ap.search_code_heuristic(
            args.n, args.nlambda, args.alpha, args.objective, args.restarts, args.flips,
            args.seed, args.band_limit, args.pitch_um, args.height_mm)
    code_path = code.save(out / "code.json")
    score_path = ap.write_score_csv(out / "score.csv", [(args.n, args.alpha, args.objective, score)])
    resp = ap.frequency_response(code, args.nlambda)
    resp_path = out / "response.csv"
    with resp_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve", "freq", "value"])
        for f, v in zip(resp["spectral_freq"], resp["spectral_mag"]):
            w.writerow(["spectral_mag", repr(float(f)), repr(float(v))])
        for f, v in zip(resp["spatial_freq"], resp["spatial_psd"]):
            w.writerow(["spatial_psd", repr(float(f)), repr(float(v))])
    print(f"code {''.join(map(str, code.bits))} objective {score.objective:.6g} "
          f"min|A| {score.min_dft_mag:.6g} min c {score.min_autocorr} throughput {score.throughput}")
    write_manifest(out, "design-code", argv, vars_clean(args), {"seed": args.seed}, {},
                   [code_path, score_path, resp_path], started)
    return 0


# -- simulate ----------------------------------------------------------------


def _load_scene(path) -> HsiCube:
    return load_cube(path)


def _kernels(args, scene: HsiCube) -> tuple[BlurKernels, OpticalParams | None]:
    if not args.code:
        return BlurKernels.identity(scene.wavelengths), None
    code = ap.ApertureCode.load(args.code)
    params = OpticalParams.load(args.optics) if args.optics else OpticalParams()
    return make_kernels(code, params, scene.wavelengths, max_halfwidth_px=args.psf_halfwidth), params


def _noise(args) -> NoiseModel:
    return NoiseModel.from_db(args.noise_db, seed=args.seed, photon_noise=not args.no_photon)


def _spectral_sam(X: np.ndarray, V: np.ndarray, k: int) -> float:
    _, _, Vt = np.linalg.svd(X, full_matrices=False)
    return float(np.mean([sam_aligned(Vt[i], V[:, i]) for i in range(k)]))


def cmd_simulate(args, argv) -> int:
    started = time.time()
    scene = _load_scene(args.scene)
    out = Path(args.outdir) if args.outdir else default_outdir()
    out.mkdir(parents=True, exist_ok=True)
    kernels, _ = _kernels(args, scene)
    blurred = blur_cube(scene, kernels)
    instr = Instrument(blurred, _noise(args))
    cfg = KrylovConfig(args.rank, args.iters, init=args.init, seed=args.seed)
    factors = krism(instr, cfg)
    if args.code:
        factors = deconv_factors(
            factors, kernels,
            DeconvConfig(args.spectral_deconv, wiener_nsr=args.nsr, eta=args.eta),
            DeconvConfig(args.spatial_deconv, wiener_nsr=args.nsr, tv_weight=args.tv_weight,
                         tv_iters=args.tv_iters),
            k=args.rank)
    recon = reconstruct(factors, args.rank)
    X = scene.matrix().astype(np.float64)
    b = budget_from_log(instr.log, scene.nx, scene.ny, scene.nl)
    row = {
        "scene": Path(args.scene).stem, "method": "krism", "k": args.rank, "L": factors.iters,
        "noise_db": args.noise_db, "rsnr_db": rsnr(X, recon.matrix()),
        "sam_deg": _spectral_sam(X, factors.V, args.rank), "exposures": instr.log.exposures(),
        "compression": b.compression,
    }
    outputs = list(save_factors(factors, out / "factors"))
    outputs += list(save_cube(recon, out / "recon"))
    outputs.append(write_metrics_csv(out / "metrics.csv", [row]))
    outputs.append(instr.log.write_csv(out / "log.csv"))
    for j in sorted({0, scene.nl // 2, scene.nl - 1}):
        outputs.append(write_pgm(out / f"band_{j:03d}.pgm", recon.band(j)))
    print(f"rsnr {row['rsnr_db']:.3f} dB  sam {row['sam_deg']:.3f} deg  "
          f"exposures {row['exposures']}  N/M {row['compression']:.3f}")
    write_manifest(out, "simulate", argv, vars_clean(args), {"seed": args.seed},
                   {"scene": args.scene, "code": args.code, "optics": args.optics}, outputs, started)
    return 0


# -- benchmark ---------------------------------------------------------------


def match_rowcol_sizes(krism_log, iters: int, parity: str) -> tuple[int, int]:
    """Row/Col sketch sizes ``(p_col, p_row)`` matching a KRISM run's budget.

    ``measurements``: as many signed images and spectra as KRISM took.
    ``exposures``: ``p_col = iters`` images and the fewest sketched spectra
    whose exposure total reaches KRISM's (each Gaussian code costs two).
    """
    if parity == "measurements":
        return krism_log.measurements("spatial"), krism_log.measurements("spectral")
    p_col = iters
    p_row = max(1, int(np.ceil((krism_log.exposures() - 2 * p_col) / 2)))
    return p_col, p_row


def check_parity(krism_log, rowcol_log, parity: str) -> None:
    if parity == "measurements":
        ok = (krism_log.measurements("spatial") == rowcol_log.measurements("spatial")
              and krism_log.measurements("spectral") == rowcol_log.measurements("spectral"))
    else:
        gap = rowcol_log.exposures() - krism_log.exposures()
        ok = 0 <= gap <= 1
    if not ok:
        raise UsageError(
            f"budget mismatch ({parity}): krism {krism_log.counts()} vs rowcol {rowcol_log.counts()}; "
            "pass --no-parity to compare anyway")


def run_benchmark(scene: HsiCube, methods, rank: int, iters: int, noise_db: float, seed: int,
                  parity: str = "exposures", enforce: bool = True, scene_name: str = "scene",
                  photon: bool = True) -> list[dict]:
    X = scene.matrix().astype(np.float64)
    rows, logs = [], {}

    def noise():
        return NoiseModel.from_db(noise_db, seed=seed, photon_noise=photon)

    krism_instr = Instrument(scene, noise())
    factors = krism(krism_instr, KrylovConfig(rank, iters, seed=seed))
    logs["krism"] = krism_instr.log
    results = {"krism": (factors.matrix(rank), krism_instr, factors.iters)}
    if "rowcol" in methods:
        p_col, p_row = match_rowcol_sizes(krism_instr.log, iters, parity)
        instr = Instrument(scene, NoiseModel.from_db(noise_db, seed=seed + 1, photon_noise=photon))
        sk = rowcol_acquire(instr, p_col, seed=seed, p_row=p_row)
        if enforce:
            check_parity(krism_instr.log, instr.log, parity)
        results["rowcol"] = (rowcol_recover(sk, min(rank, p_col, p_row)).matrix(), instr, p_col)
    if "hadamard" in methods:
        instr = Instrument(scene, NoiseModel.from_db(noise_db, seed=seed + 2, photon_noise=photon))
        Xh = hadamard_acquire_full(instr, seed=seed).matrix()
        U, s, Vt = np.linalg.svd(Xh, full_matrices=False)
        results["hadamard"] = ((U[:, :rank] * s[:rank]) @ Vt[:rank], instr, 0)
    for m in methods:
        Xhat, instr, L = results[m]
        b = budget_from_log(instr.log, scene.nx, scene.ny, scene.nl)
        _, _, Vt_hat = np.linalg.svd(Xhat, full_matrices=False)
        rows.append({
            "scene": scene_name, "method": m, "k": rank, "L": L, "noise_db": noise_db,
            "rsnr_db": rsnr(X, Xhat), "sam_deg": _spectral_sam(X, Vt_hat.T, rank),
            "exposures": instr.log.exposures(), "compression": b.compression,
        })
    return rows


def cmd_benchmark(args, argv) -> int:
    started = time.time()
    scene = _load_scene(args.scene)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in ("krism", "rowcol", "hadamard")]
    if bad or not methods:
        raise UsageError(f"unknown methods {bad}; choose from krism,rowcol,hadamard")
    rows = run_benchmark(scene, methods, args.rank, args.iters, args.noise_db, args.seed,
                         args.budget_match, not args.no_parity, Path(args.scene).stem,
                         photon=not args.no_photon)
    out = Path(args.out) if args.out else default_outdir() / "benchmark.csv"
    write_metrics_csv(out, rows)
    for r in rows:
        print(f"{r['method']:9s} rsnr {r['rsnr_db']:8.3f} dB  exposures {r['exposures']:4d}  "
              f"N/M {r['compression']:.3f}")
    write_manifest(out.parent, "benchmark", argv, vars_clean(args), {"seed": args.seed},
                   {"scene": args.scene}, [out], started)
    return 0


# -- synthesize / inspect ----------------------------------------------------


def cmd_synthesize(args, argv) -> int:
    started = time.time()
    cube = synth_lowrank_scene(args.nx, args.ny, args.nl, args.rank, args.seed, args.noise_floor)
    out = Path(args.out) if args.out else default_outdir() / "scene"
    paths = save_cube(cube, out)
    print(f"wrote {paths[0]} ({args.nx}x{args.ny}x{args.nl}, rank {args.rank})")
    write_manifest(paths[0].parent, "synthesize", argv, vars_clean(args), {"seed": args.seed},
                   {}, list(paths), started)
    return 0


def cmd_inspect(args, argv) -> int:
    if not args.cube and not args.code:
        raise UsageError("inspect needs --cube or --code")
    if args.cube:
        cube = load_cube(args.cube)
        s = np.linalg.svd(cube.matrix().astype(np.float64), compute_uv=False)
        rel = s / s[0] if s[0] > 0 else s
        print(f"dims nx={cube.nx} ny={cube.ny} nl={cube.nl}")
        print(f"wavelengths {cube.wavelengths[0]:.3f} .. {cube.wavelengths[-1]:.3f} nm")
        print("singular values (relative): " + " ".join(f"{v:.3e}" for v in rel[:10]))
    if args.code:
        code = ap.ApertureCode.load(args.code)
        sc = ap.score_code(code, args.nlambda, args.alpha, objective_kind=args.objective)
        print(f"code N={code.n} bits={''.join(map(str, code.bits))} pitch_um={code.pitch_um} "
              f"height_mm={code.height_mm}")
        print(f"min_dft_mag={sc.min_dft_mag:.6g} min_autocorr={sc.min_autocorr} "
              f"peak_ratio={sc.peak_ratio:.6g} throughput={sc.throughput} objective={sc.objective:.6g}")
    return 0


def cmd_replay(args, argv) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    rec = list(manifest["argv"])
    if args.outdir:
        rec = _retarget(rec, args.outdir)
    return main(rec)


def _retarget(argv: list[str], outdir: str) -> list[str]:
    """Point a recorded command's output flag at ``outdir``."""
    out = list(argv)
    cmd = out[0]
    flag, name = {"simulate": ("--outdir", None), "design-code": ("--out", None),
                  "benchmark": ("--out", "benchmark.csv"), "synthesize": ("--out", "scene")}.get(cmd, (None, None))
    if flag is None:
        return out
    target = str(Path(outdir) / name) if name else outdir
    if flag in out:
        out[out.index(flag) + 1] = target
    else:
        out += [flag, target]
    return out


def vars_clean(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hsikrylov", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design-code", help="search for a binary aperture code")
    d.add_argument("--n", type=int, required=True)
    d.add_argument("--nlambda", type=int, required=True)
    d.add_argument("--alpha", type=float, default=0.5)
    d.add_argument("--objective", choices=["invertible", "imperceptible"], default="invertible")
    d.add_argument("--mode", choices=["exhaustive", "heuristic"], default="exhaustive")
    d.add_argument("--band-limit", type=int, default=None)
    d.add_argument("--restarts", type=int, default=8)
    d.add_argument("--flips", type=int, default=64)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--pitch-um", type=float, default=100.0)
    d.add_argument("--height-mm", type=float, default=6.4)
    d.add_argument("--workers", type=int, default=1)
    d.add_argument("--force", action="store_true", help="allow exhaustive search beyond N=24")
    d.add_argument("--out")
    d.set_defaults(func=cmd_design_code)

    s = sub.add_parser("simulate", help="blur a scene, run KRISM and deconvolve")
    s.add_argument("--scene", required=True)
    s.add_argument("--code")
    s.add_argument("--optics")
    s.add_argument("--rank", type=int, default=4)
    s.add_argument("--iters", type=int, default=6)
    s.add_argument("--init", choices=["ones", "random"], default="ones")
    s.add_argument("--noise-db", type=float, default=60.0, help="readout SNR; 0 disables all noise")
    s.add_argument("--no-photon", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--spectral-deconv", choices=["wiener", "l2_smooth", "none"], default="wiener")
    s.add_argument("--spatial-deconv", choices=["wiener", "tv", "none"], default="wiener")
    s.add_argument("--nsr", type=float, default=1e-3)
    s.add_argument("--eta", type=float, default=1.0)
    s.add_argument("--tv-weight", type=float, default=1e-4)
    s.add_argument("--tv-iters", type=int, default=100)
    s.add_argument("--psf-halfwidth", type=int, default=32)
    s.add_argument("--outdir")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("benchmark", help="compare acquisition methods at matched budgets")
    b.add_argument("--scene", required=True)
    b.add_argument("--methods", default="krism,rowcol,hadamard")
    b.add_argument("--rank", type=int, default=4)
    b.add_argument("--iters", type=int, default=6)
    b.add_argument("--noise-db", type=float, default=60.0)
    b.add_argument("--no-photon", action="store_true")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--budget-match", choices=["exposures", "measurements"], default="exposures")
    b.add_argument("--no-parity", action="store_true")
    b.add_argument("--out")
    b.set_defaults(func=cmd_benchmark)

    y = sub.add_parser("synthesize", help="write a synthetic low-rank scene")
    y.add_argument("--nx", type=int, required=True)
    y.add_argument("--ny", type=int, required=True)
    y.add_argument("--nl", type=int, required=True)
    y.add_argument("--rank", type=int, required=True)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--noise-floor", type=float, default=0.0)
    y.add_argument("--out")
    y.set_defaults(func=cmd_synthesize)

    i = sub.add_parser("inspect", help="print cube dimensions or code scores")
    i.add_argument("--cube")
    i.add_argument("--code")
    i.add_argument("--nlambda", type=int, default=64)
    i.add_argument("--alpha", type=float, default=0.5)
    i.add_argument("--objective", choices=["invertible", "imperceptible"], default="invertible")
    i.set_defaults(func=cmd_inspect)

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest")
    r.add_argument("--outdir")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return int(args.func(args, argv) or 0)
    except (UsageError, FileNotFoundError, CubeFormatError, json.JSONDecodeError, KeyError,
            IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (np.linalg.LinAlgError, ArithmeticError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
