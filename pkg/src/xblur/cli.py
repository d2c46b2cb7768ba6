"""Command-line interface: ``xblur <command> [options]``.

Exit codes: 0 success, 2 invalid input, 3 finished with solver warnings.
JSON outputs are the machine interface; summaries go to standard error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import imagecore
from .deblur import (RlsdConfig, WienerConfig, predict, rlsd_solve, tune_to_noise,
                     wiener_deblur)
from .estimate import (EstimationProblem, SolverConfig, estimate_blur,
                       estimate_single_component, make_entry)
from .forward import PaddedLayout
from .imagecore import band_mask, corner_noise_level, masked_rmse, read_image, write_image
from .psf import (BlurModel, DetectorPsfParams, ScanGeometry, combined_psf, detector_psf,
                  measure_fwhm, round_floats, source_psf_detector_plane, source_psf_source_plane)
from .synth import EdgeSpec, NoiseSpec, star_transmission, synth_edge_scan, synth_scan
from .transmission import TransmissionParams

EXIT_OK, EXIT_INPUT, EXIT_WARN = 0, 2, 3


class InputError(Exception):
    pass


def _log(msg):
    print(msg, file=sys.stderr)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(round_floats(obj), indent=2, sort_keys=True) + "\n")


def _read(path, pitch=None):
    if not Path(path).is_file():
        raise InputError(f"file not found: {path}")
    return read_image(path, pitch)


def _geometry(args, orientation="none"):
    if args.sod_mm is None or args.odd_mm is None:
        raise InputError("--sod-mm and --odd-mm are required")
    return ScanGeometry(args.sod_mm, args.odd_mm, orientation)


def _model(path):
    if not Path(path).is_file():
        raise InputError(f"model file not found: {path}")
    return BlurModel.load(path)


# ---------------------------------------------------------------------------

def cmd_normalize(args):
    img = imagecore.normalize_radiograph(_read(args.sample, args.pitch), _read(args.bright, args.pitch),
                                         _read(args.dark, args.pitch))
    write_image(args.out, img)
    _log(f"wrote {args.out}")
    return EXIT_OK


def load_manifest(path, pitch=None, mask_band=None):
    """Read an estimation manifest; returns (entries, settings).

    The manifest is a JSON object with an ``entries`` list (or a bare list).
    Each entry needs ``radiograph_path``, ``sod_mm``, ``odd_mm`` and
    ``orientation``; ``bright_path`` and ``dark_path`` are optional, and without
    a bright image the radiograph is taken as already normalised. Relative
    paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"manifest is not valid JSON: {exc}") from exc
    settings = {} if isinstance(doc, list) else dict(doc)
    items = doc if isinstance(doc, list) else doc.get("entries")
    if not items:
        raise InputError("manifest has no entries")
    pitch = pitch if pitch is not None else settings.get("pitch_um")
    band = mask_band if mask_band is not None else settings.get("mask_band", 0.1)
    base = path.parent
    entries = []
    for i, it in enumerate(items):
        try:
            rad = _read(base / it["radiograph_path"], pitch)
            if it.get("bright_path"):
                bright = _read(base / it["bright_path"], pitch)
                dark = (_read(base / it["dark_path"], pitch) if it.get("dark_path")
                        else bright.like(np.zeros(bright.shape)))
                rad = imagecore.normalize_radiograph(rad, bright, dark)
            geom = ScanGeometry(float(it["sod_mm"]), float(it["odd_mm"]), it.get("orientation", "none"))
        except KeyError as exc:
            raise InputError(f"manifest entry {i} lacks {exc}") from exc
        entries.append(make_entry(rad, geom, band=band))
    return entries, settings


def cmd_estimate(args):
    entries, settings = load_manifest(args.manifest, args.pitch, args.mask_band)
    r = args.r if args.r is not None else float(settings.get("r", 1))
    scfg = dict(settings.get("solver", {}))
    if args.max_iterations is not None:
        scfg["max_iterations"] = args.max_iterations
    cfg = SolverConfig(threads=args.threads, seed=args.seed, **scfg)
    problem = EstimationProblem(entries, r=r)
    if args.stage == "1":
        model, trans, report = estimate_single_component(problem, "source", cfg)
    elif args.stage == "2":
        model, trans, report = estimate_single_component(problem, "detector", cfg)
    else:
        model, trans, report = estimate_blur(problem, cfg)
    out = Path(args.out or settings.get("output_dir") or ".")
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.json")
    _write_json(out / "transmission_params.json", [{"l": t.l, "h": t.h} for t in trans])
    _write_json(out / "report.json", report.to_dict())
    d = model.to_dict()

    def fmt(v):
        return "unbounded" if v is None else f"{v:.3f}"

    if d["source"]:
        _log(f"source FWHM x/y: {fmt(d['source']['fwhm_x_um'])} / {fmt(d['source']['fwhm_y_um'])} um")
    if d["detector"]:
        det = d["detector"]
        _log(f"detector FWHM 1/2: {fmt(det['fwhm_1_um'])} / {fmt(det['fwhm_2_um'])} um, q = {det['q']:.4f}")
    if not report.converged:
        _log("warning: solver did not report convergence in every stage")
        return EXIT_WARN
    return EXIT_OK


def cmd_deblur(args):
    img = _read(args.radiograph, args.pitch)
    model = _model(args.model)
    g = _geometry(args)
    report = {"method": args.method}
    box = args.box or max(2, min(img.shape) // 8)
    if args.method == "wiener":
        if args.target_sd is not None:
            res = tune_to_noise(lambda b: wiener_deblur(img, model, g, WienerConfig(b)), img, args.target_sd, box)
            out, reg, iters = res.image, res.regularization, res.steps
            report["target_reached"] = res.reached
        else:
            reg = args.balance if args.balance is not None else WienerConfig().balance
            out, iters = wiener_deblur(img, model, g, WienerConfig(reg)), 0
    elif args.method == "rlsd":
        if args.beta is not None:
            sol = rlsd_solve(img, model, g, cfg=RlsdConfig(beta=args.beta, max_iterations=args.max_iterations or 500))
            out, reg, iters = sol.image, args.beta, sol.iterations
            report["converged"] = sol.converged
        elif args.target_sd is not None:
            info = {}

            def run(beta):
                sol = rlsd_solve(img, model, g, cfg=RlsdConfig(beta=beta, max_iterations=args.max_iterations or 500))
                info[beta] = sol.iterations
                return sol.image

            res = tune_to_noise(run, img, args.target_sd, box, bracket=(1e-5, 1e-1))
            out, reg, iters = res.image, res.regularization, info[res.regularization]
            report["target_reached"] = res.reached
        else:
            raise InputError("rlsd needs --beta or --target-sd")
    else:
        raise InputError(f"unknown method {args.method!r}")
    report.update(regularization=reg, achieved_corner_sd=corner_noise_level(out, box), iterations=iters)
    if args.reference:
        ref = _read(args.reference, img.pitch)
        if ref.shape == (3 * img.rows, 3 * img.cols):  # padded ideal from `simulate`
            ref = ref.like(PaddedLayout.centered(img.shape).crop(ref.data))
        report["rmse_vs_reference"] = masked_rmse(out, ref, band_mask(img.shape, args.mask_band or 0.1))
    write_image(args.out, out)
    _write_json(args.report or Path(args.out).with_suffix(".json"), report)
    _log(f"{args.method}: regularization {reg:.4g}, corner SD {report['achieved_corner_sd']:.4g}")
    return EXIT_OK


def cmd_predict(args):
    t = _read(args.transmission, args.pitch)
    t = t.like(args.l + (args.h - args.l) * t.data)
    model = _model(args.model)
    g = _geometry(args)
    if args.padded:
        out = predict(t, model, g)
    else:
        r, c = t.shape
        layout = PaddedLayout.centered((r, c))
        out = predict(t.like(np.pad(t.data, ((r, r), (c, c)), mode="edge")), model, g, layout)
    write_image(args.out, out)
    _log(f"wrote {args.out}")
    return EXIT_OK


def cmd_simulate(args):
    model = _model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    affine = TransmissionParams(args.l, args.h)
    size = (args.size, args.size)
    entries = []
    seed = args.seed
    for sod in args.sod_mm:
        g_odd = args.sdd_mm - sod
        if g_odd <= 0:
            raise InputError(f"SOD {sod} mm is not smaller than SDD {args.sdd_mm} mm")
        orientations = ("star",) if args.pattern == "star" else ("horizontal", "vertical")
        for orient in orientations:
            g = ScanGeometry(sod, g_odd, "none" if orient == "star" else orient)
            noise = NoiseSpec(args.noise, seed)
            if orient == "star":
                truth = star_transmission(args.size, args.spokes, pitch=args.pitch)
                img = synth_scan(truth, affine, model, g, noise)
            else:
                img, truth = synth_edge_scan(EdgeSpec(orient, args.tilt, 0.0, size), affine, model, g,
                                             args.pitch, noise)
            stem = f"sod{sod:g}_{orient}"
            write_image(out / f"{stem}.sabr", img)
            truth.save(out / f"{stem}_ideal.sabr")
            entries.append({"radiograph_path": f"{stem}.sabr", "ideal_path": f"{stem}_ideal.sabr",
                            "sod_mm": sod, "odd_mm": g_odd, "orientation": g.orientation,
                            "seed": seed, "l": affine.l, "h": affine.h})
            seed += 1
    _write_json(out / "manifest.json", {"pitch_um": args.pitch, "r": model.r, "entries": entries})
    _log(f"wrote {len(entries)} radiographs to {out}")
    return EXIT_OK


def cmd_psf_export(args):
    model = _model(args.model)
    g = _geometry(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pitch = args.pitch
    report = {"pitch_um": pitch, "sod_mm": g.sod, "odd_mm": g.odd}
    if model.source is not None:
        ks = source_psf_source_plane(model.source, pitch)
        kd = source_psf_detector_plane(model.source, g, pitch)
        write_image(out / "source_source_plane.tif", ks)
        write_image(out / "source_detector_plane.tif", kd)
        report["source_fwhm_x_um"] = measure_fwhm(ks, 1) * pitch
        report["source_fwhm_y_um"] = measure_fwhm(ks, 0) * pitch
        report["source_detector_plane_fwhm_x_um"] = measure_fwhm(kd, 1) * pitch
        report["source_detector_plane_fwhm_y_um"] = measure_fwhm(kd, 0) * pitch
    if model.detector is not None:
        d = model.detector
        kdet = detector_psf(d, pitch)
        write_image(out / "detector.tif", kdet)
        report["detector_fwhm_um"] = measure_fwhm(kdet, 1) * pitch
        for s, name in ((d.s_d1, "1"), (d.s_d2, "2")):
            comp = DetectorPsfParams(s, s, 1.0, d.r)
            report[f"detector_component{name}_fwhm_um"] = measure_fwhm(detector_psf(comp, pitch), 1) * pitch
    k = combined_psf(model, g, pitch)
    write_image(out / "combined.tif", k)
    report["combined_fwhm_x_um"] = measure_fwhm(k, 1) * pitch
    report["combined_fwhm_y_um"] = measure_fwhm(k, 0) * pitch
    _write_json(out / "psf_fwhm.json", report)
    _log(f"wrote kernels to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="xblur", description="X-ray source/detector blur estimation and removal")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="FFT and per-radiograph threads")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, geometry=False):
        sp.add_argument("--pitch", type=float, default=None, help="pixel pitch in um (TIFF inputs)")
        if geometry:
            sp.add_argument("--sod-mm", type=float)
            sp.add_argument("--odd-mm", type=float)

    sp = sub.add_parser("normalize", help="flat-field normalise a radiograph")
    common(sp)
    sp.add_argument("--sample", required=True)
    sp.add_argument("--bright", required=True)
    sp.add_argument("--dark", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_normalize)

    sp = sub.add_parser("estimate", help="estimate the blur model from edge radiographs")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out")
    sp.add_argument("--stage", choices=("1", "2", "all"), default="all",
                    help="1: source only, 2: detector only, all: three-stage joint fit")
    sp.add_argument("--r", type=float, choices=(1.0, 2.0), default=None)
    sp.add_argument("--mask-band", type=float, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-iterations", type=int, default=None)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("deblur", help="remove blur with a known model")
    common(sp, geometry=True)
    sp.add_argument("--radiograph", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--method", default="wiener")
    sp.add_argument("--target-sd", type=float)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--balance", type=float)
    sp.add_argument("--box", type=int, help="corner patch size for the noise level")
    sp.add_argument("--max-iterations", type=int)
    sp.add_argument("--reference", help="ground-truth transmission (image-sized or 3x padded) for an RMSE in the report")
    sp.add_argument("--mask-band", type=float, default=None)
    sp.add_argument("--report")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_deblur)

    sp = sub.add_parser("predict", help="blur a transmission image with a model")
    common(sp, geometry=True)
    sp.add_argument("--transmission", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--padded", action="store_true", help="input is already the 3x padded grid")
    sp.add_argument("--l", type=float, default=0.0)
    sp.add_argument("--h", type=float, default=1.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("simulate", help="synthesise edge or star radiographs and a manifest")
    sp.add_argument("--model", required=True)
    sp.add_argument("--sod-mm", type=float, nargs="+", required=True)
    sp.add_argument("--sdd-mm", type=float, default=71.0)
    sp.add_argument("--pitch", type=float, default=0.675)
    sp.add_argument("--size", type=int, default=256)
    sp.add_argument("--noise", type=float, default=0.01)
    sp.add_argument("--tilt", type=float, default=2.0)
    sp.add_argument("--l", type=float, default=0.0)
    sp.add_argument("--h", type=float, default=1.0)
    sp.add_argument("--pattern", choices=("edge", "star"), default="edge")
    sp.add_argument("--spokes", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("psf-export", help="write PSF kernels and their measured FWHMs")
    sp.add_argument("--model", required=True)
    sp.add_argument("--sod-mm", type=float)
    sp.add_argument("--odd-mm", type=float)
    sp.add_argument("--pitch", type=float, default=0.675)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_psf_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if args.threads < 1:
        _log("error: --threads must be positive")
        return EXIT_INPUT
    imagecore.fft_workers = args.threads
    try:
        return args.func(args)
    except (InputError, ValueError, ZeroDivisionError, OSError, KeyError) as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
