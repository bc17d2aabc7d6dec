"""Command-line entry point.

Exit codes: 0 success, 2 I/O or malformed input, 3 invalid parameters,
4 algorithmic failure (for example every frame skipped during reconstruction).
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from dmdhsi import controller, metrics, optics, reconstruct, roi, scene
from dmdhsi.errors import AlgorithmError, InputError, ValidationError

EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_ALGORITHM = 4


def _int_list(text):
    try:
        return [int(t) for t in str(text).replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_timing(p):
    p.add_argument("--fps", type=float, default=25.0, help="sensor frame rate (25-60)")
    p.add_argument("--exposure-ms", type=float, default=10.0, help="sensor exposure")
    p.add_argument("--overhead-ms", type=float, default=0.0, help="extra per-frame overhead")
    p.add_argument("--dmd-hz", type=float, default=9523.0, help="maximum DMD pattern rate")


def _add_segmentation(p):
    p.add_argument("--low", type=float, default=roi.DEFAULT_LOW, help="Canny low threshold (fraction of peak gradient)")
    p.add_argument("--high", type=float, default=roi.DEFAULT_HIGH, help="Canny high threshold")
    p.add_argument("--sigma", type=float, default=roi.DEFAULT_SIGMA, help="Canny blur sigma (pixels)")
    p.add_argument("--min-area", type=int, default=roi.DEFAULT_MIN_AREA, help="smallest region kept (pixels)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output path (default depends on the command)")
    g.add_argument("--config", default=argparse.SUPPRESS, help="key=value file overriding option defaults")

    parser = argparse.ArgumentParser(prog="dmdhsi", description=__doc__, formatter_class=fmt, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], formatter_class=fmt, help="synthesise a ground-truth cube")
    p.add_argument("--spec", help="scene description file")
    p.add_argument("--demo", choices=scene.DEMOS, help="use a shipped demo scene")
    p.add_argument("--width", type=int, default=scene.DEFAULT_WIDTH, help="scene columns")
    p.add_argument("--height", type=int, default=scene.DEFAULT_HEIGHT, help="scene rows")
    p.add_argument("--bands", type=int, default=scene.DEFAULT_BANDS, help="spectral bands over 400-900 nm")
    p.add_argument("--snap-levels", type=int, default=0, help="round radiance to k/LEVELS (0 = off)")

    p = sub.add_parser("acquire", parents=[common], formatter_class=fmt, help="simulate a scan")
    p.add_argument("--cube", required=True, help="ground-truth cube file")
    p.add_argument("--plan", help="scan plan file (default: full scan)")
    p.add_argument("--slit-width", type=int, default=1, help="mirror columns per slit")
    _add_timing(p)
    p.add_argument("--noise", choices=("on", "off"), default="on", help="shot and read noise")
    p.add_argument("--snr-db", type=float, default=None, help="calibrate the sensor to this half-scale SNR")
    p.add_argument("--bit-depth", type=int, default=8, help="sensor bits (8, 10, 12 or 16)")
    p.add_argument("--full-well", type=float, default=10_000.0, help="electrons at the top code")
    p.add_argument("--read-noise", type=float, default=5.0, help="read noise sigma in electrons")
    p.add_argument("--gain", type=float, default=1_000.0, help="electrons per unit radiance per ms")
    p.add_argument("--alpha", type=float, default=0.0, help="stripe attenuation on the RGB sensor")
    p.add_argument("--jitter", choices=optics.JITTER_KINDS, default="none", help="platform motion model")
    p.add_argument("--jitter-amplitude", type=float, default=0.0, help="largest offset in pixels")
    p.add_argument("--jitter-step", type=float, default=1.0, help="random-walk step sigma in pixels")
    p.add_argument("--workers", type=int, default=1, help="threads rendering frames")

    p = sub.add_parser("reconstruct", parents=[common], formatter_class=fmt, help="rebuild a cube from a scan")
    p.add_argument("--record", required=True, help="acquisition directory")
    p.add_argument("--diagnostics", help="diagnostics CSV (default: <out>.csv)")
    p.add_argument("--reference", type=int, default=0, help="reference frame index")
    p.add_argument("--radius", type=int, default=reconstruct.DEFAULT_SEARCH_RADIUS, help="registration search radius")
    p.add_argument("--stripe-threshold", type=float, default=reconstruct.DEFAULT_STRIPE_THRESHOLD, help="minimum stripe contrast")
    p.add_argument("--no-fill", action="store_true", help="leave uncovered columns at zero")
    p.add_argument("--truth", help="ground-truth cube; report nrmsd against it")

    p = sub.add_parser("evaluate", parents=[common], formatter_class=fmt, help="band-count nrmsd sweep")
    p.add_argument("--truth", required=True, help="ground-truth cube")
    p.add_argument("--recon", required=True, help="reconstructed cube")
    p.add_argument("--band-counts", type=_int_list, default="50,100,150,200,250,300", help="band counts to rebin to")

    p = sub.add_parser("plan-roi", parents=[common], formatter_class=fmt, help="segment a preview and plan an ROI scan")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--cube", help="cube whose RGB rendering serves as the preview")
    src.add_argument("--rgb", help="RGB preview image (PPM)")
    p.add_argument("--select", type=_int_list, default="", help="labels to scan (default: all)")
    p.add_argument("--slit-width", type=int, default=1, help="mirror columns per slit")
    p.add_argument("--margin", type=int, default=0, help="columns added on each side of a region")
    p.add_argument("--labels", help="label map PGM to write (default: <out>.labels.pgm)")
    _add_segmentation(p)
    _add_timing(p)

    p = sub.add_parser("spectra", parents=[common], formatter_class=fmt, help="block-mean spectra per region")
    p.add_argument("--cube", required=True, help="cube to sample")
    p.add_argument("--labels", help="label map PGM (default: segment the cube's RGB preview)")
    p.add_argument("--block", type=int, default=roi.DEFAULT_BLOCK, help="block side in pixels")
    _add_segmentation(p)

    p = sub.add_parser("timing", parents=[common], formatter_class=fmt, help="acquisition-time estimate")
    p.add_argument("--width", type=int, default=scene.DEFAULT_WIDTH, help="scene columns")
    p.add_argument("--slit-width", type=int, default=1, help="mirror columns per slit")
    p.add_argument("--plan", help="use this plan instead of a full scan")
    _add_timing(p)
    return parser


def _read_config(path):
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    config = getattr(args, "config", None)
    if config:
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in subparser._actions if a.dest not in ("help",)}
        overrides = {}
        for key, value in _read_config(config).items():
            if key not in actions or key == "config":
                raise ValidationError(f"unknown config key {key!r} for {args.command}")
            action = actions[key]
            if isinstance(action, argparse._StoreTrueAction):
                overrides[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                conv = action.type or str
                try:
                    overrides[key] = conv(value)
                except (ValueError, argparse.ArgumentTypeError):
                    raise ValidationError(f"config key {key!r}: bad value {value!r}") from None
                if action.choices is not None and overrides[key] not in action.choices:
                    raise ValidationError(f"config key {key!r}: {value!r} not in {list(action.choices)}")
        subparser.set_defaults(**overrides)
        args = parser.parse_args(argv)
    for key, default in (("seed", 0), ("out", None), ("config", None)):
        if not hasattr(args, key):
            setattr(args, key, default)
    return args


def _timing(args) -> controller.TimingParams:
    return controller.TimingParams(
        exposure_ms=args.exposure_ms,
        sensor_fps=args.fps,
        dmd_max_pattern_hz=args.dmd_hz,
        overhead_ms=args.overhead_ms,
    )


def _read_cube(path):
    try:
        return scene.read_cube(path)
    except OSError as exc:
        raise InputError(f"cannot read cube {path}: {exc.strerror}") from None


def _preview(cube):
    """RGB frame with every mirror toward the auxiliary sensor (no stripe)."""
    return scene.rgb_render(cube, scene.RgbResponse.gaussian(cube.wavelengths))


def cmd_synth(args):
    if args.spec and args.demo:
        raise ValidationError("--spec and --demo are mutually exclusive")
    if args.demo:
        spec = scene.load_demo(args.demo, args.width, args.height, args.bands)
    elif args.spec:
        try:
            text = Path(args.spec).read_text()
        except OSError as exc:
            raise InputError(f"cannot read scene spec {args.spec}: {exc.strerror}") from None
        spec = scene.parse_scene_spec(text, args.width, args.height, args.bands, args.seed)
    else:
        spec = scene.SceneSpec(args.width, args.height, args.bands, seed=args.seed)
    cube = scene.synth_scene(spec)
    if args.snap_levels:
        cube = scene.snap_to_levels(cube, args.snap_levels)
    out = args.out or "scene.hsc"
    scene.write_cube(cube, out)
    print(f"wrote {out} ({cube.width}x{cube.height}x{cube.bands}, {len(spec.primitives)} primitives)")


def cmd_acquire(args):
    cube = _read_cube(args.cube)
    timing = _timing(args)
    if args.plan:
        plan = controller.read_plan(args.plan)
        plan = controller.ScanPlan(plan.patterns, plan.slit_width, timing.dwell_ms, plan.scene_width)
    else:
        plan = controller.full_scan_plan(cube.width, args.slit_width, timing)
    if args.snr_db is not None:
        sensor = optics.SensorParams.for_snr(
            args.snr_db, read_noise_sigma=args.read_noise, exposure_ms=args.exposure_ms,
            bit_depth=args.bit_depth, seed=args.seed,
        )
    else:
        sensor = optics.SensorParams(
            exposure_ms=args.exposure_ms, bit_depth=args.bit_depth, full_well=args.full_well,
            read_noise_sigma=args.read_noise, gain=args.gain, seed=args.seed,
        )
    if args.noise == "off":
        sensor = sensor.noiseless
    jitter = optics.JitterModel(args.jitter, args.jitter_amplitude, args.jitter_step, seed=args.seed)
    record = controller.run_acquisition(cube, plan, sensor, jitter, alpha=args.alpha, workers=args.workers)
    out = args.out or "acquisition"
    controller.save_record(record, out)
    print(f"patterns {len(plan)}")
    print(f"dwell_ms {plan.dwell_ms:g}")
    print(f"estimated_time_ms {controller.estimate_time(plan):g}")
    print(f"wrote {out}")


def cmd_reconstruct(args):
    record = controller.load_record(args.record)
    opts = reconstruct.AssembleOptions(args.reference, args.radius, args.stripe_threshold)
    rc = reconstruct.assemble(record, opts)
    if not args.no_fill:
        rc = reconstruct.fill_gaps(rc)
    out = args.out or "recon.hsc"
    scene.write_cube(rc.cube, out)
    diag = args.diagnostics or str(Path(out).with_suffix(".csv"))
    reconstruct.write_diagnostics(rc.diagnostics, diag)
    ok = sum(d.status == "ok" for d in rc.diagnostics)
    print(f"frames_used {ok}/{len(rc.diagnostics)}")
    print(f"interpolated_columns {int(rc.interpolated.sum())}")
    if args.truth:
        print(f"nrmsd {metrics.nrmsd(rc.cube, _read_cube(args.truth)):.6f}")
    print(f"wrote {out} and {diag}")


def cmd_evaluate(args):
    truth, recon = _read_cube(args.truth), _read_cube(args.recon)
    result = metrics.band_sweep(truth, recon, args.band_counts)
    out = args.out or "sweep.csv"
    result.write_csv(out)
    for n, v in result.points:
        print(f"{n} {v:.6f}")
    print(f"wrote {out}")


def cmd_plan_roi(args):
    if args.cube:
        preview = _preview(_read_cube(args.cube))
    else:
        from dmdhsi import pnm

        img, maxval = pnm.read_pnm(args.rgb)
        if img.ndim != 3:
            raise InputError(f"{args.rgb} is not an RGB image")
        preview = img / float(maxval)
    labels = roi.segment(preview, args.low, args.high, args.sigma, args.min_area)
    print(f"regions {labels.count}")
    for lab in range(1, labels.count + 1):
        x0, y0, x1, y1 = labels.bboxes[lab]
        print(f"region {lab} area {labels.areas[lab]} columns {x0}-{x1} rows {y0}-{y1}")
    selected = args.select or list(range(1, labels.count + 1))
    timing = _timing(args)
    plan = roi.regions_to_plan(labels, selected, args.slit_width, args.margin, timing)
    full = controller.full_scan_plan(preview.shape[1], args.slit_width, timing)
    t_roi, t_full = controller.estimate_time(plan), controller.estimate_time(full)
    out = args.out or "roi.plan"
    controller.write_plan(plan, out)
    label_path = args.labels or out + ".labels.pgm"
    roi.write_label_pgm(label_path, labels)
    print(f"patterns {len(plan)} of {len(full)}")
    print(f"estimated_time_ms {t_roi:g} (full scan {t_full:g})")
    print(f"time_fraction {t_roi / t_full:.4f}")
    print(f"speedup {t_full / t_roi:.3f}")
    print(f"wrote {out} and {label_path}")


def cmd_spectra(args):
    cube = _read_cube(args.cube)
    if args.labels:
        labels = roi.read_label_pgm(args.labels)
    else:
        labels = roi.segment(_preview(cube), args.low, args.high, args.sigma, args.min_area)
    out = Path(args.out or "spectra")
    out.mkdir(parents=True, exist_ok=True)
    for lab in sorted(labels.areas):
        spectrum = roi.region_mean_spectrum(cube, labels, lab, args.block)
        path = out / f"region_{lab:03d}.csv"
        roi.write_spectrum_csv(path, cube.wavelengths, spectrum)
        print(f"region {lab} mean {spectrum.mean():.4f} -> {path}")


def cmd_timing(args):
    timing = _timing(args)
    if args.plan:
        plan = controller.read_plan(args.plan)
        plan = controller.ScanPlan(plan.patterns, plan.slit_width, timing.dwell_ms, plan.scene_width)
    else:
        plan = controller.full_scan_plan(args.width, args.slit_width, timing)
    total = controller.estimate_time(plan)
    print(f"patterns {len(plan)}")
    print(f"dwell_ms {plan.dwell_ms:g}")
    print(f"estimated_time_ms {total:g}")


COMMANDS = {
    "synth": cmd_synth,
    "acquire": cmd_acquire,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "plan-roi": cmd_plan_roi,
    "spectra": cmd_spectra,
    "timing": cmd_timing,
}


def main(argv=None) -> int:
    try:
        try:
            args = parse_args(sys.argv[1:] if argv is None else argv)
        except SystemExit as exc:  # argparse: --help or a usage error
            return int(exc.code or 0)
        COMMANDS[args.command](args)
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except AlgorithmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALGORITHM
    return 0


if __name__ == "__main__":
    sys.exit(main())
