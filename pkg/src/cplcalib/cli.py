"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 IO error,
4 divergence.  Every command that writes files also writes a JSON run
manifest; ``cplcalib replay MANIFEST`` re-runs it and compares output hashes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import diff
from . import projection_loss as pl
from . import scene_gen as sg
from .errors import CalibrationError, ConsistencyError, DivergenceDetected, SchemaError
from .estimator import RESULT_SCHEMA, EstimatorConfig, estimate, perturbed_init

log = logging.getLogger("cplcalib")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3, 4
MANIFEST_SCHEMA = "cplcalib-manifest/1"
TABLE_HEADER = ("f_x", "f_y", "u_0", "v_0", "b", "d", "t_x", "t_y", "t_z", "θ_p")


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative_float(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path: Path, command: str, argv: list[str], args: argparse.Namespace,
                   outputs: list[Path], started: float) -> Path:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "command": command,
        "argv": argv,
        "cwd": os.getcwd(),
        "config": config,
        "seed": getattr(args, "seed", None),
        "schema_versions": {"dataset": sg.SCHEMA_VERSION, "result": RESULT_SCHEMA, "manifest": MANIFEST_SCHEMA},
        "package_version": __version__,
        "outputs": [str(p) for p in outputs],
        "artifact_hashes": {str(p): sha256_file(p) for p in outputs},
        "started_at": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_s": time.time() - started,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# --- gen ------------------------------------------------------------------


def _config_seeds(seed: int, n: int) -> list[int]:
    # one generator per command; config i always receives the same child seed
    rng = np.random.default_rng(seed)
    return [int(s) for s in rng.integers(0, 2**32, size=n)]


def cmd_gen(args, argv) -> int:
    started = time.time()
    grid = sg.build_config_grid()
    seeds = _config_seeds(args.seed, len(grid))
    if args.all:
        chosen = list(range(len(grid)))
    else:
        if args.config_index is None:
            raise UsageError("gen needs --config-index or --all")
        indices = [i for i, c in enumerate(grid) if args.town is None or c.town_id == args.town]
        if not 0 <= args.config_index < len(indices):
            raise UsageError(f"--config-index must be in [0, {len(indices)}) for this town")
        chosen = [indices[args.config_index]]

    out_dir = Path(args.out)
    outputs = []
    for gi in chosen:
        config = grid[gi]
        local = sum(1 for c in grid[:gi] if c.town_id == config.town_id)
        ds = sg.generate(config, args.points, args.width, args.height, args.baseline, seeds[gi])
        outputs.append(sg.save(ds, out_dir / f"town{config.town_id}_cfg{local:02d}.cvgl"))
    manifest = write_manifest(out_dir / "gen.manifest.json", "gen", argv, args, outputs, started)
    print(f"wrote {len(outputs)} dataset(s) to {out_dir} (manifest {manifest})")
    return EXIT_OK


# --- estimate ---------------------------------------------------------------


def _fixed_names(text: str) -> tuple:
    if text.strip().lower() in ("", "none"):
        return ()
    names = tuple(n.strip() for n in text.split(","))
    unknown = [n for n in names if n not in pl.NAMES]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown parameter names {unknown}")
    return names


def _load_init_file(path: Path) -> pl.ParamVector13:
    data = json.loads(Path(path).read_text())
    if "omega_hat" in data:
        data = data["omega_hat"]
    return pl.ParamVector13.from_mapping(data)


def cmd_estimate(args, argv) -> int:
    started = time.time()
    ds = sg.load(args.data)
    truth = ds.truth()
    rng = np.random.default_rng(args.seed)
    if args.init == "gt":
        init = truth
    elif args.init == "perturbed":
        init = perturbed_init(truth, args.perturb_frac, rng, fixed=args.fix)
    else:
        if args.init_file is None:
            raise UsageError("--init file needs --init-file PATH")
        init = _load_init_file(args.init_file)
    cfg = EstimatorConfig(
        learning_rate=args.lr, max_iterations=args.max_iters, weighting_mode=args.weighting,
        fixed=args.fix, seed=int(rng.integers(0, 2**32)),
    )
    result = estimate(ds, init, cfg)

    out = Path(args.out) if args.out else Path("results") / f"{Path(args.data).stem}_{args.weighting}_s{args.seed}.json"
    payload = result.to_json(cfg, extra={
        "method": args.label or f"CPL-{args.weighting}",
        "dataset": str(args.data),
        "dataset_sha256": sha256_file(args.data),
        "init": args.init,
        "init_omega": init.as_dict(),
    })
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2) + "\n")
    manifest = write_manifest(out.with_name(out.stem + ".manifest.json"), "estimate", argv, args, [out], started)
    worst = max((v for v in result.nmae.values() if not math.isnan(v)), default=0.0)
    print(f"{result.stop_reason} after {result.iterations} iterations; loss {result.final_loss:.3e} m; "
          f"worst NMAE {worst:.3e}; wrote {out} (manifest {manifest})")
    return EXIT_OK


# --- eval -------------------------------------------------------------------


def _read_result(path: Path) -> dict:
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: unreadable result file ({exc})") from None
    if not isinstance(data, dict) or data.get("schema_version") != RESULT_SCHEMA:
        raise SchemaError(f"{path}: not a {RESULT_SCHEMA} file")
    missing = [n for n in pl.TABLE_ORDER if n not in data.get("nmae", {})]
    if missing:
        raise SchemaError(f"{path}: nmae is missing {missing}")
    return data


def collect_results(target: Path) -> list[tuple[str, dict]]:
    if target.is_file():
        files = [target]
    elif target.is_dir():
        files = sorted(p for p in target.glob("*.json") if not p.name.endswith(".manifest.json"))
    else:
        raise FileNotFoundError(f"{target}: no such file or directory")
    if not files:
        raise FileNotFoundError(f"{target}: no result files found")
    return [(p.stem, _read_result(p)) for p in files]


def nmae_rows(results) -> list[list[str]]:
    rows = []
    for stem, data in results:
        cells = []
        for name in pl.TABLE_ORDER:
            v = data["nmae"][name]
            cells.append("n/a" if v is None else f"{v:.3f}")
        rows.append([f"{data.get('method', 'CPL')} [{stem}]"] + cells)
    return rows


def render_table(rows, fmt: str) -> str:
    header = ["method", *TABLE_HEADER]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] + [":-:"] * len(TABLE_HEADER)) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def cmd_eval(args, argv) -> int:
    text = render_table(nmae_rows(collect_results(Path(args.results))), args.format)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# --- check-grad -------------------------------------------------------------


def check_gradients(seed: int, trials: int, mode: str = "disentangled", n_pixels: int = 10) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    weights = None
    for _ in range(trials):
        truth, pred, pixels = diff.random_smooth_config(rng, n_pixels)
        if mode == "weighted":
            weights = pl.AdaptiveWeights.normalized(rng.uniform(0.1, 10.0, pl.N_PARAMS))
        g = diff.grad_cpl(truth, pred, pixels, mode=mode, weights=weights)
        fd = diff.finite_difference_grad(truth, pred, pixels, h=1e-6, mode=mode, weights=weights)
        worst = max(worst, diff.relative_error(g.values, fd.values))
    return worst


def cmd_check_grad(args, argv) -> int:
    worst = check_gradients(args.seed, args.trials, args.mode, args.points)
    ok = worst < args.tolerance
    print(f"max relative error {worst:.3e} over {args.trials} trials ({args.mode}); "
          f"tolerance {args.tolerance:g}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


# --- replay -----------------------------------------------------------------


def cmd_replay(args, argv) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    if manifest.get("schema_version") != MANIFEST_SCHEMA:
        raise SchemaError(f"{args.manifest}: not a {MANIFEST_SCHEMA} file")
    before = manifest["artifact_hashes"]
    cwd = os.getcwd()
    try:
        os.chdir(manifest["cwd"])
        code = main(manifest["argv"])
        if code != EXIT_OK:
            return code
        after = {p: sha256_file(p) for p in before}
    finally:
        os.chdir(cwd)
    changed = [p for p in before if before[p] != after[p]]
    for p in changed:
        print(f"MISMATCH {p}")
    print(f"replayed {manifest['command']}: {len(before) - len(changed)}/{len(before)} outputs identical")
    return EXIT_VERIFY if changed else EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cplcalib", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic CVGL-style datasets")
    p.add_argument("--town", type=int, choices=(1, 2))
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--config-index", type=int)
    which.add_argument("--all", action="store_true")
    p.add_argument("--points", type=_positive_int, default=200)
    p.add_argument("--width", type=_positive_int, default=sg.DEFAULT_WIDTH)
    p.add_argument("--height", type=_positive_int, default=sg.DEFAULT_HEIGHT)
    p.add_argument("--baseline", type=_positive_float, default=sg.DEFAULT_BASELINE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("data"), help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("estimate", help="recover camera parameters from a dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--init", choices=("gt", "perturbed", "file"), default="perturbed")
    p.add_argument("--init-file", type=Path)
    p.add_argument("--perturb-frac", type=_non_negative_float, default=0.2)
    p.add_argument("--weighting", choices=("uniform", "adaptive"), default="uniform")
    p.add_argument("--lr", type=_positive_float, default=1e-3)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--fix", type=_fixed_names, default=("b",),
                   help="comma-separated parameters held at their initial value ('none' frees all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label", help="method name shown by eval")
    p.add_argument("--out", type=Path, help="result JSON path")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval", help="NMAE table from result files")
    p.add_argument("--results", type=Path, required=True, help="result directory or file")
    p.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check-grad", help="compare forward-mode gradients with finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=_positive_int, default=100)
    p.add_argument("--tolerance", type=_non_negative_float, default=1e-5)
    p.add_argument("--mode", choices=diff.LOSS_MODES, default="disentangled")
    p.add_argument("--points", type=_positive_int, default=10)
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    p.add_argument("manifest", type=Path)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cplcalib: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceDetected as exc:
        print(f"cplcalib: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, SchemaError, ConsistencyError, json.JSONDecodeError) as exc:
        print(f"cplcalib: IO error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CalibrationError as exc:
        print(f"cplcalib: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
