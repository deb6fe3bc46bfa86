"""Command line interface.

Subcommands:
    data        tokenize a corpus and write the token cache
    train       one training run: loss trace, convergence report, sample
    sweep       a grid of training runs over the two learning rates
    analyze     binary map, edge map, dimension, and histogram of a sweep
    render      heatmap image of a sweep
    calibrate   self-checks of the measurement pipeline on known shapes

Settings come from defaults, overlaid by an optional JSON --config file,
overlaid by flags. Unknown config keys are rejected. Every run echoes its
effective configuration to config.json and appends an execution log to
run.log inside --out; run.log is the only output without reproducible
bytes. Exit codes: 0 success, 2 configuration error, 3 data or input
error, 4 analysis of an incomplete sweep.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .dataio import (
    build_vocab,
    extract_sequences,
    load_token_cache,
    save_token_cache,
    strip_gutenberg_boilerplate,
    token_digest,
)
from .errors import ConfigError, DataError, IncompleteSweepError, InputError
from .fractal import (
    binarize_convergence,
    box_count_dimension,
    escape_time,
    gen_multibrot,
    gen_sierpinski,
    histogram_mu,
    sobel_edges,
    write_box_counts_csv,
)
from .model import ModelConfig, generate, param_count
from .render import (
    binary_image,
    colormap_pixel,
    render_heatmap,
    write_histogram_csv,
    write_ppm,
)
from .sweep import GridSpec, load_result, run_sweep
from .training import LossTrace, TrainRunConfig, convergence_measure, evaluate_run, fit

__all__ = ["main", "run_cli", "GRID_PRESETS"]

# Illustrative sweep windows for demonstration runs. The span straddles the
# stable and unstable regimes of the default model on ordinary text.
GRID_PRESETS: dict[str, GridSpec] = {
    "demo-8x8": GridSpec(
        att_start=1e-4, att_step=(3e-2 - 1e-4) / 7, att_count=8,
        fc_start=1e-4, fc_step=(3e-2 - 1e-4) / 7, fc_count=8,
    ),
    "demo-4x4": GridSpec(
        att_start=1e-4, att_step=(3e-2 - 1e-4) / 3, att_count=4,
        fc_start=1e-4, fc_step=(3e-2 - 1e-4) / 3, fc_count=4,
    ),
}


def _default_config() -> dict:
    return {
        "data": {"corpus": None, "cache": None, "stride": 5},
        "model": dataclasses.asdict(ModelConfig()),
        "train": dataclasses.asdict(TrainRunConfig()),
        "grid": None,
        "generate": {"prompt": None, "length": 200, "temperature": None, "seed": 0},
        "analyze": {"by_mu_sign": False, "edge_threshold": None, "box_sizes": None, "bins": 100},
    }


def _merge(base, override, path=""):
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def _effective_config(args) -> dict:
    cfg = _default_config()
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {args.config} must hold a JSON object")
        cfg = _merge(cfg, loaded)
    if getattr(args, "corpus", None):
        cfg["data"]["corpus"] = args.corpus
    if getattr(args, "grid_preset", None):
        cfg["grid"] = args.grid_preset
    if getattr(args, "by_mu_sign", False):
        cfg["analyze"]["by_mu_sign"] = True
    if getattr(args, "seed", None) is not None:
        cfg["model"]["seed"] = args.seed
        cfg["train"]["seed"] = args.seed
    return cfg


def _build_dataclass(cls, section: dict, where: str):
    try:
        instance = cls(**section)
    except TypeError as exc:
        raise ConfigError(f"bad {where} section: {exc}") from exc
    instance.validate()
    return instance


def _grid_spec(cfg: dict) -> GridSpec:
    grid = cfg.get("grid")
    if grid is None:
        raise ConfigError("a sweep needs a 'grid' section or --grid-preset")
    if isinstance(grid, str):
        if grid not in GRID_PRESETS:
            raise ConfigError(f"unknown grid preset {grid!r}, available: {sorted(GRID_PRESETS)}")
        return GRID_PRESETS[grid]
    if not isinstance(grid, dict):
        raise ConfigError("'grid' must be a preset name or an object of grid fields")
    return _build_dataclass(GridSpec, grid, "grid")


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_text(path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def _prepare_out(args, cfg: dict) -> str:
    out_dir = args.out
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from exc
    echo = dict(cfg)
    if isinstance(echo.get("grid"), str) and echo["grid"] in GRID_PRESETS:
        # echo resolved numbers; an unknown name is left for _grid_spec to reject
        echo["grid"] = dataclasses.asdict(GRID_PRESETS[echo["grid"]])
    _write_text(os.path.join(out_dir, "config.json"), _canonical_json(echo))
    return out_dir


def _log(out_dir: str, message: str) -> None:
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    with open(os.path.join(out_dir, "run.log"), "a", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{stamp} trainscape {__version__} {message}\n")


def _read_corpus(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"corpus {path} is not valid UTF-8: {exc}") from exc


def _load_tokens(cfg: dict):
    """Token source precedence: existing cache file, then corpus text."""
    cache = cfg["data"]["cache"]
    corpus = cfg["data"]["corpus"]
    if cache and os.path.exists(cache):
        return load_token_cache(cache)
    if corpus:
        text = strip_gutenberg_boilerplate(_read_corpus(corpus))
        if not text:
            raise DataError(f"corpus {corpus} is empty after boilerplate removal")
        vocab = build_vocab(text)
        return vocab, vocab.encode(text)
    raise ConfigError("no token source: set data.corpus (or --corpus) or data.cache")


def _model_for_vocab(cfg: dict, vocab_size: int) -> ModelConfig:
    model = _build_dataclass(ModelConfig, cfg["model"], "model")
    if model.vocab_size != vocab_size:
        print(f"note: corpus vocabulary has {vocab_size} characters, overriding configured vocab_size {model.vocab_size}")
        model = dataclasses.replace(model, vocab_size=vocab_size)
        model.validate()
    return model


def _float_csv(x: float) -> str:
    return "%.17g" % x


def cmd_data(args) -> int:
    cfg = _effective_config(args)
    out_dir = _prepare_out(args, cfg)
    corpus = cfg["data"]["corpus"]
    if not corpus:
        raise ConfigError("the data command needs data.corpus (or --corpus)")
    stride = int(cfg["data"]["stride"])
    model = _build_dataclass(ModelConfig, cfg["model"], "model")
    text = strip_gutenberg_boilerplate(_read_corpus(corpus))
    if not text:
        raise DataError(f"corpus {corpus} is empty after boilerplate removal")
    vocab = build_vocab(text)
    tokens = vocab.encode(text)
    sequences = extract_sequences(tokens, model.context_len + 1, stride, vocab_size=vocab.size)
    cache_path = os.path.join(out_dir, "tokens.bin")
    save_token_cache(cache_path, vocab, tokens)
    report = {
        "char_count": len(text),
        "vocab_size": vocab.size,
        "window": model.context_len + 1,
        "stride": stride,
        "sequence_count": len(sequences),
        "corpus_digest": token_digest(tokens),
        "cache": "tokens.bin",
    }
    _write_text(os.path.join(out_dir, "data_report.json"), _canonical_json(report))
    print(f"tokenized {len(text)} characters, vocabulary {vocab.size}, {len(sequences)} windows of {model.context_len + 1}")
    _log(out_dir, f"data corpus={corpus} chars={len(text)} vocab={vocab.size} sequences={len(sequences)}")
    return 0


def _trace_csv(trace: LossTrace) -> str:
    lines = ["step,raw_loss,normalized_loss"]
    for step in range(len(trace)):
        lines.append(f"{step},{_float_csv(trace.raw[step])},{_float_csv(trace.normalized[step])}")
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    out_dir = _prepare_out(args, cfg)
    vocab, tokens = _load_tokens(cfg)
    model = _model_for_vocab(cfg, vocab.size)
    run = _build_dataclass(TrainRunConfig, cfg["train"], "train")
    data = extract_sequences(tokens, model.context_len + 1, int(cfg["data"]["stride"]), vocab_size=vocab.size)
    n_params = param_count(model)
    print(f"training {n_params} parameters: eta_att={run.eta_att:g} eta_fc={run.eta_fc:g} steps={run.n_steps}")
    params, trace = fit(model, run, data)
    report = evaluate_run(trace, run)
    _write_text(os.path.join(out_dir, "loss_trace.csv"), _trace_csv(trace))
    payload = {
        "param_count": n_params,
        "converged": report.converged,
        "mu": report.mu,
        "early_mean": report.early_mean,
        "recent_mean": report.recent_mean,
        "recent_variance": report.recent_variance,
        "diverged_at": trace.diverged_at,
        "initial_raw_loss": float(trace.raw[0]),
        "final_raw_loss": float(trace.raw[len(trace) - 1]) if math.isfinite(trace.raw[-1]) else None,
    }
    _write_text(os.path.join(out_dir, "report.json"), _canonical_json(payload))
    gen_cfg = cfg["generate"]
    prompt = gen_cfg["prompt"] if gen_cfg["prompt"] is not None else vocab.chars[0]
    sample = generate(
        params, vocab, prompt, int(gen_cfg["length"]), model,
        temperature=gen_cfg["temperature"], seed=int(gen_cfg["seed"]),
    )
    _write_text(os.path.join(out_dir, "sample.txt"), prompt + sample)
    verdict = "converged" if report.converged else "did not converge"
    print(f"{verdict}: mu={report.mu:.6f} recent_mean={report.recent_mean:.4f}")
    _log(out_dir, f"train mu={report.mu!r} converged={report.converged}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _effective_config(args)
    out_dir = _prepare_out(args, cfg)
    grid = _grid_spec(cfg)
    vocab, tokens = _load_tokens(cfg)
    model = _model_for_vocab(cfg, vocab.size)
    run = _build_dataclass(TrainRunConfig, cfg["train"], "train")
    data = extract_sequences(tokens, model.context_len + 1, int(cfg["data"]["stride"]), vocab_size=vocab.size)
    print(f"sweeping {grid.att_count}x{grid.fc_count} cells with {args.workers} worker(s)")
    result = run_sweep(grid, model, run, data, workers=args.workers, out_dir=out_dir)
    n_conv = int(result.converged.sum())
    print(f"done: {n_conv}/{grid.n_cells} cells converged, mu in [{result.mu.min():.4f}, {result.mu.max():.4f}]")
    if result.failures:
        print(f"note: {len(result.failures)} cell(s) recorded as diverged after run failures")
    _log(out_dir, f"sweep cells={grid.n_cells} converged={n_conv} failures={len(result.failures)}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _effective_config(args)
    out_dir = _prepare_out(args, cfg)
    result = load_result(args.sweep_dir)
    analyze = cfg["analyze"]
    mask = binarize_convergence(result, by_mu_sign=bool(analyze["by_mu_sign"]))
    write_ppm(binary_image(mask), os.path.join(out_dir, "binary_map.ppm"))
    edges = sobel_edges(mask, threshold=analyze["edge_threshold"])
    write_ppm(binary_image(edges), os.path.join(out_dir, "edge_map.ppm"))

    dimension_payload: dict = {"dimension": None}
    try:
        sizes = analyze["box_sizes"]
        estimate = box_count_dimension(edges, None if sizes is None else tuple(int(s) for s in sizes))
        dimension_payload = {
            "dimension": round(estimate.dimension, 4),
            "intercept": estimate.intercept,
            "r_squared": estimate.r_squared,
            "box_counts": [[s, c] for s, c in estimate.counts],
        }
        write_box_counts_csv(estimate, os.path.join(out_dir, "boxcounts.csv"))
        print(f"edge dimension {estimate.dimension:.4f} (r^2 {estimate.r_squared:.4f})")
    except (ConfigError, InputError) as exc:
        dimension_payload["note"] = f"dimension not estimated: {exc}"
        print(f"dimension not estimated: {exc}")
    _write_text(os.path.join(out_dir, "dimension.json"), _canonical_json(dimension_payload))

    hist = histogram_mu(result, bins=int(analyze["bins"]))
    write_histogram_csv(hist, os.path.join(out_dir, "histogram.csv"))
    print(f"analyzed {result.grid.att_count}x{result.grid.fc_count} sweep: {int(mask.sum())} cells in the converged set")
    _log(out_dir, f"analyze sweep={args.sweep_dir} set_cells={int(mask.sum())}")
    return 0


def cmd_render(args) -> int:
    cfg = _effective_config(args)
    out_dir = _prepare_out(args, cfg)
    result = load_result(args.sweep_dir)
    write_ppm(render_heatmap(result), os.path.join(out_dir, "heatmap.ppm"))
    print(f"wrote heatmap.ppm ({result.grid.fc_count}x{result.grid.att_count} pixels)")
    _log(out_dir, f"render sweep={args.sweep_dir}")
    return 0


def _calibration_checks() -> list[dict]:
    checks: list[dict] = []

    est = box_count_dimension(gen_sierpinski(1024, 7))
    checks.append({
        "name": "sierpinski_dimension", "value": est.dimension,
        "bounds": [1.565, 1.605], "pass": 1.565 <= est.dimension <= 1.605,
    })
    checks.append({
        "name": "sierpinski_fit_quality", "value": est.r_squared,
        "bounds": [0.99, 1.0], "pass": est.r_squared > 0.99,
    })

    square = np.ones((512, 512), dtype=bool)
    sq_dim = box_count_dimension(square).dimension
    checks.append({
        "name": "square_dimension", "value": sq_dim,
        "bounds": [1.99, 2.01], "pass": abs(sq_dim - 2.0) <= 0.01,
    })

    line = np.zeros((512, 512), dtype=bool)
    line[256, :] = True
    line_dim = box_count_dimension(line).dimension
    checks.append({
        "name": "line_dimension", "value": line_dim,
        "bounds": [0.99, 1.01], "pass": abs(line_dim - 1.0) <= 0.01,
    })

    field = gen_multibrot(2, (-2.5, 1.5, -2.0, 2.0), 512, 200)
    interior = field == 0.0
    exterior = field > 0.0
    # The edge set of interest is the set boundary, so edges are extracted
    # from the membership mask; raw escape shading also carries gradients
    # between exterior bands, which are not boundary pixels.
    edges = sobel_edges(interior)
    pad_int = np.pad(interior, 1)
    pad_ext = np.pad(exterior, 1)
    near_int = np.zeros_like(interior)
    near_ext = np.zeros_like(exterior)
    for dy in range(3):
        for dx in range(3):
            near_int |= pad_int[dy : dy + 512, dx : dx + 512]
            near_ext |= pad_ext[dy : dy + 512, dx : dx + 512]
    good = (near_int & near_ext)[edges]
    frac = float(good.mean()) if good.size else 0.0
    checks.append({
        "name": "escape_boundary_sanity", "value": frac,
        "bounds": [0.99, 1.0], "pass": frac >= 0.99,
    })
    checks.append({
        "name": "escape_hand_iteration", "value": float(escape_time(1.0 + 0j, 2, 10)),
        "bounds": [1, 4], "pass": 1 <= escape_time(1.0 + 0j, 2, 10) <= 4,
    })

    anchors = (
        colormap_pixel(1.0) == (0, 0, 255)
        and colormap_pixel(0.0) == (255, 255, 255)
        and colormap_pixel(-1.0) == (255, 0, 0)
        and colormap_pixel(0.5) == (128, 128, 255)
    )
    checks.append({"name": "colormap_anchors", "value": anchors, "bounds": None, "pass": anchors})

    trace = LossTrace.from_raw(np.array([1.0, 0.5, 0.1]), 10.0)
    mu = convergence_measure(trace, True, 0.4, 10.0)
    checks.append({
        "name": "measure_oracle", "value": mu,
        "bounds": [0.5 - 1e-12, 0.5 + 1e-12], "pass": abs(mu - 0.5) < 1e-12,
    })
    return checks


def cmd_calibrate(args) -> int:
    cfg = _effective_config(args)
    out_dir = _prepare_out(args, cfg)
    checks = _calibration_checks()
    for check in checks:
        status = "PASS" if check["pass"] else "FAIL"
        bounds = "" if check["bounds"] is None else f" in {check['bounds']}"
        print(f"{status} {check['name']} {check['value']}{bounds}")
    _write_text(os.path.join(out_dir, "calibration.json"), _canonical_json(checks))
    ok = all(c["pass"] for c in checks)
    _log(out_dir, f"calibrate pass={ok}")
    return 0 if ok else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trainscape",
        description="Map where a small character transformer trains or diverges across two learning rates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file overriding the defaults")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")
        sp.add_argument("--seed", type=int, default=None, help="override model and training seeds")

    sp = sub.add_parser("data", help="tokenize a corpus and write the token cache")
    common(sp)
    sp.add_argument("--corpus", help="path to the corpus text file")

    sp = sub.add_parser("train", help="run one training configuration")
    common(sp)
    sp.add_argument("--corpus", help="path to the corpus text file")

    sp = sub.add_parser("sweep", help="train every cell of a learning-rate grid")
    common(sp)
    sp.add_argument("--corpus", help="path to the corpus text file")
    sp.add_argument("--grid-preset", choices=sorted(GRID_PRESETS), help="use a named demonstration grid")

    sp = sub.add_parser("analyze", help="binary map, edges, dimension, histogram of a finished sweep")
    common(sp)
    sp.add_argument("sweep_dir", help="directory written by the sweep command")
    sp.add_argument("--by-mu-sign", action="store_true", help="binarize at mu > 0 instead of the convergence flag")

    sp = sub.add_parser("render", help="render a finished sweep as a heatmap")
    common(sp)
    sp.add_argument("sweep_dir", help="directory written by the sweep command")

    sp = sub.add_parser("calibrate", help="verify the measurement pipeline on known shapes")
    common(sp)
    return parser


_COMMANDS = {
    "data": cmd_data,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
    "render": cmd_render,
    "calibrate": cmd_calibrate,
}


def run_cli(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


def main(argv=None) -> int:
    try:
        return run_cli(argv)
    except ConfigError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except IncompleteSweepError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    except (DataError, InputError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
