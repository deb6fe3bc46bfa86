"""Learning-rate grid sweeps: one training run per (eta_att, eta_fc) cell.

Cells are fully independent, so they can run on any number of worker
processes; results are keyed by cell index and the finished grid is
bit-identical for any worker count. Progress checkpoints to disk every few
cells, and a sweep pointed at a directory holding a partial result resumes
from the cells still missing.

On-disk layout (one directory per sweep):
    meta.json       version, grid spec, configs, corpus digest, constants,
                    and notes for any cells that failed with an exception
    grid.csv        mu values, one row per attention rate, 17 significant
                    digits, row-major with the fc rate varying fastest
    converged.csv   0/1 convergence flags, same shape as grid.csv
    done.bits       one bit per cell (cell k at byte k//8, bit k%8,
                    least significant bit first), set when the cell is done
Files are written to temporary names and atomically renamed, done.bits
always last, so a sweep killed mid-checkpoint leaves a directory that is
still loadable and at worst re-runs a cell or two.
"""

from __future__ import annotations

import dataclasses
import json
import math
import multiprocessing
import os
from dataclasses import dataclass

import numpy as np

from .dataio import SequenceSet, token_digest
from .errors import ConfigError, FormatError
from .model import ModelConfig
from .training import TrainRunConfig, evaluate_run, train_run

__all__ = [
    "GridSpec",
    "SweepResult",
    "SWEEP_VERSION",
    "compute_cell",
    "run_sweep",
    "save_result",
    "load_result",
]

SWEEP_VERSION = "1"
CHECKPOINT_EVERY = 16

_META_NAME = "meta.json"
_GRID_NAME = "grid.csv"
_CONVERGED_NAME = "converged.csv"
_DONE_NAME = "done.bits"


@dataclass(frozen=True)
class GridSpec:
    """Linearly spaced learning-rate grid. Axis values are start + i*step;
    the attention rate indexes rows, the fc rate columns."""

    att_start: float
    att_step: float
    att_count: int
    fc_start: float
    fc_step: float
    fc_count: int

    def validate(self) -> None:
        if self.att_count < 1 or self.fc_count < 1:
            raise ConfigError(f"grid counts must be positive, got {self.att_count}x{self.fc_count}")
        if self.att_step <= 0.0 or self.fc_step <= 0.0:
            raise ConfigError(f"grid steps must be positive, got {self.att_step} and {self.fc_step}")
        if self.att_start < 0.0 or self.fc_start < 0.0:
            raise ConfigError(f"grid starts must be non-negative, got {self.att_start} and {self.fc_start}")

    @property
    def n_cells(self) -> int:
        return self.att_count * self.fc_count

    def att_rate(self, i: int) -> float:
        return self.att_start + i * self.att_step

    def fc_rate(self, j: int) -> float:
        return self.fc_start + j * self.fc_step

    def att_rates(self) -> np.ndarray:
        return self.att_start + np.arange(self.att_count) * self.att_step

    def fc_rates(self) -> np.ndarray:
        return self.fc_start + np.arange(self.fc_count) * self.fc_step


@dataclass
class SweepResult:
    """A grid of cell outcomes, possibly only partially computed."""

    grid: GridSpec
    model_config: ModelConfig
    run_config: TrainRunConfig
    corpus_digest: str
    mu: np.ndarray          # float64 [att_count, fc_count], NaN where pending
    converged: np.ndarray   # bool, meaningful only where done
    done: np.ndarray        # bool
    failures: dict[int, str]

    @classmethod
    def empty(
        cls,
        grid: GridSpec,
        model_config: ModelConfig,
        run_config: TrainRunConfig,
        corpus_digest: str,
    ) -> "SweepResult":
        shape = (grid.att_count, grid.fc_count)
        return cls(
            grid=grid,
            model_config=model_config,
            run_config=run_config,
            corpus_digest=corpus_digest,
            mu=np.full(shape, np.nan),
            converged=np.zeros(shape, dtype=bool),
            done=np.zeros(shape, dtype=bool),
            failures={},
        )

    @property
    def complete(self) -> bool:
        return bool(self.done.all())

    def pending_cells(self) -> list[int]:
        return [int(k) for k in np.flatnonzero(~self.done.ravel())]

    def same_setup(self, other: "SweepResult") -> bool:
        return (
            self.grid == other.grid
            and self.model_config == other.model_config
            and self.run_config == other.run_config
            and self.corpus_digest == other.corpus_digest
        )


def compute_cell(
    grid: GridSpec,
    model_config: ModelConfig,
    run_config: TrainRunConfig,
    data: SequenceSet,
    index: int,
) -> tuple[int, float, bool, str | None]:
    """Train one grid cell. Returns (index, mu, converged, failure_note).

    Cell index k maps to row i = k // fc_count (attention rate) and column
    j = k % fc_count (fc rate). A crash inside the run is captured and the
    cell is recorded as hard divergence (mu -1) with a note.
    """
    i, j = divmod(index, grid.fc_count)
    cell_config = dataclasses.replace(run_config, eta_att=grid.att_rate(i), eta_fc=grid.fc_rate(j))
    try:
        trace = train_run(model_config, cell_config, data)
        report = evaluate_run(trace, cell_config)
        return index, report.mu, report.converged, None
    except Exception as exc:  # noqa: BLE001 - a bad cell must not sink the sweep
        return index, -1.0, False, f"{type(exc).__name__}: {exc}"


_worker_payload: dict | None = None


def _worker_init(grid, model_config, run_config, data) -> None:
    global _worker_payload
    _worker_payload = {"grid": grid, "model": model_config, "run": run_config, "data": data}


def _worker_cell(index: int):
    p = _worker_payload
    return compute_cell(p["grid"], p["model"], p["run"], p["data"], index)


def run_sweep(
    grid: GridSpec,
    model_config: ModelConfig,
    run_config: TrainRunConfig,
    data: SequenceSet,
    workers: int = 1,
    out_dir=None,
    checkpoint_every: int = CHECKPOINT_EVERY,
) -> SweepResult:
    """Run (or resume) every cell of a sweep.

    With out_dir set, existing results there are loaded first (their setup
    must match) and only pending cells run; progress is checkpointed every
    `checkpoint_every` completions and once at the end. workers > 1 uses a
    spawn-based process pool; cell results are identical either way.
    """
    grid.validate()
    model_config.validate()
    run_config.validate()
    if workers < 1:
        raise ConfigError(f"workers must be positive, got {workers}")
    if checkpoint_every < 1:
        raise ConfigError(f"checkpoint_every must be positive, got {checkpoint_every}")

    result = SweepResult.empty(grid, model_config, run_config, token_digest(data.tokens))
    if out_dir is not None and os.path.exists(os.path.join(out_dir, _META_NAME)):
        existing = load_result(out_dir)
        if not existing.same_setup(result):
            raise ConfigError(f"sweep directory {out_dir} holds a different grid or configuration")
        result = existing

    pending = result.pending_cells()
    if out_dir is not None:
        save_result(result, out_dir)  # persist metadata before any training

    def apply(index: int, mu: float, converged: bool, note: str | None) -> None:
        i, j = divmod(index, grid.fc_count)
        result.mu[i, j] = mu
        result.converged[i, j] = converged
        result.done[i, j] = True
        if note is not None:
            result.failures[index] = note

    finished_since_save = 0
    if workers == 1 or len(pending) <= 1:
        for index in pending:
            apply(*compute_cell(grid, model_config, run_config, data, index))
            finished_since_save += 1
            if out_dir is not None and finished_since_save % checkpoint_every == 0:
                save_result(result, out_dir)
    else:
        ctx = multiprocessing.get_context("spawn")
        n_procs = min(workers, len(pending))
        with ctx.Pool(
            processes=n_procs,
            initializer=_worker_init,
            initargs=(grid, model_config, run_config, data),
        ) as pool:
            for outcome in pool.imap_unordered(_worker_cell, pending, chunksize=1):
                apply(*outcome)
                finished_since_save += 1
                if out_dir is not None and finished_since_save % checkpoint_every == 0:
                    save_result(result, out_dir)
    if out_dir is not None:
        save_result(result, out_dir)
    return result


def _float_repr(x: float) -> str:
    return "%.17g" % x


def _atomic_write(path: str, blob: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _meta_payload(result: SweepResult) -> dict:
    meta = {
        "version": SWEEP_VERSION,
        "grid": dataclasses.asdict(result.grid),
        "model_config": dataclasses.asdict(result.model_config),
        "run_config": dataclasses.asdict(result.run_config),
        "corpus_digest": result.corpus_digest,
        "constants": {
            "mu_range": [-1.0, 1.0],
            "cell_order": "row-major, attention rate by row, fc rate by column",
        },
    }
    if result.failures:
        meta["failures"] = {str(k): v for k, v in sorted(result.failures.items())}
    return meta


def save_result(result: SweepResult, out_dir) -> None:
    """Write the canonical four-file layout (see module docstring).

    Emission is canonical (sorted JSON keys, LF endings, 17-significant-
    digit floats), so saving the same result twice produces byte-identical
    files.
    """
    os.makedirs(out_dir, exist_ok=True)
    meta_blob = (json.dumps(_meta_payload(result), sort_keys=True, indent=2) + "\n").encode("utf-8")

    grid_lines = []
    converged_lines = []
    for i in range(result.grid.att_count):
        grid_lines.append(",".join(_float_repr(v) for v in result.mu[i]))
        converged_lines.append(",".join("1" if c else "0" for c in result.converged[i]))
    grid_blob = ("\n".join(grid_lines) + "\n").encode("ascii")
    converged_blob = ("\n".join(converged_lines) + "\n").encode("ascii")
    done_blob = np.packbits(result.done.ravel().astype(np.uint8), bitorder="little").tobytes()

    # done.bits last: a torn checkpoint can only under-report completed
    # cells, and re-running a cell reproduces the same values.
    _atomic_write(os.path.join(out_dir, _META_NAME), meta_blob)
    _atomic_write(os.path.join(out_dir, _GRID_NAME), grid_blob)
    _atomic_write(os.path.join(out_dir, _CONVERGED_NAME), converged_blob)
    _atomic_write(os.path.join(out_dir, _DONE_NAME), done_blob)


def _parse_csv_grid(path: str, att_count: int, fc_count: int, kind: str) -> list[list[str]]:
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in lines if ln != ""]
    if len(lines) != att_count:
        raise FormatError(f"{path}: expected {att_count} {kind} rows, found {len(lines)}")
    rows = [ln.split(",") for ln in lines]
    for r, row in enumerate(rows):
        if len(row) != fc_count:
            raise FormatError(f"{path}: row {r} has {len(row)} cells, expected {fc_count}")
    return rows


def load_result(path) -> SweepResult:
    """Read a sweep directory back, validating shape and version. Truncated
    or inconsistent files raise a format error naming the mismatch."""
    meta_path = os.path.join(path, _META_NAME)
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read {meta_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path} is not valid JSON: {exc}") from exc
    version = meta.get("version")
    if version != SWEEP_VERSION:
        raise FormatError(f"{meta_path}: unsupported sweep version {version!r}, expected {SWEEP_VERSION!r}")
    try:
        grid = GridSpec(**meta["grid"])
        model_config = ModelConfig(**meta["model_config"])
        run_config = TrainRunConfig(**meta["run_config"])
        corpus_digest = meta["corpus_digest"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{meta_path} is missing or misnaming fields: {exc}") from exc
    grid.validate()

    mu_rows = _parse_csv_grid(os.path.join(path, _GRID_NAME), grid.att_count, grid.fc_count, "mu")
    try:
        mu = np.array([[float(v) for v in row] for row in mu_rows])
    except ValueError as exc:
        raise FormatError(f"{path}/{_GRID_NAME} holds a non-numeric cell: {exc}") from exc

    conv_rows = _parse_csv_grid(os.path.join(path, _CONVERGED_NAME), grid.att_count, grid.fc_count, "flag")
    if any(v not in ("0", "1") for row in conv_rows for v in row):
        raise FormatError(f"{path}/{_CONVERGED_NAME} must contain only 0 and 1")
    converged = np.array([[v == "1" for v in row] for row in conv_rows])

    done_path = os.path.join(path, _DONE_NAME)
    try:
        with open(done_path, "rb") as fh:
            done_blob = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read {done_path}: {exc}") from exc
    expected_bytes = math.ceil(grid.n_cells / 8)
    if len(done_blob) != expected_bytes:
        raise FormatError(f"{done_path}: expected {expected_bytes} bytes for {grid.n_cells} cells, found {len(done_blob)}")
    bits = np.unpackbits(np.frombuffer(done_blob, dtype=np.uint8), bitorder="little")[: grid.n_cells]
    done = bits.astype(bool).reshape(grid.att_count, grid.fc_count)

    done_mu = mu[done]
    if done_mu.size and not (np.isfinite(done_mu).all() and (np.abs(done_mu) <= 1.0).all()):
        raise FormatError(f"{path}/{_GRID_NAME}: completed cells must have mu in [-1, 1]")

    failures = {int(k): str(v) for k, v in meta.get("failures", {}).items()}
    return SweepResult(
        grid=grid,
        model_config=model_config,
        run_config=run_config,
        corpus_digest=corpus_digest,
        mu=mu,
        converged=converged,
        done=done,
        failures=failures,
    )
