"""CSV and JSON-lines reports; every file ends with a provenance comment."""
from __future__ import annotations

import json
import math
from pathlib import Path

from graspview.viewmap import ViewMapGrid, export_csv


def provenance(config_hash: str, master_seed: int) -> str:
    return f"# config_sha256={config_hash} master_seed={master_seed}"


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _write_csv(path: Path, header: list[str], rows, trailer: str) -> Path:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    lines.append(trailer)
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def _write_jsonl(path: Path, records, trailer: str) -> Path:
    lines = [json.dumps(r, sort_keys=True) for r in records]
    lines.append(trailer)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


RESULT_COLUMNS = ["strategy", "shape_class", "trials", "detected", "after_pruning", "positives",
                  "true_positives", "accuracy"]


def emit_report(result, out_dir, config_hash: str, master_seed: int, maps=None) -> list[Path]:
    """Write results.csv, topn_curves.csv, score_hist.csv and trials.jsonl.

    ``result`` is an offline-evaluation result (or None for an empty table).
    ``maps`` (one map or a dict of them) adds map_export.csv files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trailer = provenance(config_hash, master_seed)
    rows = result.rows if result is not None else []
    n_values = result.n_values if result is not None else ()
    written = [
        _write_csv(out / "results.csv", RESULT_COLUMNS,
                   [[r.strategy, r.shape_class, r.trials, r.detected, r.after_pruning, r.positives,
                     r.true_positives, r.accuracy] for r in rows], trailer),
        _write_csv(out / "topn_curves.csv", ["strategy", "shape_class", "n", "accuracy"],
                   [[r.strategy, r.shape_class, n, acc] for r in rows for n, acc in r.curve(n_values)], trailer),
    ]
    hist_rows = []
    for r in rows:
        edges, counts = r.histogram()
        hist_rows += [[r.strategy, r.shape_class, float(edges[i]), float(edges[i + 1]), int(c)]
                      for i, c in enumerate(counts)]
    written.append(_write_csv(out / "score_hist.csv", ["strategy", "shape_class", "bin_lo", "bin_hi", "count"],
                              hist_rows, trailer))
    written.append(_write_jsonl(out / "trials.jsonl", result.trials if result is not None else [], trailer))
    if maps is not None:
        written += write_map_exports(maps, out, config_hash, master_seed)
    return written


def write_map_exports(maps, out_dir, config_hash: str, master_seed: int) -> list[Path]:
    """map_export.csv for a single map, map_export_<class>.csv for a dict of maps."""
    out = Path(out_dir)
    trailer = provenance(config_hash, master_seed)
    if isinstance(maps, ViewMapGrid):
        maps = {None: maps}
    written = []
    for key in sorted(maps, key=str):
        path = out / ("map_export.csv" if key is None else f"map_export_{key}.csv")
        export_csv(maps[key], path, trailer)
        written.append(path)
    return written


def emit_sequence_report(result, out_dir, config_hash: str, master_seed: int) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trailer = provenance(config_hash, master_seed)
    return [
        _write_csv(out / "sequence.csv", ["order", "trials", "successes", "success_rate"],
                   [[r.order, r.trials, r.successes, r.success_rate] for r in result.rows], trailer),
        _write_jsonl(out / "sequence_trace.jsonl", result.traces, trailer),
    ]
