"""Result serialization: the CSV table, the JSON bundle, summaries.

Floats are written with ``repr``, the shortest digit string that parses
back to the same double. Together with the deterministic work counters
that makes every rerun of a config produce byte-identical tables, and it
lets ``summarize`` recompute the aggregation from the per-replication
records and check it against what was written, bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

from ..estimators import mse_table
from .errors import HarnessError

__all__ = [
    "CSV_COLUMNS",
    "compute_rows",
    "write_outputs",
    "load_bundle",
    "summarize_bundle",
    "format_rows",
]

CSV_COLUMNS = (
    "functional",
    "method",
    "mse",
    "relative_mse",
    "time_adjusted_relative_mse",
    "mean_iact",
    "acceptance",
)


def compute_rows(functionals, labels, reference, truth, estimates, diagnostics) -> list[dict]:
    """Aggregate per-replication estimates into the reported table.

    ``truth`` is one mapping per dataset; ``estimates[label][functional]``
    and the diagnostics series are nested ``[dataset][replication]``
    lists holding only the successful replications. Relative MSEs are
    computed within each dataset against the reference method, then
    averaged across datasets; the time adjustment scales each relative
    MSE by the ratio of mean work counters. Methods with fewer than two
    successful replications on a dataset get NaN cells there.
    """
    n_ds = len(truth)
    per_ds = []
    for ds in range(n_ds):
        collected = {}
        cost = {}
        for label in labels:
            values = {name: estimates[label][name][ds] for name in functionals}
            counts = {len(v) for v in values.values()}
            if counts != {len(diagnostics[label]["work"][ds])}:
                raise HarnessError(f"bundle is inconsistent for method {label!r} on dataset {ds}")
            if len(values[functionals[0]]) >= 2:
                collected[label] = values
                cost[label] = float(np.mean(diagnostics[label]["work"][ds]))
        if reference not in collected:
            raise HarnessError(
                f"reference method {reference!r} has fewer than 2 successful replications on dataset {ds}"
            )
        per_ds.append(
            {
                name: mse_table(
                    {label: np.asarray(collected[label][name]) for label in collected},
                    truth[ds][name],
                    reference=reference,
                    cost=cost,
                )
                for name in functionals
            }
        )

    nan = float("nan")
    rows = []
    for name in functionals:
        for label in labels:
            cells = [per_ds[ds][name].get(label) for ds in range(n_ds)]
            have = [c for c in cells if c is not None]
            iacts = [
                v
                for ds in range(n_ds)
                for v in diagnostics[label]["iact"][name][ds]
                if not math.isnan(v)
            ]
            accs = [v for ds in range(n_ds) for v in diagnostics[label]["acceptance"][ds]]
            rows.append(
                {
                    "functional": name,
                    "method": label,
                    "mse": float(np.mean([c["mse"] for c in have])) if have else nan,
                    "relative_mse": float(np.mean([c["relative_mse"] for c in have]))
                    if have
                    else nan,
                    "time_adjusted_relative_mse": float(
                        np.mean([c["time_adjusted_relative_mse"] for c in have])
                    )
                    if have
                    else nan,
                    "mean_iact": float(np.mean(iacts)) if iacts else nan,
                    "acceptance": float(np.mean(accs)) if accs else nan,
                }
            )
    return rows


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_outputs(bundle: dict, output_dir: str) -> dict:
    """Write mse_table.csv and bundle.json; returns the paths."""
    os.makedirs(output_dir, exist_ok=True)
    csv_path = os.path.join(output_dir, "mse_table.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in bundle["mse_rows"]:
            writer.writerow([_cell(row[col]) for col in CSV_COLUMNS])
    bundle_path = os.path.join(output_dir, "bundle.json")
    with open(bundle_path, "w") as fh:
        json.dump(bundle, fh, indent=1)
        fh.write("\n")
    return {"csv": csv_path, "bundle": bundle_path}


def load_bundle(path: str) -> dict:
    """Read a bundle.json, accepting the directory that contains it."""
    if os.path.isdir(path):
        path = os.path.join(path, "bundle.json")
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise HarnessError(f"cannot read bundle: {exc}") from exc
    except ValueError as exc:
        raise HarnessError(f"{path}: not a valid bundle: {exc}") from exc


def _rows_match(a: list, b: list) -> bool:
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        for col in CSV_COLUMNS:
            va, vb = ra[col], rb[col]
            if isinstance(va, float) and isinstance(vb, float):
                if math.isnan(va) and math.isnan(vb):
                    continue
                if va != vb:
                    return False
            elif va != vb:
                return False
    return True


def format_rows(rows: list, columns=CSV_COLUMNS, digits: int = 4) -> str:
    """Fixed-width text rendering of table rows for the terminal."""
    def show(value):
        if isinstance(value, float):
            return f"{value:.{digits}g}"
        return str(value)

    table = [[show(row[col]) for col in columns] for row in rows]
    widths = [max(len(col), *(len(r[i]) for r in table)) for i, col in enumerate(columns)]
    lines = ["  ".join(col.ljust(widths[i]) for i, col in enumerate(columns))]
    for r in table:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(columns))))
    return "\n".join(lines)


def summarize_bundle(path: str, check: bool = True) -> tuple[dict, str]:
    """Recompute a bundle's table and render it; verify the stored copy.

    Returns the bundle and the printable summary. With ``check`` the
    aggregation is recomputed from the per-replication records and must
    match the stored rows exactly, guarding against a bundle edited or
    truncated after the run.
    """
    bundle = load_bundle(path)
    for key in ("functionals", "methods", "reference", "truth", "estimates",
                "diagnostics", "mse_rows"):
        if key not in bundle:
            raise HarnessError(f"bundle is missing its {key!r} record")
    rows = compute_rows(
        bundle["functionals"],
        bundle["methods"],
        bundle["reference"],
        bundle["truth"],
        bundle["estimates"],
        bundle["diagnostics"],
    )
    if check and not _rows_match(rows, bundle["mse_rows"]):
        raise HarnessError("stored mse_rows do not match a recomputation from the raw estimates")

    lines = [
        f"experiment: {bundle.get('experiment', '?')}"
        f"  methods: {', '.join(bundle['methods'])}  reference: {bundle['reference']}",
        f"replications: {bundle.get('replications', '?')}"
        f"  datasets: {len(bundle['truth'])}  base_seed: {bundle.get('base_seed', '?')}",
        "",
        format_rows(rows),
    ]
    failures = bundle.get("failures", [])
    if failures:
        lines.append("")
        lines.append(f"failed chains: {len(failures)}")
        for item in failures:
            lines.append(
                f"  dataset {item['dataset']} method {item['method']}"
                f" replication {item['replication']}: {item['error']}"
            )
    return bundle, "\n".join(lines)
