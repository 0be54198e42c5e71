"""CSV/JSON report writers and the RMSE box-plot figure.

All numeric CSV output uses '.' decimals at full (round-trip) precision and a
stable column order; files are written atomically (temp + rename).
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def atomic_write_text(path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, fieldnames, rows):
    import io

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    atomic_write_text(path, buf.getvalue())


def write_json(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def render_rmse_boxplot(path, fits_by_kind: dict, outlier_counts: dict = None):
    """Box plots of per-model RMSE distributions, annotated with outlier counts."""
    kinds = [k for k, v in fits_by_kind.items() if v]
    data = [fits_by_kind[k] for k in kinds]
    fig, ax = plt.subplots(figsize=(1.2 * max(4, len(kinds)), 4.5))
    ax.boxplot(data, tick_labels=[k.capitalize() for k in kinds], showfliers=False)
    if outlier_counts:
        for i, kind in enumerate(kinds, start=1):
            ax.annotate(str(outlier_counts.get(kind, 0)), xy=(i, 1.02),
                        xycoords=("data", "axes fraction"), ha="center", fontsize=9)
    ax.set_ylabel("RMSE (cc)")
    ax.set_xlabel("Growth model")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
