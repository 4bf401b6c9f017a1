"""Log-log MSE curves from sweep tables."""

from __future__ import annotations

import logging
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "huberdp"

LINE_KWARGS = dict(marker="o", linewidth=1.5, markersize=4, capsize=3)
FIG_KWARGS = dict(figsize=(5.0, 3.6))
# fixed metadata keeps vector output byte-stable across runs
SAVE_METADATA = {
    ".svg": {"Date": None},
    ".pdf": {"CreationDate": None, "ModDate": None},
    ".png": {},
}


def _field(row, name):
    return row[name] if isinstance(row, dict) else getattr(row, name)


def _is_int(text) -> bool:
    return isinstance(text, int) or (isinstance(text, str) and text.lstrip("-").isdigit())


def emit_plot(rows, path, title: str | None = None) -> Path:
    """Plot ``mse_mean`` against ``m_or_gamma`` per (method, dist, d, n) series.

    ``rows`` are sweep rows or dicts read back from the CSV. The format follows
    the file suffix (svg, pdf or png). NaN rows (failed cells) are skipped.
    """
    path = Path(path)
    if path.suffix not in SAVE_METADATA:
        raise ValueError(f"unsupported plot format {path.suffix!r}; use .svg, .pdf or .png")
    series = defaultdict(list)
    xs_are_sizes = True
    for row in rows:
        x_raw = _field(row, "m_or_gamma")
        y = float(_field(row, "mse_mean"))
        err = _field(row, "mse_stderr")
        if not y == y or y <= 0:
            continue
        xs_are_sizes &= _is_int(x_raw)
        key = (_field(row, "method"), _field(row, "dist"), _field(row, "d"), _field(row, "n"))
        series[key].append((float(x_raw), y, float(err) if err not in ("", None) else 0.0))

    fig, ax = plt.subplots(**FIG_KWARGS)
    for (method, dist, d, n), pts in sorted(series.items(), key=lambda kv: tuple(map(str, kv[0]))):
        pts.sort()
        x, y, e = zip(*pts)
        ax.errorbar(x, y, yerr=e, label=f"{method} {dist} d={d} n={n}", **LINE_KWARGS)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("samples per user m" if xs_are_sizes else "imbalance degree gamma")
    ax.set_ylabel("MSE")
    if title:
        ax.set_title(title)
    if series:
        ax.legend(fontsize=7)
    else:
        logger.warning("no finite rows to plot; writing empty axes")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=SAVE_METADATA[path.suffix])
    plt.close(fig)
    logger.info("wrote %s", path)
    return path
