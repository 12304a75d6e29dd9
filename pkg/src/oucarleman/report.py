"""CSV, JSON, and figure writers shared by the experiment subcommands.

Every emitted file starts with comment lines naming the producing
subcommand, the config hash, and the seed; numbers use '.' decimals
independent of locale.  Figures are rendered with the Agg backend so runs
work headless.
"""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["RunMeta", "write_csv", "write_summary", "line_figure"]


class RunMeta:
    def __init__(self, subcommand: str, cfg_hash: str, seed: int):
        self.subcommand = subcommand
        self.cfg_hash = cfg_hash
        self.seed = seed

    def header_lines(self) -> list:
        return [
            f"# subcommand={self.subcommand}",
            f"# config_hash={self.cfg_hash}",
            f"# seed={self.seed}",
        ]

    def as_dict(self) -> dict:
        return {"subcommand": self.subcommand, "config_hash": self.cfg_hash,
                "seed": self.seed}


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, complex):
        return repr(v)
    return format(float(v), ".17g")


def write_csv(path, meta: RunMeta, columns: dict) -> None:
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    length = len(arrays[0])
    with open(path, "w") as fh:
        for line in meta.header_lines():
            fh.write(line + "\n")
        fh.write(",".join(names) + "\n")
        for i in range(length):
            fh.write(",".join(_fmt(a[i]) for a in arrays) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_summary(path, meta: RunMeta, payload: dict) -> None:
    body = {"meta": meta.as_dict(), **_jsonable(payload)}
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")


def line_figure(path, meta: RunMeta, curves: list, xlabel: str, ylabel: str,
                title: str, logx: bool = False, logy: bool = False) -> None:
    """curves: list of (x, y, label, style) tuples rendered on one axis."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for x, y, label, style in curves:
        ax.plot(x, y, style, label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(f"{title}  [{meta.subcommand} {meta.cfg_hash} seed={meta.seed}]",
                 fontsize=9)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
