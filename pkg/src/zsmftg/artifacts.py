"""CSV and SVG output of training logs."""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .model import PolicyProfile
from .optimize import IterateLog, IterateRecord

BLOCKS = ("K1", "L1", "K2", "L2")


def _num(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def csv_header(shape) -> list[str]:
    rows, cols = shape
    names = ["iter"]
    for b in BLOCKS:
        names += [f"{b}_{r}_{c}" for r in range(rows) for c in range(cols)]
    return names + ["cost", "rel_error", "grad_norm", "in_Theta"]


def format_csv(log: IterateLog) -> str:
    if not len(log):
        raise ValueError("cannot write an empty iterate log")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(log[0].theta.shape))
    for rec in log:
        row = [str(rec.iter)]
        for b in rec.theta.blocks():
            row += [_num(v) for v in b.ravel()]
        row += [_num(rec.cost), _num(rec.rel_error), _num(rec.grad_norm),
                "true" if rec.in_Theta else "false"]
        w.writerow(row)
    return buf.getvalue()


def emit_csv(log: IterateLog, path) -> Path:
    text = format_csv(log)
    path = Path(path)
    path.write_text(text)
    return path


def read_csv(path, reference=None) -> IterateLog:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n = (len(header) - 5) // 4
        k1 = [h for h in header if h.startswith("K1_")]
        rows = 1 + max(int(h.split("_")[1]) for h in k1)
        cols = n // rows
        log = IterateLog(reference=reference)
        for row in reader:
            vals = np.array([float(v) for v in row[1:1 + 4 * n]])
            blocks = [vals[i * n:(i + 1) * n].reshape(rows, cols) for i in range(4)]
            cost, rel, gnorm, flag = row[1 + 4 * n:]
            log.append(IterateRecord(int(row[0]), PolicyProfile(*blocks), float(cost),
                                     None if rel == "" else float(rel), float(gnorm),
                                     flag == "true"))
    return log


def emit_plot(log: IterateLog, path, *, target: PolicyProfile | None = None, title=None) -> Path:
    """Parameter curves and relative utility error (log scale) against iteration."""
    if not len(log):
        raise ValueError("cannot plot an empty iterate log")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "zsmftg"
    it = np.array([r.iter for r in log])
    params = log.params()
    shape = log[0].theta.shape
    names = csv_header(shape)[1:1 + params.shape[1]]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for j, name in enumerate(names):
        line, = ax1.plot(it, params[:, j], label=name)
        if target is not None:
            ax1.axhline(target.as_vector()[j], color=line.get_color(), ls="--", lw=0.8)
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("parameter value")
    if len(names) <= 16:
        ax1.legend(fontsize="small")
    rel = log.column("rel_error")
    if np.all(np.isnan(rel)):
        ax2.plot(it, log.column("cost"))
        ax2.set_ylabel("utility")
    else:
        ax2.semilogy(it, np.where(rel > 0, rel, np.nan))
        ax2.set_ylabel("relative utility error")
    ax2.set_xlabel("iteration")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def average_logs(logs: list[IterateLog]) -> IterateLog:
    """Pointwise average of parameters, utilities, errors and gradient norms."""
    if not logs:
        raise ValueError("no logs to average")
    n = min(len(log) for log in logs)
    out = IterateLog(reference=logs[0].reference)
    for i in range(n):
        recs = [log[i] for log in logs]
        theta = PolicyProfile.from_vector(np.mean([r.theta.as_vector() for r in recs], axis=0),
                                          *recs[0].theta.shape)
        rels = [r.rel_error for r in recs]
        rel = None if any(v is None for v in rels) else float(np.mean(rels))
        out.append(IterateRecord(recs[0].iter, theta, float(np.mean([r.cost for r in recs])), rel,
                                 float(np.mean([r.grad_norm for r in recs])),
                                 all(r.in_Theta for r in recs)))
    return out
