"""Experiment runners behind the command line.

Each runner takes a finalized config (see :mod:`frcap.config`), writes CSV
and JSON reports into ``output_dir`` and returns a :class:`RunResult`.
Reports are a pure function of the config: floats are written with
``repr`` and grid points are collected in grid order whatever the worker
count.  Wall-clock timings go to a separate ``timings.json``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import capacity
from .autodiff import (loss_fd_gradient, loss_gradient, near_kink,
                       output_jacobian_contraction, relative_error)
from .capacity import Empirical, capacity_summary, norm_comparison_report
from .config import ConfigError, train_config
from .data import Dataset, corrupt_labels, load_csv, load_idx, make_synthetic, train_test_split
from .losses import LossKind
from .network import (Network, forward, init_network, load_network, nodewise_rescale,
                      predict, save_network)
from .optimize import train
from .rademacher import linear_fr_rademacher

log = logging.getLogger(__name__)

PROTOCOL_NOTE = ("desk-scale protocol: datasets, widths, learning rates and epoch counts "
                 "are this toolkit's own defaults, not a published training recipe")

__all__ = ["RunResult", "run_experiment", "load_dataset", "build_network",
           "margins", "accuracy", "verify_suite", "rows_to_csv", "table_ratio_rows"]


@dataclass
class RunResult:
    experiment: str
    files: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    ok: bool = True


# ---------------------------------------------------------------- output

def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def rows_to_csv(rows, fieldnames=None) -> str:
    if fieldnames is None:
        fieldnames = []
        for r in rows:
            fieldnames.extend(k for k in r if k not in fieldnames)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n", restval="")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(v) for k, v in r.items()})
    return buf.getvalue()


def _dump(doc) -> str:
    return json.dumps(capacity._jsonable(doc), indent=1, sort_keys=True) + "\n"


class _Writer:
    """Serializes every report write for one run."""

    def __init__(self, cfg, result: RunResult):
        self.dir = cfg["output_dir"]
        os.makedirs(self.dir, exist_ok=True)
        self.result = result

    def text(self, name, text):
        path = os.path.join(self.dir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.result.files.append(path)
        return path

    def csv(self, name, rows, fieldnames=None):
        return self.text(name, rows_to_csv(rows, fieldnames))

    def json(self, name, doc):
        if "config" in doc:
            doc = {"protocol": PROTOCOL_NOTE, **doc}
        return self.text(name, _dump(doc))


# ---------------------------------------------------------------- pieces

def load_dataset(cfg) -> Dataset:
    spec = cfg["dataset"]
    src = spec["source"]
    if src == "synthetic":
        ds = make_synthetic(spec["kind"], spec.get("params", {}), seed=cfg["seed"])
    elif src == "csv":
        ds = load_csv(spec["path"], spec["label_column"], task=spec.get("task", "classification"))
    else:
        ds = load_idx(spec["images"], spec["labels"], spec.get("limit"))
    alpha = spec.get("label_noise", 0.0)
    if alpha:
        ds = corrupt_labels(ds, alpha, seed=cfg["seed"] + 1)
    return ds


def build_network(cfg, ds: Dataset, hidden=None, seed=None) -> Network:
    net_cfg = cfg["network"]
    if net_cfg.get("path") and hidden is None:
        return load_network(net_cfg["path"])
    hidden = list(net_cfg["hidden"] if hidden is None else hidden)
    K = ds.output_dim(cfg["train"]["loss"])
    return init_network([ds.p] + hidden + [K], net_cfg["activation"],
                        net_cfg["output_activation"], seed=cfg["seed"] if seed is None else seed)


def margins(net: Network, X, targets, loss) -> np.ndarray:
    """``y f(x)`` for one output, ``f_y - max_{y' != y} f_{y'}`` otherwise."""
    F = predict(net, X)
    if F.shape[1] == 1:
        return np.asarray(targets, dtype=np.float64) * F[:, 0]
    y = np.asarray(targets, dtype=np.int64)
    idx = np.arange(F.shape[0])
    true = F[idx, y]
    other = F.copy()
    other[idx, y] = -np.inf
    return true - other.max(axis=1)


def accuracy(net: Network, ds: Dataset, loss) -> float | None:
    if ds.task != "classification" or ds.N == 0:
        return None
    return float(np.mean(margins(net, ds.X, ds.targets(loss), loss) > 0))


def _norms(net, ds, loss, wanted):
    loss = LossKind.parse(loss)
    y = ds.targets(loss) if loss is LossKind.CROSS_ENTROPY else None
    s = capacity_summary(net, ds.X, y)
    if net.output_dim == 1 and ds.task == "classification":
        # empirical Fisher-Rao norm under the training loss and labels
        L1 = net.depth + 1
        s["fr_empirical"] = capacity.fr_norm_identity(net, loss, Empirical(ds.X, ds.targets(loss)))
        s["fr_empirical_natural"] = s["fr_empirical"] / L1
    return {k: s[k] for k in wanted if k in s}


def _train_point(cfg, hidden, train_ds, test_ds, seed):
    tc = train_config(cfg, seed=seed)
    net = build_network(cfg, train_ds, hidden, seed=seed)
    Yt = train_ds.targets(tc.loss)
    net, hist = train(net, train_ds.X, Yt, tc)
    if hist.aborted:
        raise RuntimeError(hist.reason)
    final = hist.records[-1]
    row = {"depth": net.depth, "width": hidden[0] if hidden else 0,
           "dims": "-".join(map(str, net.dims)), "params": int(sum(W.size for W in net.weights)),
           "epochs": final.epoch, "train_loss": final.loss, "grad_norm": final.grad_norm}
    tr_acc, te_acc = accuracy(net, train_ds, tc.loss), accuracy(net, test_ds, tc.loss)
    if tr_acc is not None:
        row.update(train_acc=tr_acc, test_acc=te_acc, gen_gap=tr_acc - te_acc)
    row.update(_norms(net, train_ds, tc.loss, cfg["norms"]))
    return net, hist, row


def _split(cfg, ds):
    tr, te, _, _ = train_test_split(ds, cfg["dataset"].get("test_fraction", 0.25),
                                    seed=cfg["seed"])
    return tr, te


# ---------------------------------------------------------------- runners

def _run_train(cfg, w: _Writer, res: RunResult, timings):
    ds = load_dataset(cfg)
    tr, te = _split(cfg, ds)
    t0 = time.perf_counter()
    net, hist, row = _train_point(cfg, cfg["network"]["hidden"], tr, te, cfg["seed"])
    timings["train"] = time.perf_counter() - t0
    w.csv("history.csv", hist.rows())
    w.json("summary.json", {"config": cfg, "result": row, "history": hist.summary(),
                            "dataset": ds.provenance})
    save_network(net, os.path.join(w.dir, "network.json"))
    res.files.append(os.path.join(w.dir, "network.json"))
    return net, tr


def _run_norms(cfg, w: _Writer, res: RunResult, timings):
    ds = load_dataset(cfg)
    if cfg["network"].get("path"):
        net, tr = build_network(cfg, ds), ds
    else:
        net, tr = _run_train(cfg, w, res, timings)
    t0 = time.perf_counter()
    loss = LossKind.parse(cfg["train"]["loss"])
    summary = _norms(net, tr, loss, cfg["norms"])
    doc = {"config": cfg, "dims": net.dims, "summary": summary}
    if net.output_dim == 1:
        y = tr.targets(loss) if tr.task == "classification" else tr.y
        rep = norm_comparison_report(net, tr.X, y)
        w.csv("norms.csv", [rep.csv_row()])
        doc["comparison"] = rep.to_json()
        doc["all_hold"] = rep.all_hold
    else:
        w.csv("norms.csv", [dict(dims="-".join(map(str, net.dims)), **summary)])
    timings["norms"] = time.perf_counter() - t0
    w.json("norms.json", doc)


def _run_margins(cfg, w: _Writer, res: RunResult, timings):
    ds = load_dataset(cfg)
    tr, te = _split(cfg, ds)
    t0 = time.perf_counter()
    net, hist, row = _train_point(cfg, cfg["network"]["hidden"], tr, te, cfg["seed"])
    loss = LossKind.parse(cfg["train"]["loss"])
    m = margins(net, tr.X, tr.targets(loss), loss)
    fr = _norms(net, tr, loss, ["fr_empirical"])["fr_empirical"]
    sp = capacity.spectral_product(net)
    rows = [{"index": int(i), "margin": float(v),
             "margin_fr": float(v / fr) if fr > 0 else float("nan"),
             "margin_spectral": float(v / sp) if sp > 0 else float("nan")}
            for i, v in enumerate(m)]
    timings["margins"] = time.perf_counter() - t0
    w.csv("margins.csv", rows)
    qs = (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0)
    w.json("margins.json", {"config": cfg, "fr_empirical": fr, "spectral": sp, "train": row,
                            "quantiles": {
                                name: {str(q): float(np.quantile(m / s, q)) for q in qs}
                                for name, s in (("raw", 1.0), ("fr", fr), ("spectral", sp))
                                if s > 0}})


def _sweep_grid(cfg):
    sw = cfg["sweep"]
    kind = sw["kind"]
    if kind == "width":
        depth = sw.get("depth", 2)
        return [("width", k, [k] * depth, 0.0) for k in sw["widths"]]
    if kind == "depth":
        return [("depth", L, [sw.get("width", 16)] * L, 0.0) for L in sw["depths"]]
    hidden = cfg["network"]["hidden"]
    return [("alpha", a, hidden, a) for a in sw["alphas"]]


def _sweep_point(args):
    cfg, key, value, hidden, alpha = args
    t0 = time.perf_counter()
    try:
        ds = load_dataset(cfg)
        if alpha:
            ds = corrupt_labels(ds, alpha, seed=cfg["seed"] + 1)
        tr, te = _split(cfg, ds)
        _, _, row = _train_point(cfg, hidden, tr, te, cfg["seed"])
        row = {key: value, "status": "ok", **row}
        err = None
    except Exception as exc:  # recorded, the sweep goes on
        row = {key: value, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
        err = traceback.format_exc()
    return row, err, time.perf_counter() - t0


def table_ratio_rows(rows, columns=("fr_model", "fr_empirical", "spectral")):
    """Rows ``alpha = 0``, ``alpha = 1`` and their ratio (clean over random)."""
    by = {r.get("alpha"): r for r in rows if r.get("status") == "ok"}
    if 0.0 not in by or 1.0 not in by:
        return []
    out = []
    for a in (0.0, 1.0):
        out.append({"row": f"alpha={a:g}", **{c: by[a].get(c) for c in columns}})
    out.append({"row": "ratio", **{c: (by[0.0][c] / by[1.0][c]
                                       if by[1.0].get(c) else float("nan"))
                                   for c in columns}})
    return out


def _run_sweep(cfg, w: _Writer, res: RunResult, timings):
    grid = _sweep_grid(cfg)
    tasks = [(cfg, key, value, hidden, alpha) for key, value, hidden, alpha in grid]
    if cfg.get("workers", 1) > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            outs = list(pool.map(_sweep_point, tasks))
    else:
        outs = [_sweep_point(t) for t in tasks]
    rows = []
    for (key, value, _, _), (row, err, secs) in zip(grid, outs):
        rows.append(row)
        timings[f"{key}={value}"] = secs
        if err is not None:
            res.failures.append({key: value, "traceback": err})
            log.error("sweep point %s=%s failed: %s", key, value, row["error"])
    w.csv("sweep.csv", rows)
    doc = {"config": cfg, "rows": rows, "failures": len(res.failures)}
    ok_rows = [r for r in rows if r["status"] == "ok"]
    if ok_rows:
        spread = {}
        for col in ("fr_empirical_natural", "fr_model_natural", "spectral", "path_1", "path_2", "l2"):
            vals = np.array([r[col] for r in ok_rows if col in r], dtype=np.float64)
            if vals.size:
                spread[col] = float((vals.max() - vals.min()) / np.mean(np.abs(vals))) \
                    if np.any(vals) else 0.0
        doc["relative_range"] = spread
    if cfg["sweep"]["kind"] == "label_noise":
        table = table_ratio_rows(rows)
        if table:
            w.csv("table.csv", table)
            doc["table"] = table
    w.json("sweep.json", doc)


def _run_rademacher(cfg, w: _Writer, res: RunResult, timings):
    rc = cfg["rademacher"]
    spec = cfg["dataset"]
    cov = None
    if spec["source"] == "synthetic" and spec.get("kind") == "gaussian_linear":
        cov = spec.get("params", {}).get("cov")
    rows, ests = [], []
    t0 = time.perf_counter()
    for p in rc["ps"]:
        C = np.asarray(cov, dtype=np.float64) if cov is not None and np.shape(cov) == (p, p) else None
        for N in rc["Ns"]:
            for g in rc["gammas"]:
                est = linear_fr_rademacher(p, N, g, cov=C, trials=rc["trials"], seed=cfg["seed"])
                ests.append(est.to_json())
                rows.append({"p": p, "N": N, "gamma": g, "mean": est.mean,
                             "se": est.std_error, "bound": est.bound,
                             "within_bound": int(est.within_bound)})
    timings["rademacher"] = time.perf_counter() - t0
    w.csv("rademacher.csv", rows, ["p", "N", "gamma", "mean", "se", "bound", "within_bound"])
    w.json("rademacher.json", {"config": cfg, "estimates": ests})
    if not all(r["within_bound"] for r in rows):
        res.failures.append({"rademacher": "estimate above bound + 3 SE"})


def _run_conditioning(cfg, w: _Writer, res: RunResult, timings):
    cc = cfg["conditioning"]
    ds = load_dataset(cfg)
    if ds.task != "regression":
        raise ConfigError("conditioning needs a regression dataset (e.g. piecewise_linear_curve)")
    rows, finals = [], {}
    for opt in cc["optimizers"]:
        tc = train_config(cfg, optimizer=opt, lr=cc["lrs"].get(opt, cfg["train"]["lr"]),
                          loss="squared", epochs=cc["iterations"], batch_size=None,
                          record_every=cc["record_every"], record_norms=False)
        net = init_network([ds.p] + list(cfg["network"]["hidden"]) + [1],
                           cfg["network"]["activation"], "linear", seed=cfg["seed"])
        t0 = time.perf_counter()
        try:
            net, hist = train(net, ds.X, ds.y, tc)
        except Exception as exc:
            res.failures.append({"optimizer": opt, "error": f"{type(exc).__name__}: {exc}"})
            continue
        timings[opt] = time.perf_counter() - t0
        for r in hist.records:
            rows.append({"optimizer": opt, "iteration": r.epoch, "loss": r.loss,
                         "grad_norm": r.grad_norm})
        finals[opt] = {"loss": hist.records[-1].loss, "aborted": hist.aborted,
                       "reason": hist.reason}
    w.csv("conditioning.csv", rows, ["optimizer", "iteration", "loss", "grad_norm"])
    w.json("conditioning.json", {"config": cfg, "final": finals})


def _random_net(rng, depth, act, K=1, max_width=16, p=None):
    p = int(rng.integers(1, 6)) if p is None else p
    dims = [p] + [int(rng.integers(1, max_width + 1)) for _ in range(depth)] + [K]
    weights = [rng.standard_normal((a, b)) / np.sqrt(a) for a, b in zip(dims[:-1], dims[1:])]
    return Network.from_weights(weights, act, "linear")


def verify_suite(nets: int = 50, points: int = 20, tol: float = 1e-8, seed: int = 0) -> list:
    """Property checks on random networks; one summary row per property."""
    rng = np.random.default_rng(seed)
    acts = ["relu", "linear", "leaky_relu:0.1"]
    worst = {k: 0.0 for k in ("contraction", "fr_routes", "rescaling", "star_shape", "gradient")}
    counts = dict.fromkeys(worst, 0)
    compare_fail = 0
    for i in range(nets):
        depth = int(rng.integers(1, 5))
        act = acts[i % 3]
        net = _random_net(rng, depth, act)
        x = rng.standard_normal(net.input_dim)
        if not near_kink(net, x):
            per_pair, total = output_jacobian_contraction(net, x)
            tr = forward(net, x)
            err = max(relative_error(v, tr.layer_output(s + 1)) for (t, s), v in per_pair.items())
            err = max(err, relative_error(total, (depth + 1) * tr.output))
            worst["contraction"] = max(worst["contraction"], err)
            counts["contraction"] += 1

        X = rng.standard_normal((points, net.input_dim))
        for loss in LossKind:
            if loss is LossKind.CROSS_ENTROPY:
                net_l = _random_net(rng, depth, act, K=3, p=net.input_dim)
                y = rng.integers(0, 3, points)
            else:
                net_l = net
                y = rng.choice([-1.0, 1.0], points) if loss is LossKind.HINGE \
                    else rng.standard_normal(points)
            d = Empirical(X, y)
            a = capacity.fr_norm_identity(net_l, loss, d)
            b = capacity.fr_norm_fisher(net_l, loss, d)
            worst["fr_routes"] = max(worst["fr_routes"], abs(a - b) / max(abs(a), 1e-300))
            counts["fr_routes"] += 1

        if act == "relu":
            rep = norm_comparison_report(net, X)
            compare_fail += int(not rep.all_hold)
            resc = net
            for _ in range(10):
                t = int(rng.integers(1, depth + 1))
                resc = nodewise_rescale(resc, t, int(rng.integers(resc.dims[t])),
                                        float(np.exp(rng.uniform(-1, 1))))
            d = Empirical(X, rng.standard_normal(points))
            a = capacity.fr_norm_fisher(net, LossKind.SQUARED, d)
            b = capacity.fr_norm_fisher(resc, LossKind.SQUARED, d)
            worst["rescaling"] = max(worst["rescaling"], abs(a - b) / max(a, 1e-300))
            counts["rescaling"] += 1

        r = float(rng.choice([0.5, 2.0, 5.0]))
        _, _, rel = capacity.star_shape_check(net, r, Empirical(X, rng.standard_normal(points)))
        worst["star_shape"] = max(worst["star_shape"], rel)
        counts["star_shape"] += 1

        if not near_kink(net, X, 1e-3):
            Y = rng.standard_normal(points)
            g = loss_gradient(net, X, Y, LossKind.SQUARED).flatten()
            fd = loss_fd_gradient(net, X, Y, LossKind.SQUARED, h=1e-6)
            worst["gradient"] = max(worst["gradient"], relative_error(g, fd))
            counts["gradient"] += 1

    tols = {"contraction": tol, "fr_routes": tol, "rescaling": tol, "star_shape": tol,
            "gradient": 1e-5}
    rows = [{"check": k, "cases": counts[k], "worst": worst[k], "tolerance": tols[k],
             "passed": int(worst[k] <= tols[k])} for k in worst]
    rows.append({"check": "norm_comparisons", "cases": (nets + 2) // 3, "worst": float(compare_fail),
                 "tolerance": 0.0, "passed": int(compare_fail == 0)})
    return rows


def _run_verify(cfg, w: _Writer, res: RunResult, timings):
    vc = cfg["verify"]
    t0 = time.perf_counter()
    rows = verify_suite(vc["nets"], vc["points"], vc["tolerance"], seed=cfg["seed"])
    timings["verify"] = time.perf_counter() - t0
    w.csv("verify.csv", rows, ["check", "cases", "worst", "tolerance", "passed"])
    w.json("verify.json", {"config": cfg, "checks": rows})
    for r in rows:
        if not r["passed"]:
            res.failures.append({"check": r["check"], "worst": r["worst"]})


_RUNNERS = {"train": _run_train, "norms": _run_norms, "margins": _run_margins,
            "sweep": _run_sweep, "rademacher": _run_rademacher,
            "conditioning": _run_conditioning, "verify": _run_verify}


def run_experiment(cfg: dict) -> RunResult:
    """Run ``cfg["experiment"]`` and write its reports.

    Configuration problems raise :class:`~frcap.config.ConfigError`; any
    other failure propagates.  Failed sweep points and failed checks are
    collected in ``result.failures`` and make ``result.ok`` false.
    """
    kind = cfg["experiment"]
    res = RunResult(kind)
    w = _Writer(cfg, res)
    timings = {}
    _RUNNERS[kind](cfg, w, res, timings)
    path = os.path.join(w.dir, "timings.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(timings, fh, indent=1, sort_keys=True)
    res.files.append(path)
    res.ok = not res.failures
    return res
