"""Command-line front end.

Every command reads one JSON config (defaults, then an optional preset, then
``--config``, then ``--set key.path=value`` overrides), writes its outputs to
the output directory and exits 0 only if nothing failed. Output files are
deterministic given the resolved config, which is saved next to them.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, stochastic
from .core import DenseNetwork, OrthonormalDataset, generate_dataset, mask_matrix, sample_init
from .errors import (AmbiguousArgmax, BadDelta, ClusterMismatch, CollapsedNeuron, NonFinite,
                     Saddle2SaddleError, TooFewSamples, ZeroLabel)
from .limit import (LimitProcess, bias_bound, build, opt_sq_norm,
                    pred_sq_norm)
from .trainer import (ScaledState, TrainerConfig, Trajectory, epoch_of,
                      he_uniform_init, train, train_dense)

log = logging.getLogger("saddle2saddle")

SCHEMA_VERSION = 1
OUT_ENV = "SADDLE2SADDLE_OUT"
DEFAULT_OUT = "s2s_out"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_ZERO_LABEL = 3
EXIT_AMBIGUOUS = 4
EXIT_NUMERIC = 5
EXIT_ANALYSIS = 6
EXIT_BAD_DELTA = 7
EXIT_OTHER = 8

DEFAULTS: dict = {
    "schema_version": SCHEMA_VERSION,
    "out": None,
    "strict": True,
    "workers": 1,
    "dataset": {
        "n": 64, "d": None, "basis": "identity", "label_spec": "abs-gaussian",
        "labels": None, "constant": 1.0, "seed": 0,
    },
    "init": {
        # small: log-domain trainer; small-dense and he-uniform: plain floats
        "mode": "small", "m": 6, "alpha_log": -500.0, "scale_rule": None,
        "signs": "positive", "seed": 3, "mask": None,
    },
    "trainer": {
        "lr": 0.01, "max_epochs": 10_000_000, "loss_stop": 1e-20, "record_every": 1000,
        "fit_threshold": 0.5, "engine": "numba", "record_residuals": True,
    },
    "analysis": {
        "assert": True, "jump_tol": 0.05, "slope_tol": 0.05, "norm_tol": 0.01,
        "synthetic": False, "reuse": False,
    },
    "sweep_n": {
        "ns": [8, 16, 32, 64, 128, 256], "seeds": [0, 1, 2], "label_spec": "gaussian",
        "signs": "random", "slope_range": [0.4, 0.6], "opt_slope_range": [0.45, 0.55],
    },
    "sweep_m": {
        "n": 32, "ms": [8, 16, 32, 64], "seeds": [0, 1, 2], "label_spec": "gaussian",
        "lr_small": 1.0, "lr_he": 0.001, "max_epochs": 1_000_000, "loss_stop": 1e-10,
    },
    "assumptions": {
        "n_plus": 32, "n_minus": 32, "m": 20, "trials": 10_000, "seed": 0,
        "grid": True, "grid_sizes": [8, 16, 32, 64], "grid_widths": [10, 20, 30],
        "grid_trials": 1000, "ci_multiple": 3.0,
    },
    "split": {
        "n": 4096, "m": 20, "trials": 1000, "delta": 0.025, "rho": 0.25,
        "ordering": "fixed", "steps": None, "seed": 0, "ratio_range": [0.48, 0.52], "z_max": 3.0,
    },
    "bias": {
        "n_plus": 64, "n_minus": 0, "m": 40, "label_spec": "unit", "trials": 1000, "seed": 0,
        "min_frequency": 0.99, "widths": None,
    },
    "figures": {"only": None, "plane_seed": 7},
}

PRESETS: dict[str, dict] = {
    # two data, two neurons each active on one datum; jumps at t = 1 and 2
    "e2": {
        "dataset": {"n": 2, "labels": [1.0, 2.0]},
        "init": {"m": 2, "mask": [[1, 0], [0, 1]]},
    },
    # 64 orthonormal points, six neurons at scale e^-500, all output weights positive;
    # init seed 3 is the first one whose mask satisfies the activation assumptions
    "fig1": {
        "dataset": {"n": 64, "label_spec": "abs-gaussian", "seed": 0},
        "init": {"mode": "small", "m": 6, "alpha_log": -500.0, "signs": "positive", "seed": 3},
        "trainer": {"lr": 0.01, "max_epochs": 10_000_000, "loss_stop": 1e-20},
    },
    # width ceil(ln(10000 n)/ln(4/3)) over n, standard Gaussian labels
    "fig4": {"sweep_n": {"ns": [8, 16, 32, 64, 128, 256], "seeds": [0, 1, 2],
                         "label_spec": "gaussian"}},
    # small init of scale 1e-30/sqrt(m) on plain floats
    "fig5": {
        "dataset": {"n": 32, "label_spec": "gaussian"},
        "init": {"mode": "small-dense", "m": 32, "scale_rule": "width", "signs": "random"},
        "trainer": {"lr": 1.0, "max_epochs": 1_000_000, "loss_stop": 1e-10},
    },
    "he-uniform": {
        "dataset": {"n": 32, "label_spec": "gaussian"},
        "init": {"mode": "he-uniform", "m": 32},
        "trainer": {"lr": 0.001, "max_epochs": 1_000_000, "loss_stop": 1e-10},
    },
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config


def _merge(base: dict, upd: dict, path: str = "") -> dict:
    """Recursive merge that refuses keys absent from ``base``."""
    out = copy.deepcopy(base)
    for key, val in upd.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key.path=value")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown config key {path!r}")
        node = node[k]
    if keys[-1] not in node or isinstance(node[keys[-1]], dict):
        raise ConfigError(f"unknown config key {path!r}")
    node[keys[-1]] = _parse_value(raw)


def _set_seeds(cfg: dict, seed: int) -> None:
    for section in cfg.values():
        if isinstance(section, dict) and "seed" in section:
            section["seed"] = seed


def load_config(preset: str | None = None, path: str | None = None, overrides=(),
                seed: int | None = None, strict: bool | None = None, out: str | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = _merge(cfg, PRESETS[preset])
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        version = user.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        cfg = _merge(cfg, user)
    if seed is not None:
        _set_seeds(cfg, seed)
    for assignment in overrides:
        _set_dotted(cfg, assignment)
    if strict is not None:
        cfg["strict"] = strict
    if out is not None:
        cfg["out"] = out
    return cfg


def output_dir(cfg: dict) -> Path:
    out = Path(cfg["out"] or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, obj) -> None:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------- builders


def make_dataset(cfg: dict) -> OrthonormalDataset:
    ds = cfg["dataset"]
    labels = ds["labels"]
    n = len(labels) if labels is not None else int(ds["n"])
    spec = labels if labels is not None else ds["label_spec"]
    return generate_dataset(n, ds["d"], spec, basis=ds["basis"], seed=ds["seed"],
                            constant=ds["constant"])


def init_alpha_log(cfg: dict) -> float:
    ini = cfg["init"]
    if ini["scale_rule"] is None:
        return float(ini["alpha_log"])
    if ini["scale_rule"] == "width":
        return math.log(1e-30 / math.sqrt(ini["m"]))
    raise ConfigError(f"unknown init.scale_rule {ini['scale_rule']!r}")


def make_init(cfg: dict, data: OrthonormalDataset):
    ini = cfg["init"]
    if ini["mask"] is not None:
        raise ConfigError("an explicit init.mask has no weights to train")
    return sample_init(int(ini["m"]), data.d, init_alpha_log(cfg), seed=ini["seed"],
                       signs=ini["signs"])


def make_limit(cfg: dict, data: OrthonormalDataset) -> LimitProcess:
    ini = cfg["init"]
    if ini["mask"] is not None:
        A = np.asarray(ini["mask"], dtype=bool)
        return build(A, data.labels, strict=cfg["strict"], rows=data.rows)
    init = sample_init(int(ini["m"]), data.d, -1.0, seed=ini["seed"], signs=ini["signs"])
    return build(mask_matrix(data, init), data.labels, strict=cfg["strict"], rows=data.rows)


def trainer_config(cfg: dict, **extra) -> TrainerConfig:
    tr = cfg["trainer"]
    return TrainerConfig(lr=tr["lr"], max_epochs=int(tr["max_epochs"]), loss_stop=tr["loss_stop"],
                         record_every=int(tr["record_every"]), fit_threshold=tr["fit_threshold"],
                         engine=tr["engine"], record_residuals=tr["record_residuals"], **extra)


def limit_summary(lp: LimitProcess) -> dict:
    times = lp.jump_times[1:lp.p + 1]
    covered = lp.n - len(lp.terminal.S_U)
    return {
        "jump_times": [float(t) for t in times],
        "j_stars": lp.j_stars,
        "p": lp.p,
        "covered": covered,
        "interpolating": lp.interpolating,
        "pred_sq_norm": pred_sq_norm(lp),
        "opt_sq_norm": opt_sq_norm(lp.labels),
        "bias_bound": bias_bound(lp.labels),
        "assumptions": lp.assumption_report.to_dict(),
    }


# ---------------------------------------------------------------- commands


def cmd_limit(cfg: dict, out: Path) -> int:
    data = make_dataset(cfg)
    lp = make_limit(cfg, data)
    summary = limit_summary(lp)
    write_json(out / "limit.json", {"schema_version": SCHEMA_VERSION, **summary,
                                    "limit_process": lp.to_dict()})
    print(f"jumps: {lp.p}  covered: {summary['covered']}/{lp.n}  "
          f"interpolating: {lp.interpolating}")
    for k, (t, j) in enumerate(zip(summary["jump_times"], lp.j_stars), 1):
        print(f"  t_{k} = {t:.6g}  neuron {j}  fits {len(lp.fitted_sets[k - 1])} data")
    print(f"pred |theta|^2/2 = {summary['pred_sq_norm']:.6g}  opt = {summary['opt_sq_norm']:.6g}  "
          f"bias bound = {summary['bias_bound']:.6g}")
    fails = lp.assumption_report.failures()
    if fails:
        print("assumption failures: " + ", ".join(fails))
    return EXIT_OK


def _final_json(traj: Trajectory) -> dict:
    st = traj.final_state
    return {
        "schema_version": SCHEMA_VERSION,
        "mode": "small",
        "outcome": traj.outcome,
        "epochs": traj.final_epoch,
        "loss": traj.final_loss,
        "sq_norm": traj.final_sq_norm(),
        "lr": traj.lr,
        "alpha_log": traj.alpha_log,
        "fit_threshold": traj.fit_threshold,
        "fit_epochs": traj.fit_epochs,
        "log_norms": st.log_norms(),
        "max_loss_increase": traj.max_loss_increase,
        "renormalizations": traj.renormalizations,
        "max_balance_defect": float(np.max(traj.balance)),
        "state": {"V": st.V, "b": st.b, "c": st.c, "s": st.s},
    }


def run_training(cfg: dict, data: OrthonormalDataset, **extra):
    """Train per ``cfg`` and return ``(trajectory or None, final dict, csv header, csv rows)``."""
    mode = cfg["init"]["mode"]
    tr = cfg["trainer"]
    if mode == "small":
        traj = train(data, make_init(cfg, data), trainer_config(cfg, **extra))
        return traj, _final_json(traj), traj.csv_header(), list(traj.csv_rows())
    if mode == "small-dense":
        net = DenseNetwork.from_init(make_init(cfg, data))
    elif mode == "he-uniform":
        net = he_uniform_init(int(cfg["init"]["m"]), data.d, seed=cfg["init"]["seed"])
    else:
        raise ConfigError(f"unknown init.mode {mode!r}")
    res = train_dense(data, net, tr["lr"], int(tr["max_epochs"]), loss_stop=tr["loss_stop"],
                      record_every=int(tr["record_every"]), engine=tr["engine"])
    final = {
        "schema_version": SCHEMA_VERSION, "mode": mode, "outcome": res.outcome,
        "epochs": res.epochs, "loss": res.loss, "sq_norm": res.net.sq_norm(), "lr": tr["lr"],
        "max_loss_increase": res.max_loss_increase, "network": {"a": res.net.a, "W": res.net.W},
    }
    rows = [[int(e), float(v)] for e, v in zip(res.history_epochs, res.loss_history)]
    return None, final, ["epoch", "loss"], rows


def cmd_train(cfg: dict, out: Path) -> int:
    data = make_dataset(cfg)
    _, final, header, rows = run_training(cfg, data)
    write_csv(out / "trajectory.csv", header, rows)
    write_json(out / "final.json", final)
    print(f"{final['outcome']} after {final['epochs']} epochs, loss {final['loss']:.3e}, "
          f"|theta|^2/2 = {final['sq_norm']:.6g}")
    return EXIT_OK


def load_run(out: Path) -> tuple[LimitProcess, Trajectory]:
    """Rebuild the limit process and a trajectory from files written by ``limit`` and ``train``."""
    with open(out / "limit.json", encoding="utf-8") as fh:
        lp = LimitProcess.from_dict(json.load(fh)["limit_process"])
    with open(out / "final.json", encoding="utf-8") as fh:
        final = json.load(fh)
    if final.get("mode") != "small":
        raise ConfigError("comparison needs a log-domain (init.mode = small) training run")
    with open(out / "trajectory.csv", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        table = np.array([[float(v) for v in row] for row in reader])
    cols = [i for i, h in enumerate(header) if h.startswith("log_norm_")]
    st = final["state"]
    state = ScaledState(np.asarray(st["V"], float), np.asarray(st["b"], float),
                        np.asarray(st["c"], float), np.asarray(st["s"], float))
    nan = np.full(table.shape[0], np.nan)
    traj = Trajectory(
        epoch=table[:, 0].astype(np.int64), accelerated_time=table[:, 1], loss=table[:, 2],
        log_norms=table[:, cols], log_output_weights=table[:, cols], balance=np.zeros((table.shape[0], len(cols))),
        fD_norm=np.zeros((table.shape[0], len(cols))), fD_bound=nan, residuals=None, directions=None,
        fit_epochs=np.asarray(final["fit_epochs"], dtype=np.int64), labels=np.array(lp.labels),
        final_state=state, outcome=final["outcome"], lr=final["lr"], alpha_log=final["alpha_log"],
        fit_threshold=final["fit_threshold"], max_loss_increase=final["max_loss_increase"],
        renormalizations=final["renormalizations"],
    )
    return lp, traj


def compare_run(cfg: dict, lp: LimitProcess, traj: Trajectory) -> dict:
    an = cfg["analysis"]
    jumps = analysis.compare_jumps(traj, lp)
    try:
        slopes = analysis.segment_slopes(traj, lp)
        slope_dict = {**slopes.to_dict(), "nonincreasing": slopes.slopes_nonincreasing()}
        slope_ok = slopes.max_rel_error < an["slope_tol"] and slopes.slopes_nonincreasing()
    except TooFewSamples as exc:
        slope_dict, slope_ok = {"error": str(exc)}, False
    trained = traj.final_sq_norm()
    pred = pred_sq_norm(lp)
    norm_err = abs(trained - pred) / pred if pred else abs(trained)
    checks = {
        "jumps": jumps.max_rel_error < an["jump_tol"] and all(jumps.sets_match),
        "slopes": bool(slope_ok),
        "norm": norm_err < an["norm_tol"],
    }
    if traj.outcome != "synthetic":
        checks["loss"] = traj.final_loss < cfg["trainer"]["loss_stop"]
    return {
        "schema_version": SCHEMA_VERSION,
        "jumps": jumps.to_dict(),
        "slopes": slope_dict,
        "norm": {"trained": trained, "predicted": pred, "rel_error": norm_err},
        "final_loss": None if traj.outcome == "synthetic" else traj.final_loss,
        "checks": checks,
    }


def _check_status(cfg: dict, checks: dict) -> int:
    failed = [k for k, ok in checks.items() if not ok]
    for k in failed:
        print(f"check failed: {k}")
    return EXIT_CHECK_FAILED if failed and cfg["analysis"]["assert"] else EXIT_OK


def cmd_compare(cfg: dict, out: Path) -> int:
    an = cfg["analysis"]
    if an["reuse"]:
        lp, traj = load_run(out)
    else:
        data = make_dataset(cfg)
        lp = make_limit(cfg, data)
        if an["synthetic"]:
            horizon = lp.jump_times[lp.p] * 1.25 if lp.p else 1.0
            traj = analysis.synthesize_trajectory(lp, cfg["trainer"]["lr"], init_alpha_log(cfg),
                                                  cfg["trainer"]["record_every"], horizon)
        else:
            if cfg["init"]["mode"] != "small":
                raise ConfigError("compare needs init.mode = small")
            traj, final, header, rows = run_training(cfg, data)
            write_json(out / "limit.json", {"schema_version": SCHEMA_VERSION, **limit_summary(lp),
                                            "limit_process": lp.to_dict()})
            write_csv(out / "trajectory.csv", header, rows)
            write_json(out / "final.json", final)
    report = compare_run(cfg, lp, traj)
    write_json(out / "comparison.json", report)
    print(f"jump error {report['jumps']['max_rel_error']:.3%}  "
          f"slope error {report['slopes'].get('max_rel_error', float('nan')):.3%}  "
          f"norm error {report['norm']['rel_error']:.3%}")
    return _check_status(cfg, report["checks"])


def _pmap(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))  # results come back in input order


def sweep_n(cfg: dict) -> tuple[list, dict]:
    sw = cfg["sweep_n"]
    pts = analysis.norm_sweep(sw["ns"], sw["seeds"], label_spec=sw["label_spec"], signs=sw["signs"])
    kept = [p for p in pts if p.interpolating]
    pred_slope = analysis.loglog_slope(analysis.mean_by(kept, value="pred"))
    opt_slope = analysis.loglog_slope(analysis.mean_by(kept, value="opt"))
    ratio_ok = all(p.pred / p.opt <= p.bound / p.opt for p in kept)
    lo, hi = sw["slope_range"]
    olo, ohi = sw["opt_slope_range"]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "points": len(pts), "non_interpolating": len(pts) - len(kept),
        "pred_slope": pred_slope[0], "pred_r2": pred_slope[2],
        "opt_slope": opt_slope[0], "opt_r2": opt_slope[2],
        "mean_pred": analysis.mean_by(kept, value="pred"),
        "mean_opt": analysis.mean_by(kept, value="opt"),
        "checks": {
            "pred_slope": lo <= pred_slope[0] <= hi,
            "opt_slope": olo <= opt_slope[0] <= ohi,
            "ratio_bounded": ratio_ok,
        },
    }
    return [p.as_row() for p in pts], summary


def cmd_sweep_n(cfg: dict, out: Path) -> int:
    rows, summary = sweep_n(cfg)
    write_csv(out / "sweep_n.csv", analysis.SWEEP_HEADER, rows)
    write_json(out / "sweep_n.json", summary)
    print(f"log-log slope: pred {summary['pred_slope']:.3f}  opt {summary['opt_slope']:.3f}")
    return _check_status(cfg, summary["checks"])


SWEEP_M_HEADER = ["m", "seed", "init", "sq_norm", "loss", "epochs", "outcome", "pred_sq_norm",
                  "opt_sq_norm"]


def sweep_m(cfg: dict) -> tuple[list, dict]:
    sw = cfg["sweep_m"]
    n = int(sw["n"])
    jobs = [(m, seed) for m in sw["ms"] for seed in sw["seeds"]]

    def one(job):
        m, seed = job
        data = generate_dataset(n, n, sw["label_spec"], seed=seed)
        init = sample_init(m, n, math.log(1e-30 / math.sqrt(m)), seed=10_000 + seed)
        lp = build(mask_matrix(data, init), data.labels, strict=False)
        small = train_dense(data, DenseNetwork.from_init(init), sw["lr_small"], int(sw["max_epochs"]),
                            loss_stop=sw["loss_stop"])
        he = train_dense(data, he_uniform_init(m, n, seed=20_000 + seed), sw["lr_he"],
                         int(sw["max_epochs"]), loss_stop=sw["loss_stop"])
        pred, opt = pred_sq_norm(lp), opt_sq_norm(data.labels)
        return [[m, seed, "small", small.net.sq_norm(), small.loss, small.epochs, small.outcome, pred, opt],
                [m, seed, "he-uniform", he.net.sq_norm(), he.loss, he.epochs, he.outcome, pred, opt]]

    rows = [r for pair in _pmap(one, jobs, int(cfg["workers"])) for r in pair]
    means = {}
    for kind in ("small", "he-uniform"):
        means[kind] = [float(np.mean([r[3] for r in rows if r[0] == m and r[2] == kind]))
                       for m in sw["ms"]]
    small, he = means["small"], means["he-uniform"]
    summary = {
        "schema_version": SCHEMA_VERSION, "ms": sw["ms"], "mean_small": small, "mean_he": he,
        "mean_opt": float(np.mean([r[8] for r in rows])),
        "he_increasing": all(b > a for a, b in zip(he, he[1:])),  # reported, not asserted
        "checks": {
            "small_nonincreasing": all(b <= a for a, b in zip(small, small[1:])),
            "he_above_small": all(h > s for h, s in zip(he, small)),
        },
    }
    return rows, summary


def cmd_sweep_m(cfg: dict, out: Path) -> int:
    rows, summary = sweep_m(cfg)
    write_csv(out / "sweep_m.csv", SWEEP_M_HEADER, rows)
    write_json(out / "sweep_m.json", summary)
    for m, s, h in zip(summary["ms"], summary["mean_small"], summary["mean_he"]):
        print(f"m={m:3d}  small {s:.4g}  he-uniform {h:.4g}")
    return _check_status(cfg, summary["checks"])


def cmd_verify_assumptions(cfg: dict, out: Path) -> int:
    va = cfg["assumptions"]
    workers = int(cfg["workers"])
    main = stochastic.mc_assumption(va["n_plus"], va["n_minus"], va["m"], va["trials"],
                                    seed=va["seed"], workers=workers)
    reports = [main]
    if va["grid"]:
        reports += stochastic.assumption_grid(va["grid_sizes"], va["grid_widths"], va["grid_trials"],
                                              seed=va["seed"] + 1, workers=workers)
    k = va["ci_multiple"]
    write_json(out / "mc_report.json", {"schema_version": SCHEMA_VERSION,
                                        "reports": [r.to_dict() for r in reports]})
    write_csv(out / "assumption_grid.csv", stochastic.MC_CSV_HEADER,
              [stochastic.report_row(r) for r in reports])
    for r in reports:
        p = r.params
        print(f"n+={p['n_plus']:3d} n-={p['n_minus']:3d} m={p['m']:3d}  p={r.empirical_p:.4f} "
              f"+-{r.ci95_halfwidth:.4f}  bound {r.theoretical_bound:.4f}  {r.status}")
    return _check_status(cfg, {f"row_{i}": r.within(k) for i, r in enumerate(reports)})


def cmd_verify_split(cfg: dict, out: Path) -> int:
    sp = cfg["split"]
    trace = stochastic.half_split_stats(sp["n"], sp["m"], sp["trials"], sp["delta"], sp["rho"],
                                        seed=sp["seed"], ordering=sp["ordering"], steps=sp["steps"],
                                        workers=int(cfg["workers"]))
    rep = trace.to_dict()
    checks = {}
    if sp["ordering"] == "fixed":
        lo, hi = sp["ratio_range"]
        ratios = trace.mean_ratio
        z_mean, z_var = trace.binomial_z()
        checks["mean_ratio"] = bool(np.all((ratios >= lo) & (ratios <= hi)))
        checks["binomial_mean"] = bool(np.all(np.abs(z_mean[np.isfinite(z_mean)]) <= sp["z_max"]))
        checks["binomial_var"] = bool(np.all(np.abs(z_var[np.isfinite(z_var)]) <= sp["z_max"]))
    checks["halving_bound"] = trace.passed
    rep["checks"] = checks
    write_json(out / "mc_report.json", {"schema_version": SCHEMA_VERSION, "reports": [rep]})
    print(f"k* = {trace.k_star:.3f}, {trace.steps} steps; mean ratios "
          + " ".join(f"{v:.4f}" for v in trace.mean_ratio))
    print(f"all-G frequency {trace.all_G_frequency:.4f}  bound {trace.theoretical_bound:.4g} "
          f"({rep['status']})")
    return _check_status(cfg, checks)


def cmd_verify_bias(cfg: dict, out: Path) -> int:
    bb = cfg["bias"]
    widths = bb["widths"] or [bb["m"]]
    reports = [stochastic.mc_bias_bound(bb["n_plus"], bb["n_minus"], m, bb["label_spec"],
                                        bb["trials"], seed=bb["seed"], workers=int(cfg["workers"]))
               for m in widths]
    freqs = [r.empirical_p for r in reports]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "reports": [r.to_dict() for r in reports],
        # an observation only; no monotonicity in the width is claimed
        "frequency_nondecreasing_in_m": all(b >= a for a, b in zip(freqs, freqs[1:])),
    }
    write_json(out / "mc_report.json", summary)
    write_csv(out / "bias_bound.csv", stochastic.MC_CSV_HEADER, [stochastic.report_row(r) for r in reports])
    for r in reports:
        print(f"m={r.params['m']:3d}  frequency {r.empirical_p:.4f} over {r.trials} trials "
              f"({r.excluded} not interpolating)")
    main = reports[widths.index(bb["m"])] if bb["m"] in widths else reports[-1]
    return _check_status(cfg, {"frequency": main.empirical_p >= bb["min_frequency"]})


FIGURES = ("fig1", "fig2", "fig3", "fig4", "fig5")


def _polar_rows(cfg: dict, lp: LimitProcess, traj: Trajectory) -> list:
    """Neuron log-norms and directions projected on a random plane at six moments around the first jump."""
    lr, al = traj.lr, traj.alpha_log
    e1 = float(epoch_of(lp.jump_times[1], lr, al))
    e2 = float(epoch_of(lp.jump_times[2], lr, al)) if lp.p >= 2 else 2 * e1
    step = cfg["trainer"]["record_every"]
    targets = [("start", step), ("half_t1", e1 / 2), ("before_t1", e1 - step),
               ("after_t1", e1 + step), ("after_t1_later", e1 + 3 * step), ("mid_t1_t2", (e1 + e2) / 2)]
    rng = np.random.default_rng(cfg["figures"]["plane_seed"])
    plane, _ = np.linalg.qr(rng.standard_normal((lp.n, 2)))
    rows = []
    for name, e in targets:
        k = int(np.argmin(np.abs(traj.epoch - e)))
        t = float(traj.accelerated_time[k])
        st = lp.stages[lp.stage_index(t)]
        for j in range(lp.m):
            d = traj.directions[k, j]
            px, py = d @ plane
            ref = lp.s[j] * st.D[j]
            nr = np.linalg.norm(ref)
            qx, qy = (ref / nr) @ plane if nr > 0 else (0.0, 0.0)
            rows.append([name, int(traj.epoch[k]), t, j, float(traj.log_norms[k, j]),
                         float(px), float(py), float(qx), float(qy)])
    return rows


def cmd_figures(cfg: dict, out: Path) -> int:
    only = cfg["figures"]["only"] or list(FIGURES)
    unknown = set(only) - set(FIGURES)
    if unknown:
        raise ConfigError(f"unknown figures {sorted(unknown)}; choose from {list(FIGURES)}")
    checks = {}
    if {"fig1", "fig2", "fig3"} & set(only):
        fcfg = _merge(cfg, PRESETS["fig1"])
        data = make_dataset(fcfg)
        lp = make_limit(fcfg, data)
        traj = train(data, make_init(fcfg, data), trainer_config(fcfg, record_directions="fig3" in only))
        if "fig1" in only:
            fitted = np.array([(traj.fit_epochs >= 0) & (traj.fit_epochs <= e) for e in traj.epoch])
            header = ["epoch", "t", "loss", "fitted_fraction"] + [f"norm_{j}" for j in range(lp.m)]
            rows = [[int(e), float(t), float(v), float(f.mean())] + [math.exp(x) for x in ln]
                    for e, t, v, f, ln in zip(traj.epoch, traj.accelerated_time, traj.loss, fitted,
                                              traj.log_norms)]
            write_csv(out / "fig1_trajectory.csv", header, rows)
            jrows = [[k + 1, float(lp.jump_times[k + 1]),
                      float(epoch_of(lp.jump_times[k + 1], traj.lr, traj.alpha_log)),
                      lp.j_stars[k], len(lp.fitted_sets[k])] for k in range(lp.p)]
            write_csv(out / "fig1_jumps.csv", ["k", "t_k", "epoch_k", "j_star", "fitted"], jrows)
        report = compare_run(fcfg, lp, traj)
        write_json(out / "fig1_comparison.json", report)
        checks.update({f"fig1_{k}": v for k, v in report["checks"].items()})
        if "fig2" in only:
            header = ["epoch", "t"] + [f"log_norm_{j}" for j in range(lp.m)]
            write_csv(out / "fig2_log_norms.csv", header,
                      [[int(e), float(t)] + [float(x) for x in ln]
                       for e, t, ln in zip(traj.epoch, traj.accelerated_time, traj.log_norms)])
            entries = report["slopes"].get("entries", [])
            write_csv(out / "fig2_slopes.csv", ["neuron", "stage", "samples", "fitted", "predicted", "rel_error"],
                      [[e["neuron"], e["stage"], e["samples"], e["fitted"], e["predicted"], e["rel_error"]]
                       for e in entries])
        if "fig3" in only:
            write_csv(out / "fig3_polar.csv",
                      ["moment", "epoch", "t", "neuron", "log_norm", "x", "y", "pred_x", "pred_y"],
                      _polar_rows(fcfg, lp, traj))
    if "fig4" in only:
        rows, summary = sweep_n(cfg)
        write_csv(out / "fig4_sweep.csv", analysis.SWEEP_HEADER, rows)
        write_json(out / "fig4_summary.json", summary)
        checks.update({f"fig4_{k}": v for k, v in summary["checks"].items()})
    if "fig5" in only:
        rows, summary = sweep_m(cfg)
        write_csv(out / "fig5_sweep.csv", SWEEP_M_HEADER, rows)
        write_json(out / "fig5_summary.json", summary)
        checks.update({f"fig5_{k}": v for k, v in summary["checks"].items()})
    print("wrote " + ", ".join(only) + f" to {out}")
    return _check_status(cfg, checks)


COMMANDS = {
    "limit": (cmd_limit, "build the limit process and write limit.json"),
    "train": (cmd_train, "train a network and write trajectory.csv and final.json"),
    "compare": (cmd_compare, "compare a training run with the limit process (comparison.json)"),
    "sweep-n": (cmd_sweep_n, "final norm of the limit process across dataset sizes"),
    "sweep-m": (cmd_sweep_m, "final trained norm across widths, small vs He init"),
    "verify-assumptions": (cmd_verify_assumptions, "Monte-Carlo frequency of a well-formed mask"),
    "verify-split": (cmd_verify_split, "Monte-Carlo halving of the unfitted set"),
    "verify-bias": (cmd_verify_bias, "Monte-Carlo frequency of the norm bound"),
    "figures": (cmd_figures, "write the CSVs behind figures 1 to 5"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saddle2saddle", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", choices=sorted(PRESETS), help="named starting config")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        p.add_argument("--seed", type=int, help="set every seed in the config")
        p.add_argument("--strict", action=argparse.BooleanOptionalAction, default=None,
                       help="raise on zero labels and tied activations")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key by dotted path, e.g. trainer.lr=0.02")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.preset, args.config, args.overrides, args.seed, args.strict, args.out)
        out = output_dir(cfg)
        write_json(out / "config.json", cfg)
        fn = COMMANDS[args.command][0]
        return fn(cfg, out)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ZeroLabel as exc:
        print(f"error: zero label: {exc}", file=sys.stderr)
        return EXIT_ZERO_LABEL
    except AmbiguousArgmax as exc:
        print(f"error: ambiguous activation order: {exc}", file=sys.stderr)
        return EXIT_AMBIGUOUS
    except (NonFinite, CollapsedNeuron) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ClusterMismatch, TooFewSamples) as exc:
        print(f"error: analysis: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except BadDelta as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_DELTA
    except (Saddle2SaddleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
