"""Command-line front end.

Every subcommand reads a YAML experiment config (a file path or the name of a
bundled config), applies ``--set section.key=value`` overrides, validates the
result against the schema below and writes CSV files into ``--out-dir``.

Exit status is 2 for configuration problems and 1 for computation errors.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import combiner
from . import crb_design as cd
from . import false_detect as fd
from . import performance as pf
from . import scf_design as sd
from . import simulate as sim
from .manifold import ArrayGeometry, AzimuthGrid

log = logging.getLogger("compressive_doa")

SCHEMA_VERSION = 1
EXPERIMENTS = ("design-scf", "design-crb", "eval", "pd-sweep", "ccdf", "rmse",
               "sparse-compare", "adaptive", "snr-ratio")

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "experiment": None,
    "seed": 0,
    "geometry": {"kind": "uca", "n_elements": 9, "radius": 0.65, "positions": None},
    "noise": {"sigma1_sq": 1.0, "sigma2_sq": 0.0},
    "design": {
        "M": 5, "L": None, "eta": 1.0,
        "target": "full_array",
        "reference_radius": 0.65,
        "grid_size": 360,
        "n_starts": 10,
        "epsilon0": 0.05,
        "rho_th_db": 0.0,
        "theta0_grid_size": 90,
        "angular_range": [0.0, 6.283185307179586],
        "crb_starts": 2,
        "quadrature_order": 64,
        "maxiter": 60,
        "elastic_weight": 1.0,
        "init": None,
        "extra_sources": [],
        "matrix": "opt_crb",
        "name": "design",
    },
    "scenario": {
        "snr_db": [0.0],
        "trials": 10000,
        "theta0_count": 90,
        "separation": None,
        "ratio_db": -6.0,
        "mainlobe": pf.NULL_TO_NULL,
        "quadrature_order": 256,
    },
    "curves": {
        "designs": ["uca9", "uca5", "opt_scf", "opt_crb", "random_mean"],
        "uca5_radius": 0.378,
        "random_kernels": 20,
    },
    "ccdf": {"n_realizations": 1000, "metrics": ["crb", "mean_sidelobe"],
             "references": ["opt_scf", "opt_crb"], "snr_db": 0.0, "theta0_count": 90},
    "sparse": {"radius_bound": 0.65, "n_starts": 8, "objective_weight": 0.5,
               "crb_match_tol": 0.05, "theta0_count": 36, "maxiter": 3000,
               "refine_maxiter": 300},
    "adaptive": {"steps": 20, "rescan_period": 5, "start_doa": 1.0, "rate": 0.0087266,
                 "halfwidth": 0.3, "snapshots": 10, "snr_db": 10.0, "n_starts": 2},
    "snr_ratio": {"N": 9, "M": 5, "eta": 1.0, "beta_db": [-40, -20, -10, 0, 10, 20, 40]},
}


class ConfigError(Exception):
    """Invalid or unreadable experiment configuration."""


# -- config handling -----------------------------------------------------------

def bundled_configs() -> list:
    root = resources.files("compressive_doa") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def _read_config(ref: str) -> dict:
    path = Path(ref)
    try:
        if path.exists():
            text = path.read_text()
        else:
            res = resources.files("compressive_doa") / "configs" / f"{ref}.yaml"
            if not res.is_file():
                raise ConfigError(f"config {ref!r} is neither a file nor a bundled config "
                                  f"({', '.join(bundled_configs())})")
            text = res.read_text()
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {ref}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {ref}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return data


def _merge(base: dict, upd: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        if k not in base:
            raise ConfigError(f"unknown key {where + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where + k!r} must be a mapping")
            out[k] = _merge(base[k], v, where + k + ".")
        else:
            out[k] = v
    return out


def _override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"bad value in --set {item!r}: {exc}") from exc
    parts = key.strip().split(".")
    node, ref = cfg, DEFAULTS
    for p in parts[:-1]:
        if p not in ref or not isinstance(ref[p], dict):
            raise ConfigError(f"unknown key {key!r}")
        node, ref = node[p], ref[p]
    if parts[-1] not in ref or isinstance(ref[parts[-1]], dict):
        raise ConfigError(f"unknown key {key!r}")
    node[parts[-1]] = value


def load_config(ref, overrides=(), experiment=None, seed=None) -> dict:
    """Merge a config over the defaults, apply overrides and validate."""
    cfg = _merge(DEFAULTS, _read_config(ref) if ref else {})
    for item in overrides:
        _override(cfg, item)
    if seed is not None:
        cfg["seed"] = seed
    if experiment is not None:
        if cfg["experiment"] not in (None, experiment):
            raise ConfigError(f"config is for {cfg['experiment']!r}, not {experiment!r}")
        cfg["experiment"] = experiment
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg['schema_version']!r}")
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    try:
        geometry(cfg)
        noise(cfg)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"geometry/noise: {exc}") from exc
    d, s = cfg["design"], cfg["scenario"]
    checks = [
        (isinstance(d["M"], int) and 1 <= d["M"] <= geometry(cfg).n_elements,
         "design.M must be an integer in [1, N]"),
        (d["L"] is None or (isinstance(d["L"], int) and 1 <= d["L"] <= d["M"]),
         "design.L must be an integer in [1, M]"),
        (_num(d["eta"]) and 0 < d["eta"] <= 1, "design.eta must lie in (0, 1]"),
        (_num(d["epsilon0"]) and 0 < d["epsilon0"] < 1, "design.epsilon0 must lie in (0, 1)"),
        (_num(d["rho_th_db"]), "design.rho_th_db must be a number"),
        (d["target"] in SCF_TARGETS, f"design.target must be one of {', '.join(SCF_TARGETS)}"),
        (isinstance(d["n_starts"], int) and d["n_starts"] >= 1, "design.n_starts must be >= 1"),
        (isinstance(d["crb_starts"], int) and d["crb_starts"] >= 0,
         "design.crb_starts must be >= 0"),
        (isinstance(d["grid_size"], int) and d["grid_size"] >= 8, "design.grid_size must be >= 8"),
        (_nums(d["angular_range"], 2), "design.angular_range must be [start, stop]"),
        (isinstance(s["snr_db"], list) and _nums(s["snr_db"]), "scenario.snr_db must be a list"),
        (isinstance(s["trials"], int) and s["trials"] >= 100, "scenario.trials must be >= 100"),
        (s["mainlobe"] in (pf.NULL_TO_NULL, pf.THREE_DB), "scenario.mainlobe is invalid"),
        (isinstance(cfg["ccdf"]["n_realizations"], int) and cfg["ccdf"]["n_realizations"] >= 1,
         "ccdf.n_realizations must be >= 1"),
        (set(cfg["ccdf"]["metrics"]) <= {sim.CRB, sim.MEAN_SIDELOBE}, "ccdf.metrics is invalid"),
        (isinstance(cfg["adaptive"]["steps"], int) and cfg["adaptive"]["steps"] >= 1,
         "adaptive.steps must be >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    for e in d["extra_sources"]:
        if not _nums(e, 2):
            raise ConfigError("design.extra_sources entries must be [offset, ratio_db]")
    for name in cfg["curves"]["designs"] if cfg["experiment"] == "pd-sweep" else ():
        if name not in BUILTIN_CURVES and name not in bundled_designs():
            raise ConfigError(f"curves.designs: {name!r} is neither one of "
                              f"{sorted(BUILTIN_CURVES)} nor a bundled design")


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def _nums(v, n=None) -> bool:
    return isinstance(v, (list, tuple)) and (n is None or len(v) == n) and all(map(_num, v))


def geometry(cfg) -> ArrayGeometry:
    g = cfg["geometry"]
    if g["kind"] == "uca":
        return ArrayGeometry.uca(int(g["n_elements"]), float(g["radius"]))
    if g["kind"] == "arbitrary":
        return ArrayGeometry.from_positions(g["positions"])
    raise ValueError(f"unknown geometry kind {g['kind']!r}")


def noise(cfg) -> pf.NoiseModel:
    n = cfg["noise"]
    return pf.NoiseModel(float(n["sigma1_sq"]), float(n["sigma2_sq"]))


# -- output --------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path: Path, header, rows) -> None:
    """Atomically write a CSV file (temp file in the same directory, then rename)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    write_text(path, buf.getvalue())


def write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd_, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd_, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_design(path: Path, result: sd.DesignResult, cfg: dict) -> None:
    write_text(path, combiner.dumps(result.matrix))
    meta = {"experiment": cfg["experiment"], "seed": cfg["seed"],
            "geometry": cfg["geometry"], "noise": cfg["noise"], **result.metadata()}
    write_text(Path(str(path) + ".json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")


# -- designs -------------------------------------------------------------------

BUILTIN_CURVES = ("uca9", "uca5", "random_mean")
#: ``full_array``: correlation of the uncompressed array; ``reference_uca``:
#: correlation of an M-element UCA of radius ``design.reference_radius``;
#: ``ideal``: a scaled identity (no correlation between distinct grid angles).
SCF_TARGETS = ("full_array", "reference_uca", "ideal")


def bundled_designs() -> list:
    root = resources.files("compressive_doa") / "data"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".txt"))


def bundled_design(name: str) -> combiner.CombiningMatrix:
    res = resources.files("compressive_doa") / "data" / f"{name}.txt"
    return combiner.loads(res.read_text())


def resolve_matrix(ref) -> combiner.CombiningMatrix:
    """A matrix file path, or the name of a bundled design."""
    p = Path(str(ref))
    try:
        if p.exists():
            return combiner.load(p)
        return bundled_design(str(ref))
    except (OSError, FileNotFoundError) as exc:
        raise ConfigError(f"cannot load combining matrix {ref!r}: {exc}") from exc


def scf_target(cfg) -> sd.DesignTarget:
    d = cfg["design"]
    geom = geometry(cfg)
    grid = AzimuthGrid.uniform(d["grid_size"])
    gain = d["eta"] ** 2 * geom.n_elements
    if d["target"] == "full_array":
        T = sd.reference_target(geom, grid, gain)
    elif d["target"] == "reference_uca":
        T = sd.reference_target(ArrayGeometry.uca(d["M"], d["reference_radius"]), grid, gain)
    else:
        T = sd.ideal_target(grid, gain)
    return sd.DesignTarget(grid, T)


def crb_spec(cfg, init=None) -> cd.CrbDesignSpec:
    d = cfg["design"]
    extra = tuple((float(o), 10 ** (float(r) / 20)) for o, r in d["extra_sources"])
    return cd.CrbDesignSpec(
        geometry(cfg), d["M"], d["L"], d["eta"], 10 ** (d["rho_th_db"] / 10), d["epsilon0"],
        tuple(d["angular_range"]), d["theta0_grid_size"], d["crb_starts"], cfg["seed"], init,
        noise(cfg), quadrature_order=d["quadrature_order"], extra_sources=extra,
        maxiter=d["maxiter"], elastic_weight=d["elastic_weight"])


# -- experiments ---------------------------------------------------------------

def run_design_scf(cfg, out: Path, threads: int) -> str:
    d = cfg["design"]
    res = sd.optimize_scf(geometry(cfg), scf_target(cfg), d["M"], d["L"], d["eta"],
                          d["n_starts"], cfg["seed"], n_jobs=threads)
    write_design(out / f"{d['name']}.txt", res, cfg)
    ev = cd.evaluate_design(res.matrix, crb_spec(cfg), G=256)
    _write_eval(out / f"{d['name']}_eval.csv", ev)
    return (f"design-scf: cost {res.cost:.6g}, worst CRB {ev.worst_case_crb:.4g}, "
            f"worst Pd {ev.worst_case_pd:.4g}")


def run_design_crb(cfg, out: Path, threads: int) -> str:
    d = cfg["design"]
    init = resolve_matrix(d["init"]) if d["init"] else None
    spec = crb_spec(cfg, init)
    if spec.n_starts == 0 and init is None:
        raise ConfigError("design.crb_starts = 0 needs design.init")
    res = cd.optimize_crb(spec, n_jobs=threads)
    write_design(out / f"{d['name']}.txt", res, cfg)
    ev = cd.evaluate_design(res.matrix, spec)
    _write_eval(out / f"{d['name']}_eval.csv", ev)
    flag = "" if res.feasible else " (INFEASIBLE: best elastic compromise)"
    return (f"design-crb: worst CRB {ev.worst_case_crb:.4g}, worst Pd {ev.worst_case_pd:.4g}"
            f"{flag}")


def _write_eval(path, ev):
    write_csv(path, ["theta0", "crb", "pd"], ev.table())


def run_eval(cfg, out: Path, threads: int) -> str:
    mat = resolve_matrix(cfg["design"]["matrix"])
    spec = crb_spec(cfg)
    geom = geometry(cfg)
    if mat.N != geom.n_elements:
        raise ConfigError("matrix does not match the geometry")
    ev = cd.evaluate_design(mat, spec)
    _write_eval(out / "eval.csv", ev)
    prof = pf.correlation_profile(mat, geom, float(spec.thetas0[0]))
    write_csv(out / "profile.csv", ["theta", "b"], zip(prof.grid, prof.values))
    sl = pf.mean_sidelobe_level(mat, geom, spec.thetas0)
    return (f"eval: worst CRB {ev.worst_case_crb:.4g}, worst Pd {ev.worst_case_pd:.4g}, "
            f"mean sidelobe {sl:.4g}")


def curve_designs(cfg):
    """Named (matrix, geometry) pairs for the Pd curves."""
    geom = geometry(cfg)
    out = {}
    for name in cfg["curves"]["designs"]:
        if name == "uca9":
            out[name] = [(np.eye(geom.n_elements), geom)]
        elif name == "uca5":
            M = cfg["design"]["M"]
            out[name] = [(np.eye(M), ArrayGeometry.uca(M, cfg["curves"]["uca5_radius"]))]
        elif name == "random_mean":
            ks = combiner.random_kernels(cfg["design"]["M"], geom.n_elements,
                                         cfg["curves"]["random_kernels"], cfg["seed"] + 1,
                                         cfg["design"]["eta"])
            out[name] = [(k.weights, geom) for k in ks]
        else:
            out[name] = [(resolve_matrix(name).weights, geom)]
    return out


def run_pd_sweep(cfg, out: Path, threads: int) -> str:
    s = cfg["scenario"]
    nz = noise(cfg)
    thetas0 = pf.default_theta0_grid(s["theta0_count"])
    extra = ()
    if s["separation"] is not None:
        extra = ((float(s["separation"]), 10 ** (s["ratio_db"] / 20)),)
    rows = []
    seeds = np.random.SeedSequence(cfg["seed"]).spawn(len(s["snr_db"]))
    for name, members in curve_designs(cfg).items():
        for snr_db, ss in zip(s["snr_db"], seeds):
            snr = 10 ** (snr_db / 10)
            pa, pe, var = [], [], []
            per = max(100, s["trials"] // len(members))
            kids = ss.spawn(len(members)) if len(members) > 1 else [ss]
            for j, (W, g) in enumerate(members):
                p = fd.pd_curve(W, g, thetas0, snr, nz, G=s["quadrature_order"],
                                mainlobe_def=s["mainlobe"], extra_sources=extra)
                pa.append((p.mean(), p.max()))
                sc = _scenario(float(thetas0[0]), snr_db, nz, s)
                e, se = sim.empirical_pd(W, g, sc, per, s["mainlobe"],
                                         seed=kids[j],
                                         thetas0=thetas0, n_jobs=threads)
                pe.append(e)
                var.append(se ** 2)
            k = len(members)
            rows.append((name, float(snr_db), float(np.mean([a for a, _ in pa])),
                         float(np.mean(pe)), float(np.sqrt(np.sum(var)) / k),
                         float(np.mean([b for _, b in pa]))))
    write_csv(out / "pd_vs_snr.csv",
              ["design", "snr_db", "pd_analytic", "pd_empirical", "stderr", "pd_analytic_max"],
              rows)
    return f"pd-sweep: {len(rows)} rows for {', '.join(cfg['curves']['designs'])}"


def _scenario(theta0, snr_db, nz, s):
    if s["separation"] is None:
        return sim.Scenario.single(theta0, snr_db, nz)
    return sim.Scenario.two_sources(theta0, float(s["separation"]), s["ratio_db"], snr_db, nz)


def run_ccdf(cfg, out: Path, threads: int) -> str:
    c, d = cfg["ccdf"], cfg["design"]
    geom = geometry(cfg)
    refs = {r: resolve_matrix(r) for r in c["references"]}
    thetas0 = pf.default_theta0_grid(c["theta0_count"])
    extra = tuple((float(o), 10 ** (float(r) / 20)) for o, r in d["extra_sources"])
    msgs = []
    for k, metric in enumerate(c["metrics"]):
        tab = sim.ccdf_study(geom, d["M"], c["n_realizations"], metric, refs,
                             10 ** (c["snr_db"] / 10), cfg["seed"], thetas0, noise(cfg), extra,
                             d["eta"], n_jobs=threads)
        rows = [(float(v), float(p)) for v, p in zip(tab.values, tab.levels)]
        write_csv(out / f"ccdf_{metric}.csv", ["value", "ccdf"], rows)
        write_csv(out / f"ccdf_{metric}_refs.csv", ["reference", "value", "fraction_above"],
                  [(r, float(tab.references[r]), tab.fraction_above(r))
                   for r in sorted(tab.references)])
        msgs.append(", ".join(f"{r} beats {tab.fraction_above(r):.1%}" for r in sorted(refs)))
        msgs[-1] = f"{metric}: {msgs[-1]}"
    return "ccdf: " + "; ".join(msgs)


def run_rmse(cfg, out: Path, threads: int) -> str:
    mat = resolve_matrix(cfg["design"]["matrix"])
    s = cfg["scenario"]
    rows = sim.rmse_study(mat, geometry(cfg), s["snr_db"], s["trials"],
                          pf.default_theta0_grid(s["theta0_count"]), noise(cfg), cfg["seed"],
                          n_jobs=threads)
    write_csv(out / "rmse.csv", ["snr_db", "rmse", "sqrt_crb"],
              [(r.snr_db, r.rmse, r.sqrt_crb) for r in rows])
    last = rows[-1]
    return f"rmse: at {last.snr_db:g} dB rmse/sqrt(crb) = {last.rmse / last.sqrt_crb:.3f}"


def run_sparse_compare(cfg, out: Path, threads: int) -> str:
    """Sparse array and compressive design compared at matched CRB.

    The sparse array minimizes its sidelobes with the worst-case CRB of the
    given compressive design as an upper bound; the compressive design is then
    re-tuned for sidelobes under the sparse array's achieved CRB.
    """
    sp, d = cfg["sparse"], cfg["design"]
    geom = geometry(cfg)
    mat = resolve_matrix(d["matrix"])
    th = pf.default_theta0_grid(sp["theta0_count"])
    nz = noise(cfg)
    snr = 10 ** (d["rho_th_db"] / 10)
    crb_0 = pf.worst_case_crb(mat, geom, snr, th, nz)
    sl_0 = pf.mean_sidelobe_level(mat, geom, th)
    res = pf.design_sparse_array(d["M"], sp["radius_bound"], sp["objective_weight"],
                                 sp["n_starts"], cfg["seed"], snr, th, noise=nz,
                                 maxiter=sp["maxiter"], n_jobs=threads, crb_target=crb_0)
    matched = cd.optimize_sidelobes(geom, d["M"], res.worst_crb, init=mat, snr=snr, thetas0=th,
                                    noise=nz, efficiency=d["eta"], maxiter=sp["refine_maxiter"])
    crb_m, sl_m = matched.info["worst_case_crb"], matched.info["mean_sidelobe"]
    rows = [("compressive_input", crb_0, sl_0), ("sparse", res.worst_crb, res.mean_sidelobe),
            ("compressive_matched", crb_m, sl_m)]
    write_csv(out / "sparse_compare.csv", ["design", "worst_crb", "mean_sidelobe"], rows)
    write_csv(out / "sparse_positions.csv", ["x", "y"], res.geometry.positions.tolist())
    write_text(out / "compressive_matched.txt", combiner.dumps(matched.matrix))
    t0 = float(th[0])
    pc = pf.correlation_profile(matched.matrix, geom, t0)
    ps = pf.correlation_profile(np.eye(d["M"]), res.geometry, t0)
    write_csv(out / "sparse_profiles.csv", ["theta", "b_compressive", "b_sparse"],
              zip(pc.grid, pc.values, ps.values))
    ok = crb_m <= (1 + sp["crb_match_tol"]) * res.worst_crb and sl_m < res.mean_sidelobe
    return (f"sparse-compare: sparse CRB {res.worst_crb:.4g} / SL {res.mean_sidelobe:.3f}, "
            f"compressive CRB {crb_m:.4g} / SL {sl_m:.3f} "
            f"({'compressive lower' if ok else 'no dominance'})")


def run_adaptive(cfg, out: Path, threads: int) -> str:
    a = cfg["adaptive"]
    geom = geometry(cfg)
    init = resolve_matrix(cfg["design"]["matrix"])
    nz = noise(cfg)

    def scene(step):
        return sim.Scenario.single(a["start_doa"] + a["rate"] * (step - 1), a["snr_db"], nz,
                                   a["snapshots"])

    trace = sim.adaptive_loop(init, geom, scene, a["steps"], a["rescan_period"], 1, cfg["seed"],
                              a["halfwidth"], a["n_starts"])
    rows = []
    for st in trace:
        truth = scene(st.step).doas[0]
        err = float(np.angle(np.exp(1j * (st.estimates[0] - truth)))) if st.estimates else ""
        rows.append((st.step, st.estimates[0] if st.estimates else "", st.worst_crb,
                     int(st.rescan), float(truth), err))
    write_csv(out / "adaptive_trace.csv",
              ["step", "theta_hat_1", "worst_crb", "rescan", "theta_true", "error"], rows)
    return f"adaptive: {len(trace)} steps"


def run_snr_ratio(cfg, out: Path, threads: int) -> str:
    r = cfg["snr_ratio"]
    rows = []
    for b_db in r["beta_db"]:
        beta = 10 ** (b_db / 10)
        nz = pf.NoiseModel(1.0, beta)
        rows.append((float(b_db), pf.snr_ratio(r["N"], r["M"], r["eta"], nz)))
    write_csv(out / "snr_ratio.csv", ["beta_db", "ratio"], rows)
    lim = r["eta"] ** 2 * r["N"] / r["M"]
    return f"snr-ratio: ratio spans {rows[0][1]:.4g} .. {rows[-1][1]:.4g} (limit {lim:.4g})"


RUNNERS = {
    "design-scf": run_design_scf, "design-crb": run_design_crb, "eval": run_eval,
    "pd-sweep": run_pd_sweep, "ccdf": run_ccdf, "rmse": run_rmse,
    "sparse-compare": run_sparse_compare, "adaptive": run_adaptive, "snr-ratio": run_snr_ratio,
}


# -- plotting ------------------------------------------------------------------

PLOT_KINDS = {
    "ccdf": ["value", "ccdf"],
    "pd": ["design", "snr_db", "pd_analytic", "pd_empirical", "stderr", "pd_analytic_max"],
    "profile": ["theta", "b"],
    "rmse": ["snr_db", "rmse", "sqrt_crb"],
}


def plot(csv_path, kind: str, out_path=None) -> Path:
    """Render a CSV produced by one of the experiments; no computation happens here."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if kind not in PLOT_KINDS:
        raise ConfigError(f"unknown plot kind {kind!r}")
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:len(PLOT_KINDS[kind])] != PLOT_KINDS[kind]:
        raise ConfigError(f"{csv_path} does not have the {kind!r} columns {PLOT_KINDS[kind]}")
    body = [r for r in rows[1:] if r]
    out_path = Path(out_path) if out_path else Path(csv_path).with_suffix(".png")
    if kind == "profile":
        fig, ax = plt.subplots(subplot_kw={"projection": "polar"})
        ax.plot([float(r[0]) for r in body], [float(r[1]) for r in body])
    else:
        fig, ax = plt.subplots()
        if kind == "ccdf":
            ax.step([float(r[0]) for r in body], [float(r[1]) for r in body], where="post")
            ax.set_xlabel("value")
            ax.set_ylabel("CCDF")
        elif kind == "rmse":
            x = [float(r[0]) for r in body]
            ax.semilogy(x, [float(r[1]) for r in body], "o-", label="RMSE")
            ax.semilogy(x, [float(r[2]) for r in body], "--", label="sqrt(CRB)")
            ax.set_xlabel("SNR [dB]")
            ax.legend()
        else:
            for name in dict.fromkeys(r[0] for r in body):
                sel = [r for r in body if r[0] == name]
                x = [float(r[1]) for r in sel]
                ax.semilogy(x, [max(float(r[2]), 1e-6) for r in sel], "-", label=f"{name}")
                ax.semilogy(x, [max(float(r[3]), 1e-6) for r in sel], "x", color="gray")
            ax.set_xlabel("SNR [dB]")
            ax.set_ylabel("false detection probability")
            ax.legend()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compressive-doa", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML file or bundled config name")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--out-dir", default=".")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    pp = sub.add_parser("plot")
    pp.add_argument("csv")
    pp.add_argument("--kind", required=True, choices=sorted(PLOT_KINDS))
    pp.add_argument("--out")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        if args.command == "plot":
            path = plot(args.csv, args.kind, args.out)
            print(f"plot: wrote {path}")
            return 0
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config, args.set, args.command, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out_dir)
    try:
        print(RUNNERS[cfg["experiment"]](cfg, out, args.threads))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        mod = type(exc).__module__
        print(f"computation error ({mod}.{type(exc).__name__}): {exc}", file=sys.stderr)
        return 1
    return 0


def main_exit() -> None:
    sys.exit(main())
