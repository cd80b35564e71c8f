"""Stage functions behind the CLI: sample, fit, threshold, optimize, report.

Every stage reads its inputs from the run directory, checks them against the
hashes recorded in ``manifest.json`` by the stage that produced them, and
records the hashes of what it writes.  Randomness comes from the root seed
fanned out by stage name.
"""

import hashlib
import json
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__, hull
from .density import (GaussianDensity, chi_square_diagnostic, dataset_hash, iqr_threshold,
                      reconstruction_distances, uniform_latent_distances)
from .ffd import FreeFormDeformation, sample_dataset
from .io import (load_dataset, load_log, load_model, load_threshold, save_log, save_model, save_threshold,
                 sha256_file, write_container, write_csv, save_dataset)
from .latent import PPCA, make_model
from .optimize import bo_minimize, direct_minimize
from .problem import (FullSpaceProblem, HullConstraints, LatentProblem, SyntheticResistance, planted_target)


class StaleArtifactError(RuntimeError):
    pass


class BudgetError(ValueError):
    pass


class LockBusyError(RuntimeError):
    pass


class ModeError(ValueError):
    pass


DATASET = "dataset.bin"
MANIFEST = "manifest.json"


def derive_seed(root, stage):
    digest = hashlib.sha256(f"{int(root)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# ---------------------------------------------------------------------------
# run directory bookkeeping

class RunDir:
    def __init__(self, cfg):
        self.cfg = cfg
        self.root = Path(cfg.output_dir)

    def path(self, name):
        return self.root / name

    def manifest(self):
        p = self.path(MANIFEST)
        if not p.exists():
            return {"format": "latent-sbdo-manifest", "tool_version": __version__, "stages": {}}
        return json.loads(p.read_text())

    def require(self, name):
        """Path of an upstream artifact whose content still matches the manifest."""
        p = self.path(name)
        recorded = None
        for stage in self.manifest()["stages"].values():
            if name in stage.get("outputs", {}):
                recorded = stage["outputs"][name]
        if recorded is None or not p.exists():
            raise StaleArtifactError(f"{name} missing; run the producing stage first")
        actual = sha256_file(p)
        if actual != recorded:
            raise StaleArtifactError(f"{name} changed since it was written (hash {actual[:12]} != {recorded[:12]})")
        return p

    def record(self, stage, inputs, outputs, seconds, extra=None):
        m = self.manifest()
        m["tool_version"] = __version__
        m["config_digest"] = self.cfg.digest()
        m["stages"][stage] = {
            "status": "ok",
            "inputs": {n: sha256_file(self.path(n)) for n in inputs},
            "outputs": {n: sha256_file(self.path(n)) for n in outputs},
            "seconds": round(seconds, 3),
            **(extra or {}),
        }
        self.path(MANIFEST).write_text(json.dumps(m, sort_keys=True, indent=2) + "\n")


@contextmanager
def run_lock(root):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lock = root / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockBusyError(f"{lock} exists; another process is writing this run directory") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# shared construction

class Setup:
    """Baseline, lattices, constraints and objective derived from the config."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.hull_spec = cfg.hull.build()
        self.baseline = hull.make_hull(self.hull_spec)
        self.lattices = cfg.lattices.build(self.hull_spec)
        self.constraints = HullConstraints(self.baseline, self.hull_spec, cfg.constraint_spec())
        self.deformation = FreeFormDeformation(self.baseline, self.lattices).fit()
        self._objective = None

    def feasible(self, x):
        violations, degenerate = self.constraints(x)
        return not degenerate and not any(v > 0 for v in violations.values())

    @property
    def objective(self):
        if self._objective is None:
            oc = self.cfg.objective
            target = planted_target(self.deformation, oc.seed, self.feasible, spread=oc.target_spread)
            self._objective = SyntheticResistance(self.baseline, self.hull_spec, oc.spec(), target=target)
        return self._objective


def model_file(kind):
    return f"model-{kind}.bin"


REFERENCE = "ppca-ref"


def density_kind(cfg):
    """Model that supplies the Gaussian density: PCA borrows a PPCA of the same rank."""
    return REFERENCE if cfg.model.kind == "pca" else cfg.model.kind


def threshold_file(cfg):
    return f"threshold-{density_kind(cfg)}.json"


# ---------------------------------------------------------------------------
# stages

def cmd_sample(cfg, echo=print):
    rd = RunDir(cfg)
    t0 = time.perf_counter()
    setup = Setup(cfg)
    sc = cfg.sampling
    ds = sample_dataset(setup.baseline, setup.lattices, sc.n_samples, derive_seed(cfg.seed, "sample"),
                        feasibility=setup.feasible if sc.feasible_only else None,
                        window=sc.window, min_acceptance=sc.min_acceptance)
    save_dataset(rd.path(DATASET), ds, {"acceptance_ratio": ds.acceptance_ratio})
    rd.record("sample", [], [DATASET], time.perf_counter() - t0,
              {"accepted": int(ds.X.shape[0]), "rejected": int(ds.n_rejected)})
    echo(f"sample: accepted={ds.X.shape[0]} rejected={ds.n_rejected} "
         f"acceptance={ds.acceptance_ratio:.3f} -> {rd.path(DATASET)}")
    return ds


def _variance_rows(model):
    return [(k, model.explained_variance_fraction(k)) for k in range(1, model.n_components_ + 1)]


def cmd_fit(cfg, echo=print):
    rd = RunDir(cfg)
    t0 = time.perf_counter()
    _, arrays = load_dataset(rd.require(DATASET))
    X = arrays["X"]
    model = make_model(cfg.model.kind, **cfg.model.params()).fit(X)
    name = model_file(cfg.model.kind)
    save_model(rd.path(name), model)
    csv = f"variance-{cfg.model.kind}.csv"
    write_csv(rd.path(csv), ["k", "explained_variance"], _variance_rows(model))
    outputs = [name, csv]
    if cfg.model.kind == "pca":
        ref = PPCA(n_components=model.n_components_).fit(X)
        save_model(rd.path(model_file(REFERENCE)), ref)
        outputs.append(model_file(REFERENCE))
    rd.record(f"fit:{cfg.model.kind}", [DATASET], outputs, time.perf_counter() - t0,
              {"n_components": int(model.n_components_)})
    echo(f"fit: kind={cfg.model.kind} K={model.n_components_} "
         f"explained={model.explained_variance_fraction(model.n_components_):.4f} -> {rd.path(name)}")
    return model


def _histogram_rows(a, b, bins):
    hi = float(np.percentile(np.concatenate([a, b]), 99.0))
    edges = np.linspace(0.0, hi if hi > 0 else 1.0, bins + 1)
    ca, _ = np.histogram(np.minimum(a, edges[-1]), edges)
    cb, _ = np.histogram(np.minimum(b, edges[-1]), edges)
    return [(float(edges[i]), float(edges[i + 1]), int(ca[i]), int(cb[i])) for i in range(bins)]


def cmd_threshold(cfg, echo=print):
    rd = RunDir(cfg)
    t0 = time.perf_counter()
    _, arrays = load_dataset(rd.require(DATASET))
    X = arrays["X"]
    kind = density_kind(cfg)
    model = load_model(rd.require(model_file(kind)))
    density = GaussianDensity.from_model(model)
    d_rec = reconstruction_distances(model, X, density)
    thr = iqr_threshold(d_rec, rule=cfg.threshold.rule, dataset_hash=dataset_hash(X))
    rng = np.random.default_rng(derive_seed(cfg.seed, "threshold"))
    d_uni = uniform_latent_distances(model, model.latent_bounds(X), cfg.threshold.n_uniform, rng, density)
    ks = chi_square_diagnostic(d_rec, model.n_components_)
    ks_full = chi_square_diagnostic(d_rec, X.shape[1])
    extra = {
        "model_kind": "ppca" if kind == REFERENCE else kind,
        "n_components": int(model.n_components_),
        "exceedance_reconstructed": float(np.mean(d_rec > thr.phi_max)),
        "exceedance_uniform": float(np.mean(d_uni > thr.phi_max)),
        "ks_statistic": ks.statistic,
        "ks_critical_05": ks.critical_05,
        "ks_statistic_full_dof": ks_full.statistic,
    }
    name = threshold_file(cfg)
    save_threshold(rd.path(name), thr, extra)
    hist = f"distances-{kind}.csv"
    write_csv(rd.path(hist), ["bin_lo", "bin_hi", "reconstructed", "uniform_latent"],
              _histogram_rows(d_rec, d_uni, cfg.threshold.bins))
    rd.record(f"threshold:{kind}", [DATASET, model_file(kind)], [name, hist], time.perf_counter() - t0)
    echo(f"threshold: phi_max={thr.phi_max:.4f} (fence={thr.fence:.4f} literal={thr.literal:.4f}) "
         f"p_rec={extra['exceedance_reconstructed']:.3f} p_uniform={extra['exceedance_uniform']:.3f} "
         f"ks={ks.statistic:.4f}")
    return thr, extra


def build_problem(cfg, rd, setup):
    """Problem callable, its bounds and header fields for the configured mode."""
    oc = cfg.optimizer
    header = {"mode": oc.mode, "optimizer": oc.kind, "budget": oc.budget, "seed": cfg.seed}
    inputs = []
    if oc.mode == "full":
        problem = FullSpaceProblem(setup.deformation, setup.constraints, setup.objective, cfg.penalty_spec())
        header.update(model_kind=None, n_components=setup.deformation.lower_.size)
        return problem, problem.bounds, header, inputs
    if oc.mode == "anomaly" and cfg.model.kind == "pca":
        raise ModeError("anomaly-aware mode needs a PPCA or FA model (PCA defines no density)")
    _, arrays = load_dataset(rd.require(DATASET))
    name = model_file(cfg.model.kind)
    model = load_model(rd.require(name))
    inputs += [DATASET, name]
    threshold = None
    if oc.mode == "anomaly":
        threshold, _ = load_threshold(rd.require(threshold_file(cfg)))
        inputs.append(threshold_file(cfg))
        header["phi_max"] = threshold.phi_max
    bounds = model.latent_bounds(arrays["X"])
    problem = LatentProblem(model, setup.constraints, setup.objective, bounds, cfg.penalty_spec(), threshold)
    header.update(model_kind=cfg.model.kind, model_file=name, n_components=int(model.n_components_))
    return problem, bounds, header, inputs


def cmd_optimize(cfg, echo=print):
    rd = RunDir(cfg)
    t0 = time.perf_counter()
    oc = cfg.optimizer
    setup = Setup(cfg)
    problem, (lower, upper), header, inputs = build_problem(cfg, rd, setup)
    k = lower.size
    if oc.kind == "gp-lcb" and oc.budget < 2 * k + 2:
        raise BudgetError(f"gp-lcb needs budget >= 2K+2 = {2 * k + 2}, got {oc.budget}")
    seed = derive_seed(cfg.seed, f"optimize:{oc.run_name}")
    if oc.kind == "direct":
        best_x, best_f, log = direct_minimize(problem, lower, upper, oc.budget)
    else:
        best_x, best_f, log = bo_minimize(problem, lower, upper, oc.budget, kappa=oc.kappa, seed=seed,
                                          n_starts=oc.n_starts, maxiter=oc.maxiter, fd_step=oc.fd_step,
                                          gp_params={"nugget": oc.nugget, "cap_percentile": oc.cap_percentile})
    f0 = float(setup.objective(setup.baseline))
    header.update(name=oc.run_name, baseline_objective=f0)
    name = oc.run_name
    log_name, geo_name, summary_name = f"run-{name}.jsonl", f"best-{name}.bin", f"best-{name}.json"
    save_log(rd.path(log_name), log, header)
    geometry = problem.geometry(best_x)
    write_container(rd.path(geo_name), "geometry", {"run": name}, {"geometry": geometry})
    best = log.best()
    summary = {"run": name, "best_f": best_f, "best_x": best_x.tolist(), "iteration": best.index,
               "baseline_objective": f0, "reduction_percent": reduction_percent(f0, best_f),
               "evaluations": len(log), "evaluated": sum(bool(r.info.get("evaluated", True)) for r in log)}
    rd.path(summary_name).write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    rd.record(f"optimize:{name}", inputs, [log_name, geo_name, summary_name], time.perf_counter() - t0)
    echo(f"optimize: run={name} best_f={best_f:.6g} baseline={f0:.6g} "
         f"reduction={summary['reduction_percent']:.2f}% evaluations={len(log)}")
    return summary, log


def reduction_percent(f0, f):
    return float((f0 - f) / f0 * 100.0) if f0 != 0 else float("nan")


def geometric_feasible(record):
    v = record.get("violations", {})
    return not record.get("degenerate", False) and all(val <= 0 for k, val in v.items() if k != "anomaly")


def pca_posthoc(rd, records, header):
    """PPCA distances of the decoded designs of a PCA-mode run (reference PPCA of equal K)."""
    model = load_model(rd.require(header["model_file"]))
    ref = load_model(rd.require(model_file(REFERENCE)))
    thr, _ = load_threshold(rd.require(f"threshold-{REFERENCE}.json"))
    density = GaussianDensity.from_model(ref)
    Z = np.array([r["x"] for r in records], dtype=np.float64)
    d2 = density.mahalanobis_sq(model.inverse_transform(Z))
    feasible = np.array([geometric_feasible(r) for r in records])
    exceeds = feasible & (d2 > thr.phi_max)
    n_feasible = int(feasible.sum())
    fraction = float(exceeds.sum() / n_feasible) if n_feasible else 0.0
    rows = [(r["iteration"], int(f), float(d), int(e)) for r, f, d, e in zip(records, feasible, d2, exceeds)]
    return fraction, n_feasible, int(exceeds.sum()), thr.phi_max, rows


def cmd_report(cfg, echo=print):
    rd = RunDir(cfg)
    t0 = time.perf_counter()
    logs = list(cfg.report.logs) or sorted(p.name for p in rd.root.glob("run-*.jsonl"))
    if not logs:
        raise StaleArtifactError("no run logs to report on")
    summary_rows = []
    outputs = []
    for log_name in logs:
        path = Path(log_name) if Path(log_name).is_absolute() else rd.path(log_name)
        header, records = load_log(path)
        name = header.get("name", path.stem.removeprefix("run-"))
        curve = f"curve-{name}.csv"
        write_csv(rd.path(curve), ["iteration", "f", "best_so_far", "evaluated"],
                  [(r["iteration"], float(r["f"]), float(r["best_so_far"]), int(bool(r["evaluated"])))
                   for r in records])
        outputs.append(curve)
        best = min(float(r["f"]) for r in records)
        f0 = header.get("baseline_objective", float("nan"))
        fraction = ""
        if header.get("model_kind") == "pca" and header.get("mode") == "latent":
            fraction, n_feas, n_exc, phi, rows = pca_posthoc(rd, records, header)
            posthoc = f"posthoc-{name}.csv"
            write_csv(rd.path(posthoc), ["iteration", "geometric_feasible", "d2_ppca", "exceeds_phi_max"], rows)
            outputs.append(posthoc)
            echo(f"report: {name} PCA designs geometrically feasible={n_feas} exceeding phi_max={n_exc} "
                 f"fraction={fraction:.4f}")
        summary_rows.append((name, header.get("mode", ""), header.get("optimizer", ""),
                             header.get("model_kind") or "", header.get("n_components", ""), best, f0,
                             reduction_percent(f0, best), fraction))
    write_csv(rd.path("summary.csv"), ["run", "mode", "optimizer", "model", "k", "best_f", "baseline_f",
                                       "reduction_percent", "pca_exceed_fraction"], summary_rows)
    outputs.append("summary.csv")
    rd.record("report", [], outputs, time.perf_counter() - t0)
    for row in summary_rows:
        echo(f"report: {row[0]} best_f={row[5]:.6g} reduction={row[7]:.2f}%")
    return summary_rows


STAGES = {"sample": cmd_sample, "fit": cmd_fit, "threshold": cmd_threshold,
          "optimize": cmd_optimize, "report": cmd_report}


def run_stage(cfg, stage, echo=print):
    with run_lock(cfg.output_dir):
        return STAGES[stage](cfg, echo=echo)


def run_pipeline(cfg, echo=print):
    """All stages in order with the configured optimizer."""
    return {stage: run_stage(cfg, stage, echo) for stage in STAGES}
