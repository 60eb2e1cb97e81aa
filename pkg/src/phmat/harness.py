"""Experiment harness: points, error heuristic, metrics records, CSV/JSON output."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .baselines import h2_hca, h_aca
from .kernels import CountedKernel, KernelEvalCounter, make_kernel, KERNEL_NAMES
from .phmatrix import PHConfig, metrics, offline, online

METHODS = ("param-h", "param-h2", "h-aca", "h2-hca")

# column order of the CSV row: metric labels first, then counters
CSV_FIELDS = [
    "Kernel", "n", "Method", "Storage", "Offline Time", "NF Time", "FF Time", "Online Time",
    "NF Ratio", "FF Ratio", "Coupling Ratio", "Rank", "MVM Time", "Error",
    "Rank (all blocks)", "C_sp", "M_A", "Far Blocks", "Near Blocks",
    "Evals Offline FF", "Evals Offline NF", "Evals Online", "Evals MVM", "Evals Audit",
]


@dataclass
class ExperimentConfig:
    kernel: str = "se"
    n: int = 4096
    d: int = 3
    l_max: int = 2
    p_s: int = 15
    p_theta: int = 27
    eps: float = 1e-5
    eta: float | None = None
    lam_lo: float = 0.25
    lam_hi: float = 1.0
    nu_lo: float = 0.5
    nu_hi: float = 3.0
    method: str = "param-h"
    seed: int = 7
    near_mode: str = "tt"
    n_theta: int = 30
    n_rows: int = 200
    out: str | None = None

    def validate(self):
        bad = []
        if self.kernel not in KERNEL_NAMES:
            bad.append("kernel")
        if self.method not in METHODS:
            bad.append("method")
        for name in ("n", "d", "p_s", "p_theta", "n_theta", "n_rows"):
            if getattr(self, name) < 1:
                bad.append(name)
        if self.l_max < 0:
            bad.append("l_max")
        if not (self.eps > 0):
            bad.append("eps")
        if self.eta is not None and not (self.eta > 0):
            bad.append("eta")
        if not (0 < self.lam_lo <= self.lam_hi):
            bad.append("lam_lo/lam_hi")
        if not (0 < self.nu_lo <= self.nu_hi):
            bad.append("nu_lo/nu_hi")
        if self.near_mode not in ("tt", "direct"):
            bad.append("near_mode")
        if bad:
            raise ValueError("invalid config field(s): " + ", ".join(bad))
        return self

    def spec(self):
        return make_kernel(self.kernel, (self.lam_lo, self.lam_hi), (self.nu_lo, self.nu_hi))

    def ph_config(self) -> PHConfig:
        return PHConfig(l_max=self.l_max, p_s=self.p_s, p_theta=self.p_theta, eps=self.eps,
                        eta=self.eta, near_mode=self.near_mode, seed=self.seed)


_ALIASES = {"lmax": "l_max", "ps": "p_s", "ptheta": "p_theta", "eps_tol": "eps"}


def parse_config_text(text: str) -> dict:
    """key = value lines; '#' starts a comment."""
    out = {}
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, val)
    return out


def _coerce(key, val):
    if val.lower() in ("none", ""):
        return None
    if key in ("n", "d", "l_max", "p_s", "p_theta", "seed", "n_theta", "n_rows"):
        return int(val)
    if key in ("eps", "eta", "lam_lo", "lam_hi", "nu_lo", "nu_hi"):
        return float(val)
    return val


def load_config(path=None, **overrides) -> ExperimentConfig:
    vals = {}
    if path:
        with open(path) as fh:
            vals.update(parse_config_text(fh.read()))
    vals.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**vals).validate()


def generate_points(n: int, d: int, seed: int) -> np.ndarray:
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    return np.random.default_rng(seed).random((n, d))


@dataclass
class ErrorProtocol:
    rows: np.ndarray
    thetas: np.ndarray
    x: np.ndarray


def error_protocol(spec, n: int, seed: int, n_theta: int = 30, n_rows: int = 200) -> ErrorProtocol:
    """Fixed row subset, parameter samples and vector, shared by every method at (n, seed)."""
    rng = np.random.default_rng([seed, n, 1])
    rows = np.sort(rng.choice(n, n_rows, replace=False)) if n > n_rows else np.arange(n)
    lo, hi = spec.box
    thetas = lo + (hi - lo) * rng.random((n_theta, spec.d_theta))
    x = rng.random(n)
    return ErrorProtocol(rows, thetas, x)


def exact_rows(spec, points, rows, theta, x, audit: KernelEvalCounter):
    """[K(theta) x]_rows evaluated densely; evaluations go to the audit counter."""
    k = CountedKernel(spec, audit)
    return k.matrix(points[rows], points, theta, stage="audit") @ x


def relative_residual(exact, approx) -> float:
    exact = np.asarray(exact, float)
    return float(np.linalg.norm(exact - np.asarray(approx, float)) / np.linalg.norm(exact))


def estimate_error(spec, points, apply, proto: ErrorProtocol, audit: KernelEvalCounter | None = None) -> float:
    """Mean relative residual of apply(theta, x) restricted to the protocol rows."""
    audit = audit if audit is not None else KernelEvalCounter()
    errs = []
    for th in proto.thetas:
        ex = exact_rows(spec, points, proto.rows, th, proto.x, audit)
        errs.append(relative_residual(ex, np.asarray(apply(th, proto.x))[proto.rows]))
    return float(np.mean(errs))


def run_experiment(cfg: ExperimentConfig, serial: bool = False, log=None) -> dict:
    """Build, instantiate at the sampled parameters, multiply, and collect metrics."""
    cfg.validate()
    spec = cfg.spec()
    X = generate_points(cfg.n, cfg.d, cfg.seed)
    proto = error_protocol(spec, cfg.n, cfg.seed, cfg.n_theta, cfg.n_rows)
    counter = KernelEvalCounter()
    audit = KernelEvalCounter()
    rec = {k: None for k in CSV_FIELDS}
    rec.update({"Kernel": cfg.kernel.upper(), "n": cfg.n, "Method": cfg.method})
    errs, mvm_t, nf_t, ff_t = [], [], [], []

    if cfg.method in ("param-h", "param-h2"):
        fmt = "h" if cfg.method == "param-h" else "h2"
        t0 = time.perf_counter()
        pm = offline(X, spec, cfg.ph_config(), fmt, counter=counter, serial=serial)
        rec["Offline Time"] = time.perf_counter() - t0
        m = metrics(pm)
        counter.stage = "online"
        for th in proto.thetas:
            # median of 3 instantiations for the stage timings
            insts = [online(pm, th, counter) for _ in range(3)]
            inst = insts[-1]
            st = [i.stats for i in insts]
            nf_t.append(float(np.median([s["nf_online_time"] for s in st])))
            ff_t.append(float(np.median([s["ff_online_time"] for s in st])))
            counter.stage = "mvm"
            t0 = time.perf_counter()
            y = inst.matvec(proto.x)
            mvm_t.append(time.perf_counter() - t0)
            counter.stage = "online"
            ex = exact_rows(spec, X, proto.rows, th, proto.x, audit)
            errs.append(relative_residual(ex, y[proto.rows]))
        stored = m["coupling_tt_entries"] + m["nf_tt_entries"]
        if fmt == "h":
            stored += sum(S.size + T.size for S, T in zip(pm.S, pm.T))
        else:
            stored += m["basis_entries"]
        rec.update({
            "Storage": stored * 8 / 1e9,
            "NF Ratio": m["nf_ratio"],
            "FF Ratio": m["ff_ratio"] if fmt == "h" else None,
            "Coupling Ratio": m["ff_ratio"] if fmt == "h2" else None,
            "Rank": m["rank"],
            "Rank (all blocks)": m["rank_all_blocks"],
            "C_sp": m["c_sp"], "M_A": m["unique_couplings"],
            "Far Blocks": m["far_blocks"], "Near Blocks": m["near_blocks"],
            "Evals Offline FF": counter.get("offline_far"),
            "Evals Offline NF": counter.get("offline_near"),
        })
    else:
        rec["Offline Time"] = 0.0
        ranks, cratio, ffr, nfr, csp, ma, nfar, nnear, store = [], [], [], [], 0, None, 0, 0, []
        for th in proto.thetas:
            t0 = time.perf_counter()
            if cfg.method == "h-aca":
                A = h_aca(X, spec, th, cfg.l_max, cfg.eps, cfg.eta, counter)
            else:
                A = h2_hca(X, spec, th, cfg.l_max, cfg.p_s, cfg.eps, cfg.eta, counter)
            nf_t.append(A.stats["nf_time"])
            ff_t.append(A.stats["ff_time"])
            m = A.metrics()
            ranks.append(m["rank"])
            ffr.append(m["ff_ratio"])
            nfr.append(m["nf_ratio"])
            store.append(m["storage_gb"])
            csp, nfar, nnear = m["c_sp"], m["far_blocks"], m["near_blocks"]
            ma = m.get("unique_couplings")
            counter.stage = "mvm"
            t0 = time.perf_counter()
            y = A.matvec(proto.x)
            mvm_t.append(time.perf_counter() - t0)
            counter.stage = "online"
            ex = exact_rows(spec, X, proto.rows, th, proto.x, audit)
            errs.append(relative_residual(ex, y[proto.rows]))
        rec.update({
            "Storage": float(np.mean(store)), "NF Ratio": float(np.mean(nfr)),
            "FF Ratio": float(np.mean(ffr)) if cfg.method == "h-aca" else None,
            "Coupling Ratio": float(np.mean(ffr)) if cfg.method == "h2-hca" else None,
            "Rank": float(np.mean(ranks)), "Rank (all blocks)": float(np.mean(ranks)),
            "C_sp": csp, "M_A": ma, "Far Blocks": nfar, "Near Blocks": nnear,
            "Evals Offline FF": 0, "Evals Offline NF": 0,
        })
    rec["NF Time"] = float(np.mean(nf_t))
    rec["FF Time"] = float(np.mean(ff_t))
    rec["Online Time"] = rec["NF Time"] + rec["FF Time"]
    rec["MVM Time"] = float(np.mean(mvm_t))
    rec["Error"] = float(np.mean(errs))
    rec["Evals Online"] = counter.get("online")
    rec["Evals MVM"] = counter.get("mvm")
    rec["Evals Audit"] = audit.total
    rec["_config"] = asdict(cfg)
    rec["_errors"] = [float(e) for e in errs]
    return rec


def write_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in records:
            w.writerow({k: ("" if r.get(k) is None else r[k]) for k in CSV_FIELDS})


def write_json(path, records):
    with open(path, "w") as fh:
        json.dump(records, fh, indent=2, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and math.isnan(o):
        return None
    raise TypeError(type(o))
