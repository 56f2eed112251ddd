"""``zmra`` command line: verification suites, decompositions, kernel checks and benches.

Exit codes: 0 when every check passes, 1 on a tolerance breach, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ComplexityExceedsGrid, UnknownFixture, ZygmraError
from .lattice import GridSpec

EXIT_OK, EXIT_BREACH, EXIT_USAGE = 0, 1, 2

SUITES = ("haar", "lattice", "collapse", "paraproduct", "structural", "sparse")
DEFAULT_GRIDS = {
    "haar": (3, 3, 6),
    "lattice": (3, 3, 6),
    "collapse": (1, 1, 2),
    "paraproduct": (2, 2, 4),
    "structural": (3, 2, 5),
    "sparse": (2, 4, 6),
    "decompose": (3, 3, 6),
    "bench": (2, 2, 4),
}


class ConfigInvalid(ZygmraError):
    """Arguments do not describe a runnable configuration."""


@dataclass
class Report:
    """Rows for CSV, a summary for JSON, and the pass flag."""

    columns: List[str]
    rows: List[List[object]] = field(default_factory=list)
    summary: Dict[str, object] = field(default_factory=dict)
    passed: bool = True

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(x) for x in r])
        return buf.getvalue()

    def json(self) -> str:
        data = dict(self.summary)
        data["passed"] = self.passed
        data["rows"] = [dict(zip(self.columns, (_plain(x) for x in r))) for r in self.rows]
        return json.dumps(data, sort_keys=True, indent=1) + "\n"


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _plain(x):
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


@dataclass
class RunConfig:
    command: str
    suite: Optional[str] = None
    grid: Optional[GridSpec] = None
    seed: int = 0
    k: Optional[Tuple[int, int, int]] = None
    theta: float = 1.0
    alpha1: float = 1.0
    alpha23: float = 1.0
    eta: float = 0.5
    p: Optional[float] = None
    p1: float = 4.0
    p2: float = 4.0
    fixture: Optional[str] = None
    trials: Optional[int] = None
    out: Optional[str] = None
    fmt: str = "csv"
    inputs: List[str] = field(default_factory=list)
    bench: Optional[str] = None

    def validate(self) -> None:
        if self.fmt not in ("csv", "json"):
            raise ConfigInvalid(f"unknown format {self.fmt!r}")
        if self.command == "verify" and self.suite not in SUITES:
            raise ConfigInvalid(f"unknown suite {self.suite!r}; choose from {', '.join(SUITES)}")
        if self.k is not None and any(v < 0 for v in self.k):
            raise ConfigInvalid("complexities must be non-negative")
        if self.grid is not None and self.k is not None and self.command in ("verify", "bench"):
            if self.k[0] > self.grid.L1 or self.k[1] > self.grid.L2 or self.k[2] > self.grid.L3:
                raise ConfigInvalid(f"complexity {self.k} does not fit grid {self.grid}")

    def grid_for(self, name: str) -> GridSpec:
        return self.grid if self.grid is not None else GridSpec(*DEFAULT_GRIDS[name])


# ---------------------------------------------------------------------------
# suites

def _suite_haar(cfg: RunConfig) -> Report:
    from .haar import GridFunction, reconstruct, zygmund_expand

    g = cfg.grid_for("haar")
    rng = np.random.default_rng(cfg.seed)
    rep = Report(["trial", "residual", "parseval_gap"])
    for t in range(cfg.trials or 20):
        f = GridFunction.random(g, rng)
        exp = zygmund_expand(f)
        back = reconstruct(exp)
        res = float(np.abs(back.values - f.values).max() / np.abs(f.values).max())
        energy = float(np.mean(f.values ** 2))
        gap = abs(exp.coefficient_energy() + exp.completion_energy() - energy) / energy
        rep.rows.append([t, res, gap])
        rep.passed &= res <= 1e-12 and gap <= 1e-12
    rep.summary = {"suite": "haar", "grid": str(g), "tolerance": 1e-12}
    return rep


def _suite_lattice(cfg: RunConfig) -> Report:
    from .lattice import DyadicInterval, LatticeShift, is_good, parent_k, translate

    g = cfg.grid_for("lattice")
    rng = np.random.default_rng(cfg.seed)
    n = cfg.trials or 10_000
    levels = g.L3
    rep = Report(["k", "trials", "good_fraction", "kparent_failures"])
    for k in (2, 3):
        if k > levels:
            continue
        j = levels
        good = 0
        for _ in range(n):
            sh = LatticeShift.random(g, rng)
            G = DyadicInterval(3, j, int(rng.integers(1 << j)), sh)
            good += is_good(G, k, levels)
        frac = good / n
        fails = 0
        for pos in range(1 << min(j, 10)):
            G = DyadicInterval(3, j, pos)
            if not is_good(G, k, levels):
                continue
            P = parent_k(G, k, levels)
            m = 1 << (k - 2)
            for step in range(-m, m + 1):
                if parent_k(translate(G, step), k, levels) != P:
                    fails += 1
        rep.rows.append([k, n, frac, fails])
        rep.passed &= abs(frac - 0.5) <= 0.02 and fails == 0
    rep.summary = {"suite": "lattice", "grid": str(g)}
    return rep


def _suite_collapse(cfg: RunConfig) -> Report:
    from .decompose import TrilinearForm, collapse_check
    from .haar import GridFunction

    g = cfg.grid_for("collapse")
    if g.cells > 256:
        raise ConfigInvalid("dense collapse checks need at most 256 cells")
    rng = np.random.default_rng(cfg.seed)
    rep = Report(["trial", "group", "relative_residual"])
    for t in range(cfg.trials or 5):
        T = TrilinearForm.random_dense(g, rng)
        fs = [GridFunction.random(g, rng) for _ in range(3)]
        for group in ("1", "23"):
            r = collapse_check(T, *fs, group=group).relative
            rep.rows.append([t, group, r])
            rep.passed &= r <= 1e-10
    rep.summary = {"suite": "collapse", "grid": str(g), "tolerance": 1e-10}
    return rep


def _suite_paraproduct(cfg: RunConfig) -> Report:
    from .bmo import ParaproductTable
    from .haar import GridFunction

    g = cfg.grid_for("paraproduct")
    rng = np.random.default_rng(cfg.seed)
    rep = Report(["trial", "relative_residual"])
    for t in range(cfg.trials or 20):
        b, f = GridFunction.random(g, rng), GridFunction.random(g, rng)
        r = ParaproductTable(b).residual(f)
        rep.rows.append([t, r])
        rep.passed &= r <= 1e-12
    rep.summary = {"suite": "paraproduct", "grid": str(g), "tolerance": 1e-12}
    return rep


def _suite_structural(cfg: RunConfig) -> Report:
    from .haar import GridFunction
    from .shifts import ShiftData, eval_shift_form, structural_decompose

    g = cfg.grid_for("structural")
    ks = [cfg.k] if cfg.k else [(0, 0, 0), (1, 0, 1), (1, 1, 2), (2, 1, 3)]
    rng = np.random.default_rng(cfg.seed)
    rep = Report(["k1", "k2", "k3", "C", "families", "max_relative_residual", "constraints_ok"])
    for k in ks:
        Q = ShiftData.random(g, k, rng)
        res = structural_decompose(Q)
        ok = True
        for S in res.shifts:
            try:
                S.validate(k)
            except ZygmraError:
                ok = False
        worst = 0.0
        for _ in range(cfg.trials or 10):
            fs = [GridFunction.random(g, rng) for _ in range(3)]
            lhs = eval_shift_form(Q, *fs)
            rhs = res.evaluate(*fs)
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
        rep.rows.append([k[0], k[1], k[2], res.C, res.family_count, worst, ok])
        rep.passed &= ok and worst <= 1e-10
    rep.summary = {"suite": "structural", "grid": str(g), "tolerance": 1e-10}
    return rep


def _suite_sparse(cfg: RunConfig) -> Report:
    from .analysis import sparse_collect, sparse_constant_table
    from .errors import GammaUnachievable
    from .haar import GridFunction
    from .lattice import DilatedLatticeSpec

    g = cfg.grid_for("sparse")
    lat = DilatedLatticeSpec(0, "23")
    rng = np.random.default_rng(cfg.seed)
    sparse_ok = 0
    trials = cfg.trials or 20
    for _ in range(trials):
        fs = [GridFunction.random(g, rng) for _ in range(3)]
        try:
            sparse_ok += sparse_collect(*fs, lat).check()
        except GammaUnachievable:
            pass
    ks = [(a, b) for a in range(g.L2) for b in range(g.L2)]
    table = sparse_constant_table(g, lat, ks, seed=cfg.seed, trials=2)
    rep = Report(["k2", "k3", "C_emp"])
    for k, v in sorted(table.items()):
        rep.rows.append([k[0], k[1], v])
    vals = [v for v in table.values() if v > 0]
    spread = max(vals) / min(vals) if vals else math.inf
    rep.summary = {"suite": "sparse", "grid": str(g), "sparse_trials": trials, "sparse_ok": sparse_ok,
                   "C_emp_max": max(vals, default=0.0), "C_emp_spread": spread}
    rep.passed = sparse_ok == trials and all(math.isfinite(v) for v in vals)
    return rep


# ---------------------------------------------------------------------------
# other commands

def _cmd_decompose(cfg: RunConfig) -> Report:
    from .decompose import admissible_complexities, decay_fit
    from .kernels import KernelParams, synthetic_kernel

    g = cfg.grid_for("decompose")
    params = KernelParams(cfg.theta, cfg.alpha1, cfg.alpha23)
    K = synthetic_kernel(params, seed=cfg.seed)
    ks = [cfg.k] if cfg.k else admissible_complexities(g)
    fit = decay_fit(K, params, ks, grid=g, samples=cfg.trials or 4, seed=cfg.seed)
    rep = Report(["k1", "k2", "k3", "coef_max", "phi", "normalized_max"])
    for k, v in sorted(fit.buckets.items()):
        rep.rows.append([k[0], k[1], k[2], v["coef_max"], v["phi"], v["max"]])
    rep.summary = {"grid": str(g), "theta": cfg.theta, "alpha1": cfg.alpha1, "alpha23": cfg.alpha23,
                   "constant": fit.constant, "growth_factor": fit.growth_factor}
    rep.passed = math.isfinite(fit.constant) and fit.growth_factor < 3.0
    return rep


def _cmd_kernel_check(cfg: RunConfig) -> Report:
    from .kernels import KernelParams, check_kernel_estimates, synthetic_kernel

    params = KernelParams(cfg.theta, cfg.alpha1, cfg.alpha23)
    rep_k = check_kernel_estimates(synthetic_kernel(params, seed=cfg.seed), samples=cfg.trials or 1000, seed=cfg.seed)
    rep = Report(["estimate", "constant", "log_adjusted"])
    for name in sorted(rep_k.entries):
        rep.rows.append([name, rep_k.constant(name), rep_k.constant(name, adjusted=True)])
    rep.summary = {"samples": rep_k.samples, "skipped": rep_k.skipped}
    rep.passed = all(math.isfinite(r[1]) for r in rep.rows)
    return rep


def _bench_ks(cfg: RunConfig, g: GridSpec) -> List[Tuple[int, int, int]]:
    if cfg.k:
        return [cfg.k]
    out = []
    for k1 in range(g.L1):
        for k2 in range(g.L2):
            for k3 in range(k1 + k2, g.L3):
                if (k1, k2, k3) not in out and k3 <= k1 + k2 + 1:
                    out.append((k1, k2, k3))
    return out


def _cmd_bench_shift(cfg: RunConfig) -> Report:
    from .analysis import BenchConfig, opnorm_bench, weight_fixture
    from .shifts import ShiftData, apply_shift

    g = cfg.grid_for("bench")
    p = cfg.p if cfg.p is not None else 1.0 / (1.0 / cfg.p1 + 1.0 / cfg.p2)
    bc = BenchConfig(cfg.p1, cfg.p2, p, cfg.eta, cfg.trials or 16, cfg.seed)
    w1 = w2 = None
    if cfg.fixture:
        w1 = w2 = weight_fixture(cfg.fixture, g)
    rep = Report(["k1", "k2", "k3", "p1", "p2", "p", "eta", "empirical", "bound_ratio"])
    rng = np.random.default_rng(cfg.seed)
    for k in _bench_ks(cfg, g):
        try:
            Q = ShiftData.random(g, k, rng)
        except ComplexityExceedsGrid:
            continue
        r = opnorm_bench(lambda f1, f2: apply_shift(Q, f1, f2), g, bc, w1, w2, k)
        rep.rows.append([k[0], k[1], k[2], cfg.p1, cfg.p2, p, cfg.eta, r.empirical, r.ratio])
    rep.summary = {"grid": str(g), "note": "random probes give lower bounds on operator norms",
                   "weight": cfg.fixture or "none"}
    rep.passed = all(math.isfinite(r[-1]) for r in rep.rows)
    return rep


def _cmd_bench_commutator(cfg: RunConfig) -> Report:
    from .bmo import b_fixture, commutator_bench
    from .haar import GridFunction
    from .shifts import LinearShiftData

    g = cfg.grid_for("bench")
    p = cfg.p if cfg.p is not None else 2.0
    if cfg.fixture:
        b = b_fixture(cfg.fixture, g, cfg.seed)
    else:
        b = lambda rng: GridFunction.random(g, rng)  # noqa: E731
    rep = Report(["k1", "k2", "k3", "theta", "p", "ratio"])
    rng = np.random.default_rng(cfg.seed)
    for k in _bench_ks(cfg, g):
        try:
            Q = LinearShiftData.random(g, k, rng, decay=cfg.theta, tag=f"theta={cfg.theta}")
        except ComplexityExceedsGrid:
            continue
        r = commutator_bench(b, Q, p, cfg.trials or 20, cfg.seed)
        rep.rows.append([k[0], k[1], k[2], cfg.theta, p, r.ratio])
    rep.summary = {"grid": str(g), "b": cfg.fixture or "random", "note": "ratios are empirical lower bounds"}
    rep.passed = all(math.isfinite(r[-1]) for r in rep.rows)
    return rep


def _cmd_report_merge(cfg: RunConfig) -> Report:
    if not cfg.inputs:
        raise ConfigInvalid("report-merge needs input files")
    if cfg.fmt == "csv":
        header = None
        rows = []
        for path in cfg.inputs:
            with open(path, newline="") as fh:
                rd = list(csv.reader(fh))
            if not rd:
                continue
            if header is None:
                header = rd[0]
            elif rd[0] != header:
                raise ConfigInvalid(f"{path} has a different header")
            rows.extend(rd[1:])
        return Report(header or [], rows)
    merged = {}
    passed = True
    for path in cfg.inputs:
        data = json.loads(Path(path).read_text())
        merged[Path(path).name] = data
        passed &= bool(data.get("passed", True))
    rep = Report([], [], {"reports": merged})
    rep.passed = passed
    return rep


def run(cfg: RunConfig) -> Tuple[int, str]:
    """Execute a configuration; returns the exit status and the rendered report."""
    cfg.validate()
    if cfg.command == "verify":
        rep = {
            "haar": _suite_haar, "lattice": _suite_lattice, "collapse": _suite_collapse,
            "paraproduct": _suite_paraproduct, "structural": _suite_structural, "sparse": _suite_sparse,
        }[cfg.suite](cfg)
    elif cfg.command == "decompose":
        rep = _cmd_decompose(cfg)
    elif cfg.command == "kernel-check":
        rep = _cmd_kernel_check(cfg)
    elif cfg.command == "bench":
        if cfg.bench == "shift":
            rep = _cmd_bench_shift(cfg)
        elif cfg.bench == "commutator":
            rep = _cmd_bench_commutator(cfg)
        else:
            raise ConfigInvalid("bench needs 'shift' or 'commutator'")
    elif cfg.command == "report-merge":
        rep = _cmd_report_merge(cfg)
    else:
        raise ConfigInvalid(f"unknown command {cfg.command!r}")
    text = rep.csv() if cfg.fmt == "csv" else rep.json()
    return (EXIT_OK if rep.passed else EXIT_BREACH), text


# ---------------------------------------------------------------------------
# argument parsing

def _triple(text: str) -> Tuple[int, int, int]:
    parts = [int(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated integers")
    return tuple(parts)


def _grid(text: str) -> GridSpec:
    try:
        return GridSpec(*_triple(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--L", type=_grid, dest="grid", help="grid exponents L1,L2,L3")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--k", type=_triple, help="complexity k1,k2,k3")
    common.add_argument("--theta", type=float, default=1.0)
    common.add_argument("--alpha1", type=float, default=1.0)
    common.add_argument("--alpha23", type=float, default=1.0)
    common.add_argument("--eta", type=float, default=0.5)
    common.add_argument("--p", type=float)
    common.add_argument("--p1", type=float, default=4.0)
    common.add_argument("--p2", type=float, default=4.0)
    common.add_argument("--fixture")
    common.add_argument("--trials", type=int)
    common.add_argument("--out")
    common.add_argument("--format", dest="fmt", default="csv", choices=("csv", "json"))

    ap = _Parser(prog="zmra", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    v = sub.add_parser("verify", parents=[common], help="run a verification suite")
    v.add_argument("suite_pos", nargs="?", choices=SUITES, metavar="SUITE")
    v.add_argument("--suite", choices=SUITES)
    sub.add_parser("decompose", parents=[common], help="coefficient decay table of a synthetic kernel")
    sub.add_parser("kernel-check", parents=[common], help="sampled kernel estimate constants")
    b = sub.add_parser("bench", parents=[common], help="operator-norm benches")
    b.add_argument("bench", choices=("shift", "commutator"))
    m = sub.add_parser("report-merge", parents=[common], help="merge CSV or JSON reports")
    m.add_argument("inputs", nargs="+")
    # short forms used in module docs
    sh = sub.add_parser("shift", parents=[common], help="same as 'verify structural'")
    sh.add_argument("action", choices=("verify",))
    sub.add_parser("commutator-bench", parents=[common], help="same as 'bench commutator'")
    sub.add_parser("paraproduct-check", parents=[common], help="same as 'verify paraproduct'")
    return ap


_ALIASES = {
    "shift": ("verify", "structural", None),
    "commutator-bench": ("bench", None, "commutator"),
    "paraproduct-check": ("verify", "paraproduct", None),
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    command, suite, bench = _ALIASES.get(ns.command, (ns.command, None, None))
    cfg = RunConfig(
        command=command,
        suite=suite or getattr(ns, "suite", None) or getattr(ns, "suite_pos", None),
        grid=ns.grid, seed=ns.seed, k=ns.k, theta=ns.theta, alpha1=ns.alpha1, alpha23=ns.alpha23,
        eta=ns.eta, p=ns.p, p1=ns.p1, p2=ns.p2, fixture=ns.fixture, trials=ns.trials, out=ns.out,
        fmt=ns.fmt, inputs=getattr(ns, "inputs", []), bench=bench or getattr(ns, "bench", None),
    )
    try:
        code, text = run(cfg)
    except UnknownFixture as exc:
        print(f"zmra: unknown fixture: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigInvalid, ComplexityExceedsGrid, ValueError) as exc:
        print(f"zmra: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
