"""Single entry point for the library: bound calculators, the constructive
solution, training runs, gradient probes, lemma verifiers, data
preparation, experiment orchestration, and CSV-to-SVG plotting.

Exit codes: 0 success; 1 validation/usage error; 2 a mathematical check did
not hold (reserved for that alone); 3 I/O or network failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - environment dependent
    import tomli as tomllib

from . import charts, experiments, mnist, probes, theory
from .models import (
    ClippedRelu,
    Tanh,
    WindowScheme,
    activation_from_name,
    init_cnn_theorem,
    init_fcn_perm_invariant,
    init_fcn_standard,
    init_lcn_theorem,
    init_scheme_from_name,
    save_params,
)
from .numerics import Rng, wht, wht_unnormalized
from .problems import (
    CapacityError,
    Parity,
    Uniform,
    random_kpattern,
    random_parity,
    random_permutation_fixing,
)
from .training import TrainConfig, train, trajectory_from_jsonl

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK_FAILED = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _fmt(x: float) -> str:
    """Console format: 6 significant digits (files get full precision)."""
    return f"{x:.6g}"


def _outdir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_config(args, parser_defaults: dict) -> None:
    """TOML config supplies values for flags left at their defaults;
    explicit flags win."""
    if not getattr(args, "config", None):
        return
    with open(args.config, "rb") as fh:
        cfg = tomllib.load(fh)
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise UsageError(f"config key {key!r} matches no flag")
        if getattr(args, attr) == parser_defaults.get(attr):
            setattr(args, attr, value)


# ---------------------------------------------------------------------------
# bounds

def _require(args, *names) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names
               if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"missing required flags: {', '.join(missing)}")


def _cmd_bounds(args) -> int:
    rows = []
    if args.which == "thm1":
        _require(args, "k", "q", "T")
        b = theory.thm1_bound(args.n, args.k, args.q, args.T, args.c)
        print(" ".join(_fmt(v) for v in
                       (b.drift_term, b.comparator_term, b.gradient_term, b.total)))
        rows = [("thm1_drift_term", b.drift_term),
                ("thm1_comparator_term", b.comparator_term),
                ("thm1_gradient_term", b.gradient_term),
                ("thm1_total", b.total)]
    elif args.which == "thm2":
        _require(args, "k", "q")
        b = theory.thm2_bounds(args.n, args.k, args.q, args.c)
        print(_fmt(b.w_bound), _fmt(b.u_bound))
        rows = [("thm2_w_bound", b.w_bound), ("thm2_u_bound", b.u_bound)]
    elif args.which == "drift":
        _require(args, "t", "eta", "q", "k")
        b = theory.drift_bounds(args.t, args.eta, args.q, args.n, args.k, args.c)
        print(_fmt(b.u_bound), _fmt(b.w_bound))
        rows = [("drift_u_bound", b.u_bound), ("drift_w_bound", b.w_bound)]
    else:  # corollary
        _require(args, "eps")
        p = theory.corollary_params(args.n, args.eps, args.const, args.k, args.delta)
        print(_fmt(p.q), _fmt(p.T), _fmt(p.sample_size))
        rows = [("corollary_q", p.q), ("corollary_T", p.T),
                ("corollary_sample_size", p.sample_size)]
    if args.save:
        out = _outdir(args) / f"bounds_{args.which}.csv"
        with open(out, "w", newline="") as fh:
            fh.write("name,value\n")
            for name, value in rows:
                fh.write(f"{name},{value!r}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# construct

def _cmd_construct(args) -> int:
    rng = Rng(args.seed)
    scheme = WindowScheme.boolean(args.n, args.k)
    params = init_cnn_theorem(rng.split(0), args.q, scheme)
    pattern = random_kpattern(rng.split(1), args.n, args.k)
    act = ClippedRelu(args.c)
    try:
        outcome = theory.verify_construction(params.W, params.b, pattern, scheme, act)
    except theory.InsufficientCoverage as err:
        print(f"construction impossible: {err}", file=sys.stderr)
        print(f"hint: q_threshold(k={args.k}, delta=0.05) = "
              f"{theory.q_threshold(args.k, 0.05)}", file=sys.stderr)
        return EXIT_USAGE
    exact = theory.verify_construction_exact(params.W, params.b, pattern, scheme)
    result = outcome["result"]
    print(f"jstar {result.jstar} norm {_fmt(result.norm)} "
          f"bound {_fmt(outcome['norm_bound'])}")
    print(f"float_hinge_loss {_fmt(outcome['hinge_loss'])} "
          f"accuracy {_fmt(outcome['accuracy'])} "
          f"exact_zero_loss {exact['exact_zero_loss']}")
    if args.save:
        out = _outdir(args)
        final = params.copy()
        final.U[...] = result.U
        save_params(out / "construct_params.json", final)
    if not (exact["exact_zero_loss"] and exact["exact_accuracy"]):
        raise CheckFailed("constructed readout does not reproduce the target")
    if outcome["accuracy"] != 1.0 or outcome["hinge_loss"] > 1e-12:
        raise CheckFailed("float forward pass disagrees with the construction")
    if result.norm > outcome["norm_bound"]:
        raise CheckFailed("constructed readout norm exceeds its bound")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

def _cmd_train(args) -> int:
    rng = Rng(args.seed)
    scheme = WindowScheme.boolean(args.n, args.k) if args.arch != "fcn" else None
    act = activation_from_name(args.activation, args.c)
    if args.arch == "cnn":
        params = init_cnn_theorem(rng.split(0), args.q, WindowScheme.boolean(args.n, args.k))
    elif args.arch == "lcn":
        params = init_lcn_theorem(rng.split(0), args.q, WindowScheme.boolean(args.n, args.k))
    else:
        params = (init_fcn_perm_invariant(rng.split(0), args.q, args.n, c=args.c)
                  if args.init == "perm_invariant"
                  else init_fcn_standard(rng.split(0), args.q, args.n))
    pattern = random_kpattern(rng.split(1), args.n, args.k)
    cfg = TrainConfig(
        steps=args.steps,
        eta=args.eta,
        eta_theorem=args.eta_theorem,
        batch="population",
        record_stride=args.record_stride,
        seed=args.seed,
        theorem_mode=args.theorem_mode,
    )
    comparator = None
    if args.comparator and args.arch == "cnn":
        built = theory.construct_ustar(params.W, params.b, pattern, scheme.positions)
        comparator = built.U
    final, traj = train(params, act, pattern.evaluate, Uniform(args.n), cfg,
                        scheme=scheme, comparator_u=comparator)
    traj.metadata["pattern_jstar"] = pattern.jstar
    out = _outdir(args)
    if args.format == "jsonl":
        path = out / f"{args.name}.jsonl"
        traj.to_jsonl(path)
    else:
        path = out / f"{args.name}.csv"
        traj.to_csv(path)
    save_params(out / f"{args.name}_params.json", final)
    last = traj.final()
    print(f"steps {traj.metadata['final_step']} loss {_fmt(last.loss)} "
          f"accuracy {_fmt(last.accuracy)} -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# probe

def _cmd_probe(args) -> int:
    out = _outdir(args)
    if args.which == "grad-norm":
        bounds = theory.thm2_bounds(args.n, args.k, args.q, args.c)
        target = Parity.consecutive(args.n, args.k)
        scheme = init_scheme_from_name(args.init_scheme, args.init_param)
        act = Tanh() if args.arch == "fcn" else ClippedRelu(args.c)
        w_est, u_est = probes.grad_norm_at_init(
            args.arch, scheme, target, args.n, args.k, args.q, args.c,
            draws=args.draws, act=act, rng=Rng(args.seed), threads=args.threads,
        )
        print(f"W: measured {_fmt(w_est.mean)} se {_fmt(w_est.se)} "
              f"bound {_fmt(bounds.w_bound)}")
        print(f"u: measured {_fmt(u_est.mean)} se {_fmt(u_est.se)} "
              f"bound {_fmt(bounds.u_bound)}")
        if args.arch == "fcn":
            if (w_est.mean > bounds.w_bound + 3 * w_est.se
                    or u_est.mean > bounds.u_bound + 3 * u_est.se):
                raise CheckFailed("measured gradient norm exceeds its bound")
        return EXIT_OK
    if args.which == "spectrum":
        rng = Rng(args.seed)
        w = rng.standard_normal(args.n) / np.sqrt(args.n)
        result = probes.gradient_fourier_spectrum(
            w, u_i=1.0, b_i=0.0, j=args.j, act=Tanh(), n=args.n
        )
        mass = result.spectrum.squared_mass()
        print(f"norm_sq {_fmt(result.norm_sq)} parseval_mass {_fmt(mass)}")
        if abs(mass - result.norm_sq) > 1e-9:
            raise CheckFailed("spectrum mass does not match the function norm")
        return EXIT_OK
    # decay sweep
    k_list = [int(v) for v in args.k_list.split(",")]
    rows = probes.hardness_decay_sweep(
        args.n, args.q, args.c, k_list, args.draws, args.seed,
        threads=args.threads,
    )
    path = out / "decay_sweep.csv"
    probes.write_sweep_csv(path, rows)
    for row in rows:
        print(f"k {row['k']} w_bound {_fmt(row['w_bound'])} "
              f"w_measured {_fmt(row['w_measured'])} "
              f"u_bound {_fmt(row['u_bound'])} u_measured {_fmt(row['u_measured'])}")
    bad = [r for r in rows
           if r["w_measured"] > r["w_bound"] + 3 * r["w_se"]
           or r["u_measured"] > r["u_bound"] + 3 * r["u_se"]]
    if bad:
        raise CheckFailed(f"bound violated at k = {[r['k'] for r in bad]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify

def _theorem_cnn_run(n, k, q, steps, seed, freeze_w):
    rng = Rng(seed)
    scheme = WindowScheme.boolean(n, k)
    params = init_cnn_theorem(rng.split(0), q, scheme)
    pattern = random_kpattern(rng.split(1), n, k)
    built = theory.construct_ustar(params.W, params.b, pattern, scheme.positions)
    frozen = frozenset({"W", "b"}) if freeze_w else frozenset({"b"})
    cfg = TrainConfig(steps=steps, eta_theorem=True, batch="population",
                      record_stride=1, seed=seed, frozen=frozen,
                      theorem_mode=True)
    _, traj = train(params, ClippedRelu(1.0), pattern.evaluate, Uniform(n), cfg,
                    scheme=scheme, comparator_u=built.U)
    return traj


def _cmd_verify(args) -> int:
    if args.which == "parseval":
        rng = Rng(args.seed)
        worst_mass, worst_rt = 0.0, 0.0
        for trial in range(args.trials):
            table = rng.split(trial).standard_normal(1 << args.n)
            spec = wht(table)
            worst_mass = max(worst_mass,
                             abs(spec.squared_mass() - float(np.mean(table**2))))
            back = wht_unnormalized(wht_unnormalized(table)) / (1 << args.n)
            worst_rt = max(worst_rt, float(np.max(np.abs(back - table))))
        print(f"parseval_worst {_fmt(worst_mass)} roundtrip_worst {_fmt(worst_rt)}")
        if worst_mass > 1e-9 or worst_rt > 1e-9:
            raise CheckFailed("transform identities violated")
        return EXIT_OK

    if args.which == "perm-identity":
        rng = Rng(args.seed)
        worst = 0.0
        for trial in range(args.trials):
            trial_rng = rng.split(trial)
            params = init_fcn_standard(trial_rng.split(0), args.q, args.n)
            params.u[...] = trial_rng.split(1).signs(args.q)
            k = int(trial_rng.split(2).integers(1, args.n))
            parity = random_parity(trial_rng.split(3), args.n, k)
            j = int(trial_rng.split(4).integers(1, args.n + 1))
            perm = random_permutation_fixing(trial_rng.split(5), args.n, j)
            report = theory.verify_permutation_identity(
                params, Tanh(), parity.mask, j, perm
            )
            worst = max(worst, report.measured)
        print(f"perm_identity_worst {_fmt(worst)} trials {args.trials}")
        if worst > 1e-10:
            raise CheckFailed("permutation identity violated")
        return EXIT_OK

    if args.which == "ogd":
        if args.trajectory:
            traj = trajectory_from_jsonl(args.trajectory)
            comparator_norm = traj.metadata.get("comparator_norm")
            if comparator_norm is None:
                raise UsageError("trajectory lacks comparator metadata")
            trace = theory.OgdTrace.from_trajectory(traj, comparator_norm)
            reports = [theory.verify_ogd_regret(trace)]
        else:
            reports = []
            for run in range(args.runs):
                traj = _theorem_cnn_run(args.n, args.k, args.q, args.steps,
                                        args.seed + run, freeze_w=True)
                trace = theory.OgdTrace.from_trajectory(
                    traj, traj.metadata["comparator_norm"])
                reports.append(theory.verify_ogd_regret(trace))
        for rep in reports:
            print(rep.to_text())
        if not all(r.passed for r in reports):
            raise CheckFailed("regret inequality violated")
        return EXIT_OK

    # drift
    if args.trajectory:
        traj = trajectory_from_jsonl(args.trajectory)
        trajs = [traj]
    else:
        trajs = [_theorem_cnn_run(args.n, args.k, args.q, args.steps,
                                  args.seed + run, freeze_w=False)
                 for run in range(args.runs)]
    all_pass = True
    for traj in trajs:
        for rep in theory.verify_drift(traj, args.n, args.k, args.q, args.c):
            print(rep.to_text())
            all_pass = all_pass and rep.passed
    if not all_pass:
        raise CheckFailed("drift bound violated")
    return EXIT_OK


# ---------------------------------------------------------------------------
# mnist

def _cmd_mnist(args) -> int:
    if args.which == "fetch":
        paths = mnist.fetch_mnist(args.cache_dir, offline=args.offline)
        for name, path in paths.items():
            print(f"{name} -> {path}")
        return EXIT_OK
    # build
    images, labels = mnist.load_mnist(args.cache_dir, args.split)
    rule = mnist.LabelRule(args.rule)
    ds = mnist.build_sequences(images, labels, args.n, rule, args.count,
                               Rng(args.seed))
    out = _outdir(args) / f"sequences_n{args.n}_{rule.value}_{args.split}.npz"
    np.savez_compressed(out, images=ds.images, labels=ds.labels,
                        classes=ds.classes)
    print(f"{len(ds)} examples -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiment

def _cmd_experiment(args) -> int:
    out = _outdir(args)
    seeds = [int(v) for v in args.seeds.split(",")]
    if args.which == "boolean":
        cells = experiments.run_boolean_separation(
            args.n, args.k, args.q, args.steps, seeds, args.eta, out,
            threads=args.threads,
        )
        for cell in cells:
            print(f"{cell.arch} seed {cell.seed} accuracy "
                  f"{_fmt(cell.final_accuracy)} steps {cell.steps_run}")
        return EXIT_OK
    # mnist-sequences
    if args.offline and not mnist.mnist_available(args.data_dir):
        raise mnist.MissingOffline(f"no MNIST files under {args.data_dir}")
    n_list = [int(v) for v in args.n_list.split(",")]
    curves = experiments.run_mnist_sequences(
        n_list, mnist.LabelRule(args.rule), args.epochs, out, args.data_dir,
        q=args.q, examples_per_epoch=args.examples_per_epoch, seeds=seeds,
    )
    for curve in curves:
        print(f"{curve.arch} n {curve.n} seed {curve.seed} final "
              f"{_fmt(curve.epoch_accuracy[-1])}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot

def _cmd_plot(args) -> int:
    style = charts.ChartStyle(title=args.title, x_label=args.x or "",
                              y_label=args.y or "")
    path = charts.emit_svg_lines(args.csv, args.out, style=style,
                                 x=args.x, y=args.y, series=args.series)
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

_COMMAND_DEFAULTS: dict[str, dict] = {}


def _register_defaults(name: str, subparser: argparse.ArgumentParser) -> None:
    _COMMAND_DEFAULTS[name] = {
        a.dest: a.default for a in subparser._actions if a.dest != "help"
    }


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default="results")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--offline", action="store_true")
    common.add_argument("--format", choices=("csv", "jsonl"), default="jsonl")

    parser = _Parser(prog="kpattern", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", parents=[common])
    p.add_argument("which", choices=("thm1", "thm2", "drift", "corollary"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--t", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--const", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--save", action="store_true",
                   help="also write full-precision CSV under --out-dir")
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("construct", parents=[common])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--save", action="store_true")
    p.set_defaults(func=_cmd_construct)

    p = sub.add_parser("train", parents=[common])
    p.add_argument("--arch", choices=("cnn", "lcn", "fcn"), default="cnn")
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--q", type=int, default=128)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--eta", type=float)
    p.add_argument("--eta-theorem", action="store_true")
    p.add_argument("--activation", default="clipped_relu")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--init", choices=("standard", "perm_invariant"),
                   default="standard", help="fcn first-layer init")
    p.add_argument("--theorem-mode", action="store_true",
                   help="freeze biases and require a bounded activation")
    p.add_argument("--record-stride", type=int, default=1)
    p.add_argument("--comparator", action="store_true",
                   help="record the constructed readout's loss per step (cnn)")
    p.add_argument("--name", default="trajectory")
    p.add_argument("--config", help="TOML file supplying flag defaults")
    p.set_defaults(func=_cmd_train)
    _register_defaults("train", p)

    p = sub.add_parser("probe", parents=[common])
    p.add_argument("which", choices=("grad-norm", "spectrum", "decay"))
    p.add_argument("--arch", choices=("cnn", "lcn", "fcn"), default="fcn")
    p.add_argument("--init-scheme", choices=("gaussian", "rademacher"),
                   default="gaussian")
    p.add_argument("--init-param", type=float, default=1.0)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--q", type=int, default=8)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--draws", type=int, default=100)
    p.add_argument("--j", type=int, default=1)
    p.add_argument("--k-list", default="1,2,3")
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("verify", parents=[common])
    p.add_argument("which", choices=("ogd", "perm-identity", "parseval", "drift"))
    p.add_argument("--trajectory", help="JSONL trajectory to check")
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--q", type=int, default=128)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("mnist", parents=[common])
    p.add_argument("which", choices=("fetch", "build"))
    p.add_argument("--cache-dir", default="mnist_cache")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--rule", choices=[r.value for r in mnist.LabelRule],
                   default="central")
    p.add_argument("--count", type=int, default=1000)
    p.set_defaults(func=_cmd_mnist)

    p = sub.add_parser("experiment", parents=[common])
    p.add_argument("which", choices=("boolean", "mnist-sequences"))
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--q", type=int, default=128)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--n-list", default="5,13")
    p.add_argument("--rule", choices=[r.value for r in mnist.LabelRule],
                   default="central")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--examples-per-epoch", type=int, default=10000)
    p.add_argument("--data-dir", default="mnist_cache")
    p.add_argument("--config", help="TOML file supplying flag defaults")
    p.set_defaults(func=_cmd_experiment)
    _register_defaults("experiment", p)

    p = sub.add_parser("plot", parents=[common])
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--x")
    p.add_argument("--y")
    p.add_argument("--series")
    p.add_argument("--title", default="")
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as err:  # --help
        return int(err.code or 0)
    if getattr(args, "config", None):
        try:
            _apply_config(args, _COMMAND_DEFAULTS.get(args.command, {}))
        except UsageError as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_USAGE
        except OSError as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_IO
    try:
        return args.func(args)
    except CheckFailed as err:
        print(f"CHECK FAILED: {err}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except (UsageError, ValueError, CapacityError, theory.InsufficientCoverage) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (mnist.NetworkError, mnist.ChecksumMismatch, mnist.MissingOffline,
            OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
