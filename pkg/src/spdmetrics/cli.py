"""Command-line interface.

Subcommands: gen-data, train, eval, geometry, check-grad, bench. Every
command is deterministic given --seed. A plain key=value config file can
supply defaults; explicit flags override it. Exit codes: 0 success,
1 check failure, 2 usage or config error, 3 numerical failure.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import datasets as ds
from . import differentials as diff
from . import gradients as grad
from . import network as net
from .core import mgexp, mlog, sym_eig
from .exceptions import SpdMetricsError, InvalidInput, ConfigError
from .geometry import make_metric
from .validation import symmetrize

EXIT_OK = 0
EXIT_CHECK_FAILURE = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _read_config_file(path, known_keys):
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in known_keys:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def _apply_config(args_ns, argv):
    """Fill unset flags of the chosen subcommand from --config; flags win."""
    if not getattr(args_ns, "config", None):
        return args_ns
    actions = args_ns._subparser._actions
    known = {a.dest for a in actions if a.option_strings}
    raw = _read_config_file(args_ns.config, known)
    explicit = set()
    for action in actions:
        for opt in action.option_strings:
            if opt in argv:
                explicit.add(action.dest)
    for key, value in raw.items():
        if key in explicit:
            continue
        action = next(a for a in actions if a.dest == key)
        if action.type is not None:
            value = action.type(value)
        setattr(args_ns, key, value)
    return args_ns


def _parse_dims(text):
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError as err:
        raise ConfigError(f"bad dims {text!r}") from err
    return dims


def _parse_metric(text, dim):
    name, _, rest = text.partition(":")
    if name.lower() != "alem":
        return make_metric(name)
    if not rest:
        raise ConfigError("alem metric needs ':<scalar>' or ':<alpha file>'")
    try:
        alpha = float(rest)
    except ValueError:
        alpha = np.loadtxt(rest, dtype=np.float64).ravel()
    return make_metric("alem", alpha=alpha, dim=dim)


def _fmt(x):
    return f"{x:.17g}"


def _emit(args, text):
    """Print a command's report, teeing it to --out when given."""
    print(text)
    if getattr(args, "out", None):
        Path(args.out).write_text(text + "\n")


# ---------------------------------------------------------------- commands


def cmd_gen_data(args):
    spec = ds.SyntheticSpec(
        dim=args.dim,
        class_count=args.classes,
        samples_per_class=args.samples_per_class,
        eigenvalue_spread=args.spread,
        rotation_noise=args.rotation_noise,
        seed=args.seed,
    )
    data = ds.generate_synthetic(spec)
    ds.save(data, args.out)
    print(
        f"dim={data.dim} classes={data.class_count} samples={len(data)} "
        f"path={args.out}"
    )
    return EXIT_OK


def cmd_train(args):
    data = ds.load(args.data, repair=args.repair)
    if args.eval_data:
        train_set, eval_set = data, ds.load(args.eval_data, repair=args.repair)
        if eval_set.dim != data.dim:
            raise ConfigError("train and eval dims differ")
    else:
        train_set, eval_set = ds.train_test_split(data, args.split, args.seed)
    dims = _parse_dims(args.dims)
    if dims[0] != data.dim:
        raise ConfigError(f"dims start at {dims[0]} but the data is {data.dim}-dim")
    config = net.NetworkConfig(
        dims=dims,
        num_classes=data.class_count,
        alog_mode=args.alog,
        reeig_eps=args.reeig_eps,
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = net.init_network(config)
    try:
        state, rows = net.train(state, train_set, eval_set, threads=args.threads)
    except net.TrainingDiverged as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    (out_dir / "metrics.csv").write_text(net.metrics_to_csv(rows))
    net.save_checkpoint(state, out_dir / "model.spdn")
    final = rows[-1] if rows else (0, float("nan"), 0.0, 0.0, 0.0)
    print(
        f"epochs={state.epoch} train_acc={final[2]!r} eval_acc={final[3]!r} "
        f"out={out_dir}"
    )
    return EXIT_OK


def cmd_eval(args):
    state = net.load_checkpoint(args.model)
    data = ds.load(args.data, repair=args.repair)
    if data.dim != state.config.dims[0]:
        raise ConfigError(
            f"model expects dim {state.config.dims[0]}, data is {data.dim}"
        )
    result = net.evaluate(state, data)
    lines = ["metric,value"]
    lines.append(f"accuracy,{result['accuracy']!r}")
    lines.append(f"loss,{result['loss']!r}")
    confusion = result["confusion"]
    for c in range(confusion.shape[0]):
        total = int(confusion[c].sum())
        recall = confusion[c, c] / total if total else 0.0
        lines.append(f"recall_class_{c},{float(recall)!r}")
    _emit(args, "\n".join(lines))
    return EXIT_OK


def cmd_geometry(args):
    mats = [ds.load_matrix_text(p) for p in args.matrices]
    if not mats:
        raise ConfigError("geometry needs at least one matrix file")
    metric = _parse_metric(args.metric, mats[0].shape[0])
    if args.op == "distance":
        if len(mats) != 2:
            raise ConfigError("distance needs exactly two matrices")
        text = _fmt(metric.distance(mats[0], mats[1]))
    elif args.op == "mean":
        weights = None
        if args.weights:
            weights = [float(w) for w in args.weights.split(",")]
        M = metric.weighted_frechet_mean(mats, weights)
        text = "\n".join(" ".join(_fmt(v) for v in row) for row in M)
    elif args.op == "geodesic":
        if len(mats) != 2:
            raise ConfigError("geodesic needs exactly two matrices")
        M = metric.geodesic(mats[0], mats[1], args.t)
        text = "\n".join(" ".join(_fmt(v) for v in row) for row in M)
    else:
        raise ConfigError(f"unknown geometry op {args.op!r}")
    _emit(args, text)
    return EXIT_OK


def _check_grad_suite(seed, dims=(3, 4, 6)):
    """Finite-difference audit of every analytic derivative in the package.

    Yields (name, max relative error, threshold) triples.
    """
    rng = np.random.default_rng(seed)

    def rand_spd(n):
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        eig = np.exp(np.sort(rng.uniform(0.2, 2.0, n))[::-1] + np.linspace(0.4, 0, n))
        return symmetrize((Q * eig) @ Q.T)

    def rand_sym(n, scale=1.0):
        A = rng.standard_normal((n, n)) * scale
        return symmetrize(A)

    def rand_alpha(n):
        return np.exp(np.sort(rng.uniform(0.5, 1.3, n)))

    for n in dims:
        S, V, alpha = rand_spd(n), rand_sym(n), rand_alpha(n)
        an = diff.d_mlog(S, V, alpha)
        fd = diff.fd_differential(lambda M: mlog(symmetrize(M), alpha), S, V)
        yield f"d_mlog dim {n}", diff.relative_error(fd, an), 1e-5

        X = rand_sym(n, 0.6)
        an = diff.d_mgexp(X, V, alpha)
        fd = diff.fd_differential(lambda M: mgexp(symmetrize(M), alpha), X, V)
        yield f"d_mgexp dim {n}", diff.relative_error(fd, an), 1e-5

        ser = diff.d_mgexp_series(X, V, alpha, 30)
        yield f"d_mgexp_series dim {n}", diff.relative_error(ser, an), 1e-8

        from .core import cln

        an = diff.d_cln(S, V)
        fd = diff.fd_differential(lambda M: cln(symmetrize(M)), S, V)
        yield f"d_cln dim {n}", diff.relative_error(fd, an), 1e-5

        G = rand_sym(n)
        w = rng.uniform(0.5, 2.0, n)
        dec = sym_eig(S)
        gS = grad.eig_fn_backward(dec, grad.weighted_log_spec(w), G)

        def probe(M):
            d = sym_eig(symmetrize(M))
            return float(np.sum(G * (d.U @ np.diag(w * np.log(d.sigma)) @ d.U.T)))

        fd_dir = (probe(S + 1e-6 * V) - probe(S - 1e-6 * V)) / 2e-6
        an_dir = float(np.sum(gS * V))
        yield (
            f"eig_fn_backward dim {n}",
            abs(an_dir - fd_dir) / max(1.0, abs(fd_dir)),
            1e-5,
        )

        gS2, gA = grad.alog_backward(S, w, G)
        errs = []
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1e-6

            def probe_a(delta):
                d = sym_eig(S)
                return float(
                    np.sum(G * (d.U @ np.diag((w + delta) * np.log(d.sigma)) @ d.U.T))
                )

            fd_i = (probe_a(e) - probe_a(-e)) / 2e-6
            errs.append(abs(fd_i - gA[i]) / max(1.0, abs(fd_i)))
        yield f"alog_backward grad_A dim {n}", max(errs), 1e-5

    # full-network parameter gradients on the two toy architectures
    for arch, mode in (((6, 3), "mul"), ((6, 4, 3), "div")):
        cfg = net.NetworkConfig(dims=arch, num_classes=3, alog_mode=mode, seed=seed)
        state = net.init_network(cfg)
        state.alog_param = state.alog_param + rng.uniform(-0.2, 0.2, arch[-1])
        state.clf_weight = rng.standard_normal(state.clf_weight.shape) * 0.3
        X = np.stack([rand_spd(arch[0]) for _ in range(4)])
        y = rng.integers(0, 3, 4)
        out = net._forward_backward(state, X, y)

        def loss():
            return float(net._forward_backward(state, X, y)["losses"].mean())

        worst = 0.0
        h = 1e-6
        g = out["grad_alog"].mean(axis=0)
        for i in range(arch[-1]):
            old = float(state.alog_param[i])
            p = state.alog_param.copy()
            p[i] = old + h
            state.alog_param = p
            lp = loss()
            p = state.alog_param.copy()
            p[i] = old - h
            state.alog_param = p
            lm = loss()
            p = state.alog_param.copy()
            p[i] = old
            state.alog_param = p
            worst = max(worst, abs((lp - lm) / (2 * h) - g[i]))
        for k, W in enumerate(state.bimap_weights):
            Gk = out["grad_bimaps"][k].mean(axis=0)
            for i in range(W.shape[0]):
                for j in range(W.shape[1]):
                    old = W[i, j]
                    W[i, j] = old + h
                    lp = loss()
                    W[i, j] = old - h
                    lm = loss()
                    W[i, j] = old
                    worst = max(worst, abs((lp - lm) / (2 * h) - Gk[i, j]))
        name = "x".join(str(d) for d in arch)
        yield f"network {name} {mode}", worst, 1e-4


def cmd_check_grad(args):
    if args.inject_fault:
        grad.set_fault_injection(args.inject_fault)
    try:
        failures = 0
        lines = [f"{'check':34s} {'max rel err':>12s} {'threshold':>10s} result"]
        for name, err, threshold in _check_grad_suite(args.seed):
            ok = err <= threshold
            failures += 0 if ok else 1
            lines.append(
                f"{name:34s} {err:12.3e} {threshold:10.0e} "
                f"{'pass' if ok else 'FAIL'}"
            )
        _emit(args, "\n".join(lines))
        return EXIT_OK if failures == 0 else EXIT_CHECK_FAILURE
    finally:
        grad.set_fault_injection(None)


def cmd_bench(args):
    dims = _parse_dims(args.dims)
    rng = np.random.default_rng(args.seed)
    lines = ["dim,forward_ms,backward_ms"]
    for d in dims:
        cfg = net.NetworkConfig(
            dims=(d, max(2, d // 2)), num_classes=3, alog_mode="mul", seed=args.seed
        )
        state = net.init_network(cfg)
        A = rng.standard_normal((args.batch, d, d))
        X = A @ np.swapaxes(A, -1, -2) + d * np.eye(d)
        y = rng.integers(0, 3, args.batch)
        net._forward_backward(state, X, y)  # warm-up
        t0 = time.perf_counter()
        for _ in range(args.repeats):
            net._forward_backward(state, X)
        fwd = (time.perf_counter() - t0) / args.repeats * 1e3
        t0 = time.perf_counter()
        for _ in range(args.repeats):
            net._forward_backward(state, X, y)
        both = (time.perf_counter() - t0) / args.repeats * 1e3
        lines.append(f"{d},{fwd:.3f},{max(both - fwd, 0.0):.3f}")
    _emit(args, "\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spdmetrics",
        description="Pullback-metric geometry and trainable networks on SPD matrices",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_shared(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="key=value defaults file")
        p.set_defaults(_subparser=p)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    add_shared(p)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--samples-per-class", type=int, default=30)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--rotation-noise", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a network on a dataset file")
    add_shared(p)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", default=None)
    p.add_argument("--split", type=float, default=0.5,
                   help="held-out fraction when no --eval-data is given")
    p.add_argument("--dims", default="10,5")
    p.add_argument("--alog", default="mul", choices=net.ALOG_MODES)
    p.add_argument("--reeig-eps", type=float, default=1e-4)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--batch-size", type=int, default=30)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--repair", default="reject", choices=("reject", "jitter"))
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    add_shared(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--repair", default="reject", choices=("reject", "jitter"))
    p.add_argument("--out", default=None, help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("geometry", help="distance / mean / geodesic queries")
    add_shared(p)
    p.add_argument("--metric", default="lem",
                   help="lem | lcm | alem:<scalar or alpha file>")
    p.add_argument("--op", default="distance",
                   choices=("distance", "mean", "geodesic"))
    p.add_argument("--t", type=float, default=0.5, help="geodesic parameter")
    p.add_argument("--weights", default=None, help="comma-separated mean weights")
    p.add_argument("--out", default=None, help="also write the result here")
    p.add_argument("matrices", nargs="+", help="matrix text files")
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("check-grad", help="finite-difference self check")
    add_shared(p)
    p.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    p.add_argument("--out", default=None, help="also write the table here")
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("bench", help="time forward/backward passes")
    add_shared(p)
    p.add_argument("--dims", default="16,64,128")
    p.add_argument("--batch", type=int, default=30)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", default=None, help="also write the timings here")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config(args, argv)
        return args.func(args)
    except (ConfigError, InvalidInput) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except SpdMetricsError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OverflowError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
