"""Command-line entry point.

Subcommands: gen-bvp, gen-newton, train, fine-tune, bench-noise,
bench-newton, gradcheck. Every option can also be supplied through a JSON
config file (--config); explicit flags win over the file, which wins over
defaults. Each run writes its fully resolved configuration next to its
outputs so the run can be reproduced from that file alone.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
The ALGEBRAFORMER_SEED environment variable supplies the seed when no
--seed is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import bvp, model, newton, training
from .linalg import LinAlgError
from .model import FormatError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _env_seed() -> int:
    raw = os.environ.get("ALGEBRAFORMER_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"ALGEBRAFORMER_SEED must be an integer, got {raw!r}")


def _resolve(defaults: dict, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags."""
    merged = dict(defaults)
    given = vars(args)
    config_path = given.pop("config", None)
    if config_path is not None:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {config_path}: {exc}")
        unknown = set(loaded) - set(defaults) - {"command"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.update({k: v for k, v in loaded.items() if k != "command"})
    merged.update(given)
    if "seed" in merged and merged["seed"] is None:
        merged["seed"] = _env_seed()
    missing = [k for k, v in merged.items() if v is None]
    if missing:
        raise UsageError(f"missing required options: {', '.join('--' + m for m in missing)}")
    return merged


def _write_resolved(cfg: dict, command: str, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {"command": command, **{k: v for k, v in cfg.items() if k != "threads"}}
    record["threads"] = cfg.get("threads", 1)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(record, sort_keys=True, indent=2) + "\n"
    )


def _add_common(p: _Parser, seed: bool = True):
    p.add_argument("--config", default=None, help="JSON file with option values")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                   help="worker threads (1 = serial reference; results do not depend on it)")
    if seed:
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS)


def _build_parser() -> _Parser:
    parser = _Parser(prog="algebraformer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-bvp", help="generate labeled spectral BVP systems")
    p.add_argument("--kind", choices=[k.value for k in bvp.EquationKind], default=argparse.SUPPRESS)
    p.add_argument("--count", type=int, default=argparse.SUPPRESS)
    p.add_argument("--dim", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS)
    _add_common(p)

    p = sub.add_parser("gen-newton", help="generate Newton trajectory pairs")
    for flag, typ in (("--count", int), ("--m", int), ("--n", int), ("--p", float), ("--tol", float)):
        p.add_argument(flag, type=typ, default=argparse.SUPPRESS)
    p.add_argument("--max-iter", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS)
    _add_common(p)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", default=argparse.SUPPRESS)
    p.add_argument("--test-data", dest="test_data", default=argparse.SUPPRESS)
    p.add_argument("--preset", choices=["paper", "desk"], default=argparse.SUPPRESS)
    p.add_argument("--epochs", type=int, default=argparse.SUPPRESS)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=argparse.SUPPRESS)
    p.add_argument("--train-noise", dest="train_noise", type=float, default=argparse.SUPPRESS)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS)
    _add_common(p)

    p = sub.add_parser("fine-tune", help="continue training a checkpoint at a fixed rate")
    p.add_argument("--from", dest="from_ckpt", default=argparse.SUPPRESS)
    p.add_argument("--data", default=argparse.SUPPRESS)
    p.add_argument("--test-data", dest="test_data", default=argparse.SUPPRESS)
    p.add_argument("--epochs", type=int, default=argparse.SUPPRESS)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS)
    _add_common(p)

    p = sub.add_parser("bench-noise", help="noise-robustness table: model vs LU/QR/SVD")
    p.add_argument("--model", default=argparse.SUPPRESS)
    p.add_argument("--data", default=argparse.SUPPRESS)
    p.add_argument("--levels", default=argparse.SUPPRESS, help="comma-separated noise levels")
    p.add_argument("--rcond", type=float, default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS)
    _add_common(p)

    p = sub.add_parser("bench-newton", help="exact vs learned-direction Newton timings")
    p.add_argument("--model", default=argparse.SUPPRESS)
    for flag, typ in (("--m", int), ("--n", int), ("--p", float), ("--trials", int),
                      ("--tol", float), ("--max-iter", int)):
        dest = flag.lstrip("-").replace("-", "_")
        p.add_argument(flag, dest=dest, type=typ, default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS)
    _add_common(p)

    p = sub.add_parser("gradcheck", help="finite-difference checks for every derivative")
    p.add_argument("--op", default=argparse.SUPPRESS, help="restrict to one op")
    _add_common(p, seed=False)
    return parser


# ---------------------------------------------------------------- gen-bvp

GEN_BVP_DEFAULTS = {"kind": None, "count": None, "dim": None, "seed": None, "out": None,
                    "threads": 1}


def _run_gen_bvp(cfg: dict) -> int:
    kind = bvp.EquationKind.parse(cfg["kind"])
    if cfg["dim"] < 4:
        raise UsageError("--dim must be >= 4")
    if cfg["count"] < 0:
        raise UsageError("--count must be >= 0")
    samples, rejections = bvp.generate_dataset(kind, cfg["count"], cfg["dim"], cfg["seed"])
    out = Path(cfg["out"])
    bvp.save_dataset(out, samples, kind, cfg["dim"], cfg["seed"], rejections)
    _write_resolved(cfg, "gen-bvp", out)
    median = float(np.median([s.cond for s in samples])) if samples else float("nan")
    print(f"wrote {len(samples)} samples to {out} (rejections: {rejections})")
    print(f"median condition number: {median:.6e}")
    return 0


# ---------------------------------------------------------------- gen-newton

GEN_NEWTON_DEFAULTS = {"count": None, "m": None, "n": None, "p": None, "tol": 1e-5,
                       "max_iter": 100, "seed": None, "out": None, "threads": 1}


def _run_gen_newton(cfg: dict) -> int:
    ds = newton.generate_trajectories(
        cfg["count"], cfg["m"], cfg["n"], cfg["p"], cfg["tol"], cfg["seed"],
        max_iter=cfg["max_iter"],
    )
    out = Path(cfg["out"])
    newton.save_trajectories(out, ds)
    _write_resolved(cfg, "gen-newton", out)
    mean_len = ds.targets.shape[0] / ds.converged_count if ds.converged_count else float("nan")
    print(f"wrote {ds.targets.shape[0]} pairs from {ds.converged_count}/{ds.count} "
          f"converged trajectories to {out}")
    print(f"mean trajectory length: {mean_len:.3f}")
    return 0


# ---------------------------------------------------------------- train / fine-tune

TRAIN_DEFAULTS = {"data": None, "test_data": "", "preset": "desk", "epochs": None,
                  "batch_size": 0, "train_noise": 0.0, "checkpoint_every": 0,
                  "seed": None, "out": None, "threads": 1}
DESK_LR_MAX = 3e-3
DESK_LR_MIN = 3e-4


def _load_split(data_dir: str, test_dir: str, seed: int, train_noise: float = 0.0):
    samples, manifest = bvp.load_dataset(data_dir)
    if test_dir:
        eval_samples, _ = bvp.load_dataset(test_dir)
    else:
        n_eval = len(samples) // 10 if len(samples) >= 10 else 0
        eval_samples = samples[len(samples) - n_eval :]
        samples = samples[: len(samples) - n_eval]
    if train_noise > 0.0:
        noisy = []
        for i, s in enumerate(samples):
            rng = np.random.default_rng(np.random.SeedSequence((seed, 7, i)))
            noisy.append(
                bvp.LinearSystemSample(
                    A=s.A, b=bvp.add_noise(s.b, train_noise, rng), x=s.x,
                    cond=s.cond, kind=s.kind, seed=s.seed,
                )
            )
        samples = noisy
    dim = manifest["n"]
    train_x, train_y = model.encode_systems(samples, max_tokens=dim)
    if eval_samples:
        eval_x, eval_y = model.encode_systems(eval_samples, max_tokens=dim)
    else:
        eval_x = eval_y = None
    return train_x, train_y, eval_x, eval_y, dim


def _model_config(preset: str, token_dim: int, max_tokens: int) -> model.ModelConfig:
    if preset == "paper":
        return model.paper_config(token_dim=token_dim, max_tokens=max_tokens)
    return model.desk_config(token_dim=token_dim, max_tokens=max_tokens)


def _run_train(cfg: dict) -> int:
    train_x, train_y, eval_x, eval_y, dim = _load_split(
        cfg["data"], cfg["test_data"], cfg["seed"], cfg["train_noise"]
    )
    mcfg = _model_config(cfg["preset"], dim + 1, dim)
    batch = cfg["batch_size"] or (64 if cfg["preset"] == "desk" else 128)
    if cfg["preset"] == "desk":
        # the desk budget is ~4k optimizer steps, so the step size scales up;
        # the default 1e-4 -> 1e-5 schedule assumes the full 400-epoch budget
        tcfg = training.TrainConfig(epochs=cfg["epochs"], batch_size=batch,
                                    lr_max=DESK_LR_MAX, lr_min=DESK_LR_MIN, seed=cfg["seed"])
    else:
        tcfg = training.TrainConfig(epochs=cfg["epochs"], batch_size=batch, seed=cfg["seed"])
    out = Path(cfg["out"])
    _write_resolved(cfg, "train", out)
    weights, log = training.train(
        mcfg, tcfg, train_x, train_y, eval_x, eval_y,
        out_dir=out, checkpoint_every=cfg["checkpoint_every"],
    )
    if log.rows:
        last = log.rows[-1]
        print(f"final train loss {last.train_loss:.6e}, test mse {last.test_mse:.6e}")
    print(f"saved model to {out / 'model.bin'}")
    return 0


FINE_TUNE_DEFAULTS = {"from_ckpt": None, "data": None, "test_data": "", "epochs": None,
                      "batch_size": 64, "seed": None, "out": None, "threads": 1}


def _run_fine_tune(cfg: dict) -> int:
    pretrained = model.load_weights(cfg["from_ckpt"])
    train_x, train_y, eval_x, eval_y, dim = _load_split(cfg["data"], cfg["test_data"], cfg["seed"])
    if dim + 1 != pretrained.config.token_dim:
        raise FormatError(
            f"checkpoint expects token width {pretrained.config.token_dim}, dataset gives {dim + 1}"
        )
    tcfg = training.TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                                seed=cfg["seed"], fine_tune=True)
    out = Path(cfg["out"])
    _write_resolved(cfg, "fine-tune", out)
    weights, log = training.fine_tune(
        pretrained, train_x, train_y, cfg["epochs"], eval_x, eval_y, tcfg, out_dir=out
    )
    if log.rows:
        print(f"final test mse {log.rows[-1].test_mse:.6e}")
    print(f"saved model to {out / 'model.bin'}")
    return 0


# ---------------------------------------------------------------- bench-noise

BENCH_NOISE_DEFAULTS = {"model": None, "data": None, "levels": "1e-4,1e-3,1e-2,1e-1",
                        "rcond": 1e-15, "seed": None, "out": None, "threads": 1}


def _run_bench_noise(cfg: dict) -> int:
    weights = model.load_weights(cfg["model"])
    samples, manifest = bvp.load_dataset(cfg["data"])
    if manifest["n"] != weights.config.max_tokens:
        raise FormatError(
            f"model handles {weights.config.max_tokens}-dim systems, dataset is {manifest['n']}-dim"
        )
    try:
        levels = [float(s) for s in str(cfg["levels"]).split(",") if s != ""]
    except ValueError:
        raise UsageError(f"cannot parse --levels {cfg['levels']!r}")
    rows = training.noise_benchmark(weights, samples, levels, rcond=cfg["rcond"], seed=cfg["seed"])
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    training.write_benchmark_csv(rows, out)
    _write_resolved(cfg, "bench-noise", out.parent)
    for r in rows:
        print(f"level {r['level']:.3e}: model {r['model']:.3e} lu {r['lu']:.3e} "
              f"qr {r['qr']:.3e} svd {r['svd']:.3e}")
    return 0


# ---------------------------------------------------------------- bench-newton

BENCH_NEWTON_DEFAULTS = {"model": None, "m": 500, "n": 20, "p": 6.0, "trials": 5,
                         "tol": 1e-5, "max_iter": 100, "seed": None, "out": None, "threads": 1}


def _run_bench_newton(cfg: dict) -> int:
    weights = model.load_weights(cfg["model"])
    if weights.config.token_dim != 2:
        raise FormatError("bench-newton needs a state-encoding model (token width 2)")
    if weights.config.max_tokens < cfg["n"]:
        raise FormatError(
            f"model handles up to {weights.config.max_tokens} unknowns, requested {cfg['n']}"
        )
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    first_latency = None
    rows = []
    for trial in range(cfg["trials"]):
        prob = newton.sample_problem(
            cfg["m"], cfg["n"], cfg["p"], newton.problem_seed(cfg["seed"], trial)
        )
        for method, provider in (("exact", newton.ExactSolve()),
                                 ("learned", newton.LearnedDirection(weights))):
            traj, timing = newton.accelerated_newton(
                prob, provider, tol=cfg["tol"], max_iter=cfg["max_iter"]
            )
            if method == "learned" and first_latency is None:
                first_latency = timing["first_direction_seconds"]
            rows.append([method, trial, len(traj.directions), repr(traj.objectives[-1]),
                         traj.converged, repr(timing["total_seconds"])])
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "trial", "iterations", "final_objective", "converged", "seconds"])
        writer.writerows(rows)
    _write_resolved(cfg, "bench-newton", out.parent)
    print(f"wrote {len(rows)} rows to {out}")
    if first_latency is not None:
        print(f"first learned-direction latency: {first_latency:.6f} s")
    return 0


# ---------------------------------------------------------------- gradcheck

GRADCHECK_DEFAULTS = {"op": "", "threads": 1}
GRADCHECK_TOL = 1e-5
HESSIAN_FD_TOL = 1e-4


def _check_unary(op):
    def run():
        rng = np.random.default_rng(11)
        x = rng.normal(0.0, 1.0, (3, 4))
        return ad.gradcheck(lambda t: ad.mse_loss(op(t), np.zeros((3, 4))), x)
    return run


def _fd_rel_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - fd) / (np.abs(analytic) + np.abs(fd) + 1e-8)))


def _sane_point(prob, seed: int) -> np.ndarray:
    """A point whose residuals stay clear of the Hessian smoothing region."""
    rng = np.random.default_rng(seed)
    while True:
        x = rng.normal(0.0, 1.0, prob.n)
        if np.min(np.abs(prob.A @ x - prob.b)) > 1e-3:
            return x


def _newton_grad_check(p_val: float):
    def run():
        prob = newton.sample_problem(30, 6, p_val, seed=41)
        x = _sane_point(prob, 42)
        g = newton.gradient(prob, x)
        fd = np.zeros(prob.n)
        for i in range(prob.n):
            e = np.zeros(prob.n)
            e[i] = 1e-6
            fd[i] = (newton.objective(prob, x + e) - newton.objective(prob, x - e)) / 2e-6
        return _fd_rel_error(g, fd)
    return run


def _newton_hess_check(p_val: float):
    def run():
        prob = newton.sample_problem(30, 6, p_val, seed=43)
        x = _sane_point(prob, 44)
        H = newton.hessian(prob, x)
        fd = np.zeros_like(H)
        for i in range(prob.n):
            e = np.zeros(prob.n)
            e[i] = 1e-6
            fd[:, i] = (newton.gradient(prob, x + e) - newton.gradient(prob, x - e)) / 2e-6
        return float(np.linalg.norm(H - fd) / np.linalg.norm(H))
    return run


def _gradcheck_suite() -> dict:
    """name -> (runner, tolerance); runners return a max relative error."""
    rng = np.random.default_rng(5)
    W = rng.normal(size=(4, 3))
    bias_base = rng.normal(size=(4, 5))
    target34 = rng.normal(size=(3, 4))

    checks = {
        "matmul": (lambda: ad.gradcheck(
            lambda t: ad.mse_loss(ad.matmul(t, W), np.zeros((2, 5, 3))),
            np.random.default_rng(1).normal(size=(2, 5, 4))), GRADCHECK_TOL),
        "add": (lambda: ad.gradcheck(
            lambda t: ad.mse_loss(ad.add(bias_base, t), np.zeros((4, 5))),
            np.random.default_rng(2).normal(size=(5,))), GRADCHECK_TOL),
        "mul_scalar": (lambda: ad.gradcheck(
            lambda t: ad.mse_loss(ad.mul_scalar(t, -1.7), target34),
            np.random.default_rng(3).normal(size=(3, 4))), GRADCHECK_TOL),
        "transpose": (lambda: ad.gradcheck(
            lambda t: ad.mse_loss(ad.transpose_last(t), np.zeros((4, 3))),
            np.random.default_rng(4).normal(size=(3, 4))), GRADCHECK_TOL),
        "layer_norm": (lambda: ad.gradcheck(
            lambda t: ad.mse_loss(
                ad.layer_norm(t, np.full(4, 1.3), np.full(4, 0.2)), target34),
            np.random.default_rng(6).normal(size=(3, 4))), GRADCHECK_TOL),
        "softmax": (_check_unary(ad.softmax_last_axis), GRADCHECK_TOL),
        "gelu": (_check_unary(ad.gelu), GRADCHECK_TOL),
        "mse_loss": (lambda: ad.gradcheck(
            lambda t: ad.mse_loss(t, target34),
            np.random.default_rng(7).normal(size=(3, 4))), GRADCHECK_TOL),
    }
    for p_val in (1.5, 2.0, 3.0, 6.0):
        checks[f"newton_gradient_p{p_val}"] = (_newton_grad_check(p_val), GRADCHECK_TOL)
        checks[f"newton_hessian_p{p_val}"] = (_newton_hess_check(p_val), HESSIAN_FD_TOL)
    return checks


def _run_gradcheck(cfg: dict) -> int:
    checks = _gradcheck_suite()
    wanted = cfg["op"]
    if wanted:
        matched = {k: v for k, v in checks.items() if wanted in k}
        if not matched:
            raise UsageError(f"no derivative check matches --op {wanted!r}")
        checks = matched
    failures = 0
    for name, (run, tol) in checks.items():
        err = run()
        ok = err < tol
        failures += not ok
        print(f"{name:24s} max rel error {err:.3e}  (tol {tol:.0e})  {'ok' if ok else 'FAIL'}")
    if failures:
        print(f"{failures} derivative check(s) failed", file=sys.stderr)
        return 3
    return 0


RUNNERS = {
    "gen-bvp": (GEN_BVP_DEFAULTS, _run_gen_bvp),
    "gen-newton": (GEN_NEWTON_DEFAULTS, _run_gen_newton),
    "train": (TRAIN_DEFAULTS, _run_train),
    "fine-tune": (FINE_TUNE_DEFAULTS, _run_fine_tune),
    "bench-noise": (BENCH_NOISE_DEFAULTS, _run_bench_noise),
    "bench-newton": (BENCH_NEWTON_DEFAULTS, _run_bench_newton),
    "gradcheck": (GRADCHECK_DEFAULTS, _run_gradcheck),
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        defaults, runner = RUNNERS[args.command]
        ns = argparse.Namespace(**{k: v for k, v in vars(args).items() if k != "command"})
        cfg = _resolve(defaults, ns)
        return runner(cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (bvp.DatasetError, FormatError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (training.DivergenceError, LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
