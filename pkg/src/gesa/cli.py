"""Batch command-line surface: audits, curves, training, benchmarks.

Commands

* ``audit-group``: group-numerics property suite (round trips, dense
  matrix-log oracle, action homomorphism, distance invariance, stabiliser
  determinism); exit 1 on any violation.
* ``invariance-curve``: invariance error of a single-layer model vs number
  of lift samples; CSV with header ``lift_samples,median,q25,q75``.
* ``gen-data``: constellation or spring dataset files.
* ``train``: constellation or spring training run; checkpoint + metrics CSV.
* ``rollout-eval``: per-step roll-out error of a checkpoint (or the
  ground-truth pseudo-checkpoint) on a spring dataset.
* ``bench-conv``: naive vs PointConv group convolution agreement, analytic
  memory counts and measured timings.

Every command writes ``manifest.json`` (command, arguments, config hash,
seed, versions) next to its outputs; identical (seed, config) reruns
produce identical files. Exit codes: 0 success, 1 property violation,
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
import tracemalloc
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from . import groups as G
from .attention import invariance_error_probe
from .blocks import GroupTransformer, build_invariance_probe_model
from .constellation import generate_constellation, save_jsonl as save_constellation
from .conv import ConvConfig, GroupConvolution
from .dynamics import (
    SpringDataset,
    generate_spring_dataset,
    geometric_mean,
    per_step_mse,
    rollout_states,
    spring_rhs,
)
from .errors import SingularRotationError
from .estimators import ConstellationClassifier, SpringDynamicsRegressor
from .lifting import lift
from .nn import config_hash

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2


def _write_manifest(out_dir: Path, command: str, args: dict, seed: int) -> None:
    plain = {
        k: v
        for k, v in sorted(args.items())
        if isinstance(v, (str, int, float, bool, list, dict, type(None)))
    }
    manifest = {
        "command": command,
        "args": plain,
        "config_hash": config_hash(plain),
        "seed": seed,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "gesa": __version__,
        },
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# audit-group
# ---------------------------------------------------------------------------


def audit_group(group: G.GroupId, samples: int, seed: int, tamper: bool = False) -> dict:
    """Run the group-numerics property suite; returns per-property maxima."""
    import scipy.linalg

    rng = np.random.default_rng(seed)
    report: dict = {"group": str(group), "samples": samples}

    def log_fn(mats):
        coords = G.log_many(group, mats)
        if tamper:
            coords = coords + 1e-3
        return coords

    # exp/log round trip on the guaranteed domain
    v = G.random_algebra(group, samples, rng)
    back = log_fn(G.exp_many(group, v))
    report["round_trip_max_error"] = float(np.max(np.abs(back - v)))

    # closed-form log vs dense matrix-log oracle. Elements rotated by
    # exactly pi are excluded: there the principal matrix log is complex
    # (the real branch is a contract exclusion), e.g. logm(-I) = diag(i*pi).
    mats = G.random_elements(group, samples, seed + 1)
    ours = log_fn(mats)
    worst = 0.0
    skipped = 0
    for i in range(samples):
        if group.rotation_dim == 2:
            angle = np.arctan2(mats[i][1, 0], mats[i][0, 0])
            if abs(abs(angle) - np.pi) < 1e-9:
                skipped += 1
                continue
        dense = np.real(scipy.linalg.logm(mats[i]))
        if group.kind == "t":
            ref = dense[: group.n, group.n]
        elif group.kind in ("so2", "cyclic"):
            ref = np.array([dense[1, 0]])
        elif group.kind == "se2":
            ref = np.array([dense[0, 2], dense[1, 2], dense[1, 0]])
        elif group.kind == "so3":
            ref = np.array([dense[2, 1], dense[0, 2], dense[1, 0]])
        else:
            ref = np.concatenate(
                [dense[:3, 3], [dense[2, 1], dense[0, 2], dense[1, 0]]]
            )
        worst = max(worst, float(np.max(np.abs(ours[i] - ref))))
    report["dense_logm_max_error"] = worst
    if skipped:
        report["dense_logm_branch_point_skips"] = skipped

    # action homomorphism
    a = G.random_elements(group, samples, seed + 2)
    b = G.random_elements(group, samples, seed + 3)
    xs = rng.normal(size=(samples, group.base_dim))
    lhs = G.act_many(group, np.einsum("nij,njk->nik", a, b), xs)
    rhs = G.act_many(group, a, G.act_many(group, b, xs))
    report["action_homomorphism_max_error"] = float(np.max(np.abs(lhs - rhs)))

    # left-invariance of the distance; the second element is a bounded
    # displacement of the first so the relative rotation stays inside the
    # log map's well-conditioned domain
    rel = G.exp_many(group, G.random_algebra(group, samples, rng))
    b2 = a @ rel
    base = np.linalg.norm(
        G.relative_coords_many(group, a, b2) + (1e-3 if tamper else 0.0), axis=-1
    )
    u = G.random_elements(group, samples, seed + 4)
    moved = np.linalg.norm(
        G.relative_coords_many(group, u @ a, u @ b2) + (1e-3 if tamper else 0.0),
        axis=-1,
    )
    report["distance_invariance_max_error"] = float(np.max(np.abs(moved - base)))

    # stabiliser determinism
    s1 = G.sample_stabiliser_matrices(group, min(samples, 64), seed)
    s2 = G.sample_stabiliser_matrices(group, min(samples, 64), seed)
    report["stabiliser_determinism"] = bool(np.array_equal(s1, s2))

    # near-pi singularity handling for the 3-D rotation kinds
    if group.kind in ("so3", "se3"):
        rejected = 0
        for i in range(min(samples, 100)):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            R = G.exp_many(G.SO3, axis * (np.pi - 1e-8))
            mat = np.eye(group.matrix_dim)
            mat[:3, :3] = R
            try:
                G.log_many(group, mat)
            except SingularRotationError:
                rejected += 1
        report["near_pi_rejections"] = rejected
        report["near_pi_probes"] = min(samples, 100)

    tolerances = {
        "round_trip_max_error": 1e-8,
        "dense_logm_max_error": 1e-7,
        "action_homomorphism_max_error": 1e-10,
        "distance_invariance_max_error": 1e-9,
    }
    violations = [
        name for name, tol in tolerances.items() if report[name] > tol
    ]
    if not report["stabiliser_determinism"]:
        violations.append("stabiliser_determinism")
    if group.kind in ("so3", "se3") and report["near_pi_rejections"] != report["near_pi_probes"]:
        violations.append("near_pi_rejections")
    report["violations"] = violations
    report["passed"] = not violations
    return report


def cmd_audit_group(args) -> int:
    group = G.parse_group(args.group)
    report = audit_group(group, args.samples, args.seed, tamper=args.tamper_log)
    out = Path(args.out)
    _write_manifest(out, "audit-group", vars(args), args.seed)
    with open(out / f"audit_{group}.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    for key, value in sorted(report.items()):
        print(f"{key}: {value}")
    return EXIT_OK if report["passed"] else EXIT_VIOLATION


# ---------------------------------------------------------------------------
# invariance-curve
# ---------------------------------------------------------------------------


def invariance_curve(group: G.GroupId, lift_samples_list, runs: int, seed: int,
                     precision: str = "f64") -> list[tuple]:
    """Medians/IQR of the invariance error per lift-sample count.

    Each run draws a fresh probe-model seed, input example and transform,
    matching the experiment the curve reproduces.
    """
    rows = []
    for k in lift_samples_list:
        errors = []
        for r in range(runs):
            with ad.default_dtype(precision):
                model = build_invariance_probe_model(group, seed=seed + 1000 + r)
                example = generate_constellation(1, rng_seed=seed + 5000 + r)[0]
                stats = invariance_error_probe(
                    model, example.points, example.features, group,
                    num_transforms=1, lift_samples=k,
                    rng_seed=seed + 31 * r + k,
                )
            errors.append(stats["median"])
        errors = np.asarray(errors)
        rows.append(
            (k, float(np.median(errors)), float(np.percentile(errors, 25)),
             float(np.percentile(errors, 75)))
        )
    return rows


def cmd_invariance_curve(args) -> int:
    group = G.parse_group(args.group)
    lift_samples = [int(x) for x in args.lift_samples.split(",")]
    rows = invariance_curve(group, lift_samples, args.runs, args.seed,
                            precision=args.precision)
    out = Path(args.out)
    _write_manifest(out, "invariance-curve", vars(args), args.seed)
    _write_csv(out / "invariance_curve.csv", ["lift_samples", "median", "q25", "q75"], rows)
    for row in rows:
        print(f"lift_samples={row[0]}: median={row[1]:.3e} iqr=[{row[2]:.3e}, {row[3]:.3e}]")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    _write_manifest(out, "gen-data", vars(args), args.seed)
    if args.task == "constellation":
        examples = generate_constellation(args.count, rng_seed=args.seed,
                                          augment=args.augment)
        save_constellation(examples, out / "constellation.jsonl")
        print(f"wrote {len(examples)} examples to {out / 'constellation.jsonl'}")
    else:
        ds = generate_spring_dataset(args.count, steps=args.steps, dt=args.dt,
                                     rng_seed=args.seed)
        ds.save_npz(out / "springs.npz")
        print(f"wrote {ds.num_trajectories} trajectories to {out / 'springs.npz'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    out = Path(args.out)
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    _write_manifest(out, "train", {**vars(args), "config": overrides}, args.seed)

    if args.task == "constellation":
        est = ConstellationClassifier(seed=args.seed, precision=args.precision)
        est.set_params(**overrides.get("estimator", {}))
        n = overrides.get("num_examples", 2000)
        data = generate_constellation(n, rng_seed=args.seed)
        X = [ex.points for ex in data]
        y = np.stack([ex.labels for ex in data])
        est.fit(X, y)
        acc = est.score(X, y)
        rows = [(m["epoch"], m["train_loss"]) for m in est.metrics_]
        _write_csv(out / "metrics.csv", ["epoch", "train_loss"], rows)
        with open(out / "summary.json", "w") as fh:
            json.dump({"train_accuracy": acc, "num_parameters": est.n_params_},
                      fh, indent=2, sort_keys=True)
        est.model_.save(out / "checkpoint.bin")
        print(f"train accuracy {acc:.3f} ({est.n_params_} parameters)")
        return EXIT_OK

    if args.dataset:
        ds = SpringDataset.load_npz(args.dataset)
    else:
        n = overrides.get("num_trajectories", 400)
        ds = generate_spring_dataset(n, rng_seed=args.seed)
    est = SpringDynamicsRegressor(seed=args.seed, precision=args.precision)
    est.set_params(**overrides.get("estimator", {}))
    est.fit(ds)
    rows = [(m["step"], m["train_loss"], m["lr"]) for m in est.metrics_]
    _write_csv(out / "metrics.csv", ["step", "train_loss", "lr"], rows)
    report = est.evaluate(ds)
    with open(out / "summary.json", "w") as fh:
        json.dump(
            {
                "train_geometric_mse": report["geometric_mean_mse"],
                "num_parameters": est.n_params_,
                "model_kind": est.model_kind,
            },
            fh, indent=2, sort_keys=True,
        )
    if hasattr(est.model_, "save"):
        est.model_.save(out / "checkpoint.bin")
    print(f"final train loss {est.metrics_[-1]['train_loss']:.3e} "
          f"({est.n_params_} parameters)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# rollout-eval
# ---------------------------------------------------------------------------


def cmd_rollout_eval(args) -> int:
    out = Path(args.out)
    _write_manifest(out, "rollout-eval", vars(args), args.seed)
    ds = SpringDataset.load_npz(args.dataset)
    horizon = args.horizon
    z0 = ds.trajectories[:, 0]
    targets = ds.trajectories[:, 1 : horizon + 1]

    if args.checkpoint == "ground-truth":
        systems = [ds.system(i) for i in range(ds.num_trajectories)]

        def rhs(z):
            return np.stack([spring_rhs(s, z[i]) for i, s in enumerate(systems)])

    else:
        from .dynamics import LearnedSpringHamiltonian

        model = GroupTransformer.load(args.checkpoint)
        ham = LearnedSpringHamiltonian(model, ds.masses, ds.ks)
        rhs = ham.rhs_numpy()

    states = rollout_states(rhs, z0, ds.dt, horizon)
    rows = []
    for t, s in enumerate(states):
        errs = np.mean((s - targets[:, t]) ** 2, axis=-1)
        rows.append(
            (t + 1, float(np.median(errs)), float(np.percentile(errs, 25)),
             float(np.percentile(errs, 75)))
        )
    _write_csv(out / "rollout.csv", ["t", "median_mse", "q25", "q75"], rows)
    curve = per_step_mse(states, targets)
    summary = {"geometric_mean_mse": geometric_mean(curve), "horizon": horizon}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(f"geometric-mean MSE over {horizon} steps: {summary['geometric_mean_mse']:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench-conv
# ---------------------------------------------------------------------------


def cmd_bench_conv(args) -> int:
    from .nn import ParameterStore

    out = Path(args.out)
    _write_manifest(out, "bench-conv", vars(args), args.seed)
    rng = np.random.default_rng(args.seed)
    rows = []
    worst_disagreement = 0.0
    sweep = [
        {"d_v": 8, "d_out": 8, "d_mid": 4, "n_points": 6, "lift_samples": 2},
        {"d_v": 16, "d_out": 16, "d_mid": 4, "n_points": 8, "lift_samples": 2},
        {"d_v": 64, "d_out": 64, "d_mid": 8, "n_points": 16, "lift_samples": 2},
    ]
    for spec in sweep:
        store = ParameterStore(seed=args.seed)
        layer = GroupConvolution(
            store, "conv",
            ConvConfig(d_v=spec["d_v"], d_out=spec["d_out"],
                       kernel_mlp_widths=(16, spec["d_mid"])),
            G.SE2.algebra_dim,
        )
        pts = rng.normal(size=(spec["n_points"], 2))
        feats = rng.normal(size=(spec["n_points"], spec["d_v"]))
        fmap = lift(pts, feats, G.SE2, num_lift_samples=spec["lift_samples"],
                    rng_seed=args.seed)
        rel = fmap.pairwise_coords()
        L = len(fmap)
        mask = np.ones((L, L), dtype=bool)
        from .autodiff import Tensor

        ft = Tensor(np.asarray(fmap.features))
        with ad.no_grad():
            tracemalloc.start()
            t0 = time.perf_counter()
            out_naive = layer.naive(ft, rel, mask).data
            t_naive = time.perf_counter() - t0
            _, peak_naive = tracemalloc.get_traced_memory()
            tracemalloc.stop()

            tracemalloc.start()
            t0 = time.perf_counter()
            out_point = layer.pointconv(ft, rel, mask).data
            t_point = time.perf_counter() - t0
            _, peak_point = tracemalloc.get_traced_memory()
            tracemalloc.stop()
        disagreement = float(np.max(np.abs(out_naive - out_point)))
        worst_disagreement = max(worst_disagreement, disagreement)
        counts = layer.kernel_buffer_elements(L=L, nbhd=L)
        rows.append(
            (spec["d_v"], spec["d_out"], spec["d_mid"], L,
             counts["naive"], counts["pointconv"],
             counts["naive"] / counts["pointconv"],
             peak_naive, peak_point, t_naive, t_point, disagreement)
        )
    _write_csv(
        out / "bench_conv.csv",
        ["d_v", "d_out", "d_mid", "num_elements", "analytic_naive_elems",
         "analytic_pointconv_elems", "analytic_ratio", "measured_naive_peak_bytes",
         "measured_pointconv_peak_bytes", "naive_seconds", "pointconv_seconds",
         "max_disagreement"],
        rows,
    )
    for row in rows:
        print(f"d_v={row[0]} d_out={row[1]} d_mid={row[2]}: analytic ratio "
              f"{row[6]:.1f}x, disagreement {row[11]:.2e}")
    if worst_disagreement > 1e-6:
        print(f"FAIL: naive vs pointconv disagreement {worst_disagreement:.3e}")
        return EXIT_VIOLATION
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gesa",
        description="Audits, curves and training runs for the group-equivariant "
                    "self-attention toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit-group", help="group numerics property audit")
    p.add_argument("--group", required=True,
                   help="group tag: t1/t2/t3, so2, se2, so3, se3, c<n>")
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/audit")
    p.add_argument("--tamper-log", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_audit_group)

    p = sub.add_parser("invariance-curve", help="invariance error vs lift samples")
    p.add_argument("--group", default="se2")
    p.add_argument("--lift-samples", default="1,2,3,4,7")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=["f32", "f64"], default="f64")
    p.add_argument("--out", default="out/invariance")
    p.set_defaults(func=cmd_invariance_curve)

    p = sub.add_parser("gen-data", help="generate a task dataset")
    p.add_argument("--task", choices=["constellation", "spring"], required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment", choices=["none", "t2", "se2"], default="none")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--out", default="out/data")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a task model")
    p.add_argument("--task", choices=["constellation", "spring"], required=True)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--dataset", default=None, help="spring dataset .npz")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=["f32", "f64"], default="f64")
    p.add_argument("--out", default="out/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout-eval", help="per-step roll-out error of a checkpoint")
    p.add_argument("--checkpoint", required=True,
                   help="checkpoint path or 'ground-truth'")
    p.add_argument("--dataset", required=True)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/rollout")
    p.set_defaults(func=cmd_rollout_eval)

    p = sub.add_parser("bench-conv", help="naive vs PointConv benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/bench")
    p.set_defaults(func=cmd_bench_conv)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
