"""Batch command-line entry point.

Subcommands: calibrate, score, train, gen-synthetic, verify-theory,
rank-stability, friedman.  All randomness funnels through an explicit seed
flag, outputs carry a schema-version field and are written with stable key
order, so repeated invocations with the same flags are byte-identical.

Exit codes: 0 success, 1 input or usage error, 2 numerical non-convergence
(results still written).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import align, data, rasch, scoring, serialize, theory

OUT_DIR_ENV = "FACETALIGN_OUT_DIR"


class CliError(Exception):
    """User-facing input or usage error (exit code 1)."""


def _out_dir(args) -> Path:
    if getattr(args, "out_dir", None):
        return Path(args.out_dir)
    return Path(os.environ.get(OUT_DIR_ENV, "."))


def _dims_arg(text: str) -> tuple:
    dims = tuple(d.strip() for d in text.split(",") if d.strip())
    for d in dims:
        if d not in data.DIMENSIONS:
            raise CliError(f"unknown dimension label {d!r}")
    if not dims:
        raise CliError("empty dimension list")
    return dims


def _floats_arg(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise CliError(f"bad numeric list {text!r}: {exc}") from None


def _read_lines(path: Path):
    if not path.exists():
        raise CliError(f"no such file: {path}")
    with open(path, encoding="utf-8") as fh:
        return fh.readlines()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_synthetic(args) -> int:
    out_dir = _out_dir(args)
    if args.kind == "ratings":
        dims = _dims_arg(args.dims)
        corpora = []
        truths = {}
        for i, dim in enumerate(dims):
            spec = data.SyntheticSpec(
                n_models=args.models,
                n_questions=args.questions,
                n_judges=args.judges,
                n_rubrics=args.rubrics,
                seed=args.seed + i,
                dimension=dim,
                theta_scale=args.theta_scale,
                nuisance_scale=args.nuisance_scale,
            )
            corpus, truth = data.gen_synthetic_ratings(spec)
            corpora.append(corpus)
            truths[dim] = truth
        merged = data.merge_corpora(*corpora)
        out = Path(args.out) if args.out else out_dir / "ratings.jsonl"
        data.write_ratings(merged, out)
        print(f"wrote {len(merged)} ratings for dims {','.join(dims)} to {out}")
        if args.truth_out:
            payload = {
                "schema_version": serialize.SCHEMA_VERSION,
                "kind": "synthetic_truth",
                "truth": {
                    d: serialize.facet_params_to_dict(t) for d, t in truths.items()
                },
            }
            with open(args.truth_out, "w", encoding="utf-8") as fh:
                fh.write(serialize.dumps(payload) + "\n")
            print(f"wrote ground truth to {args.truth_out}")
    else:
        dims = _dims_arg(args.dims)
        items = data.gen_synthetic_preferences(
            dims, args.conflict, args.size, args.seed
        )
        out = Path(args.out) if args.out else out_dir / "preferences.jsonl"
        data.write_instances(items, out)
        print(f"wrote {len(items)} preference items to {out}")
    return 0


def cmd_calibrate(args) -> int:
    config = rasch.FitConfig(
        l2_weight=args.l2_weight,
        prior_curvature=args.prior_curvature,
        step_size=args.step_size,
        max_iters=args.max_iters,
        grad_tol=args.grad_tol,
        nll_tol=args.nll_tol,
        seed=args.seed,
    )
    corpus = data.parse_ratings(_read_lines(Path(args.ratings)))
    dims = _dims_arg(args.dim) if args.dim else corpus.dimensions
    for dim in dims:
        if dim not in corpus.dimensions:
            raise CliError(f"corpus has no dimension {dim!r}")
    out_dir = _out_dir(args)
    out_dir.mkdir(parents=True, exist_ok=True)

    all_converged = True
    for dim in dims:
        result = rasch.fit(corpus.slice_dimension(dim), config)
        path = out_dir / f"fit_{dim}.json"
        serialize.write_fit_result(result, path)
        status = "converged" if result.converged else "NOT converged"
        print(
            f"dim {dim}: {status} after {result.iters_used} iterations, "
            f"final nll {result.nll_trace[-1]:.6f} -> {path}"
        )
        all_converged = all_converged and result.converged
    if corpus.equating_warning:
        print(
            "note: dimension slices do not share judges/questions; "
            "cross-dimension averages are not comparable"
        )
    elif len(dims) > 1:
        print("note: shared judges and questions across dims; scales comparable")
    return 0 if all_converged else 2


def cmd_score(args) -> int:
    out_dir = _out_dir(args)
    out = Path(args.out) if args.out else out_dir / "scorecards.jsonl"
    method = {"raw": "raw_prob", "z": "z_score", "mfrm": "mfrm"}[args.method]

    if method == "mfrm":
        if not args.fits_dir:
            raise CliError("--method mfrm requires --fits-dir")
        fits = {}
        for dim in data.DIMENSIONS:
            path = Path(args.fits_dir) / f"fit_{dim}.json"
            if not path.exists():
                raise CliError(f"missing fit file for dimension {dim}: {path}")
            fits[dim] = serialize.read_fit_result(path)
        models = args.model or sorted(fits["A"].params.models)
        cards = [scoring.mfrm_scorecard(fits, m) for m in models]
    else:
        if not args.ratings:
            raise CliError(f"--method {args.method} requires --ratings")
        corpus = data.parse_ratings(_read_lines(Path(args.ratings)))
        models = args.model or list(corpus.models)
        cards = [scoring.rating_scorecard(corpus, m, method) for m in models]

    serialize.write_scorecards(cards, out)
    print(f"wrote {len(cards)} scorecards ({method}) to {out}")
    return 0


def cmd_train(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        raw = json.load(fh)
    parsed = data.parse_instances(_read_lines(Path(args.data)))
    if parsed.rejects:
        lines = ", ".join(str(ln) for ln, _ in parsed.rejects)
        raise CliError(f"rejected instance records at lines: {lines}")
    items = parsed.instances
    if not items:
        raise CliError("no training items")
    dims = tuple(
        d for d in data.DIMENSIONS if any(d in i.active_dims for i in items)
    )
    config, dual = serialize.parse_train_config(raw, dims)
    trace = align.train(items, config, dual)
    out_dir = _out_dir(args)
    out = Path(args.out) if args.out else out_dir / "trace.jsonl"
    serialize.write_trace(trace, out)
    step = trace.steps_to_feasibility()
    summary = (
        f"feasibility reached at step {step}" if step is not None else "feasibility not reached"
    )
    print(f"{config.algo}: {len(trace.records)} steps, {summary} -> {out}")
    return 0


def cmd_verify_theory(args) -> int:
    rows = theory.verify_grid(
        norms=_floats_arg(args.norms),
        rhos=_floats_arg(args.rhos),
        lambdas=_floats_arg(args.lambdas),
    )
    out_dir = _out_dir(args)
    out = Path(args.out) if args.out else out_dir / "theory_report.tsv"
    header = (
        "norm\trho\tlambda1\tuniform_exact\tuniform_closed\t"
        "lag_exact\tlag_expansion\tlag_bound\tasserted\tstatus"
    )
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for r in rows:
            status = ("pass" if r.passed else "FAIL") if r.asserted else "report"
            fh.write(
                f"{r.norm:g}\t{r.rho:g}\t{r.lambda1:g}\t"
                f"{r.uniform_exact:.12e}\t{r.uniform_closed:.12e}\t"
                f"{r.lag_exact:.12e}\t{r.lag_expansion:.12e}\t"
                f"{r.lag_bound:.12e}\t{int(r.asserted)}\t{status}\n"
            )
    failed = [r for r in rows if r.asserted and not r.passed]
    print(
        f"verified {len(rows)} grid points, {len(failed)} assertion failures -> {out}"
    )
    return 0 if not failed else 1


def cmd_rank_stability(args) -> int:
    x = _floats_arg(",".join(_read_lines(Path(args.x))))
    y = _floats_arg(",".join(_read_lines(Path(args.y))))
    try:
        tau, rho = scoring.rank_stability(x, y)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    report = scoring.StatReport(kendall_tau=tau, spearman_rho=rho)
    out_dir = _out_dir(args)
    out = Path(args.out) if args.out else out_dir / "rank_stability.json"
    serialize.write_stat_report(report, out)
    print(f"kendall_tau={tau:.6f} spearman_rho={rho:.6f} -> {out}")
    return 0


def cmd_friedman(args) -> int:
    rows = []
    for line in _read_lines(Path(args.scores)):
        line = line.strip()
        if line:
            rows.append(_floats_arg(line))
    if not rows:
        raise CliError("empty score matrix")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise CliError("ragged score matrix")
    try:
        chi2, p = scoring.friedman_test(np.array(rows))
    except ValueError as exc:
        raise CliError(str(exc)) from None
    report = scoring.StatReport(friedman_chi2=chi2, friedman_p=p)
    out_dir = _out_dir(args)
    out = Path(args.out) if args.out else out_dir / "friedman.json"
    serialize.write_stat_report(report, out)
    print(f"chi2={chi2:.6f} p={p:.6f} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facetalign",
        description="Judge-rating calibration and constrained preference optimization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate synthetic corpora")
    p.add_argument("kind", choices=["ratings", "preferences"])
    p.add_argument("--dims", default="A,T,E,C")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.add_argument("--models", type=int, default=20)
    p.add_argument("--questions", type=int, default=30)
    p.add_argument("--judges", type=int, default=3)
    p.add_argument("--rubrics", type=int, default=3)
    p.add_argument("--theta-scale", type=float, default=2.0)
    p.add_argument("--nuisance-scale", type=float, default=1.0)
    p.add_argument("--truth-out")
    p.add_argument("--conflict", type=float, default=0.0)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(fn=cmd_gen_synthetic)

    p = sub.add_parser("calibrate", help="fit the rating model per dimension")
    p.add_argument("--ratings", required=True)
    p.add_argument("--dim", help="comma-separated subset (default: all present)")
    p.add_argument("--l2-weight", type=float, default=1e-4)
    p.add_argument("--prior-curvature", type=float, default=1.0)
    p.add_argument("--step-size", type=float, default=0.5)
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--grad-tol", type=float, default=1e-6)
    p.add_argument("--nll-tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("score", help="aggregate ratings into model scorecards")
    p.add_argument("--method", choices=["raw", "z", "mfrm"], required=True)
    p.add_argument("--ratings")
    p.add_argument("--fits-dir")
    p.add_argument("--model", action="append", help="restrict to a model (repeatable)")
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("train", help="run a preference optimizer")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("verify-theory", help="check the gradient-norm identities")
    p.add_argument("--norms", default="0.5,1,2")
    p.add_argument("--rhos", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--lambdas", default="0,1,2,3,4,5,6,7,8,9")
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.set_defaults(fn=cmd_verify_theory)

    p = sub.add_parser("rank-stability", help="Kendall tau-b and Spearman rho")
    p.add_argument("--x", required=True, help="file with one score per line")
    p.add_argument("--y", required=True)
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.set_defaults(fn=cmd_rank_stability)

    p = sub.add_parser("friedman", help="Friedman rank test over a score matrix")
    p.add_argument(
        "--scores", required=True, help="file of comma-separated rows (models x blocks)"
    )
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.set_defaults(fn=cmd_friedman)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (CliError, data.ParseError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
