"""Command-line client for the service operations.

By default every command invokes the service layer in process, so results
are deterministic given the full flag set (including seeds) and no server is
needed.  With ``--server URL`` the same request is POSTed to a running
instance of the FastAPI app instead.

Exit codes: 0 success, 1 check failure, 2 usage error, 3 design failure,
4 environment failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .lsvi import DesignFailure, EnvFailure
from .service import models, service

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_DESIGN_FAILURE = 3
EXIT_ENV_FAILURE = 4

_ENDPOINTS = {
    "kernel_check": ("/v1/kernel/check", models.KernelCheckReport),
    "train": ("/v1/train", models.TrainResponse),
    "eval": ("/v1/eval", models.EvalResponse),
    "sweep": ("/v1/sweep", models.SweepResponse),
}

_LOCAL = {
    "kernel_check": service.run_kernel_check,
    "train": service.run_train,
    "eval": service.run_eval,
    "sweep": service.run_sweep_service,
}


class _RemoteError(RuntimeError):
    def __init__(self, status_code: int, detail: str):
        super().__init__(detail)
        self.status_code = status_code


def _dispatch(op: str, request, server: str | None):
    if server is None:
        return _LOCAL[op](request)
    import httpx

    path, response_model = _ENDPOINTS[op]
    resp = httpx.post(
        server.rstrip("/") + path, json=request.model_dump(mode="json"), timeout=None
    )
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise _RemoteError(resp.status_code, detail)
    return response_model.model_validate(resp.json())


def _write_text(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")


def _cmd_kernel_check(args) -> int:
    request = models.KernelCheckRequest(
        degree=args.degree, grid=args.grid, n_draws=args.n_draws, seed=args.seed
    )
    report = _dispatch("kernel_check", request, args.server)
    _write_text(args.out, report.model_dump_json(indent=2))
    for check in report.checks:
        state = "pass" if check.passed else "FAIL"
        print(f"[{state}] {check.name}: value={check.value:.3e} tol={check.tol:g}")
    if not report.passed:
        first_bad = next(c.name for c in report.checks if not c.passed)
        print(f"kernel check FAILED at {first_bad}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print(f"kernel check passed (lambda_hat={report.lambda_hat:.6f})")
    return EXIT_OK


def _run_record_path(out: str) -> str:
    path = Path(out)
    return str(path.with_name(path.stem + ".run.json"))


def _cmd_train(args) -> int:
    degree = args.degree
    if degree is None and args.epsilon is None:
        degree = 2
    request = models.TrainRequest(
        env=args.env,
        horizon=args.horizon,
        degree=degree,
        epsilon=args.epsilon,
        nu=args.nu,
        n_tot=args.n_tot,
        eps_prime=args.eps_prime,
        action_grid=args.action_grid,
        seed=args.seed,
        ridge=args.ridge,
        oracle_grid=args.oracle_grid,
        oracle_mc=args.oracle_mc,
        eval_episodes=args.episodes,
    )
    response = _dispatch("train", request, args.server)
    _write_text(args.out, json.dumps(response.estimate, indent=2))
    record = response.run_record
    _write_text(_run_record_path(args.out), record.model_dump_json(indent=2))
    print(
        f"trained {record.env} (H={record.horizon}, N={request.degree or 'auto'}): "
        f"value_gap={record.value_gap:.4f} queries={record.n_queries_total} "
        f"design_g={record.design_g_value:.2f} -> {args.out}"
    )
    return EXIT_OK


def _cmd_eval(args) -> int:
    try:
        estimate = json.loads(Path(args.estimate).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        print(f"cannot read estimate: {exc}", file=sys.stderr)
        return EXIT_USAGE
    request = models.EvalRequest(
        estimate=estimate,
        env=args.env,
        horizon=args.horizon,
        n_episodes=args.episodes,
        seed=args.seed,
        start_grid=args.start_grid,
        oracle_grid=args.oracle_grid,
        oracle_mc=args.oracle_mc,
    )
    response = _dispatch("eval", request, args.server)
    _write_text(args.out, response.model_dump_json(indent=2))
    print(
        f"eval {response.env}: rollout={response.rollout_value:.4f} "
        f"oracle={response.oracle_value:.4f} gap={response.value_gap:.4f} "
        f"max_gap_over_starts={response.max_gap_over_starts:.4f}"
    )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    try:
        epsilons = [float(tok) for tok in args.epsilons.split(",") if tok]
        seeds = [int(tok) for tok in args.seeds.split(",") if tok]
    except ValueError as exc:
        print(f"bad epsilon/seed list: {exc}", file=sys.stderr)
        return EXIT_USAGE
    request = models.SweepRequest(
        env=args.env,
        horizon=args.horizon,
        epsilons=epsilons,
        seeds=seeds,
        nu=args.nu,
        degree_c=args.degree_c,
        n_start=args.n_start,
        cap=args.cap,
        episodes=args.episodes,
        threads=args.threads,
    )
    response = _dispatch("sweep", request, args.server)
    _write_text(args.out, response.csv)
    warned = [row for row in response.rows if row.status != "ok"]
    for row in response.rows:
        print(
            f"epsilon={row.epsilon:g} N={row.N} n_queries={row.n_queries} "
            f"gap_median={row.gap_median:.4f} seeds_passed={row.seeds_passed} [{row.status}]"
        )
    if warned:
        print(f"warning: {len(warned)} row(s) hit the budget cap", file=sys.stderr)
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smooth-lsvi",
        description="Kernel-perturbed least-squares value iteration toolkit",
    )
    parser.add_argument("--server", default=None, help="base URL of a running service")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kernel-check", help="run the kernel/sampler invariant suite")
    p.add_argument("--degree", "-N", type=int, required=True)
    p.add_argument("--grid", type=int, default=4096)
    p.add_argument("--n-draws", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.set_defaults(fn=_cmd_kernel_check)

    p = sub.add_parser("train", help="train a policy and write the estimate JSON")
    p.add_argument("--env", required=True)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--degree", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=None, help="pick the degree from a target accuracy")
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--n-tot", type=int, default=2000)
    p.add_argument("--eps-prime", type=float, default=None)
    p.add_argument("--action-grid", type=int, default=33)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ridge", type=float, default=1e-10)
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--oracle-grid", type=int, default=201)
    p.add_argument("--oracle-mc", type=int, default=64)
    p.add_argument("--out", default="estimate.json")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved estimate against the oracle")
    p.add_argument("--estimate", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start-grid", type=int, default=21)
    p.add_argument("--oracle-grid", type=int, default=201)
    p.add_argument("--oracle-mc", type=int, default=64)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("sweep", help="sample-complexity sweep over accuracy targets")
    p.add_argument("--env", required=True)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--epsilons", "--epsilon", required=True, help="comma-separated targets")
    p.add_argument("--seeds", "--seed", required=True, help="comma-separated seeds")
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--degree-c", type=float, default=1.0)
    p.add_argument("--n-start", type=int, default=250)
    p.add_argument("--cap", type=int, default=64000)
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--threads", type=int, default=None, help="defaults to SMOOTH_LSVI_THREADS")
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except service.UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DesignFailure as exc:
        print(f"design failure: {exc}", file=sys.stderr)
        return EXIT_DESIGN_FAILURE
    except EnvFailure as exc:
        print(f"environment failure: {exc}", file=sys.stderr)
        return EXIT_ENV_FAILURE
    except _RemoteError as exc:
        print(f"server error ({exc.status_code}): {exc}", file=sys.stderr)
        if exc.status_code == 400:
            return EXIT_USAGE
        if exc.status_code == 409:
            return EXIT_DESIGN_FAILURE
        if exc.status_code == 502:
            return EXIT_ENV_FAILURE
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
