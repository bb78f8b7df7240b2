"""Batch command line interface.

Subcommands: ``register`` (config-driven run), ``eval-landmarks``,
``gradcheck`` (gradient fidelity suite) and ``demo`` (end-to-end phantom
scenarios). Exit codes: 0 success, 1 configuration or file-format problems,
2 divergence or degenerate inputs.

Heavy imports happen inside ``main`` so that ``--threads`` can cap the
numeric library's internal pools before they initialize.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffreg",
        description="Differentiable 2D image registration toolbox",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap forward-kernel parallelism (numeric library pools)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_reg = sub.add_parser("register", help="run a configured registration")
    p_reg.add_argument("--config", required=True, help="JSON configuration file")
    p_reg.add_argument("--output", default=None, help="output directory (overrides config)")

    p_eval = sub.add_parser("eval-landmarks", help="landmark mean square distance")
    p_eval.add_argument("--fixed-landmarks", required=True)
    p_eval.add_argument("--moving-landmarks", required=True)
    p_eval.add_argument("--displacement", required=True, help="raw displacement field")
    p_eval.add_argument("--image", required=True, help="image defining the fixed geometry")

    p_check = sub.add_parser("gradcheck", help="run the gradient fidelity suite")
    p_check.add_argument("--size", type=int, default=12)
    p_check.add_argument("--tolerance", type=float, default=1e-4)

    p_demo = sub.add_parser("demo", help="reproduce a phantom experiment")
    p_demo.add_argument("scenario", choices=["rigid", "ffd", "demons"])
    p_demo.add_argument("--output", default=None, help="output directory")
    p_demo.add_argument("--size", type=int, default=128)
    return parser


def _cap_threads(n: int | None):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(max(1, n))


def _cmd_register(args) -> int:
    from .errors import ConfigError
    from .image import load_image, load_landmarks
    from .registration import parse_config, run_demons_registration, run_gradient_registration
    from .demos import write_outputs

    with open(args.config) as fh:
        raw = json.load(fh)
    config = parse_config(raw)
    if not config.input.fixed or not config.input.moving:
        raise ConfigError("config input must name fixed and moving images")
    fixed = load_image(config.input.fixed)
    moving = load_image(config.input.moving)
    fixed_lms = load_landmarks(config.input.landmarks_fixed) \
        if config.input.landmarks_fixed else None
    moving_lms = load_landmarks(config.input.landmarks_moving) \
        if config.input.landmarks_moving else None

    demons = any(r.kind == "demons_gaussian" for r in config.regularizers)
    runner = run_demons_registration if demons else run_gradient_registration
    report = runner(config, fixed, moving, fixed_lms, moving_lms)

    out_dir = args.output or config.output_dir or "."
    write_outputs(out_dir, fixed, moving, report)
    print(json.dumps(report.summary(), indent=1))
    return 0


def _cmd_eval_landmarks(args) -> int:
    from .image import load_field, load_image, load_landmarks
    from .registration import evaluate_landmarks

    fixed_lms = load_landmarks(args.fixed_landmarks)
    moving_lms = load_landmarks(args.moving_landmarks)
    field = load_field(args.displacement)
    image = load_image(args.image)
    msd = evaluate_landmarks(fixed_lms, moving_lms, field, image)
    print(json.dumps({"landmark_msd": msd}))
    return 0


def _cmd_gradcheck(args) -> int:
    from .registration import gradient_fidelity_suite

    results = gradient_fidelity_suite(size=args.size)
    worst = 0.0
    for name in sorted(results):
        err = results[name]
        worst = max(worst, err)
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"{name:28s} max_rel_error={err:.3e}  {status}")
    print(f"worst: {worst:.3e} (tolerance {args.tolerance:g})")
    return 0 if worst < args.tolerance else 2


def _cmd_demo(args) -> int:
    from .demos import run_demo

    out_dir = args.output or f"demo_{args.scenario}"
    result = run_demo(args.scenario, out_dir, size=args.size)
    payload = result["report"].summary()
    payload["demo"] = {k: v for k, v in result["extras"].items()
                       if not hasattr(v, "shape")}
    print(json.dumps(payload, indent=1))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _cap_threads(args.threads)

    from .errors import (
        ConfigError,
        ContractError,
        DegenerateInputError,
        DivergenceError,
        EvaluationError,
        FormatError,
        ParameterError,
        ShapeError,
        SizeError,
    )

    handlers = {
        "register": _cmd_register,
        "eval-landmarks": _cmd_eval_landmarks,
        "gradcheck": _cmd_gradcheck,
        "demo": _cmd_demo,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, FormatError, ParameterError, ShapeError, SizeError,
            ContractError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, DegenerateInputError, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
