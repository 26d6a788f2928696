"""Command-line interface: ``oewt {generate,fit,estimate,simulate}``.

Exit status is 0 on success, 1 for usage or validation errors and 2 for
numerical failures. Diagnostics go to stderr; set ``OEWT_LOG`` to a logging
level name (DEBUG, INFO, ...) for more of them.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, inference, kernels, propensity, sampling, simulation
from .datamodel import (
    PropensityFit,
    load_big_sample,
    load_reference_sample,
    write_big_sample,
    write_population,
    write_reference_sample,
    with_overlap,
)
from .errors import NumericalError, OewtError, ValidationError
from .popgen import PopulationSpec, generate_population

log = logging.getLogger("oewt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _timestamp(args) -> dict:
    if getattr(args, "no_timestamp", False):
        return {}
    return {"timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")}


def _emit_json(obj, path=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


# --- generate ------------------------------------------------------------------

def cmd_generate(args) -> int:
    spec = PopulationSpec(N=args.pop_size, rho=args.rho, seed=args.seed)
    pop = generate_population(spec)
    pop, theta0 = sampling.with_true_propensities(pop, sampling.BigDesignSpec(args.target_nb))
    if args.dump_population:
        write_population(args.dump_population, pop)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        pps = sampling.PPSDesignSpec(n_A=args.n_a)
        dA = 1.0 / sampling.pps_inclusion_probabilities(sampling.pps_size_measure(pop, pps), args.n_a)
        rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(1,)))
        B = sampling.draw_poisson(pop, pop.pi_b_true, rng, design_weights=dA)
        A = with_overlap(sampling.draw_pps_systematic(pop, pps, rng), B)
        write_reference_sample(out / "reference.csv", A)
        write_big_sample(out / "big.csv", B)
        _emit_json({
            "N": pop.N, "rho": args.rho, "seed": args.seed, "theta0": theta0,
            "population_mean": pop.mean_y, "n_A": A.n, "N_B": B.n,
            "overlap": int(A.delta.sum()), **_timestamp(args),
        }, out / "truth.json")
    return 0


# --- fit -----------------------------------------------------------------------

def _fit_diagnostics(f: PropensityFit, args) -> dict:
    return {
        "method": f.method,
        "theta_hat": [float(t) for t in f.theta_hat],
        "iterations": f.iterations,
        "converged": f.converged,
        "score_norm": f.score_norm,
        "n_pi_above_one": f.n_pi_above_one,
        "kernel_backend": kernels.BACKEND,
        **_timestamp(args),
    }


def cmd_fit(args) -> int:
    method = propensity.normalize_method(args.method)
    A = load_reference_sample(args.ref)
    B = load_big_sample(args.big, n_covariates=A.p - 1)
    if method in ("CLW", "VD", "WVL") and A.overlap_known:
        log.warning("in_big column is not used by %s and is ignored", method)
    if method in ("OE", "KW") and not A.overlap_known:
        raise ValidationError(f"{method} needs the in_big column in the reference file")
    f = propensity.fit(method, A, B, propensity.FitOptions(method=method))
    if not f.converged:
        log.warning("%s fit did not converge after %d iterations", method, f.iterations)
    diag = _fit_diagnostics(f, args)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "pi_hat", "weight"])
            for i, pi in zip(B.ids, f.pi_hat_B):
                w.writerow([int(i), repr(float(pi)), repr(float(1.0 / pi))])
        _emit_json(diag, _sidecar(args.out))
    _emit_json(diag)
    return 0 if f.converged else 2


# --- estimate ------------------------------------------------------------------

def _read_weights(path, B) -> np.ndarray:
    pis = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            pis[int(row["id"])] = float(row["pi_hat"])
    try:
        return np.array([pis[int(i)] for i in B.ids])
    except KeyError as exc:
        raise ValidationError(f"weights file has no propensity for big-sample id {exc.args[0]}") from None


def cmd_estimate(args) -> int:
    B = load_big_sample(args.big)
    pi_B = _read_weights(args.weights, B)
    est = inference.ipw_mean(B, pi_B)
    result = {"mu_hat": est.mu_hat, "N_B_hat": est.N_B_hat, "N_B": B.n}
    if args.variance != "none":
        if args.pop_size is None:
            raise ValidationError("--pop-size is required for variance estimation")
        if args.ref is None:
            raise ValidationError("--ref is required for variance estimation")
        side = _sidecar(args.weights)
        if not side.exists():
            raise ValidationError(f"fit diagnostics {side} not found; rerun 'fit' with --out")
        diag = json.loads(side.read_text(encoding="utf-8"))
        A = load_reference_sample(args.ref, n_covariates=B.p - 1)
        theta = np.array(diag["theta_hat"])
        f = PropensityFit(
            method=diag["method"], theta_hat=theta, iterations=diag["iterations"],
            converged=diag["converged"], score_norm=diag["score_norm"], pi_hat_B=pi_B,
            pi_hat_A=propensity.propensities_from_theta(diag["method"], theta, A.X),
            tolerance=max(diag["score_norm"], 1e-8),
        )
        opts = inference.VarianceOptions(variant=args.variance, level=args.level)
        var = inference.plug_in_variance(f, A, B, est.mu_hat, args.pop_size, opts)
        lo, hi = inference.confidence_interval(est.mu_hat, var.total, args.level)
        result.update({
            "method": f.method, "variance": var.total, "variance_components": var.as_dict(),
            "level": args.level, "ci_lower": lo, "ci_upper": hi,
        })
    result.update(_timestamp(args))
    _emit_json(result, args.out)
    return 0


# --- simulate ------------------------------------------------------------------

def cmd_simulate(args) -> int:
    values = simulation.parse_config_text(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    if args.seed is not None:
        values["seed"] = args.seed
    if args.reps is not None:
        values["replicates"] = args.reps
    if args.debug:
        values["debug"] = True
    configs = simulation.scenarios_from_config(values)
    reports = simulation.run_study(configs, workers=args.workers)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            simulation.write_report_csv(reports, fh)
        if not args.no_timestamp:
            sys.stdout.write(f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n")
        sys.stdout.write(simulation.format_table(reports))
    else:
        simulation.write_report_csv(reports, sys.stdout)
    for rep in reports:
        if rep.balance_violations:
            log.warning("rho=%s N_B=%s: %d balance violations", rep.config.rho, rep.config.target_NB, rep.balance_violations)
    return 0 if all(r.valid for r in reports) else 2


# --- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="oewt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="generate the simulation population and one pair of samples")
    g.add_argument("--pop-size", type=int, default=200_000)
    g.add_argument("--rho", type=float, default=0.3)
    g.add_argument("--target-nb", type=int, default=50_000)
    g.add_argument("--n-a", type=int, default=5_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="directory for reference.csv, big.csv and truth.json")
    g.add_argument("--dump-population", metavar="PATH", help="write id,x1..x4,y,pi_b_true")
    g.add_argument("--no-timestamp", action="store_true")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit propensities and write big-sample weights")
    f.add_argument("--method", required=True, type=str.lower, choices=["oe", "clw", "kw", "vd", "wvl"])
    f.add_argument("--ref", required=True)
    f.add_argument("--big", required=True)
    f.add_argument("--out", help="weights CSV (id,pi_hat,weight); diagnostics also go to <out>.json")
    f.add_argument("--no-timestamp", action="store_true")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("estimate", help="IPW mean with plug-in variance")
    e.add_argument("--weights", required=True)
    e.add_argument("--big", required=True)
    e.add_argument("--ref")
    e.add_argument("--pop-size", type=float)
    e.add_argument("--variance", choices=["standard", "alt", "none"], default="standard")
    e.add_argument("--level", type=float, default=0.95)
    e.add_argument("--out")
    e.add_argument("--no-timestamp", action="store_true")
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("simulate", help="run the Monte Carlo study")
    s.add_argument("--config", help="key = value scenario file")
    s.add_argument("--out", help="results CSV; the summary table is printed to stdout")
    s.add_argument("--seed", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--debug", action="store_true", help="check balance equations at every fit")
    s.add_argument("--no-timestamp", action="store_true")
    s.set_defaults(func=cmd_simulate)
    return p


def _configure_logging() -> None:
    level = os.environ.get("OEWT_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def run_cli(argv=None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be at least 1")
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(str(exc) + "\n")
        return 1
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 2
    except (OewtError, OSError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
