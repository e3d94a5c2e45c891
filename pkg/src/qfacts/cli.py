"""Command-line runner: subcommands write outputs atomically plus a digest manifest.

Exit codes: 0 success, 1 invariant or check failure, 2 usage, 3 I/O.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from qfacts.channels import (
    COMMUTE_TOL,
    assumption_constants,
    check_map_commutation,
    check_unital_images_commute,
    joint_spectral_projectors,
    stationary_state,
)
from qfacts.errors import InsufficientResolvedCycles, QFactsError
from qfacts.inference import (
    born_rule_check,
    error_probability,
    lemma42_bounds,
    offdiagonal_decay,
    sanov_certificate,
)
from qfacts.io import (
    ModelDocument,
    atomic_write_text,
    decode_matrix,
    dumps_json,
    load_model,
    sha256_file,
    write_json,
)
from qfacts.jumps import history_sets_probability, markov_limit_comparison, run_cycles, theorem43_check
from qfacts.qcore import validate_density
from qfacts.trajectories import protocol_string, sample_batch

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
COMMANDS = ("validate", "simulate", "estimate", "bounds", "purify", "jumps", "histories", "sweep")
SWEEPABLE = {"k": int, "r": int, "p": int, "n_traj": int, "n_cycles": int, "epsilon": float,
             "M": int, "lambda1": float, "lambda2": float, "seed": int}


class UsageError(Exception):
    pass


@dataclasses.dataclass
class RunConfig:
    command: str
    model: str
    seed: int | None = None
    out: str = "out"
    k: int = 0
    r: int = 8
    p: int = 4
    n_traj: int | None = None
    n_cycles: int = 200
    epsilon: float | None = None
    method: str | None = None
    stride: int | None = None
    sweep: str | None = None
    target: str = "estimate"
    cycle: dict = dataclasses.field(default_factory=dict)

    def snapshot(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("out")
        return d


def _version() -> str:
    from qfacts import __version__

    return __version__


def _labels_key(x) -> str:
    return str(x)


def _clean(obj):
    """Make numpy scalars, arrays and non-string keys JSON friendly."""
    if isinstance(obj, dict):
        return {_labels_key(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def _json(obj) -> str:
    return dumps_json(_clean(obj))


# each command returns ({filename: text}, ok, summary line)

def cmd_validate(cfg: RunConfig, md: ModelDocument):
    model = md.model
    checks = {}
    fam = model.kraus
    checks["map_commutation_residual"] = float(np.max(check_map_commutation(fam)))
    checks["unital_images_commutator"] = float(check_unital_images_commute(fam))
    projs, probs = joint_spectral_projectors(fam)
    ours = sorted(tuple(np.round(model.cond_probs[:, j], 9)) for j in range(model.n_facts))
    found = sorted(tuple(np.round(probs[:, j], 9)) for j in range(probs.shape[1]))
    checks["joint_spectral_recovered"] = ours == found
    _, faithful = stationary_state(fam)
    checks["faithful_stationary_state"] = bool(faithful)
    problems = []
    if checks["map_commutation_residual"] > COMMUTE_TOL:
        problems.append("step maps do not commute")
    if checks["unital_images_commutator"] > COMMUTE_TOL:
        problems.append("unital images do not commute")
    if not checks["joint_spectral_recovered"]:
        problems.append("joint spectral decomposition does not reproduce the fact table")
    pert = md.perturbation
    try:
        if pert is not None and pert["type"] == "hamiltonian":
            c = assumption_constants(md.dynamics(), model)
            checks["d1"], checks["d2"], checks["d"] = c.d1, c.d2, c.d
        elif pert is not None:
            mix = md.mixture()
            checks["mixture_d2"] = mix.d2
        if md.cycle is not None:
            md.cycle_config()
            checks["cycle"] = "ok"
    except QFactsError as exc:
        problems.append(f"{type(exc).__name__}: {exc}")
    checks["problems"] = problems
    checks["passed"] = not problems
    summary = "validate: pass" if not problems else "validate: FAIL: " + "; ".join(problems)
    return {"validation.json": _json(checks)}, not problems, summary


def cmd_simulate(cfg: RunConfig, md: ModelDocument):
    length = cfg.k if cfg.k > 0 else 200
    dyn = md.dynamics()
    rho0 = _initial_state(md)
    batch = sample_batch(dyn, rho0, length, cfg.seed, n_traj=cfg.n_traj or 1000,
                         store_states=cfg.stride is not None, stride=cfg.stride,
                         record_steps=[length])
    lines = ["stream\tprotocol\tlog_prob"]
    for n in range(len(batch)):
        lines.append(f"{batch.streams[n]}\t{protocol_string(batch.protocol(n))}\t{batch.log_prob[n]:.17g}")
    proj = md.model.projectors.stack()
    w = np.real(np.einsum("fij,nji->nf", proj, batch.states[length]))
    outs = {"trajectories.tsv": "\n".join(lines) + "\n",
            "final_weights.json": _json({"labels": md.model.labels, "step": length, "weights": w})}
    if cfg.stride is not None:
        steps = sorted(batch.states)
        outs["weights_by_step.json"] = _json({
            "steps": steps,
            "weights": [np.real(np.einsum("fij,nji->nf", proj, batch.states[s])) for s in steps]})
    return outs, True, f"simulate: {len(batch)} trajectories of length {length}"


def _initial_state(md: ModelDocument):
    rho = md.extra.get("rho0")
    if rho is None:
        return np.eye(md.model.dim) / md.model.dim
    return validate_density(decode_matrix(rho)).matrix


def cmd_estimate(cfg: RunConfig, md: ModelDocument):
    rep = error_probability(md.dynamics(), _initial_state(md), cfg.k, cfg.r,
                            method=cfg.method or "exact",
                            n_samples=cfg.n_traj or 100_000, seed=cfg.seed, model=md.model)
    body = {"k": rep.k, "r": rep.r, "method": rep.method, "eps": rep.eps, "total": rep.total,
            "stderr": rep.mc_stderr, "total_stderr": rep.total_stderr, "n_samples": rep.n_samples}
    return {"estimate.json": _json(body)}, True, f"estimate: total eps = {rep.total:.6g}"


def cmd_bounds(cfg: RunConfig, md: ModelDocument):
    dyn = md.dynamics()
    mode = "analytic" if dyn.unitary_norm is not None else "sampled"
    consts = assumption_constants(dyn, md.model, mode=mode, seed=cfg.seed)
    cert = sanov_certificate(md.model, n_samples=cfg.n_traj or 100_000, seed=cfg.seed)
    body = {"d1": consts.d1, "d2": consts.d2, "d": consts.d, "d1_method": consts.d1_method,
            "d1_upper": consts.d1_upper, "sanov_radius": cert.radius, "sanov_passed": cert.passed,
            "fits": {nu: {"C": f.C, "a": f.a, "rate": f.rate, "rate_se": f.rate_se,
                          "target_rate": f.target_rate, "r_grid": f.r_grid,
                          "exceedance": f.exceedance, "passed": f.passed}
                     for nu, f in cert.fits.items()}}
    ok = cert.passed
    if ok:
        b = lemma42_bounds(consts, cert.C, cert.a, cfg.k, cfg.r)
        body["lemma_bounds"] = dataclasses.asdict(b)
        body["k"], body["r"] = cfg.k, cfg.r
    return {"bounds.json": _json(body)}, ok, f"bounds: d = {consts.d:.6g}, sanov {'pass' if ok else 'FAIL'}"


def cmd_purify(cfg: RunConfig, md: ModelDocument):
    length = cfg.k if cfg.k > 0 else 200
    dyn = md.dynamics()
    rho0 = _initial_state(md)
    born = born_rule_check(dyn, rho0, md.model, cfg.n_traj or 1000, length, cfg.seed)
    stride = cfg.stride or max(1, length // 10)
    steps = sorted(set(range(stride, length + 1, stride)) | {length})
    body = {"born": {"n_traj": born.n_traj, "length": born.length, "counts": born.counts,
                     "freqs": born.freqs, "intervals": born.intervals, "expected": born.expected,
                     "unresolved": born.unresolved}}
    if md.model.n_facts > 1:
        dec = offdiagonal_decay(dyn, rho0, md.model, steps, cfg.n_traj or 1000, cfg.seed)
        body["decay"] = {"steps": dec.steps, "mean": dec.mean, "stderr": dec.stderr,
                         "bound": dec.bound}
    ok = all(lo <= born.expected[nu] <= hi for nu, (lo, hi) in born.intervals.items())
    return {"purify.json": _json(body)}, ok, f"purify: born rule {'consistent' if ok else 'INCONSISTENT'}"


def _cycle_config(cfg: RunConfig, md: ModelDocument):
    return md.cycle_config(**cfg.cycle)


def cmd_jumps(cfg: RunConfig, md: ModelDocument):
    cc = _cycle_config(cfg, md)
    rho0 = _initial_state(md)
    eps = 0.05 if cfg.epsilon is None else cfg.epsilon
    runs = cfg.n_traj or 1
    jt, _ = run_cycles(cc, rho0, cfg.n_cycles, cfg.seed)
    t43 = theorem43_check(cc, rho0, cfg.n_cycles, eps, cfg.seed, n_runs=runs)
    body = {"theorem43": dataclasses.asdict(t43)}
    try:
        mc = markov_limit_comparison(cc, rho0, cfg.n_cycles, cfg.seed, n_runs=runs)
        body["markov"] = mc.to_dict()
    except InsufficientResolvedCycles as exc:
        body["markov"] = {"error": str(exc)}
    return ({"jumps.tsv": jt.to_tsv(), "jumps.json": _json(body)}, True,
            f"jumps: theorem 4.3 fraction {t43.fraction:.4f} ({'pass' if t43.passed else 'fail'})")


def cmd_histories(cfg: RunConfig, md: ModelDocument):
    method = {"exact": "exact", "mc": "montecarlo", None: "auto"}[cfg.method]
    rep = history_sets_probability(md.dynamics(), _initial_state(md), cfg.r, cfg.p, cfg.epsilon,
                                   method=method, budget=cfg.n_traj or 20_000, seed=cfg.seed,
                                   model=md.model)
    body = {"r": rep.r, "p": rep.p, "epsilon": rep.epsilon, "method": rep.method,
            "histories": [{"history": list(h), "mass": m} for h, m in rep.masses.items()],
            "uncovered": rep.uncovered, "uncovered_stderr": rep.uncovered_stderr}
    return {"histories.json": _json(body)}, True, f"histories: uncovered mass {rep.uncovered:.6g}"


HANDLERS = {"validate": cmd_validate, "simulate": cmd_simulate, "estimate": cmd_estimate,
            "bounds": cmd_bounds, "purify": cmd_purify, "jumps": cmd_jumps,
            "histories": cmd_histories}


def parse_sweep(spec: str):
    """``"r:4,8,12"`` to ``("r", [4, 8, 12])``."""
    if spec is None or ":" not in spec:
        raise UsageError("--sweep needs the form param:v1,v2,...")
    name, values = spec.split(":", 1)
    name = name.strip().replace("-", "_")
    if name not in SWEEPABLE:
        raise UsageError(f"cannot sweep {name!r}; choose from {sorted(SWEEPABLE)}")
    try:
        vals = [SWEEPABLE[name](v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad sweep values {values!r}") from None
    if not vals:
        raise UsageError("empty sweep list")
    return name, vals


def cmd_sweep(cfg: RunConfig, md: ModelDocument):
    if cfg.target not in HANDLERS or cfg.target == "validate":
        raise UsageError(f"cannot sweep command {cfg.target!r}")
    name, vals = parse_sweep(cfg.sweep)
    points, ok_all = [], True
    for v in vals:
        point = dataclasses.replace(cfg, command=cfg.target, cycle=dict(cfg.cycle))
        if name in ("M", "lambda1", "lambda2"):
            point.cycle[name] = v
        else:
            setattr(point, name, v)
        outs, ok, _ = HANDLERS[cfg.target](point, md)
        ok_all &= ok
        payload = {f: json.loads(t) for f, t in outs.items() if f.endswith(".json")}
        points.append({"value": v, "ok": ok, "outputs": payload})
    return ({"sweep.json": _json({"param": name, "target": cfg.target, "points": points})},
            ok_all, f"sweep: {len(vals)} points of {cfg.target} over {name}")


HANDLERS["sweep"] = cmd_sweep


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qfacts", description="Facts, histories and repeated measurements.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--model", help="model JSON file")
        p.add_argument("--seed", type=int, help="64-bit seed (required except for validate)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--k", type=int)
        p.add_argument("--r", type=int)
        p.add_argument("--p", type=int)
        p.add_argument("--n-traj", dest="n_traj", type=int)
        p.add_argument("--n-cycles", dest="n_cycles", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--method", choices=("exact", "mc"))
        p.add_argument("--stride", type=int)
        p.add_argument("--sweep", help="param:v1,v2,...")
        p.add_argument("--target", choices=[c for c in COMMANDS if c not in ("validate", "sweep")])
        p.add_argument("--config", help="JSON file whose keys override the flags")
    return ap


def make_config(ns: argparse.Namespace) -> RunConfig:
    values = {k: v for k, v in vars(ns).items() if v is not None and k != "config"}
    if ns.config is not None:
        try:
            with open(ns.config) as fh:
                extra = json.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
        if not isinstance(extra, dict):
            raise UsageError("config must be a JSON object")
        extra = {k.replace("-", "_"): v for k, v in extra.items()}
        allowed = {f.name for f in dataclasses.fields(RunConfig)} - {"command"}
        unknown = set(extra) - allowed
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        values.update(extra)
    if "model" not in values:
        raise UsageError("--model is required")
    if values["command"] != "validate" and values.get("seed") is None:
        raise UsageError("--seed is required")
    if values.get("seed") is not None:
        s = int(values["seed"])
        if not 0 <= s < 2**64:
            raise UsageError("seed must fit in 64 unsigned bits")
    if values["command"] == "sweep":
        parse_sweep(values.get("sweep"))
    cfg = RunConfig(**values)
    if cfg.method not in (None, "exact", "mc"):
        raise UsageError("--method must be exact or mc")
    return cfg


def run(cfg: RunConfig, md: ModelDocument, model_digest: str):
    """Execute one command and persist its outputs followed by the manifest."""
    t0 = time.perf_counter()
    outs, ok, summary = HANDLERS[cfg.command](cfg, md)
    elapsed = time.perf_counter() - t0
    out = Path(cfg.out)
    digests = {}
    for name in sorted(outs):
        atomic_write_text(out / name, outs[name])
        digests[name] = sha256_file(out / name)
    manifest = {"version": _version(), "config": cfg.snapshot(), "model_sha256": model_digest,
                "outputs": digests, "passed": ok, "elapsed_seconds": round(elapsed, 3)}
    write_json(out / "manifest.json", manifest)
    return ok, summary


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = make_config(ns)
    except UsageError as exc:
        print(f"qfacts: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"qfacts: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        md = load_model(cfg.model)
        digest = sha256_file(cfg.model)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"qfacts: cannot load model {cfg.model}: {exc}", file=sys.stderr)
        return EXIT_IO
    except QFactsError as exc:
        print(f"qfacts: invalid model: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"qfacts: cannot parse model {cfg.model}: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        ok, summary = run(cfg, md, digest)
    except QFactsError as exc:
        print(f"qfacts: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (UsageError, ValueError) as exc:
        print(f"qfacts: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"qfacts: {exc}", file=sys.stderr)
        return EXIT_IO
    print(summary)
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
