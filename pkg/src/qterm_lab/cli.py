"""Command-line experiment runner.

    qterm-lab SUBCOMMAND --scenario PATH [--trials N] [--seed U64] [--out DIR] ...

Each run writes ``records.jsonl`` (one line per trial, or per bound for the
tail-bound subcommands), ``summary.csv`` and ``result.json`` into the output
directory; ``--plot-data`` adds ``plot.csv``.  Timing lives in ``result.json``
only, so the JSONL stream is byte-identical across reruns.

Exit codes: 0 success, 1 malformed scenario or arguments, 2 precondition
violation, 3 refusal to verify a vacuous bound.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import bounds as B
from . import rng as rngmod
from .learner import (LearnerParams, SampleExhaustedError, agnostic_learn, classical_fidelities,
                      learn)
from .operators import OperatorError, OperatorPool
from .planted import planted_instance
from .qtr import TiltedHamiltonianModel, partition_function, qtr, qtr_limit
from .risk import LossVector, RiskError, erm, qterm_mu, term
from .scenario import (Scenario, ScenarioError, build_operator, float_list, get, load_scenario,
                       scenario_from_dict, scenario_rng)
from .search import PreconditionError, ThresholdedHypothesis, precondition_holds, threshold_search

EXIT_OK, EXIT_SCENARIO, EXIT_PRECONDITION, EXIT_VACUOUS = 0, 1, 2, 3
SUBCOMMANDS = ("risk", "search", "learn", "agnostic", "bounds", "pac", "qtr", "mc")


class VacuousBound(RuntimeError):
    pass


def load_schema() -> dict:
    text = (resources.files("qterm_lab") / "schemas" / "result_record.schema.json").read_text()
    return json.loads(text)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    return x


# -- experiments -------------------------------------------------------------------
# Each experiment is (setup, trial, summarize).  ``setup`` is deterministic in the
# scenario, so worker processes rebuild it instead of receiving pickled state.

def _gammas(sc: Scenario, args, sec: dict, path: str) -> list:
    if args.gamma_steps is not None:
        lo, hi, k = args.gamma_min, args.gamma_max, args.gamma_steps
        if k < 2 or not hi > lo:
            raise ScenarioError("--gamma-steps", "need at least 2 steps and gamma-max > gamma-min")
        return list(np.linspace(lo, hi, k))
    if args.gamma is not None:
        return [args.gamma]
    if "gammas" in sec:
        return float_list(sec, path, "gammas")
    if "gamma" in sc.tilt:
        return [float(sc.tilt["gamma"])]
    raise ScenarioError(f"{path}.gammas", "no gamma sweep given")


def _planted(sc: Scenario, sec: dict, path: str, gamma: float, n: int):
    targets = float_list(sec, path, "targets", lo=0.0, hi=1.0)
    types = get(sec, path, "types", int, 16, lambda v: v >= 1)
    spread = get(sec, path, "spread", float, 0.1, lambda v: v >= 0)
    if sc.dimension < 2:
        raise ScenarioError("dimension", "planted ensembles need dimension >= 2")
    return planted_instance(targets, gamma, n, scenario_rng(sc), dim=sc.dimension,
                            types=types, spread=spread)


def _tilt(sc: Scenario, args):
    return sc.tilt_config(gamma=args.gamma, epsilon=args.epsilon, delta=args.delta)


# risk ---------------------------------------------------------------------------

def setup_risk(sc, args):
    sec = sc.section("risk")
    gammas = _gammas(sc, args, sec, "risk")
    items = []
    if "losses" in sec:
        bound = get(sec, "risk", "bound", float, 1.0, lambda v: v > 0)
        raw = get(sec, "risk", "losses", list)
        for i, vec in enumerate(raw):
            try:
                items.append(("losses", LossVector(vec, bound)))
            except (RiskError, TypeError, ValueError) as exc:
                raise ScenarioError(f"risk.losses[{i}]", str(exc)) from None
    if "targets" in sec:
        n = get(sec, "risk", "n", int, 64, lambda v: v >= 1)
        g0 = float(sc.tilt.get("gamma", 0.0))
        inst = _planted(sc, sec, "risk", g0, n)
        for c, pool in enumerate(inst.ensemble.projector_lists):
            items.append(("hypothesis", (inst.states, pool)))
    if not items:
        raise ScenarioError("risk", "needs 'losses' and/or 'targets'")
    return {"gammas": gammas, "items": items, "trials": len(items)}


def trial_risk(ctx, t, rng):
    kind, item = ctx["items"][t]
    gs = ctx["gammas"]
    if kind == "losses":
        vals = [term(item, g) for g in gs]
        return {"kind": kind, "erm": erm(item), "gammas": gs, "term": vals}
    states, pool = item
    mus = [qterm_mu(states, pool, g) for g in gs]
    return {"kind": kind, "gammas": gs, "mu": mus, "risk": [1.0 - m for m in mus]}


def summarize_risk(ctx, recs):
    spans = []
    for r in recs:
        col = r["term"] if r["kind"] == "losses" else r["risk"]
        spans.append(max(col) - min(col))
    return {"items": len(recs), "gammas": len(ctx["gammas"]), "max_sweep_span": max(spans)}


def plot_risk(ctx, recs):
    rows = [("item", "gamma", "tilted_risk")]
    for i, r in enumerate(recs):
        col = r["term"] if r["kind"] == "losses" else r["risk"]
        rows += [(i, g, v) for g, v in zip(r["gammas"], col)]
    return rows


# search -------------------------------------------------------------------------

def setup_search(sc, args):
    sec = sc.section("search")
    tilt = _tilt(sc, args)
    n = get(sec, "search", "n", int, check=lambda v: v >= 1)
    inst = _planted(sc, sec, "search", 0.0, n)
    m = inst.ensemble.m
    if "thresholds" in sec:
        thetas = float_list(sec, "search", "thresholds", lo=0.0, hi=1.0)
        if len(thetas) != m:
            raise ScenarioError("search.thresholds", f"need one threshold per target ({m})")
    else:
        thetas = [get(sec, "search", "theta", float, check=lambda v: 0 <= v <= 1)] * m
    mode = get(sec, "search", "precondition", str, "raise",
               lambda v: v in ("raise", "warn", "ignore"))
    if mode == "raise" and not precondition_holds(n, m, tilt.epsilon, tilt.C1, tilt.C2):
        raise PreconditionError(
            f"(log m + C2)^2 < C1 n eps^2 fails for n={n}, m={m}, eps={tilt.epsilon}")
    hyps = [ThresholdedHypothesis(p, th) for p, th in zip(inst.ensemble.projector_lists, thetas)]
    return {"inst": inst, "hyps": hyps, "tilt": tilt, "backend": args.backend or sc.backend,
            "trials": args.trials or sc.trials, "thetas": thetas}


def trial_search(ctx, t, rng):
    tilt = ctx["tilt"]
    out = threshold_search(ctx["inst"].fresh_sample(), ctx["hyps"], tilt.epsilon, ctx["backend"],
                           rng, C1=tilt.C1, C2=tilt.C2, precondition="ignore")
    rec = {"accepted": out.accepted, "p_false": out.p_false,
           "scans": [[s.index, s.statistic, s.accepted] for s in out.scans]}
    if out.accepted is not None:
        c = out.accepted
        mean = float(ctx["inst"].mu[c])
        rec["accepted_mean"] = mean
        rec["sound"] = bool(mean >= ctx["thetas"][c] - tilt.epsilon)
    return rec


def summarize_search(ctx, recs):
    acc = [r for r in recs if r["accepted"] is not None]
    bad = sum(not r["sound"] for r in acc)
    rate = len(acc) / len(recs)
    viol = bad / len(acc) if acc else 0.0
    return {"trials": len(recs), "acceptance_rate": rate, "soundness_violations": viol,
            "completeness_floor": 0.03, "contract_met": bool(rate >= 0.03 and viol <= 0.05)}


# learn --------------------------------------------------------------------------

def _learn_ctx(sc, args, key):
    sec = sc.section(key)
    tilt = _tilt(sc, args)
    m = len(float_list(sec, key, "targets"))
    try:
        params = LearnerParams(tilt, m)
    except RiskError as exc:
        raise PreconditionError(str(exc)) from None
    n = sec.get("n", "required")
    if n == "required":
        n = params.n_required
    elif not isinstance(n, int) or n < 1:
        raise ScenarioError(f"{key}.n", "must be a positive integer or 'required'")
    inst = _planted(sc, sec, key, tilt.gamma, n)
    for name, (ok, need) in params.block_conditions().items():
        if not ok:
            raise PreconditionError(f"block length l={params.l} must exceed {need:.4g} ({name})")
    return sec, tilt, params, inst


def setup_learn(sc, args):
    sec, tilt, params, inst = _learn_ctx(sc, args, "learn")
    ref = get(sec, "learn", "reference", str, "none", lambda v: v in ("none", "untilted"))
    return {"params": params, "inst": inst, "eps": tilt.epsilon, "delta": tilt.delta,
            "backend": args.backend or sc.backend, "reference": ref,
            "trials": args.trials or sc.trials}


def _learn_failure(res, mu, eps):
    return bool(abs(res.mu_hat - mu.max()) >= eps or abs(res.mu_hat - mu[res.c_star]) >= eps)


def trial_learn(ctx, t, rng):
    inst, eps = ctx["inst"], ctx["eps"]
    res = learn(inst.fresh_sample(), inst.ensemble, ctx["params"], ctx["backend"], rng)
    rec = res.to_dict()
    rec.update(mu_c_star=float(inst.mu[res.c_star]), mu_best=float(inst.mu.max()),
               failure=_learn_failure(res, inst.mu, eps))
    if ctx["reference"] == "untilted":
        seed, _ = ctx["stream"]
        ref = learn(inst.fresh_sample(), inst.ensemble, ctx["params"].untilted(), ctx["backend"],
                    rngmod.trial_stream(seed, t))
        rec["reference_c_star"] = ref.c_star
        rec["agrees_with_reference"] = bool(ref.c_star == res.c_star)
    return rec


def summarize_learn(ctx, recs):
    fails = sum(r["failure"] for r in recs)
    out = {"trials": len(recs), "failure_rate": fails / len(recs), "delta": ctx["delta"],
           "random_picks": sum(r["random_pick"] for r in recs),
           "n": len(ctx["inst"].states), "T": ctx["params"].T, "k": ctx["params"].k,
           "l": ctx["params"].l}
    out["contract_met"] = bool(out["failure_rate"] <= ctx["delta"])
    if ctx["reference"] == "untilted":
        out["reference_agreement"] = sum(r["agrees_with_reference"] for r in recs) / len(recs)
    return out


def plot_learn(ctx, recs):
    return [("trial", "mu_hat", "mu_c_star", "mu_best")] + [
        (i, r["mu_hat"], r["mu_c_star"], r["mu_best"]) for i, r in enumerate(recs)]


# agnostic -----------------------------------------------------------------------

def setup_agnostic(sc, args):
    sec, tilt, params, inst = _learn_ctx(sc, args, "agnostic")
    if not tilt.has_geometry:
        tilt = tilt.with_(T=params.T, k=params.k, l=params.l)
    points = get(sec, "agnostic", "classical_points", int, 1000, lambda v: v >= 1)
    budget = B.agnostic_error_budget(tilt, inst.ensemble.m, m_net=inst.ensemble.m)
    if B.is_vacuous(budget):
        raise VacuousBound(f"agnostic error budget {budget:.4g} exceeds 1")
    return {"params": params, "inst": inst, "eps": tilt.epsilon, "budget": budget,
            "points": points, "backend": args.backend or sc.backend,
            "trials": args.trials or sc.trials}


def trial_agnostic(ctx, t, rng):
    inst, eps = ctx["inst"], ctx["eps"]
    n = len(inst.states)
    pos = rng.choice(n, size=min(ctx["points"], n), replace=False)
    data = classical_fidelities(inst.ensemble, inst.states, pos)
    res = agnostic_learn(inst.fresh_sample(), inst.ensemble, data, ctx["params"], ctx["backend"], rng)
    rec = res.to_dict()
    best = float(inst.mu.max())
    rec.update(mu_c_star=float(inst.mu[res.c_star]), mu_best=best,
               within_3eps=bool(abs(res.mu_hat - best) <= 3 * eps),
               within_2eps_own=bool(abs(res.mu_hat - inst.mu[res.c_star]) <= 2 * eps))
    rec["failure"] = not (rec["within_3eps"] and rec["within_2eps_own"])
    return rec


def summarize_agnostic(ctx, recs):
    ok3 = sum(r["within_3eps"] for r in recs) / len(recs)
    fail = sum(r["failure"] for r in recs) / len(recs)
    return {"trials": len(recs), "budget": ctx["budget"], "within_3eps_rate": ok3,
            "failure_rate": fail, "contract_met": bool(ok3 >= 1 - ctx["budget"])}


# qtr ----------------------------------------------------------------------------

def setup_qtr(sc, args):
    sec = sc.section("qtr")
    gammas = _gammas(sc, args, sec, "qtr")
    if "hamiltonian" not in sec or "state" not in sec:
        raise ScenarioError("qtr", "needs 'hamiltonian' and 'state'")
    return {"sec": sec, "gammas": gammas, "dim": sc.dimension,
            "trials": args.trials or get(sec, "qtr", "models", int, sc.trials, lambda v: v >= 1)}


def trial_qtr(ctx, t, rng):
    sec = ctx["sec"]
    h = build_operator(sec["hamiltonian"], "qtr.hamiltonian", ctx["dim"], rng, "hermitian")
    rho = build_operator(sec["state"], "qtr.state", ctx["dim"], rng, "state")
    model = TiltedHamiltonianModel(h, rho)
    vals = [qtr(model, g) if g != 0 else qtr_limit(model) for g in ctx["gammas"]]
    zs = [partition_function(model, g) for g in ctx["gammas"]]
    return {"gammas": ctx["gammas"], "Z": zs, "qtr": vals, "limit": qtr_limit(model)}


def summarize_qtr(ctx, recs):
    mono = all(all(b >= a - 1e-10 for a, b in zip(r["qtr"], r["qtr"][1:])) for r in recs)
    return {"models": len(recs), "gammas": len(ctx["gammas"]), "monotone_in_gamma": mono}


def plot_qtr(ctx, recs):
    rows = [("model", "gamma", "Z", "qtr")]
    for i, r in enumerate(recs):
        rows += [(i, g, z, q) for g, z, q in zip(r["gammas"], r["Z"], r["qtr"])]
    return rows


EXPERIMENTS = {
    "risk": (setup_risk, trial_risk, summarize_risk, plot_risk),
    "search": (setup_search, trial_search, summarize_search, None),
    "learn": (setup_learn, trial_learn, summarize_learn, plot_learn),
    "agnostic": (setup_agnostic, trial_agnostic, summarize_agnostic, None),
    "qtr": (setup_qtr, trial_qtr, summarize_qtr, plot_qtr),
}


# -- tail-bound subcommands (one record per bound) ---------------------------------

def _parse_params(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ScenarioError("--param", f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = float(v)
        except ValueError:
            out[k] = v
    return out


def build_sampler(spec: dict, kind: str, params: dict, rng, path: str):
    if not isinstance(spec, dict) or "type" not in spec:
        raise ScenarioError(path, "sampler needs a 'type'")
    typ = spec["type"]
    if typ == "bernoulli":
        p = get(spec, path, "p", float, check=lambda v: 0 <= v <= 1)
        n = int(params["n"]) if "n" in params else get(spec, path, "n", int)
        return B.BernoulliSum((p,) * n)
    if typ == "two_point":
        return B.TwoPoint(get(spec, path, "lo", float), get(spec, path, "hi", float),
                          get(spec, path, "q", float, check=lambda v: 0 <= v <= 1),
                          int(params["n"]))
    if typ == "quantum":
        dim = get(spec, path, "dim", int, 2, lambda v: v >= 1)
        n = int(params["n"])
        npool = get(spec, path, "pool", int, 8, lambda v: v >= 1)
        from .operators import random_pure_state, random_rank_projector
        st = np.stack([random_pure_state(dim, rng).matrix for _ in range(npool)])
        pr = np.stack([random_rank_projector(dim, 1, rng).matrix for _ in range(npool)])
        idx = rng.integers(npool, size=n)
        pidx = rng.integers(npool, size=n)
        return B.QuantumOutcomes(OperatorPool(st, idx, "state"), OperatorPool(pr, pidx, "projector"))
    if typ in ("grid", "populations"):
        N = get(spec, path, "N", int, check=lambda v: v >= 1)
        M = int(params.get("M", 1))
        lo, hi = float(params.get("a", 0.0)), float(params.get("b", 1.0))
        if typ == "grid":
            vals = np.tile(np.linspace(lo, hi, N), (M, 1))
            vals = np.stack([rng.permutation(v) for v in vals])
        else:
            vals = rng.uniform(lo, hi, size=(M, N))
        l = int(params.get("l", params.get("n", 0)))
        return B.FinitePopulations(vals, l, int(params.get("K", 1)))
    raise ScenarioError(path + ".type", f"unknown sampler {typ!r}")


def run_bound_entry(entry: dict, path: str, trials: int, seed: int, workers: int, rng,
                    verify: bool = True) -> dict:
    kind = entry.get("kind")
    params = dict(entry.get("params", {}))
    sampler = None
    if entry.get("sampler") is not None and verify:
        sampler = build_sampler(entry["sampler"], kind, params, rng, path + ".sampler")
        if kind == "chernoff_unit" and "mean" not in params:
            params["mean"] = float(np.sum(sampler.p))
    try:
        spec = B.BoundSpec(kind, params)
    except B.BoundDomainError as exc:
        raise ScenarioError(path, str(exc)) from None
    value = B.eval_bound(spec)
    rec = {"kind": kind, "params": params, "theoretical": value, "vacuous": B.is_vacuous(value)}
    if B.is_vacuous(value) and sampler is not None:
        raise VacuousBound(f"{kind} bound {value:.4g} is vacuous; refusing to verify it")
    if sampler is not None:
        try:
            rep = B.mc_tail(spec, sampler, trials, seed, workers)
        except B.BoundDomainError as exc:
            raise ScenarioError(path, str(exc)) from None
        rec.update(rep.to_dict())
    return rec


DEFAULT_BATTERY = [
    {"kind": "chernoff_unit", "params": {"n": 200, "eps": 0.2},
     "sampler": {"type": "bernoulli", "p": 0.5}},
    {"kind": "chernoff_bounded", "params": {"n": 100, "delta_dev": 0.3, "a": 0.5, "b": 2.0},
     "sampler": {"type": "two_point", "lo": 0.5, "hi": 2.0, "q": 0.5}},
    {"kind": "naive_expectation", "params": {"n": 100, "eps": 0.15},
     "sampler": {"type": "quantum", "dim": 2, "pool": 8}},
    {"kind": "exponential_expectation", "params": {"n": 100, "eps": 0.1, "c": 0.5},
     "sampler": {"type": "bernoulli", "p": 0.3}},
    {"kind": "hoeffding_wor", "params": {"n": 50, "t": 0.15, "a": 0.0, "b": 1.0},
     "sampler": {"type": "grid", "N": 500}},
    {"kind": "hoeffding_multi", "params": {"l": 50, "t": 0.2, "a": 0.0, "b": 1.0, "M": 3},
     "sampler": {"type": "populations", "N": 500}},
    {"kind": "hoeffding_batched",
     "params": {"K": 3, "l": 50, "t": 0.4, "a": 0.0, "b": 1.0, "M": 2, "N": 500},
     "sampler": {"type": "populations", "N": 500}},
]


def run_tail(sub: str, sc: Scenario | None, args) -> tuple:
    seed = args.seed if args.seed is not None else (sc.seed if sc else 0)
    trials = args.trials or (sc.trials if sc else 10_000)
    rng = rngmod.stream(seed, rngmod.SCENARIO, 0)
    if sub == "bounds":
        if args.kind:
            # start from the matched default scenario for this kind, if there is one
            base = next((e for e in DEFAULT_BATTERY if e["kind"] == args.kind), {})
            entry = {"kind": args.kind, "params": dict(base.get("params", {}))}
            if "sampler" in base:
                entry["sampler"] = base["sampler"]
            if sc and "bounds" in sc.sections:
                sec = sc.section("bounds")
                entry["params"].update(sec.get("params", {}))
                entry["sampler"] = sec.get("sampler", entry.get("sampler"))
        elif sc:
            entry = copy.deepcopy(sc.section("bounds"))
        else:
            raise ScenarioError("--kind", "give --kind or a scenario with a 'bounds' section")
        for k, v in _parse_params(args.param).items():
            entry.setdefault("params", {})[k] = v
        rec = run_bound_entry(entry, "bounds", trials, seed, args.workers, rng)
        if rec["vacuous"]:
            raise VacuousBound(f"{rec['kind']} bound {rec['theoretical']:.4g} is vacuous")
        recs = [rec]
    elif sub == "mc":
        battery = sc.sections.get("mc", DEFAULT_BATTERY) if sc else DEFAULT_BATTERY
        if not isinstance(battery, list):
            raise ScenarioError("mc", "must be a list of bound entries")
        recs = [run_bound_entry(e, f"mc[{i}]", trials, seed, args.workers, rng)
                for i, e in enumerate(battery)]
    else:  # pac
        sec = sc.section("pac") if sc else {}
        tilt = sc.tilt if sc else {}
        gamma = args.gamma if args.gamma is not None else float(tilt.get("gamma", 0.01))
        eps = args.epsilon if args.epsilon is not None else float(tilt.get("epsilon", 0.05))
        if "constant" in sec:
            cls = B.ConstantLosses(tuple(float_list(sec, "pac", "constant", lo=0, hi=1)))
        else:
            cls = B.ThresholdLosses(tuple(float_list(sec, "pac", "cuts", [0.2, 0.4, 0.6, 0.8], 0, 1)))
        ns = sec.get("n", 100)
        ns = ns if isinstance(ns, list) else [ns]
        recs = []
        for n in ns:
            if not isinstance(n, int) or n < 1:
                raise ScenarioError("pac.n", "must be a positive integer or a list of them")
            rep = B.pac_gap_experiment(cls, n, gamma, eps, trials, seed, args.workers)
            if rep.vacuous:
                raise VacuousBound(f"pac bound {rep.theoretical:.4g} is vacuous at n={n}")
            rec = rep.to_dict()
            rec.update(n=n, gamma=gamma, eps=eps, m=len(cls.risks))
            recs.append(rec)
    records = [_record(sc, sub, seed, i, r) for i, r in enumerate(recs)]
    summary = {"bounds": len(recs), "all_dominated": all(r.get("dominated", True) for r in recs)}
    plot = None
    if sub == "pac":
        plot = [("n", "empirical_frequency", "bound")] + [
            (r["n"], r["empirical_frequency"], r["theoretical"]) for r in recs]
    elif "empirical_frequency" in recs[0]:
        plot = [("kind", "empirical_frequency", "bound")] + [
            (r["kind"], r.get("empirical_frequency"), r["theoretical"]) for r in recs]
    return seed, records, summary, plot


# -- runner ------------------------------------------------------------------------

def _record(sc, sub, seed, trial, output) -> dict:
    return {"scenario": sc.name if sc else "<flags>", "subcommand": sub, "seed": seed,
            "trial": trial, "version": __version__, "rng": rngmod.ALGORITHM,
            "output": _jsonable(output)}


_WORKER = {}


def _worker_init(sub, scenario_dict, argv_ns):
    sc = scenario_from_dict(scenario_dict)
    args = argparse.Namespace(**argv_ns)
    ctx = EXPERIMENTS[sub][0](sc, args)
    ctx["stream"] = (argv_ns["_seed"], sub)
    _WORKER.update(sub=sub, ctx=ctx)


def _worker_run(bounds):
    lo, hi = bounds
    sub, ctx = _WORKER["sub"], _WORKER["ctx"]
    seed = ctx["stream"][0]
    trial = EXPERIMENTS[sub][1]
    return [trial(ctx, t, rngmod.trial_stream(seed, t)) for t in range(lo, hi)]


def run_trials(sub: str, sc: Scenario, args) -> tuple:
    setup, trial, summarize, plotter = EXPERIMENTS[sub]
    seed = args.seed if args.seed is not None else sc.seed
    ctx = setup(sc, args)
    ctx["stream"] = (seed, sub)
    n = ctx["trials"]
    workers = max(1, args.workers)
    shards = B._shards(n, workers)
    rngmod.check_disjoint([range(lo, hi) for lo, hi in shards])
    if workers == 1:
        outs = [trial(ctx, t, rngmod.trial_stream(seed, t)) for t in range(n)]
    else:
        ns = dict(vars(args))
        ns["_seed"] = seed
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=(sub, sc.to_dict(), ns)) as ex:
            outs = [o for chunk in ex.map(_worker_run, shards) for o in chunk]
    outs = [_jsonable(o) for o in outs]
    summary = summarize(ctx, outs)
    plot = plotter(ctx, outs) if plotter else None
    return seed, [_record(sc, sub, seed, t, o) for t, o in enumerate(outs)], summary, plot


def _csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return buf.getvalue()


def write_outputs(out: Path, sub, sc, seed, records, summary, plot, wall, code) -> None:
    import jsonschema
    schema = load_schema()
    validator = jsonschema.Draft202012Validator(schema)
    for r in records:
        validator.validate(r)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    rows = [("key", "value")] + [(k, v) for k, v in sorted(_jsonable(summary).items())]
    (out / "summary.csv").write_text(_csv_text(rows))
    if plot is not None:
        (out / "plot.csv").write_text(_csv_text(plot))
    result = {"scenario": sc.name if sc else "<flags>", "subcommand": sub, "seed": seed,
              "trials": len(records), "summary": _jsonable(summary), "version": __version__,
              "rng": rngmod.ALGORITHM, "wall_clock_s": wall, "exit_code": code}
    (out / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON file, or the name of a shipped scenario")
    common.add_argument("--trials", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--gamma", type=float)
    common.add_argument("--epsilon", type=float)
    common.add_argument("--delta", type=float)
    common.add_argument("--out", default=os.environ.get("QTERM_LAB_OUT", "qterm_out"))
    common.add_argument("--plot-data", action="store_true")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--backend", choices=("oracle", "sampled"))
    common.add_argument("--gamma-min", type=float, default=-1.0)
    common.add_argument("--gamma-max", type=float, default=1.0)
    common.add_argument("--gamma-steps", type=int)
    p = argparse.ArgumentParser(prog="qterm-lab", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    subs = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = subs.add_parser(name, parents=[common])
        if name == "bounds":
            sp.add_argument("--kind", choices=B.KINDS)
            sp.add_argument("--param", action="append", metavar="KEY=VALUE")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_SCENARIO
    sub = args.subcommand
    t0 = time.perf_counter()
    try:
        if args.seed is not None:
            rngmod.check_seed(args.seed)
        if args.trials is not None and args.trials < 1:
            raise ScenarioError("--trials", "must be positive")
        if args.workers < 1:
            raise ScenarioError("--workers", "must be positive")
        sc = load_scenario(args.scenario) if args.scenario else None
        if sub in ("bounds", "mc", "pac"):
            seed, records, summary, plot = run_tail(sub, sc, args)
        else:
            if sc is None:
                raise ScenarioError("--scenario", f"'{sub}' needs a scenario")
            seed, records, summary, plot = run_trials(sub, sc, args)
    except (ScenarioError, OperatorError) as exc:
        print(f"error: malformed scenario: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except rngmod.SeedCollisionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except (PreconditionError, SampleExhaustedError) as exc:
        print(f"error: precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except VacuousBound as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_VACUOUS
    except (ValueError, RiskError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    wall = time.perf_counter() - t0
    write_outputs(Path(args.out), sub, sc, seed, records, summary, plot, wall, EXIT_OK)
    print(json.dumps({"subcommand": sub, "out": str(args.out), **_jsonable(summary)}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
