"""``driftplan`` command line: build artifacts stage by stage, generate, benchmark and simulate.

Every command works inside one run directory (``--out``). ``synth`` writes the
run's ``config.json``; later commands read it unless ``--config`` is given.
Each artifact carries the hash of the config that produced it and is refused
when loaded under a different config.

Exit codes: 0 when every self-check passed, 1 when a self-check failed, 2 for
usage errors, missing prerequisites, unreadable inputs or hash mismatches.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np
from scipy.stats import trim_mean

from . import pipeline
from .config import RunConfig
from .decoder import GenerationError, Planner
from .manifold import Dictionary, PcaHead, TrajectoryVAE, brute_force_separation, separation_metrics, vae_project
from .nn import checkpoint, no_grad
from .nn.checkpoint import CheckpointError
from .scene import SCENARIO_SCHEMA, Scenario, ScenarioParseError
from .sim.corpus import LABELS, TrajectoryCorpus
from .sim.episode import MODES, EpisodeReport, run_episode
from .sim.scenarios import make_scenario

log = logging.getLogger("driftplan")

ALPHA_SWEEP = (-0.5, 0.0, 0.5, 1.0, 1.5)
TRIM = 0.05                 # fraction dropped at each end of the latency samples
MIN_REPEATS = 20
REFERENCE_SPEEDUP = 99 / 13  # reference iterative vs single-step latency ratio

FILES = {
    "config": "config.json",
    "manifest": "manifest.json",
    "corpus": "corpus.dpa",
    "scenarios": "scenarios",
    "vae": "vae.ckpt",
    "vae_report": "vae_report.json",
    "dictionary": "dictionary.json",
    "pca": "pca.ckpt",
    "planner": "planner.ckpt",
    "steps": "planner_steps.jsonl",
    "planner_report": "planner_report.json",
    "proposals": "proposals",
    "sweep": "alpha_sweep.csv",
    "latency_csv": "latency.csv",
    "latency": "latency.json",
    "episodes": "episodes.csv",
    "traces": "traces",
    "metrics": "metrics.json",
}
MAKER = {"corpus": "synth", "scenarios": "synth", "vae": "train-vae", "dictionary": "build-dict",
         "pca": "fit-pca", "planner": "train-planner"}


class CommandError(Exception):
    """Reported as ``error: ...`` with exit code 2."""


class Run:
    def __init__(self, out: Path, cfg: RunConfig):
        self.out = out
        self.cfg = cfg
        self.hash = cfg.hash()

    def path(self, key: str) -> Path:
        return self.out / FILES[key]

    def require(self, key: str) -> Path:
        p = self.path(key)
        if not p.exists():
            raise CommandError(f"missing {key} artifact {p}; run 'driftplan {MAKER[key]} --out {self.out}' first")
        return p

    def check_hash(self, stored: str, path: Path) -> None:
        if stored != self.hash:
            raise CommandError(f"{path} was written with config hash {stored}, current config is {self.hash}; "
                               "rebuild it or pass the matching --config")

    # -- artifact loaders ------------------------------------------------------
    def corpus(self) -> TrajectoryCorpus:
        p = self.require("corpus")
        arrays, meta = checkpoint.load(p)
        self.check_hash(meta.get("config_hash", ""), p)
        return TrajectoryCorpus.from_arrays(arrays)

    def scenarios(self) -> list[Scenario]:
        d = self.require("scenarios")
        manifest = json.loads(self.require_manifest().read_text())
        self.check_hash(manifest.get("config_hash", ""), d)
        return [Scenario.load(d / name) for name in manifest["scenarios"]]

    def require_manifest(self) -> Path:
        p = self.path("manifest")
        if not p.exists():
            raise CommandError(f"missing manifest {p}; run 'driftplan synth --out {self.out}' first")
        return p

    def vae(self) -> TrajectoryVAE:
        p = self.require("vae")
        return _refusing(lambda: TrajectoryVAE.load(p, self.hash))

    def dictionary(self) -> Dictionary:
        p = self.require("dictionary")
        d = Dictionary.load(p)
        self.check_hash(d.config_hash, p)
        return d

    def pca(self) -> PcaHead:
        p = self.require("pca")
        return _refusing(lambda: PcaHead.load(p, self.hash))

    def planner(self) -> Planner:
        p = self.require("planner")
        return _refusing(lambda: Planner.load(p, self.cfg))


def _refusing(load):
    try:
        return load()
    except CheckpointError as e:
        raise CommandError(str(e)) from e


def load_run(args, creating: bool = False) -> Run:
    out = Path(args.out)
    if args.config:
        cfg = RunConfig.load(args.config)
    elif (out / FILES["config"]).exists() and not creating:
        cfg = RunConfig.load(out / FILES["config"])
    elif creating:
        cfg = RunConfig()
    else:
        raise CommandError(f"no config: pass --config or run 'driftplan synth --out {out}' first")
    return Run(out, cfg)


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def check(ok: bool, what: str, failures: list[str]) -> None:
    if not ok:
        failures.append(what)
        log.error("self-check failed: %s", what)


# -- commands -------------------------------------------------------------------

def cmd_synth(args) -> list[str]:
    run = load_run(args, creating=True)
    if args.seed is not None:
        run.cfg.corpus.seed = args.seed
        run = Run(run.out, run.cfg)
    try:
        run.out.mkdir(parents=True, exist_ok=True)
        run.path("scenarios").mkdir(exist_ok=True)
    except OSError as e:
        raise CommandError(f"cannot create {run.out}: {e}") from e
    cfg = run.cfg
    run.cfg.save(run.path("config"))
    corpus = pipeline.corpus_for(cfg)
    checkpoint.save(run.path("corpus"), corpus.to_arrays(), {"kind": "corpus", "config_hash": run.hash})
    scenarios = pipeline.scenarios_for(cfg)
    names = []
    for sc in scenarios:
        name = f"{sc.name}.json"
        sc.save(run.path("scenarios") / name)
        names.append(name)
    files = {n: sha256(run.path("scenarios") / n) for n in names}
    write_json(run.path("manifest"), {"config_hash": run.hash, "scenarios": names, "sha256": files,
                                      "corpus_sha256": sha256(run.path("corpus"))})

    failures: list[str] = []
    for n in names:
        doc = json.loads((run.path("scenarios") / n).read_text())
        check(not list(jsonschema.Draft202012Validator(SCENARIO_SCHEMA).iter_errors(doc)), f"{n} schema", failures)
    counts = np.bincount(corpus.labels, minlength=len(LABELS))
    if len(corpus) >= len(LABELS) * 10:
        check(bool(np.all(counts > 0)), "every kinematic label present", failures)
    print(f"corpus: {len(corpus)} trajectories, label counts {counts.tolist()}, "
          f"tag counts {np.bincount(corpus.tags, minlength=6).tolist()}")
    print(f"scenarios: {len(names)} written to {run.path('scenarios')}")
    print(f"config hash: {run.hash}")
    return failures


def separation_report(corpus: TrajectoryCorpus, vae: TrajectoryVAE, pca: PcaHead) -> dict:
    z = vae_project(corpus.trajectories, vae)
    y = pca.encode(corpus.trajectories)
    return {"config_hash": "", "n": len(corpus),
            "vae": separation_metrics(z, corpus.labels).as_dict(),
            "pca": separation_metrics(y, corpus.labels).as_dict()}


def cmd_train_vae(args) -> list[str]:
    run = load_run(args)
    corpus = run.corpus()
    vae = pipeline.fit_vae(run.cfg, corpus)
    vae.save(run.path("vae"), run.hash)
    report = separation_report(corpus, vae, pipeline.pca_for(run.cfg, corpus))
    report["config_hash"] = run.hash
    write_json(run.path("vae_report"), report)
    failures: list[str] = []
    v = report["vae"]
    check(all(np.isfinite(list(v.values()))), "finite separation report", failures)
    print(f"vae latent: intra={v['intra']:.4f} inter={v['inter']:.4f} ratio={v['ratio']:.4f}")
    p = report["pca"]
    print(f"pca space:  intra={p['intra']:.4f} inter={p['inter']:.4f} ratio={p['ratio']:.4f}")
    return failures


def cmd_build_dict(args) -> list[str]:
    run = load_run(args)
    corpus = run.corpus()
    d = pipeline.dictionary_for(run.cfg, corpus)
    d.config_hash = run.hash
    d.save(run.path("dictionary"))
    counts = d.class_counts()
    failures: list[str] = []
    check(sum(counts) == len(corpus), "class counts cover the corpus", failures)
    check(all(c > 0 for c in counts), "no empty class", failures)
    print(f"dictionary: {d.n_fine} fine clusters, {d.n_macro} classes, class counts {counts}")
    return failures


def cmd_fit_pca(args) -> list[str]:
    run = load_run(args)
    corpus = run.corpus()
    head = pipeline.pca_for(run.cfg, corpus)
    head.save(run.path("pca"), run.hash)
    failures: list[str] = []
    err = np.abs(head.decode(head.encode(corpus.trajectories)) - corpus.trajectories).max()
    check(np.array_equal(head.decode(np.zeros(head.d)).reshape(-1), head.mu), "zero code decodes to the mean", failures)
    print(f"pca: d={head.d}, explained variance {np.round(head.explained_variance, 4).tolist()}, "
          f"max reconstruction error {err:.4f} m")
    return failures


def cmd_train_planner(args) -> list[str]:
    run = load_run(args)
    # check every prerequisite before the slow part starts
    vae, dictionary, pca = run.vae(), run.dictionary(), run.pca()
    corpus, scenarios = run.corpus(), run.scenarios()
    art = pipeline.Artifacts(run.cfg, corpus, vae, dictionary, pca)
    seed = run.cfg.planner.seed if args.seed is None else args.seed
    with run.path("steps").open("w") as stream:
        planner, reports = pipeline.overfit_planner(art, scenarios, seed=seed, stream=stream)
    planner.save(run.path("planner"), {"train_seed": seed})
    losses = np.array([r.loss for r in reports])
    tail = max(1, len(losses) // 10)
    summary = {"config_hash": run.hash, "steps": len(losses), "seed": seed,
               "initial_loss": float(losses[0]), "final_loss": float(losses[-1]),
               "min_loss": float(losses.min()), "tail_mean_loss": float(losses[-tail:].mean()),
               "scenarios": len(scenarios)}
    write_json(run.path("planner_report"), summary)
    failures: list[str] = []
    check(bool(np.all(np.isfinite(losses))), "finite training losses", failures)
    print(f"planner: {summary['steps']} steps on {len(scenarios)} scenarios, loss {summary['initial_loss']:.4f} "
          f"-> {summary['final_loss']:.4f} (min {summary['min_loss']:.4f}, "
          f"last-10% mean {summary['tail_mean_loss']:.4f})")
    return failures


def _scenario_arg(run: Run, path: str | None) -> Scenario:
    if path is None:
        return run.scenarios()[0]
    try:
        return Scenario.load(path)
    except ScenarioParseError as e:
        raise CommandError(f"{path}: {e}") from e
    except OSError as e:
        raise CommandError(f"cannot read scenario {path}: {e}") from e


def cmd_infer(args) -> list[str]:
    run = load_run(args)
    planner = run.planner()
    sc = _scenario_arg(run, args.scenario)
    k = args.k or run.cfg.sim.k
    seed = 0 if args.seed is None else args.seed
    alphas = args.alpha if args.alpha is not None else list(ALPHA_SWEEP)
    out = run.path("proposals")
    out.mkdir(exist_ok=True)
    failures: list[str] = []
    vae = run.vae() if run.path("vae").exists() else None
    rows = []
    for a in alphas:
        t0 = time.perf_counter()
        try:
            ps = planner.generate(sc, k, a, seed)
        except GenerationError as e:
            check(False, f"generation at alpha {a}: {e}", failures)
            continue
        wall = time.perf_counter() - t0
        path = out / f"{sc.name}_alpha{a:+.2f}.json"
        ps.save(path)
        check(ps.nfe == 1, f"NFE == 1 at alpha {a}", failures)
        check(bool(np.isfinite(ps.trajectories).all()), f"finite proposals at alpha {a}", failures)
        print(f"infer: scenario={sc.name} alpha={a:+.2f} K={ps.k} NFE={ps.nfe} wall_time={wall * 1e3:.2f} ms "
              f"-> {path}")
        row = {"alpha": a, "k": ps.k, "nfe": ps.nfe, "wall_time_ms": wall * 1e3}
        if vae is not None:
            z = vae_project(ps.trajectories, vae)
            row["dispersion"] = pipeline.mean_pairwise(z)
            if sc.positives:
                zp = vae_project(sc.positive_array(), vae)
                row["target_distance"] = float(np.linalg.norm(z[:, None] - zp[None], axis=-1).min(axis=1).mean())
        rows.append(row)
    cols = ["alpha", "k", "nfe", "wall_time_ms", "dispersion", "target_distance"]
    write_csv(run.path("sweep"), cols, [{c: r.get(c, "") for c in cols} for r in rows])
    return failures


def bench_timings(planner: Planner, sc: Scenario, k: int, repeats: int, seed: int = 0,
                  iterative_steps: int = 10) -> dict[str, np.ndarray]:
    """Wall-clock samples (seconds) for the full pipeline, one decoder pass and an iterated decoder."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((k, planner.width))
    times = {"full": [], "decoder": [], "iterative": []}
    with no_grad():
        tok = planner.tokens([sc])
        planner.decode(planner.latents(tok, noise, 1.0))     # warm-up
        for r in range(repeats):
            t0 = time.perf_counter()
            planner.generate(sc, k, 1.0, seed + r)
            times["full"].append(time.perf_counter() - t0)

            t0 = time.perf_counter()
            planner.decode(planner.latents(tok, noise, 1.0))
            times["decoder"].append(time.perf_counter() - t0)

            t0 = time.perf_counter()
            for _ in range(iterative_steps):
                planner.decode(planner.latents(tok, noise, 1.0))
            times["iterative"].append(time.perf_counter() - t0)
    return {key: np.array(v) for key, v in times.items()}


def latency_summary(times: dict[str, np.ndarray]) -> dict:
    tm = {key: float(trim_mean(v, TRIM)) for key, v in times.items()}
    return {"trimmed_mean_s": tm, "repeats": len(times["full"]), "trim_each_end": TRIM,
            "speedup_iterative_over_full": tm["iterative"] / tm["full"],
            "speedup_iterative_over_decoder": tm["iterative"] / tm["decoder"],
            "reference_speedup": REFERENCE_SPEEDUP}


def cmd_bench(args) -> list[str]:
    run = load_run(args)
    planner = run.planner()
    sc = _scenario_arg(run, args.scenario)
    k = args.k or run.cfg.sim.k
    if args.repeats < MIN_REPEATS:
        log.warning("only %d repeats; trimmed means over fewer than %d samples are unreliable",
                    args.repeats, MIN_REPEATS)
    if args.repeats < 1:
        raise CommandError("--repeats must be at least 1")
    summary = latency_summary(bench_timings(planner, sc, k, args.repeats, args.seed or 0))
    summary.update({"config_hash": run.hash, "k": k, "scenario": sc.name})
    write_json(run.path("latency"), summary)
    tm = summary["trimmed_mean_s"]
    write_csv(run.path("latency_csv"), ["stage", "trimmed_mean_ms", "repeats"],
              [{"stage": s, "trimmed_mean_ms": tm[s] * 1e3, "repeats": summary["repeats"]} for s in tm])
    failures: list[str] = []
    check(all(np.isfinite(v) and v > 0 for v in tm.values()), "positive finite timings", failures)
    for stage in ("full", "decoder", "iterative"):
        print(f"bench: {stage:<9} {tm[stage] * 1e3:9.3f} ms (K={k}, trimmed mean of {summary['repeats']})")
    print(f"bench: iterative/full = {summary['speedup_iterative_over_full']:.2f}x, "
          f"iterative/decoder = {summary['speedup_iterative_over_decoder']:.2f}x, "
          f"reference = {REFERENCE_SPEEDUP:.2f}x")
    return failures


def _failure_row(name: str, mode: str, seed: int, ticks: int, err: Exception) -> EpisodeReport:
    nan = float("nan")
    return EpisodeReport(name, mode, seed, ticks, 0, 0, nan, nan, nan, nan, error=f"{type(err).__name__}: {err}")


def cmd_simulate(args) -> list[str]:
    run = load_run(args)
    planner = run.planner()
    sim = run.cfg.sim
    mode = args.mode or sim.mode
    k = args.k or sim.k
    alpha = args.alpha[0] if args.alpha else sim.alpha
    if args.scenarios:
        scenarios = [_scenario_arg(run, p) for p in args.scenarios]
    elif args.kinds:
        seeds = range(args.scenario_seed, args.scenario_seed + args.n_seeds)
        scenarios = [make_scenario(kind, s) for kind in args.kinds for s in seeds]
    else:
        scenarios = run.scenarios()
    traces = run.path("traces")
    traces.mkdir(exist_ok=True)
    base_seed = 0 if args.seed is None else args.seed
    reports = []
    for i, sc in enumerate(scenarios):
        seed = base_seed + i
        with (traces / f"{sc.name}_{mode}.jsonl").open("w") as trace:
            try:
                rep = run_episode(sc, planner, mode, sim.ticks, sim.replan_period, k, alpha, seed,
                                  weights=sim.weights, trace=trace)
            except Exception as e:  # an episode failure is reported in its own row
                log.exception("episode %s failed", sc.name)
                rep = _failure_row(sc.name, mode, seed, sim.ticks, e)
        reports.append(rep)
        print(f"simulate: {rep.scenario:<20} collisions={rep.collisions} off_drivable={rep.off_drivable_ticks} "
              f"progress={rep.progress:.1f} m score={rep.score:.3f} left_lane={rep.left_start_lane}"
              + (f" ERROR {rep.error}" if rep.error else ""))
    write_csv(run.path("episodes"), EpisodeReport.columns(), [r.to_dict() for r in reports])
    ok = [r for r in reports if not r.error]
    if ok:
        print(f"simulate: {len(ok)} episodes, mode={mode}, total collisions={sum(r.collisions for r in ok)}, "
              f"total off-drivable ticks={sum(r.off_drivable_ticks for r in ok)}, "
              f"mean progress={np.mean([r.progress for r in ok]):.2f} m, "
              f"mean score={np.mean([r.score for r in ok]):.3f}")
    failures: list[str] = []
    check(len(ok) == len(reports), f"{len(reports) - len(ok)} episode(s) failed", failures)
    return failures


def cmd_metrics(args) -> list[str]:
    run = load_run(args)
    corpus = run.corpus()
    failures: list[str] = []
    doc: dict = {"config_hash": run.hash}
    vae, pca = run.vae(), run.pca()
    rep = separation_report(corpus, vae, pca)
    doc["separation"] = {"vae": rep["vae"], "pca": rep["pca"]}
    # oracle agreement on a class-balanced subset
    idx = np.concatenate([np.flatnonzero(corpus.labels == c)[:12] for c in range(len(LABELS))])
    z = vae_project(corpus.trajectories[idx], vae)
    fast, slow = separation_metrics(z, corpus.labels[idx]), brute_force_separation(z, corpus.labels[idx])
    agree = max(abs(fast.intra - slow.intra), abs(fast.inter - slow.inter)) < 1e-9
    check(agree, "separation metric matches the brute-force oracle", failures)
    if run.path("dictionary").exists():
        doc["class_counts"] = run.dictionary().class_counts()
    if run.path("planner_report").exists():
        doc["planner"] = json.loads(run.path("planner_report").read_text())
    if run.path("episodes").exists():
        with run.path("episodes").open() as fh:
            rows = [r for r in csv.DictReader(fh) if not r["error"]]
        doc["episodes"] = {"n": len(rows), "collisions": sum(int(r["collisions"]) for r in rows),
                           "off_drivable_ticks": sum(int(r["off_drivable_ticks"]) for r in rows)}
    write_json(run.path("metrics"), doc)
    v, p = doc["separation"]["vae"], doc["separation"]["pca"]
    print(f"metrics: vae ratio={v['ratio']:.4f} pca ratio={p['ratio']:.4f} oracle_agrees={agree}")
    for key in ("class_counts", "planner", "episodes"):
        if key in doc:
            print(f"metrics: {key} {json.dumps(doc[key], sort_keys=True)}")
    return failures


COMMANDS = {
    "synth": (cmd_synth, "write the trajectory corpus and scenario set"),
    "train-vae": (cmd_train_vae, "train the trajectory VAE and report class separation"),
    "build-dict": (cmd_build_dict, "cluster the corpus into behavior classes"),
    "fit-pca": (cmd_fit_pca, "fit the PCA trajectory basis"),
    "train-planner": (cmd_train_planner, "train the planner with the drift objective"),
    "infer": (cmd_infer, "generate proposal sets for one scenario"),
    "bench": (cmd_bench, "time single-step generation against a 10-step loop"),
    "simulate": (cmd_simulate, "run closed-loop episodes"),
    "metrics": (cmd_metrics, "collect run metrics into metrics.json"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON (default: OUT/config.json)")
    common.add_argument("--seed", type=int, default=None, help="seed for this command")
    common.add_argument("--out", default="run", help="run directory (default: ./run)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="driftplan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name in ("infer", "bench", "simulate"):
            p.add_argument("--k", type=int, default=None, help="proposals per generation (default: config)")
        if name in ("infer", "simulate"):
            p.add_argument("--alpha", type=float, nargs="+", default=None,
                           help="guidance scale(s); infer defaults to the sweep -0.5 0 0.5 1 1.5")
        if name in ("infer", "bench"):
            p.add_argument("--scenario", default=None, help="scenario JSON (default: first scenario of the run)")
        if name == "bench":
            p.add_argument("--repeats", type=int, default=50)
        if name == "simulate":
            p.add_argument("--mode", choices=MODES, default=None, help="nr: logged agents, r: IDM agents")
            p.add_argument("--scenarios", nargs="+", default=None, help="scenario JSON files to run")
            p.add_argument("--kinds", nargs="+", default=None,
                           help="generate scenarios of these kinds instead of using the run's set")
            p.add_argument("--n-seeds", type=int, default=10, help="scenarios per kind with --kinds")
            p.add_argument("--scenario-seed", type=int, default=0, help="first scenario seed with --kinds")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    handler, _ = COMMANDS[args.command]
    try:
        failures = handler(args)
    except (CommandError, ScenarioParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e.filename or ''}: {e.strerror or e}", file=sys.stderr)
        return 2
    if failures:
        print(f"{len(failures)} self-check(s) failed: {'; '.join(failures)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
