"""Command line: run episodes, replay trajectories, inspect viewpoints, summarize transcripts.

Exit codes: 0 ok, 2 bad configuration or input, 3 runtime failure,
4 reasoner failure. Code 4 covers a reasoner that cannot be set up (nothing
is written) and a completed run in which some episode ended on a reasoner
error (all outputs are written; the failures are recorded per episode).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import click
import jsonschema

from msgnav.reasoning import (
    HttpReasoner,
    HttpReasonerConfig,
    MockReasoner,
    ReasonerAuthError,
    ScriptError,
    Vocabulary,
    validate,
)
from msgnav.scene_graph import GraphConfig, SceneGraph
from msgnav.sim.experiments import candidate_table, efficiency_report
from msgnav.sim.episode import EpisodeConfig, EpisodeResult, run_episode, run_lifelong, scene_planner
from msgnav.sim.metrics import compute_metrics, outcomes_at
from msgnav.sim.render import CameraModel, NoiseConfig, render_frame
from msgnav.sim.scene import SceneError, SyntheticScene, bundled_scene, bundled_scene_paths, load_scene
from msgnav.viewpoint import VVDParams

log = logging.getLogger("msgnav")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_REASONER = 0, 2, 3, 4
TRAJECTORY_VERSION = 1
TRANSCRIPT_VERSION = 1


class ConfigError(ValueError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=True) + "\n"


# -- configuration ---------------------------------------------------------

@dataclass
class RunConfig:
    scenes: list[str] = field(default_factory=list)
    goals: list[int] | None = None
    reasoner: str = "mock:oracle"
    vvd: bool = True
    seed: int = 0
    out: str = "runs/latest"
    workers: int = 1
    lifelong: bool = False
    episode: dict = field(default_factory=dict)
    camera: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    graph: dict = field(default_factory=dict)
    vvd_params: dict = field(default_factory=dict)
    http: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            validate(d, "run_config")
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config error at {where}: {exc.message}") from None
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def episode_config(self) -> EpisodeConfig:
        ep = dict(self.episode)
        if "eval_distances" in ep:
            ep["eval_distances"] = tuple(ep["eval_distances"])
        try:
            # VVDParams validates the overrides early, before any episode runs
            VVDParams(**self.vvd_params)
            return EpisodeConfig(
                use_vvd=self.vvd,
                camera=CameraModel(**self.camera),
                noise=NoiseConfig(seed=self.seed, **self.noise),
                graph=GraphConfig(**self.graph),
                vvd=dict(self.vvd_params),
                **ep,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config error: {exc}") from None


def resolve_scene(ref: str) -> SyntheticScene:
    """A scene file path, or the name of a bundled scene."""
    p = Path(ref)
    if p.suffix == ".json" or p.exists():
        if not p.exists():
            raise ConfigError(f"scene file not found: {ref}")
        return load_scene(p)
    try:
        return bundled_scene(ref)
    except SceneError:
        names = ", ".join(q.stem for q in bundled_scene_paths())
        raise ConfigError(f"unknown scene {ref!r} (bundled: {names})") from None


def make_reasoner_factory(cfg: RunConfig):
    """Validate the reasoner spec now; return a zero-argument factory for fresh instances."""
    kind, _, arg = cfg.reasoner.partition(":")
    if kind == "mock":
        if arg == "oracle":
            return MockReasoner.oracle
        if arg.startswith("bundled/"):
            from importlib import resources

            text = resources.files("msgnav").joinpath("data", "scripts", arg[len("bundled/"):] + ".json").read_text()
            script = json.loads(text)
        else:
            path = Path(arg)
            if not path.exists():
                raise ConfigError(f"reasoner script not found: {arg}")
            try:
                script = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ScriptError(f"reasoner script {arg} is not JSON: {exc}") from None
        MockReasoner(script)  # fail fast on a malformed script
        return lambda: MockReasoner(script)
    if kind == "http":
        http_cfg = HttpReasonerConfig(endpoint=arg, **cfg.http)
        return lambda: HttpReasoner(http_cfg)
    raise ConfigError(f"unknown reasoner {cfg.reasoner!r}")


# -- run -------------------------------------------------------------------

@dataclass
class Job:
    index: int
    scene: SyntheticScene
    goals: list[int]
    start: tuple[float, float]
    heading: float


def plan_jobs(scenes: list[SyntheticScene], goals: list[int] | None, lifelong: bool) -> list[Job]:
    jobs: list[Job] = []
    for scene in scenes:
        if goals is not None:
            bad = [g for g in goals if not 0 <= g < len(scene.goals)]
            if bad:
                raise ConfigError(f"scene {scene.name} has no goal index {bad[0]}")
        episodes = [e for e in scene.episodes if goals is None or e.goal in goals]
        if lifelong:
            order = goals if goals is not None else list(range(len(scene.goals)))
            first = scene.episodes[0]
            jobs.append(Job(len(jobs), scene, list(order), first.start, first.heading))
        else:
            for e in episodes:
                jobs.append(Job(len(jobs), scene, [e.goal], e.start, e.heading))
    return jobs


def warm(scene: SyntheticScene) -> None:
    """Fill the scene's lazy caches up front so worker threads only read them."""
    scene.grid
    scene.wall_cloud.index(scene.tau)
    scene_planner(scene)
    for g in scene.goals:
        scene.gt_viewpoints_for(g.object_ids)


def run_job(job: Job, factory, ep_cfg: EpisodeConfig) -> list[EpisodeResult]:
    reasoner = factory()
    if len(job.goals) > 1:
        return run_lifelong(job.scene, job.goals, reasoner, ep_cfg, start=job.start, heading=job.heading)
    return [run_episode(job.scene, job.goals[0], reasoner, ep_cfg, start=job.start, heading=job.heading)]


def summarize(results: list[EpisodeResult], ep_cfg: EpisodeConfig) -> dict:
    def block(rs):
        if not rs:
            return {"n": 0, "sr": None, "spl": None}
        sr, spl = compute_metrics(outcomes_at(rs, ep_cfg.success_distance))
        return {"n": len(rs), "sr": sr, "spl": spl}

    by_kind = {"overall": block(results)}
    for kind in ("category", "language", "image"):
        by_kind[kind] = block([r for r in results if r.goal_kind == kind])
    sweep = {}
    for d in sorted(set(ep_cfg.eval_distances) | {ep_cfg.success_distance}):
        sr, spl = compute_metrics(outcomes_at(results, d))
        sweep[f"{d:g}"] = {"sr": sr, "spl": spl}
    failures: dict[str, int] = {}
    for r in results:
        if r.failure_reason:
            key = r.failure_reason.split(":")[0]
            failures[key] = failures.get(key, 0) + 1
    return {
        "success_distance": ep_cfg.success_distance,
        "vvd": ep_cfg.use_vvd,
        "metrics": by_kind,
        "by_distance": sweep,
        "failures": dict(sorted(failures.items())),
        "reasoner_errors": sum(1 for r in results if r.error_kind),
    }


def summary_text(summary: dict) -> str:
    lines = [f"success distance {summary['success_distance']:g} m, VVD {'on' if summary['vvd'] else 'off'}"]
    for kind, m in summary["metrics"].items():
        if m["n"]:
            lines.append(f"  {kind:<9} n={m['n']:<4} SR={100 * m['sr']:6.2f}  SPL={100 * m['spl']:6.2f}")
    lines.append("  SR by success distance:")
    for d, m in summary["by_distance"].items():
        lines.append(f"    d={d:<5} SR={100 * m['sr']:6.2f}  SPL={100 * m['spl']:6.2f}")
    for reason, n in summary["failures"].items():
        lines.append(f"  failures: {reason} x{n}")
    return "\n".join(lines) + "\n"


def execute_run(cfg: RunConfig) -> tuple[dict, dict[str, str]]:
    """Run everything and return (summary, files to write). Writes nothing itself."""
    if not cfg.scenes:
        raise ConfigError("no scenes given")
    ep_cfg = cfg.episode_config()
    scenes = [resolve_scene(s) for s in cfg.scenes]
    factory = make_reasoner_factory(cfg)
    jobs = plan_jobs(scenes, cfg.goals, cfg.lifelong)
    if not jobs:
        raise ConfigError("no episodes selected")
    for scene in scenes:
        warm(scene)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            batches = list(pool.map(lambda j: run_job(j, factory, ep_cfg), jobs))
    else:
        batches = [run_job(j, factory, ep_cfg) for j in jobs]
    files: dict[str, str] = {}
    results: list[EpisodeResult] = []
    lines = []
    for job, batch in zip(jobs, batches):
        for sub, r in enumerate(batch):
            results.append(r)
            tag = f"{job.index:04d}-{job.scene.name}-g{job.goals[sub]}"
            row = {"episode": job.index, "sub_goal": sub, "goal_index": job.goals[sub], **r.to_dict()}
            lines.append(json.dumps(row, sort_keys=True))
            files[f"transcripts/{tag}.json"] = _dump({
                "format_version": TRANSCRIPT_VERSION,
                "scene": r.scene,
                "goal": r.goal,
                "episode": job.index,
                "sub_goal": sub,
                "steps": r.transcript,
            })
    summary = summarize(results, ep_cfg)
    files["results.jsonl"] = "\n".join(lines) + "\n"
    files["summary.json"] = _dump(summary)
    files["summary.txt"] = summary_text(summary)
    files["config.json"] = _dump({
        "run": {k: getattr(cfg, k) for k in ("scenes", "goals", "reasoner", "vvd", "seed", "workers", "lifelong")},
        "episode": {k: getattr(ep_cfg, k) for k in (
            "max_steps", "k", "memory_window", "views_per_step", "use_vvd", "success_distance",
            "eval_distances", "auto_stop_radius", "min_frontier_cluster", "frontier_reach", "snapshot_range")},
        "camera": vars(ep_cfg.camera),
        "noise": vars(ep_cfg.noise),
        "graph": vars(ep_cfg.graph),
        "vvd_params": {s.name: s.vvd_params(**ep_cfg.vvd).to_dict() for s in scenes},
    })
    return summary, files


def write_outputs(out: Path, files: dict[str, str]) -> None:
    for rel, text in sorted(files.items()):
        p = out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)


# -- click surface ---------------------------------------------------------

def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.option("-v", "--verbose", count=True, help="More logging (-v info, -vv debug).")
def main(verbose: int):
    """Scene-graph object navigation: simulator runs and inspection tools."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--scene", "scenes", multiple=True, help="Scene file or bundled scene name (repeatable).")
@click.option("--goal", "goals", multiple=True, type=int, help="Goal index within the scene (repeatable).")
@click.option("--reasoner", default=None, help="mock:oracle, mock:PATH, mock:bundled/NAME or http:ENDPOINT.")
@click.option("--vvd", type=click.Choice(["on", "off"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config; overrides flags.")
@click.option("--workers", type=int, default=None)
@click.option("--lifelong", is_flag=True, default=None, help="Chain all goals of a scene without resetting memory.")
@click.option("--max-steps", type=int, default=None)
def run(scenes, goals, reasoner, vvd, seed, out, config_path, workers, lifelong, max_steps):
    """Run episodes and write results, transcripts and an SR/SPL summary."""
    d: dict = {}
    if scenes:
        d["scenes"] = list(scenes)
    if goals:
        d["goals"] = list(goals)
    for key, val in (("reasoner", reasoner), ("seed", seed), ("out", out), ("workers", workers), ("lifelong", lifelong)):
        if val is not None:
            d[key] = val
    if vvd is not None:
        d["vvd"] = vvd == "on"
    if max_steps is not None:
        d["episode"] = {"max_steps": max_steps}
    try:
        if config_path:
            try:
                file_cfg = json.loads(Path(config_path).read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read config {config_path}: {exc.strerror}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {config_path} is not JSON: {exc}") from None
            if not isinstance(file_cfg, dict):
                raise ConfigError("config file must hold a JSON object")
            for key, val in file_cfg.items():
                if isinstance(val, dict) and isinstance(d.get(key), dict):
                    d[key] = {**d[key], **val}
                else:
                    d[key] = val
        cfg = RunConfig.from_dict(d)
        summary, files = execute_run(cfg)
    except (ConfigError, SceneError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    except (ScriptError, ReasonerAuthError) as exc:
        _fail(EXIT_REASONER, str(exc))
    except Exception as exc:  # noqa: BLE001 - report, do not leave partial output
        log.debug("run failed", exc_info=True)
        _fail(EXIT_RUNTIME, f"{type(exc).__name__}: {exc}")
    write_outputs(Path(cfg.out), files)
    click.echo(files["summary.txt"], nl=False)
    n_err = summary["reasoner_errors"]
    if n_err:
        _fail(EXIT_REASONER, f"{n_err} episode(s) ended on a reasoner error; see results.jsonl")


def load_trajectory(path: str) -> dict:
    try:
        traj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read trajectory {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"trajectory {path} is not JSON: {exc}") from None
    if not isinstance(traj, dict) or traj.get("format_version") != TRAJECTORY_VERSION:
        raise ConfigError("malformed trajectory: expected an object with format_version 1")
    poses = traj.get("poses")
    if not isinstance(poses, list) or not all(
        isinstance(p, list) and len(p) == 3 and all(isinstance(v, (int, float)) for v in p) for p in poses
    ):
        raise ConfigError("malformed trajectory: poses must be a list of [x, z, heading]")
    return traj


def replay_trajectory(scene: SyntheticScene, traj: dict) -> SceneGraph:
    noise = NoiseConfig(**traj.get("noise", {}))
    graph = SceneGraph(GraphConfig(**traj.get("graph", {})))
    vocab = Vocabulary()
    for i, (x, z, heading) in enumerate(traj["poses"]):
        graph.update(render_frame(scene, (x, z), heading, i, CameraModel(), noise), vocab)
    graph.validate()
    return graph


@main.command()
@click.option("--scene", default=None, help="Defaults to the scene named in the trajectory.")
@click.option("--trajectory", required=True, type=click.Path())
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Snapshot path (default: stdout).")
def graph(scene, trajectory, out):
    """Replay a recorded trajectory and emit the scene-graph snapshot."""
    try:
        traj = load_trajectory(trajectory)
        ref = scene or traj.get("scene")
        if not ref:
            raise ConfigError("no scene given and the trajectory names none")
        sc = resolve_scene(ref)
        g = replay_trajectory(sc, traj)
    except (ConfigError, SceneError, TypeError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    snapshot = g.to_json() + "\n"
    if out:
        Path(out).write_text(snapshot)
    else:
        click.echo(snapshot, nl=False)
    s = g.summary()
    click.echo(f"objects={s['n_objects']} edges={s['n_edges']} images={s['n_images']} "
               f"edge-image histogram={json.dumps(s['edge_image_histogram'], sort_keys=True)}", err=True)


@main.command()
@click.option("--scene", required=True)
@click.option("--target", required=True, type=int, help="Ground-truth object id.")
@click.option("--radii", default=None, help="Comma-separated ring radii in meters.")
@click.option("--samples", type=int, default=None, help="Candidates per ring.")
@click.option("--plot-data", type=click.Path(dir_okay=False), default=None,
              help="Write CSV rows (score, distance to nearest ground-truth viewpoint).")
def viewpoint(scene, target, radii, samples, plot_data):
    """Score every ring candidate around a scene object and report the best one."""
    try:
        sc = resolve_scene(scene)
        try:
            sc.object(target)
        except KeyError:
            raise ConfigError(f"unknown target id {target} in scene {sc.name}") from None
        overrides = {}
        if radii:
            overrides["radii"] = [float(r) for r in radii.split(",")]
        if samples:
            overrides["samples_per_ring"] = samples
        params = sc.vvd_params(**overrides)
    except (ConfigError, SceneError, ValueError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    best, rows = candidate_table(sc, target, params)
    if best is None:
        _fail(EXIT_RUNTIME, "no viewpoint: every candidate is non-traversable")
    click.echo(_dump({"scene": sc.name, "target": target, "params": params.to_dict(),
                      "best": best.to_dict(), "candidates": rows}), nl=False)
    if plot_data:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ring_radius", "angle_index", "x", "z", "traversable", "score", "distance_to_gt"])
        for r in rows:
            w.writerow([r["ring_radius"], r["angle_index"], f"{r['position'][0]:.4f}", f"{r['position'][2]:.4f}",
                        int(bool(r["traversable"])), "" if r["score"] is None else f"{r['score']:.6f}",
                        "" if r["distance_to_gt"] is None else f"{r['distance_to_gt']:.4f}"])
        Path(plot_data).write_text(buf.getvalue())


def collect_steps(paths) -> list[dict]:
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.rglob("*.json")))
        elif p.exists():
            files.append(p)
        else:
            raise ConfigError(f"no such transcript: {p}")
    steps: list[dict] = []
    for f in files:
        try:
            doc = json.loads(f.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"transcript {f} is not JSON: {exc}") from None
        if not isinstance(doc, dict) or doc.get("format_version") != TRANSCRIPT_VERSION or "steps" not in doc:
            raise ConfigError(f"{f} is not a transcript")
        steps.extend(doc["steps"])
    return steps


@main.command()
@click.argument("transcripts", nargs=-1, type=click.Path())
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the JSON report here.")
def stats(transcripts, out):
    """Images per query and estimated token reduction across transcripts."""
    try:
        if not transcripts:
            raise ConfigError("no transcripts given")
        try:
            report = efficiency_report(collect_steps(transcripts))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    text = _dump(report)
    if out:
        Path(out).write_text(text)
    ipq = report["images_per_query"]
    click.echo(f"queries={report['queries']} images/query mean={ipq['mean']:.2f} p50={ipq['p50']:g} "
               f"p90={ipq['p90']:g} max={ipq['max']:g} token reduction={100 * report['token_reduction']:.1f}%")
    if not out:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
