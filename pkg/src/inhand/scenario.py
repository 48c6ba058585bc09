"""Scenario runner: configuration, planning pipeline, closed-loop execution in
the simulator, and randomized robustness batches.

Scenario file (YAML)::

    name: lift
    hand: three_finger_hand.yaml        # relative to this file, else packaged data
    object: bar.yaml
    seed: 0
    start: {p: [0, 0, 0.015]}
    goal: {p: [0, 0, 0.095]}
    start_jitter: {xy: 0.005, yaw_deg: 5}   # per-seed start perturbation
    initial_grasp: {t_dist: T0, i_dist: I0}
    pairing: {t_dist: [T0], i_dist: [I0], m_dist: [M0]}
    external: {force: [0, 0, 0], torque: [0, -0.15, 0]}
    planning: {M: 16, dt_min: 0.2, T_max: 6, ...}
    reward: {...}      # RewardWeights fields
    ik: {...}          # IkParams fields
    control: {mu: 0.5, gains: {...}, transition: {...}}
    sim: {...}         # SimParams fields
    execution: {settle_before: 1, settle_after: 2, ...}
    batch: {trials: 20, xy_range: 0.03, yaw_range_deg: 20, ...}
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .controller import Controller, ControllerGains, Snapshot, TransitionParams, WrenchParams
from .evaluate import GraspEvaluator, PlanningContext
from .geometry import Pose, rot_z, rotation_angle
from .ik import IkParams
from .io import (TIMESTAMP_SCHEMA, TRAJ_COLUMNS, TRAJ_SCHEMA, load_hand, load_object, parse_pose, pose_dict,
                 read_jsonl, read_numeric_table, read_path, read_yaml, write_path, write_table)
from .model import (FLOOR, Grasp, enumerate_grasp_candidates, forward_kinematics, hand_env_collision,
                    make_contact)
from .pathplan import PathPlanningError, PlannerParams, grasp_validity, plan_path
from .sequencer import (ADD, REMOVE, SLIDE, DPPolicy, EvaluatorModel, GraspSequencePlan, PlanReplayPolicy,
                        RewardWeights, SeqState, SequencingError, action_space, plan_dp, plan_from_records)
from .sim import SimParams, SimulationError, Simulator, sense_contacts
from .traj import ObjectTrajectory, PosePath, fit_and_sample, make_cost, optimize_timestamps

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"
PLAN_FILES = {"path": "path.csv", "timestamps": "timestamps.csv", "trajectory": "trajectory.csv",
              "plan": "plan.jsonl"}
TELEMETRY_SCHEMA = "inhand-telemetry/1"
BATCH_SCHEMA = "inhand-batch/1"
SUMMARY_SCHEMA = "inhand-batch-summary/1"
FAILURE_CAUSES = ("dropped", "collision", "pose-error", "planning-failed")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A planning stage failed; ``stage`` is path, trajectory or sequence."""

    def __init__(self, stage: str, cause: Exception | str):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause


def _build(cls, d: dict | None, name: str):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"{name}: unknown keys {sorted(extra)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


@dataclass
class PlanningParams:
    M: int = 16
    dt_min: float = 0.2
    T_max: float = 10.0
    max_evals: int = 200
    w_e: float = 1.0
    w_f: float = 1e-3
    w_t: float = 1.0
    mu: float = 1.0
    L: int = 12
    samples: int = 300
    radius_scale: float = 1.0
    d_threshold: float = 1e-6


@dataclass
class ControlParams:
    mu: float = 0.5
    w_t: float | None = None  # None: same as planning
    force_gain: float = 1.0
    gains: dict = field(default_factory=dict)
    transition: dict = field(default_factory=dict)


@dataclass
class ExecutionParams:
    settle_before: float = 1.0
    settle_after: float = 2.0
    drop_margin: float = 0.05
    position_tol: float = 0.005
    orientation_tol: float = 0.1
    manager_period: float = 0.1
    external: str = "step"  # step | off
    max_overrun: float = 15.0  # extra seconds allowed for pending transitions


@dataclass
class BatchParams:
    trials: int = 20
    xy_range: float = 0.03
    yaw_range_deg: float = 20.0
    medium_xy: float = 0.01
    medium_yaw_deg: float = 10.0


@dataclass
class ScenarioConfig:
    name: str
    hand_file: Path
    object_file: Path
    start: Pose
    goal: Pose
    initial_grasp: dict
    pairing: dict
    external: np.ndarray  # (f, tau)
    seed: int = 0
    start_jitter: dict = field(default_factory=dict)
    floor: bool = True
    planning: PlanningParams = field(default_factory=PlanningParams)
    reward: RewardWeights = field(default_factory=RewardWeights)
    ik: IkParams = field(default_factory=IkParams)
    control: ControlParams = field(default_factory=ControlParams)
    sim: SimParams = field(default_factory=SimParams)
    execution: ExecutionParams = field(default_factory=ExecutionParams)
    batch: BatchParams = field(default_factory=BatchParams)

    @property
    def has_external(self) -> bool:
        return bool(np.any(self.external != 0))

    def to_dict(self) -> dict:
        return {"name": self.name, "hand": str(self.hand_file), "object": str(self.object_file),
                "seed": self.seed, "start": pose_dict(self.start), "goal": pose_dict(self.goal),
                "start_jitter": dict(self.start_jitter), "initial_grasp": dict(self.initial_grasp),
                "pairing": {k: list(v) for k, v in self.pairing.items()},
                "external": {"force": self.external[:3].tolist(), "torque": self.external[3:].tolist()},
                "environment": {"floor": self.floor},
                "planning": asdict(self.planning), "reward": asdict(self.reward), "ik": asdict(self.ik),
                "control": asdict(self.control), "sim": asdict(self.sim), "execution": asdict(self.execution),
                "batch": asdict(self.batch)}


def _resolve(ref: str, base: Path) -> Path:
    p = Path(ref)
    if p.is_absolute():
        return p
    for cand in (base / p, DATA_DIR / p):
        if cand.exists():
            return cand
    return base / p


def parse_config(d: dict, base_dir: Path | str = ".") -> ScenarioConfig:
    base = Path(base_dir)
    try:
        hand_file = _resolve(d["hand"], base)
        object_file = _resolve(d["object"], base)
        start, goal = parse_pose(d["start"]), parse_pose(d["goal"])
        initial = dict(d["initial_grasp"])
        pairing = {k: list(v) for k, v in d["pairing"].items()}
    except KeyError as exc:
        raise ConfigError(f"missing scenario key {exc}") from exc
    for f in (hand_file, object_file):
        if not f.exists():
            raise FileNotFoundError(f"file not found: {f}")
    ext = d.get("external") or {}
    external = np.concatenate([np.asarray(ext.get("force", [0, 0, 0]), dtype=float),
                               np.asarray(ext.get("torque", [0, 0, 0]), dtype=float)])
    if external.shape != (6,):
        raise ConfigError("external: force and torque need three values each")
    env = d.get("environment") or {}
    return ScenarioConfig(
        name=d.get("name", "scenario"), hand_file=hand_file, object_file=object_file, start=start, goal=goal,
        initial_grasp=initial, pairing=pairing, external=external, seed=int(d.get("seed", 0)),
        start_jitter=dict(d.get("start_jitter") or {}), floor=bool(env.get("floor", True)),
        planning=_build(PlanningParams, d.get("planning"), "planning"),
        reward=_build(RewardWeights, d.get("reward"), "reward"),
        ik=_build(IkParams, d.get("ik"), "ik"),
        control=_build(ControlParams, d.get("control"), "control"),
        sim=_build(SimParams, d.get("sim"), "sim"),
        execution=_build(ExecutionParams, d.get("execution"), "execution"),
        batch=_build(BatchParams, d.get("batch"), "batch"))


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists() and not path.is_absolute():
        # packaged scenarios by file name or bare name
        for cand in (DATA_DIR / path, DATA_DIR / f"{path}.yaml"):
            if cand.exists():
                path = cand
                break
    return parse_config(read_yaml(path), path.parent)


def builtin_config(name: str) -> Path:
    """Path of a packaged scenario (``lift``, ``hold``)."""
    p = DATA_DIR / f"{name}.yaml"
    if not p.exists():
        raise FileNotFoundError(f"file not found: {p}")
    return p


class Scenario:
    """Models and planning context for one configuration."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.hand = load_hand(cfg.hand_file)
        self.obj = load_object(cfg.object_file)
        P = cfg.planning
        self.env = [FLOOR] if cfg.floor else []
        self.ctx = PlanningContext(self.hand, self.obj, self.env, cfg.ik, P.mu, P.L, P.w_t)
        self.evaluator = GraspEvaluator(self.ctx)
        self.candidates = enumerate_grasp_candidates(self.hand, self.obj, cfg.pairing)
        self.actions = action_space(self.hand, self.obj, cfg.pairing)
        self.G_s = self.make_grasp(cfg.initial_grasp)
        if self.G_s not in self.candidates:
            raise ConfigError("initial grasp is not among the enumerated candidates")

    def make_grasp(self, desc: dict) -> Grasp:
        cs = []
        for link, target in desc.items():
            lp, op = (0, target) if isinstance(target, (str, int)) else target
            if isinstance(op, str):
                op = self.obj.contact_index(op)
            cs.append(make_contact(self.hand, self.obj, link, int(op), int(lp)))
        return Grasp.of(cs)

    @property
    def w_ext(self):
        return self.cfg.external if self.cfg.has_external else None

    def start_pose(self, seed: int | None = None) -> Pose:
        """Configured start, perturbed per seed by ``start_jitter`` (xy, yaw)."""
        j = self.cfg.start_jitter
        if seed is None or not j:
            return self.cfg.start.copy()
        rng = np.random.default_rng([seed, 7])
        dx, dy = rng.uniform(-1, 1, 2) * float(j.get("xy", 0.0))
        yaw = np.deg2rad(rng.uniform(-1, 1) * float(j.get("yaw_deg", 0.0)))
        return vary_pose(self.cfg.start, dx, dy, yaw)


def vary_pose(pose: Pose, dx: float, dy: float, yaw: float) -> Pose:
    return Pose(pose.p + np.array([dx, dy, 0.0]), rot_z(yaw) @ pose.R)


@dataclass
class PlanArtifacts:
    path: PosePath
    trajectory: ObjectTrajectory
    plan: GraspSequencePlan
    start: Pose
    files: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    timestamp_cost: float | None = None


def run_plan(cfg: ScenarioConfig, out_dir=None, start: Pose | None = None, seed: int | None = None,
             scenario: Scenario | None = None) -> PlanArtifacts:
    """Path, then timestamps, then grasp sequence. Writes the artifacts to
    ``out_dir`` (if given) under fixed names."""
    sc = scenario or Scenario(cfg)
    seed = cfg.seed if seed is None else seed
    start = sc.start_pose(seed) if start is None else start
    P = cfg.planning
    timings = {}
    t0 = time.perf_counter()
    try:
        params = PlannerParams(samples=P.samples, radius_scale=P.radius_scale, seed=seed, d_threshold=P.d_threshold)
        path = plan_path(start, cfg.goal, grasp_validity(sc.evaluator, sc.candidates, P.d_threshold), params)
    except PathPlanningError as exc:
        raise StageError("path", exc) from exc
    timings["path"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    try:
        cost = make_cost(sc.evaluator, sc.candidates, P.w_e, P.w_f, sc.w_ext)
        ts = optimize_timestamps(path, P.M, P.dt_min, P.T_max, cost, P.max_evals)
    except ValueError as exc:
        raise StageError("trajectory", exc) from exc
    timings["trajectory"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    try:
        model = EvaluatorModel(ts.trajectory, sc.evaluator, sc.w_ext)
        plan = plan_dp(model, sc.G_s, sc.candidates, sc.actions, cfg.reward)
    except SequencingError as exc:
        raise StageError("sequence", exc) from exc
    timings["sequence"] = time.perf_counter() - t0
    log.info("plan: %s (cost %.4g)", " ".join(plan.labels(sc.obj)), plan.cost)
    art = PlanArtifacts(path, ts.trajectory, plan, start, timings=timings, timestamp_cost=ts.cost)
    if out_dir is not None:
        art.files = write_plan(art, sc, out_dir)
    return art


def write_plan(art: PlanArtifacts, sc: Scenario, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {k: out / v for k, v in PLAN_FILES.items()}
    write_path(files["path"], art.path)
    write_table(files["timestamps"], TIMESTAMP_SCHEMA, ["t"], [[t] for t in art.trajectory.timestamps])
    gids = [sc.candidates.index(g) if g in sc.candidates else -1 for g in art.plan.grasps]
    write_table(files["trajectory"], TRAJ_SCHEMA, TRAJ_COLUMNS, art.trajectory.table(gids).tolist())
    files["plan"].write_text(art.plan.to_jsonl(sc.obj))
    return files


def load_plan(sc: Scenario, plan_dir) -> PlanArtifacts:
    d = Path(plan_dir)
    files = {k: d / v for k, v in PLAN_FILES.items()}
    for f in files.values():
        if not f.exists():
            raise FileNotFoundError(f"file not found: {f}")
    path = read_path(files["path"])
    _, ts = read_numeric_table(files["timestamps"], TIMESTAMP_SCHEMA)
    _, table = read_numeric_table(files["trajectory"], TRAJ_SCHEMA)
    traj = fit_and_sample(path, ts[:, 0], len(table))
    recs = read_jsonl(files["plan"])
    head, body = recs[0], recs[1:]
    if head.get("schema", "").split("/")[0] != "inhand-plan":
        raise ValueError(f"{files['plan']}: not a plan file")
    start_g = Grasp.of(make_contact(sc.hand, sc.obj, k[0], k[2], k[1]) for k in head["start"])
    plan = plan_from_records(body, start_g, sc.hand, sc.obj, head["cost"])
    return PlanArtifacts(path, traj, plan, path.waypoints[0], files=files)


@dataclass
class TrialResult:
    success: bool
    cause: str | None
    position_error: float
    orientation_error: float
    timings: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    sim_time: float = 0.0
    final_pose: Pose | None = None

    def __post_init__(self):
        if self.success != (self.cause is None):
            raise ValueError("a failed trial needs exactly one cause")
        if self.cause is not None and self.cause not in FAILURE_CAUSES:
            raise ValueError(f"unknown failure cause {self.cause!r}")

    def to_dict(self) -> dict:
        return {"success": self.success, "cause": self.cause, "position_error": self.position_error,
                "orientation_error": self.orientation_error, "timings": self.timings, "events": self.events,
                "sim_time": self.sim_time,
                "final_pose": None if self.final_pose is None else pose_dict(self.final_pose)}


@dataclass
class Fault:
    """Fault injection: at reference time ``time`` all fingers are commanded
    back to the home posture and the controller stops."""

    time: float = 1.0
    kind: str = "retract"


def _telemetry_columns(hand, links):
    n = hand.n_joints
    cols = ["t", "tau"] + [f"qref{i}" for i in range(n)] + [f"q{i}" for i in range(n)]
    cols += ["px", "py", "pz", "qx", "qy", "qz", "qw"]
    for l in links:
        cols += [f"{l}_fs{a}" for a in "xyz"] + [f"{l}_f{a}" for a in "xyz"]
    return cols + ["grasp", "phase"]


def run_execute(cfg: ScenarioConfig, art: PlanArtifacts, scenario: Scenario | None = None, start: Pose | None = None,
                goal: Pose | None = None, fault: Fault | None = None, telemetry=None,
                policy=None) -> TrialResult:
    """Closed-loop execution: 1 kHz physics, 100 Hz control, 10 Hz grasp
    sequencing. ``goal`` overrides the pose the final error is measured
    against; ``telemetry`` is an optional CSV path for controller rows."""
    sc = scenario or Scenario(cfg)
    E = cfg.execution
    hand, obj = sc.hand, sc.obj
    start = art.start if start is None else start
    goal = cfg.goal if goal is None else goal
    traj = art.trajectory
    T = traj.T
    t_samples = traj.sample_times
    M = traj.M
    policy = policy or (DPPolicy(art.plan, M) if art.plan.decisions else PlanReplayPolicy(art.plan))
    wall0 = time.perf_counter()

    ik0 = sc.evaluator.ik(start, sc.G_s)
    q0 = ik0.q_star.copy()
    sim = Simulator(hand, obj, cfg.sim)
    state = sim.initial_state(start, q0)
    gains = _build(ControllerGains, cfg.control.gains, "control.gains")
    tparams = _build(TransitionParams, cfg.control.transition, "control.transition")
    w_t = cfg.planning.w_t if cfg.control.w_t is None else cfg.control.w_t
    wp = WrenchParams(mu=cfg.control.mu, L=cfg.planning.L, w_t=w_t, gravity=np.array([0.0, 0.0, -cfg.sim.gravity]))
    ctrl = Controller(hand, obj, q0, sc.G_s, gains, wp, tparams, cfg.control.force_gain)
    names = hand.link_names
    contact_links = sorted({c.link for g in sc.candidates for c in g}, key=names.index)

    n_sub = int(round(gains.dt / cfg.sim.dt))
    n_mgr = int(round(E.manager_period / gains.dt))
    tau = -E.settle_before  # reference clock; frozen while a contact is being added
    next_m = 0
    q_ref = q0.copy()
    events: list = []
    rows: list = []
    cause = None
    faulted = False
    ext = cfg.external if (cfg.has_external and E.external == "step") else np.zeros(6)
    t_end = T + E.settle_after
    k = 0
    try:
        while True:
            ref = traj.evaluate(float(np.clip(tau, 0.0, T))).pose
            if k % n_mgr == 0 and not faulted:
                # sequence manager (10 Hz): dispatch due samples while no transition is active
                while ctrl.transition is None and next_m < M and tau >= t_samples[next_m] - 1e-9:
                    s = SeqState(state.q.copy(), ref, goal, next_m, ctrl.grasp, cfg.external)
                    a = policy.decide(s)
                    if a.kind == ADD:
                        ctrl.start_transition("add", a.link, a.contact)
                    elif a.kind == REMOVE:
                        ctrl.start_transition("remove", a.link, None)
                    elif a.kind == SLIDE:
                        ctrl.start_transition("slide", a.link, a.contact)
                    if a.kind != "no_change":
                        events.append({"t": state.t, "m": next_m, "start": a.label(obj)})
                    next_m += 1
            ext_on = tau >= T - 1e-9
            f_ext = ext[:3] if ext_on else np.zeros(3)
            tau_ext = ext[3:] if ext_on else np.zeros(3)
            if fault is not None and not faulted and tau >= fault.time:
                faulted = True
                events.append({"t": state.t, "fault": fault.kind})
            if faulted:
                q_ref = hand.home.copy()
            else:
                sens = sense_contacts(state)
                forces = {names[l]: v.force for l, v in sens.items()}
                q_ref = ctrl.cycle(Snapshot(state.t, state.q.copy(), state.pose, forces), ref, f_ext, tau_ext)
                tr = ctrl.finish_transition()
                if tr is not None:
                    events.append({"t": state.t, "done": f"{tr.kind} {tr.link}", "phase": tr.phase})
                    if tr.phase != "done":
                        log.warning("%s on %s failed", tr.kind, tr.link)
                if telemetry is not None:
                    rows.append(_telemetry_row(state, tau, ctrl, forces, contact_links, obj))
            for _ in range(n_sub):
                state = sim.step(state, q_ref, f_ext, tau_ext)
            k += 1
            if not ctrl.reference_frozen():
                tau += gains.dt
            # failure checks at the control rate
            if state.p[2] < ref.p[2] - E.drop_margin:
                cause = "dropped"
                break
            if sc.env and hand_env_collision(hand, forward_kinematics(hand, state.q), sc.env):
                cause = "collision"
                break
            if tau >= t_end and (ctrl.transition is None or tau >= t_end + E.max_overrun):
                break
    except SimulationError as exc:
        log.error("simulation diverged: %s", exc)
        events.append({"t": state.t, "error": str(exc)})
        cause = "dropped"
    pose = state.pose
    perr = float(np.linalg.norm(pose.p - goal.p))
    oerr = float(rotation_angle(pose.R, goal.R))
    if cause is None and (perr >= E.position_tol or oerr >= E.orientation_tol):
        cause = "pose-error"
    if telemetry is not None:
        write_table(telemetry, TELEMETRY_SCHEMA, _telemetry_columns(hand, contact_links), rows)
    timing = {"execute": time.perf_counter() - wall0}
    log.info("trial: %s pos %.4g m, ori %.4g rad", cause or "success", perr, oerr)
    return TrialResult(cause is None, cause, perr, oerr, timing, events, state.t, pose)


def _telemetry_row(state, tau, ctrl, forces, links, obj):
    pose = state.pose
    row = [state.t, tau] + ctrl.q_ref.tolist() + state.q.tolist() + pose.p.tolist() + pose.quat.tolist()
    for l in links:
        row += ctrl.last_forces.get(l, np.zeros(3)).tolist() + forces.get(l, np.zeros(3)).tolist()
    phase = "" if ctrl.transition is None else f"{ctrl.transition.kind}:{ctrl.transition.phase}"
    return row + [ctrl.grasp.label(obj).replace(",", " "), phase]


def run_trial(cfg: ScenarioConfig, seed: int | None = None, start: Pose | None = None, out_dir=None,
              scenario: Scenario | None = None, **kw) -> TrialResult:
    """Plan then execute; planning failures come back as ``planning-failed``."""
    sc = scenario or Scenario(cfg)
    try:
        art = run_plan(cfg, out_dir, start=start, seed=seed, scenario=sc)
    except StageError as exc:
        log.error("%s", exc)
        return TrialResult(False, "planning-failed", float("nan"), float("nan"), {}, [{"error": str(exc)}])
    tel = None if out_dir is None else Path(out_dir) / "telemetry.csv"
    res = run_execute(cfg, art, scenario=sc, telemetry=tel, **kw)
    res.timings = {**art.timings, **res.timings}
    return res


def bucket_of(dx: float, dy: float, yaw_deg: float, bp: BatchParams | None = None) -> str:
    """``medium`` if every variation lies within the medium ranges, else ``large``."""
    bp = bp or BatchParams()
    tol = 1e-12
    ok = abs(dx) <= bp.medium_xy + tol and abs(dy) <= bp.medium_xy + tol and abs(yaw_deg) <= bp.medium_yaw_deg + tol
    return "medium" if ok else "large"


def sample_variations(n: int, seed: int, bp: BatchParams) -> np.ndarray:
    """``n x 3`` table of (dx, dy, yaw_deg), uniform in the configured ranges."""
    rng = np.random.default_rng(seed)
    out = np.empty((n, 3))
    out[:, :2] = rng.uniform(-bp.xy_range, bp.xy_range, (n, 2))
    out[:, 2] = rng.uniform(-bp.yaw_range_deg, bp.yaw_range_deg, n)
    return out


@dataclass
class BatchResult:
    variations: np.ndarray
    buckets: list[str]
    trials: list[TrialResult]
    summary: list[dict]


def summarize(buckets: list[str], trials: list[TrialResult]) -> list[dict]:
    """Per bucket: trial count, successes, success rate and mean orientation
    error of the successful trials."""
    out = []
    for b in ("medium", "large", "all"):
        idx = [i for i, x in enumerate(buckets) if b == "all" or x == b]
        succ = [trials[i] for i in idx if trials[i].success]
        out.append({"bucket": b, "trials": len(idx), "successes": len(succ),
                    "success_rate": (len(succ) / len(idx)) if idx else float("nan"),
                    "mean_orientation_error": float(np.mean([t.orientation_error for t in succ])) if succ
                    else float("nan")})
    return out


def run_batch(cfg: ScenarioConfig, n_trials: int | None = None, seed: int | None = None, out_dir=None,
              variations: np.ndarray | None = None, runner=None) -> BatchResult:
    """Randomized start-pose trials bucketed into medium and large variation.

    ``runner(start_pose, trial_index)`` replaces plan+execute (used in tests).
    """
    bp = cfg.batch
    n = bp.trials if n_trials is None else n_trials
    if n < 1:
        raise ValueError("n_trials must be at least 1")
    seed = cfg.seed if seed is None else seed
    var = sample_variations(n, seed, bp) if variations is None else np.asarray(variations, dtype=float)
    sc = None if runner is not None else Scenario(cfg)
    buckets, trials = [], []
    for i, (dx, dy, yaw) in enumerate(var):
        start = vary_pose(cfg.start, dx, dy, np.deg2rad(yaw))
        buckets.append(bucket_of(dx, dy, yaw, bp))
        if runner is not None:
            res = runner(start, i)
        else:
            res = run_trial(cfg, seed=seed + i, start=start, scenario=sc)
        log.info("trial %d/%d (%s): %s", i + 1, n, buckets[-1], res.cause or "success")
        trials.append(res)
    summary = summarize(buckets, trials)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_table(out / "batch.csv", BATCH_SCHEMA,
                    ["trial", "dx", "dy", "yaw_deg", "bucket", "success", "cause", "position_error",
                     "orientation_error"],
                    [[i, *var[i], buckets[i], int(t.success), t.cause or "", t.position_error, t.orientation_error]
                     for i, t in enumerate(trials)])
        write_table(out / "summary.csv", SUMMARY_SCHEMA,
                    ["bucket", "trials", "successes", "success_rate", "mean_orientation_error"],
                    [[r["bucket"], r["trials"], r["successes"], r["success_rate"], r["mean_orientation_error"]]
                     for r in summary])
    return BatchResult(var, buckets, trials, summary)


def format_summary(summary: list[dict]) -> str:
    lines = [f"{'bucket':<8} {'trials':>6} {'success':>8} {'rate':>6} {'ori err (rad)':>14}"]
    for r in summary:
        lines.append(f"{r['bucket']:<8} {r['trials']:>6} {r['successes']:>8} {r['success_rate']:>6.2f} "
                     f"{r['mean_orientation_error']:>14.4g}")
    return "\n".join(lines)
