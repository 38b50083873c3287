"""Truth simulation and per-run execution of configured scenarios.

Truth trajectories, prior sampling, measurement noise, and message dropout
each draw from their own named stream, so any one of them can be toggled or
reordered without perturbing the others, and a (seed, run index) pair pins
the entire run. The centralized baseline consumes the same truth and
measurement draws through the same model code, so differences against the
decentralized filters isolate the fusion layer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np


from .fusion import RULE_CHANNEL, initial_channel_state
from .gaussian import InfoForm, marginalize_info, to_moment
from .local_filter import TaskAllocation, initial_belief, local_step
from .models import (
    NCV_POSITION_PICK,
    LinearMeasurement,
    RangeBearingMeasurement,
    bias_only_matrix,
    biased_position_matrix,
    controlled_target_step,
    controlled_target_transition,
    dubins_step,
    dubins_transition,
    ncv_transition,
    position_of,
    range_bearing_predict,
    wrap_angle,
)
from .network import (
    CommunicationCost,
    DeliveryRecord,
    DropoutModel,
    communication_cost,
    exchange_tick,
)
from .rng import DOMAIN_INIT, DOMAIN_MEASUREMENT, DOMAIN_TRUTH, stream
from .scenario import (
    BiasRobotSpec,
    ControlledTargetSpec,
    DubinsRobotSpec,
    NcvTargetSpec,
    ScenarioConfig,
)
from .variables import VariableId, VariableKind, VariableOrdering

_PLATFORM_INDEX = 0
_TARGET_INDEX = 1


def controlled_sequence(spec: ControlledTargetSpec, steps: int) -> np.ndarray:
    """Per-step displacement schedule u_k, k = 0..steps-1, known to the filter.

    Waypoint lists are walked at the configured speed along the noise-free
    nominal path; after the last waypoint the target holds position.
    """
    if spec.velocity is not None:
        return np.tile(np.asarray(spec.velocity, dtype=float), (steps, 1))
    if spec.waypoints is None:
        return np.tile(np.array([spec.speed, 0.0]), (steps, 1))
    u = np.zeros((steps, 2))
    pos = np.asarray(spec.start, dtype=float).copy()
    queue = list(spec.waypoints)
    for k in range(steps):
        if not queue:
            break
        to = np.asarray(queue[0], dtype=float) - pos
        dist = float(np.hypot(*to))
        if dist <= spec.speed:
            u[k] = to
            queue.pop(0)
        else:
            u[k] = to * (spec.speed / dist)
        pos += u[k]
    return u


class ScenarioModels:
    """Transition provider for local filters, channel filters, and baseline."""

    def __init__(self, config: ScenarioConfig):
        self._config = config
        self._dt = config.dt
        self._controls: dict[int, np.ndarray] = {}
        self._static: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self._step_noise: dict[int, np.ndarray] = {}
        for t in config.targets:
            if isinstance(t, NcvTargetSpec):
                self._static[t.id] = ncv_transition(config.dt, t.accel_psd)
            else:
                self._controls[t.id] = controlled_sequence(t, config.steps)
                self._step_noise[t.id] = np.diag(t.step_noise)

    def control_of(self, tid: int, k: int) -> np.ndarray:
        seq = self._controls[tid]
        return seq[min(k, len(seq) - 1)]

    def transition(self, slot: VariableId, k: int, mean: np.ndarray):
        if slot.kind is VariableKind.BIAS_STATE:
            return None
        if slot.kind is VariableKind.TARGET_STATE:
            if slot.owner in self._static:
                return self._static[slot.owner]
            return controlled_target_transition(
                self.control_of(slot.owner, k), self._step_noise[slot.owner]
            )
        spec = self._config.robot(slot.owner)
        v, phi = spec.control_at(k)
        return dubins_transition(
            mean, v, phi, self._dt, spec.wheelbase, np.diag(spec.rate_noise)
        )


class TruthSim:
    """Ground-truth state evolution for one Monte Carlo run.

    Also owns the prior samples: filter priors are centered on truth plus a
    draw of the prior covariance (and bias truth is a draw around the zero
    prior mean), so the initial errors are distributed exactly as the filters
    claim. Shared targets use one draw for all robots, which is what makes a
    shared prior genuinely shared.
    """

    def __init__(self, config: ScenarioConfig, models: ScenarioModels, run_idx: int):
        self.config = config
        self.models = models
        self.time = 0
        seed = config.seed
        self.poses: dict[int, np.ndarray] = {}
        self.biases: dict[int, np.ndarray] = {}
        self.targets: dict[int, np.ndarray] = {}
        self.pose_prior_mean: dict[int, np.ndarray] = {}
        self.target_prior_mean: dict[int, np.ndarray] = {}
        self._pose_streams: dict[int, np.random.Generator] = {}
        self._target_streams: dict[int, np.random.Generator] = {}

        for spec in sorted(config.robots, key=lambda r: r.id):
            init = stream(seed, run_idx, DOMAIN_INIT, _PLATFORM_INDEX, spec.id)
            if isinstance(spec, DubinsRobotSpec):
                self.poses[spec.id] = np.asarray(spec.start, dtype=float)
                sd = np.sqrt(self.pose_prior_cov_diag(spec))
                self.pose_prior_mean[spec.id] = self.poses[spec.id] + init.normal(size=3) * sd
                self._pose_streams[spec.id] = stream(
                    seed, run_idx, DOMAIN_TRUTH, _PLATFORM_INDEX, spec.id
                )
            elif isinstance(spec, BiasRobotSpec):
                self.biases[spec.id] = init.normal(size=2) * np.sqrt(spec.bias_prior_var)

        for tspec in sorted(config.targets, key=lambda t: t.id):
            init = stream(seed, run_idx, DOMAIN_INIT, _TARGET_INDEX, tspec.id)
            self.targets[tspec.id] = np.asarray(tspec.start, dtype=float)
            sd = np.sqrt(self.target_prior_cov_diag(tspec))
            self.target_prior_mean[tspec.id] = (
                self.targets[tspec.id] + init.normal(size=tspec.dim) * sd
            )
            self._target_streams[tspec.id] = stream(
                seed, run_idx, DOMAIN_TRUTH, _TARGET_INDEX, tspec.id
            )

    def pose_prior_cov_diag(self, spec: DubinsRobotSpec) -> np.ndarray:
        pv = self.config.pose_prior_var
        return np.array([pv, pv, spec.heading_prior_var])

    def target_prior_cov_diag(self, spec) -> np.ndarray:
        pv = self.config.target_prior_var
        if spec.dim == 2:
            return np.array([pv, pv])
        vv = self.config.velocity_prior_var
        return np.array([pv, vv, pv, vv])

    def _turning(self, spec: NcvTargetSpec, k: int) -> bool:
        if spec.maneuver is None:
            return False
        straight, turn, _ = spec.maneuver
        return k % (straight + turn) >= straight

    def step(self) -> None:
        """Advance every true state one tick."""
        k = self.time
        cfg = self.config
        for spec in sorted(cfg.robots, key=lambda r: r.id):
            if not isinstance(spec, DubinsRobotSpec):
                continue
            v, phi = spec.control_at(k)
            noise = self._pose_streams[spec.id].normal(size=3) * np.sqrt(spec.rate_noise)
            self.poses[spec.id] = dubins_step(
                self.poses[spec.id], v, phi, cfg.dt, spec.wheelbase, noise
            )
        for tspec in sorted(cfg.targets, key=lambda t: t.id):
            gen = self._target_streams[tspec.id]
            state = self.targets[tspec.id]
            if isinstance(tspec, NcvTargetSpec):
                f, _, q = ncv_transition(cfg.dt, tspec.accel_psd)
                w = gen.multivariate_normal(np.zeros(4), q, method="cholesky")
                state = f @ state + w
                if self._turning(tspec, k):
                    _, _, rate = tspec.maneuver
                    c, s = np.cos(rate), np.sin(rate)
                    vx, vy = state[1], state[3]
                    state[1] = c * vx - s * vy
                    state[3] = s * vx + c * vy
            else:
                u = self.models.control_of(tspec.id, k)
                w = gen.normal(size=2) * np.sqrt(tspec.step_noise)
                state = controlled_target_step(state, u, w)
            self.targets[tspec.id] = state
        self.time = k + 1

    def block(self, v: VariableId) -> np.ndarray:
        """Current true value of one state block."""
        if v.kind is VariableKind.ROBOT_POSE:
            return self.poses[v.owner]
        if v.kind is VariableKind.BIAS_STATE:
            return self.biases[v.owner]
        return self.targets[v.owner]

    def vector_for(self, slots: tuple[VariableId, ...]) -> np.ndarray:
        return np.concatenate([self.block(v) for v in slots])


class SensorSuite:
    """Generates each robot's measurement batch from the current truth."""

    def __init__(self, config: ScenarioConfig, run_idx: int):
        self.config = config
        self._streams = {
            (spec.id, sensor): stream(config.seed, run_idx, DOMAIN_MEASUREMENT, spec.id, sensor)
            for spec in config.robots
            for sensor in (0, 1)
        }

    def _nearest_landmarks(self, pose: np.ndarray, count: int):
        marks = self.config.landmarks
        order = sorted(
            range(len(marks)),
            key=lambda i: (np.hypot(marks[i][0] - pose[0], marks[i][1] - pose[1]), i),
        )
        return [marks[i] for i in order[:count]]

    def measure(self, truth: TruthSim, k: int) -> dict[int, list]:
        """Measurement records for every robot at tick k (truth already at k)."""
        out: dict[int, list] = {}
        for spec in sorted(self.config.robots, key=lambda r: r.id):
            platform_gen = self._streams[(spec.id, 0)]
            target_gen = self._streams[(spec.id, 1)]
            obs = []
            if isinstance(spec, DubinsRobotSpec):
                pose_var = spec.pose_variable.at(k)
                pose = truth.poses[spec.id]
                r_lm = np.diag(spec.landmark_noise)
                sd_lm = np.sqrt(spec.landmark_noise)
                for lm in self._nearest_landmarks(pose, spec.max_landmarks):
                    z = range_bearing_predict(pose, np.asarray(lm))
                    z = z + platform_gen.normal(size=2) * sd_lm
                    z[1] = wrap_angle(z[1])
                    obs.append(RangeBearingMeasurement(
                        pose=pose_var, z=z, noise_cov=r_lm, landmark=tuple(lm)))
                r_t = np.diag(spec.target_noise)
                sd_t = np.sqrt(spec.target_noise)
                for tid in spec.targets:
                    tvar = self.config.target_variable(tid).at(k)
                    z = range_bearing_predict(pose, position_of(truth.targets[tid]))
                    z = z + target_gen.normal(size=2) * sd_t
                    z[1] = wrap_angle(z[1])
                    obs.append(RangeBearingMeasurement(
                        pose=pose_var, z=z, noise_cov=r_t, target=tvar))
            elif isinstance(spec, BiasRobotSpec):
                r = np.diag(spec.position_noise)
                sd = np.sqrt(spec.position_noise)
                bias_var = spec.bias_variable
                bias = truth.biases[spec.id]
                for tid in spec.targets:
                    tspec = self.config.target(tid)
                    tvar = self.config.target_variable(tid).at(k)
                    z = position_of(truth.targets[tid]) + bias + target_gen.normal(size=2) * sd
                    obs.append(LinearMeasurement(
                        variables=(tvar, bias_var),
                        matrix=biased_position_matrix(tspec.dim),
                        z=z, noise_cov=r))
                z = bias + platform_gen.normal(size=2) * sd
                obs.append(LinearMeasurement(
                    variables=(bias_var,), matrix=bias_only_matrix(), z=z, noise_cov=r))
            else:  # tracker
                r = np.diag(spec.position_noise)
                sd = np.sqrt(spec.position_noise)
                for tid in spec.targets:
                    tspec = self.config.target(tid)
                    tvar = self.config.target_variable(tid).at(k)
                    h = np.eye(2) if tspec.dim == 2 else NCV_POSITION_PICK
                    z = position_of(truth.targets[tid]) + target_gen.normal(size=2) * sd
                    obs.append(LinearMeasurement(
                        variables=(tvar,), matrix=h, z=z, noise_cov=r))
            out[spec.id] = obs
        return out


def initial_filter_state(config: ScenarioConfig, allocation: TaskAllocation, truth: TruthSim):
    """Per-robot priors and, for the channel rule, per-edge channel seeds."""
    beliefs = {}
    for spec in config.robots:
        means, covs = {}, {}
        for v in allocation.robots[spec.id]:
            if v.kind is VariableKind.ROBOT_POSE:
                means[v] = truth.pose_prior_mean[spec.id]
                covs[v] = np.diag(truth.pose_prior_cov_diag(spec))
            elif v.kind is VariableKind.BIAS_STATE:
                means[v] = np.zeros(2)
                covs[v] = spec.bias_prior_var * np.eye(2)
            else:
                tspec = config.target(v.owner)
                means[v] = truth.target_prior_mean[v.owner]
                covs[v] = np.diag(truth.target_prior_cov_diag(tspec))
        beliefs[spec.id] = initial_belief(spec.id, allocation.robots[spec.id], means, covs)

    channels = {}
    if config.rule == RULE_CHANNEL:
        for edge in allocation.edges:
            common = allocation.common(*edge)
            ordering = VariableOrdering(common)
            lam = np.zeros((ordering.dim, ordering.dim))
            zeta = np.zeros(ordering.dim)
            for v in ordering:
                sl = ordering.slice_of(v)
                tspec = config.target(v.owner)
                prec = 1.0 / truth.target_prior_cov_diag(tspec)
                lam[sl, sl] = np.diag(prec)
                zeta[sl] = prec * truth.target_prior_mean[v.owner]
            prior = InfoForm(ordering, zeta, lam)
            for end in edge:
                channels[(edge, end)] = initial_channel_state(edge, end, common, prior)
    return beliefs, channels


@dataclass
class TickStats:
    """Estimation error and claimed covariance for one robot at one tick."""

    error: np.ndarray
    cov: np.ndarray


@dataclass
class RunResult:
    """Everything one Monte Carlo run produces.

    ``stats[rid][k-1]`` holds robot rid's error and covariance after tick k,
    over ``slots[rid]`` in that order. The centralized baseline reports the
    same per-robot marginals, so curves are directly comparable.
    """

    scenario: str
    run_idx: int
    rule: str
    delivery: float
    steps: int
    slots: dict[int, tuple[VariableId, ...]]
    stats: dict[int, list[TickStats]]
    records: list[DeliveryRecord]
    fallbacks: int
    comm: CommunicationCost
    wall_clock: float


def _wrap_indices(slots: tuple[VariableId, ...]) -> list[int]:
    """Flat indices of heading components, whose residuals need wrapping."""
    out = []
    pos = 0
    for v in slots:
        if v.kind is VariableKind.ROBOT_POSE:
            out.append(pos + 2)
        pos += v.dim
    return out


def _sorted_slots(slots) -> tuple[VariableId, ...]:
    return tuple(sorted(slots))


def _tick_stats(mean, cov, truth_vec, wrap_idx) -> TickStats:
    err = mean - truth_vec
    for i in wrap_idx:
        err[i] = wrap_angle(err[i])
    return TickStats(error=err, cov=cov)


def run_single(config: ScenarioConfig, run_idx: int) -> RunResult:
    """Execute one decentralized run: filter, exchange, and bookkeeping."""
    t0 = time.perf_counter()
    models = ScenarioModels(config)
    allocation = config.allocation()
    truth = TruthSim(config, models, run_idx)
    sensors = SensorSuite(config, run_idx)
    beliefs, channels = initial_filter_state(config, allocation, truth)
    dropout = DropoutModel(config.delivery, config.topology, config.seed, run_idx)

    slots = {rid: _sorted_slots(vs) for rid, vs in allocation.robots.items()}
    wrap_idx = {rid: _wrap_indices(vs) for rid, vs in slots.items()}
    stats: dict[int, list[TickStats]] = {rid: [] for rid in slots}
    records: list[DeliveryRecord] = []
    fallbacks = 0

    for k in range(1, config.steps + 1):
        truth.step()
        obs = sensors.measure(truth, k)
        for rid in sorted(beliefs):
            beliefs[rid] = local_step(beliefs[rid], models, allocation, obs[rid])
        ex = exchange_tick(
            beliefs, channels, allocation, config.topology, dropout,
            config.rule, models=models, ci_cost=config.ci_cost,
        )
        beliefs, channels = ex.beliefs, ex.channels
        records.extend(ex.records)
        fallbacks += sum(1 for d in ex.diagnostics if d.rule_used == "hs-ci-fallback")
        for rid, belief in beliefs.items():
            current = belief.current_variables()
            mom = belief.estimate()
            stats[rid].append(
                _tick_stats(mom.mean, mom.cov, truth.vector_for(current), wrap_idx[rid])
            )

    return RunResult(
        scenario=config.name,
        run_idx=run_idx,
        rule=config.rule,
        delivery=config.delivery,
        steps=config.steps,
        slots=slots,
        stats=stats,
        records=records,
        fallbacks=fallbacks,
        comm=communication_cost(records, config.global_dimension()),
        wall_clock=time.perf_counter() - t0,
    )


def final_belief_graphs(config: ScenarioConfig, steps: int = 3) -> str:
    """DOT rendering of every robot's belief graph after a short run.

    A few ticks are enough to show the steady-state structure (priors,
    eliminated history, fusion factors); full runs only grow the numbers.
    """
    models = ScenarioModels(config)
    allocation = config.allocation()
    truth = TruthSim(config, models, 0)
    sensors = SensorSuite(config, 0)
    beliefs, channels = initial_filter_state(config, allocation, truth)
    dropout = DropoutModel(config.delivery, config.topology, config.seed, 0)
    for k in range(1, min(steps, config.steps) + 1):
        truth.step()
        obs = sensors.measure(truth, k)
        for rid in sorted(beliefs):
            beliefs[rid] = local_step(beliefs[rid], models, allocation, obs[rid])
        ex = exchange_tick(
            beliefs, channels, allocation, config.topology, dropout,
            config.rule, models=models, ci_cost=config.ci_cost,
        )
        beliefs, channels = ex.beliefs, ex.channels
    parts = []
    for rid in sorted(beliefs):
        parts.append(f"// robot {rid}\n" + beliefs[rid].graph.to_dot())
    return "\n".join(parts)


def run_centralized(config: ScenarioConfig, run_idx: int) -> RunResult:
    """All measurements in one filter over the union state; no communication.

    Consumes the identical truth and measurement streams as `run_single`, and
    reports each robot's marginal so the curves line up tick for tick.
    """
    t0 = time.perf_counter()
    models = ScenarioModels(config)
    allocation = config.allocation()
    truth = TruthSim(config, models, run_idx)
    sensors = SensorSuite(config, run_idx)

    union = allocation.all_slots()
    central = TaskAllocation(robots={0: union}, edges=())
    means, covs = {}, {}
    for v in union:
        if v.kind is VariableKind.ROBOT_POSE:
            means[v] = truth.pose_prior_mean[v.owner]
            covs[v] = np.diag(truth.pose_prior_cov_diag(config.robot(v.owner)))
        elif v.kind is VariableKind.BIAS_STATE:
            means[v] = np.zeros(2)
            covs[v] = config.robot(v.owner).bias_prior_var * np.eye(2)
        else:
            means[v] = truth.target_prior_mean[v.owner]
            covs[v] = np.diag(truth.target_prior_cov_diag(config.target(v.owner)))
    belief = initial_belief(0, union, means, covs)

    slots = {rid: _sorted_slots(vs) for rid, vs in allocation.robots.items()}
    wrap_idx = {rid: _wrap_indices(vs) for rid, vs in slots.items()}
    statics = belief.statics
    stats: dict[int, list[TickStats]] = {rid: [] for rid in slots}

    for k in range(1, config.steps + 1):
        truth.step()
        obs = sensors.measure(truth, k)
        batch = [m for rid in sorted(obs) for m in obs[rid]]
        belief = local_step(belief, models, central, batch)
        joint = belief.joint()
        for rid, template in slots.items():
            current = tuple(v if v in statics else v.at(k) for v in template)
            mom = to_moment(marginalize_info(joint, current))
            stats[rid].append(
                _tick_stats(mom.mean, mom.cov, truth.vector_for(current), wrap_idx[rid])
            )

    return RunResult(
        scenario=config.name,
        run_idx=run_idx,
        rule="centralized",
        delivery=1.0,
        steps=config.steps,
        slots=slots,
        stats=stats,
        records=[],
        fallbacks=0,
        comm=communication_cost([], config.global_dimension()),
        wall_clock=time.perf_counter() - t0,
    )
