"""Pre-training and transfer runs: actors, learner and evaluator in one process.

Actors own an environment, a :class:`FlightController` and (during
pre-training) an episodic memory; they act with a parameter snapshot that
is refreshed every ``run.actor_refresh`` of their own steps and push
transitions into the shared :class:`SequenceBuffer`. The learner samples
sequences, builds multi-step targets against its target network (Retrace on
the intrinsic reward for pre-training, Peng's Q(lambda) on the task reward
for transfer) and writes priorities back. The evaluator acts greedily every
``run.eval_every`` environment steps.

In deterministic mode actors step round-robin, one learner update runs
after every ``learner.update_every`` environment steps, and evaluation runs
inline, so equal configs give equal records. The threaded mode runs each
actor in its own thread with the learner and evaluator in the caller's
thread.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from ..envs import GridEnv, Transition, make_env
from ..errors import ConfigError, IntegrityError, ValidationError
from ..explore import (
    EXTRA_ACTION_MODES,
    FlightController,
    FrozenPolicy,
    begin_episode,
    epsilon_ladder,
    select_action,
)
from ..intrinsic import (
    EpisodicMemory,
    NGUConfig,
    embed,
    episodic_reward,
    lifelong_modulator,
    make_embedding,
    make_rnd,
    ngu_reward,
    rnd_error,
    rnd_reward,
    rnd_train,
    train_inverse_dynamics,
)
from ..learner import (
    QFunction,
    apply_update,
    greedy,
    init_from_checkpoint,
    make_learner,
    make_qfunction,
    peng_batch,
    q_batch,
    q_values,
    retrace_batch,
)
from ..replay import SequenceBuffer
from .checkpoint import Checkpoint, read_checkpoint
from .config import ExperimentConfig
from .metrics import EpisodeLog, EvalRow, RunRecord

RECORD_KEYS = (
    "state", "action", "primitive", "next_state", "reward_ext", "reward_int",
    "absorbing", "from_pretrained", "behavior_prob",
)


# --- evaluation ---------------------------------------------------------------


@dataclass
class EvalSummary:
    mean_return: float
    median_return: float
    mean_length: float
    usage: float
    coverage: float
    returns: list
    visited: list = field(repr=False, default_factory=list)


def evaluate(
    policy: Union[QFunction, FrozenPolicy, Callable[[int], int]],
    env: GridEnv,
    episodes: int = 1,
    rng: Optional[np.random.Generator] = None,
    *,
    pi_p: Optional[FrozenPolicy] = None,
    obs_table: Optional[np.ndarray] = None,
    eps: float = 0.0,
) -> EvalSummary:
    """Greedy rollouts (epsilon ``eps``, 0 by default).

    A Q-function acts greedily over all its outputs; selecting the extra
    action executes ``pi_p``'s action and counts toward ``usage``.
    """
    if episodes < 1:
        raise ValidationError("episodes must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    obs_table = env.features if obs_table is None else obs_table
    returns, lengths, coverage, visited_all = [], [], [], []
    extra_steps = total_steps = 0
    for _ in range(episodes):
        s = env.reset()
        ret, visited, done = 0.0, {s}, False
        while not done:
            if isinstance(policy, QFunction):
                q = q_values(policy, s if policy.tabular else obs_table[s])
                if eps > 0 and rng.random() < eps:
                    a = int(rng.integers(len(q)))
                else:
                    a = greedy(q)
                if policy.has_extra_action and a == policy.n_actions_base:
                    if pi_p is None:
                        raise ValidationError("extra action selected without a pre-trained policy")
                    extra_steps += 1
                    a = pi_p.act(s)
            else:
                a = int(policy(s))
            s, r, done = env.step(a)
            ret += r
            total_steps += 1
            visited.add(s)
        returns.append(ret)
        lengths.append(env.steps)
        coverage.append(len(visited))
        visited_all.append(visited)
    return EvalSummary(
        float(np.mean(returns)),
        float(np.median(returns)),
        float(np.mean(lengths)),
        extra_steps / total_steps if total_steps else 0.0,
        float(np.mean(coverage)),
        returns,
        visited_all,
    )


# --- actors ---------------------------------------------------------------------


@dataclass
class _Snapshot:
    version: int
    qf: QFunction
    emb_table: Optional[np.ndarray] = None
    err_table: Optional[np.ndarray] = None
    rnd: object = None


@dataclass
class _Actor:
    idx: int
    env: GridEnv
    fc: FlightController
    eps: float
    snap: _Snapshot
    since_refresh: int = 0
    max_staleness: int = 0
    state: int = 0
    episode_id: int = -1
    ep_return: float = 0.0
    ep_flight_steps: int = 0
    ep_extra_steps: int = 0
    ep_flights_at_start: int = 0
    memory: Optional[EpisodicMemory] = None


class _Run:
    def __init__(self, cfg: ExperimentConfig, pretrain: bool):
        cfg.validate()
        self.cfg = cfg
        self.pretrain = pretrain
        r, lr, x = cfg.run, cfg.learner, cfg.explore
        spec = cfg.env.resolved()
        self.spec = spec
        self.eval_env = make_env(spec)
        env = self.eval_env
        self.n_actions = env.n_actions
        self.obs_table = env.features
        self.tabular = lr.repr_mode == "tabular"
        self.n_inputs = env.n_states if self.tabular else env.obs_dim
        seeds = np.random.SeedSequence(r.seed).spawn(r.n_actors + 4)
        self.learner_rng = np.random.default_rng(seeds[0])
        init_rng = np.random.default_rng(seeds[1])
        self.eval_rng = np.random.default_rng(seeds[2])
        intrinsic_seed = int(seeds[3].generate_state(1)[0])

        # pre-trained policy and initial weights
        self.pi_p: Optional[FrozenPolicy] = None
        ckpt: Optional[Checkpoint] = None
        if not pretrain and r.pretrained_checkpoint:
            ckpt = read_checkpoint(r.pretrained_checkpoint)
            src = ckpt.to_qfunction()
            if src.n_actions_base != env.n_actions or src.n_inputs != self.n_inputs or src.repr_mode != lr.repr_mode:
                raise ValidationError(
                    f"checkpoint architecture {ckpt.architecture} does not match "
                    f"{lr.repr_mode} network with {self.n_inputs} inputs and {env.n_actions} actions"
                )
            self.pi_p = FrozenPolicy("greedy_from_checkpoint", qf=src, obs_table=self.obs_table)
        self.mode = x.mode
        has_extra = (not pretrain) and x.mode in EXTRA_ACTION_MODES
        qf = make_qfunction(lr.repr_mode, self.n_inputs, env.n_actions, has_extra_action=has_extra, hidden=lr.hidden, rng=init_rng,
            init_value=lr.init_value,
        )
        if ckpt is not None:
            qf = init_from_checkpoint(qf, ckpt, r.init_mode, init_rng)
        self.ls = make_learner(
            qf,
            target_period=lr.target_period,
            gamma=lr.gamma,
            lambda_q=lr.lambda_q,
            lambda_retrace=lr.lambda_retrace,
            step_size=lr.step_size,
            optimizer=lr.optimizer,
            priority_eta=lr.priority_eta,
            adam_eps=lr.adam_eps,
            beta1=lr.beta1,
            beta2=lr.beta2,
        )
        rc = cfg.replay
        self.buffer = SequenceBuffer(rc.capacity, rc.sequence_length, rc.overlap, rc.priority_exponent, rc.is_exponent)

        # intrinsic reward machinery (pre-training only)
        self.ngu = self.rnd = self.emb = None
        if pretrain:
            ic = cfg.intrinsic
            self.ngu = NGUConfig(ic.k, ic.c, ic.eps_kernel, ic.xi, ic.s_m, ic.L, ic.d2m_floor)
            dim = ic.embed_dim or env.obs_dim
            self.emb = make_embedding(
                ic.embedding, env.obs_dim, dim, n_actions=env.n_actions, hidden=ic.embed_hidden,
                seed=intrinsic_seed, step_size=ic.embed_step_size,
            )
            self.rnd = make_rnd(
                env.obs_dim, ic.rnd_embed_dim, hidden=ic.rnd_hidden, predictor_kind=ic.rnd_predictor,
                step_size=ic.rnd_step_size, sigma_floor=ic.sigma_floor, seed=intrinsic_seed + 1,
            )

        # actors
        eps_list = [x.eps] * r.n_actors if x.eps >= 0 else epsilon_ladder(r.n_actors, x.eps_max, x.eps_alpha)
        zeta_cap = x.zeta_cap or 10 * spec.episode_limit
        self._snapshot: Optional[_Snapshot] = None
        self._publish()
        self.actors = []
        for i in range(r.n_actors):
            fc = FlightController(
                mode=x.mode, eps=eps_list[i], n_actions=env.n_actions, eps_levy_min=x.eps_levy_min,
                eps_levy_max=x.eps_levy_max, zeta_mu=x.zeta_mu, zeta_cap=zeta_cap,
                rng=np.random.default_rng(seeds[4 + i]),
            )
            a = _Actor(i, make_env(spec), fc, eps_list[i], self._snapshot)
            if pretrain:
                a.memory = EpisodicMemory(self.emb.dim_out)
            self.actors.append(a)
        self._next_episode_id = 0

        # bookkeeping
        self.t = 0
        self.first_reward: float = math.nan
        self.first_goal: float = math.nan
        self.flight_steps_window = 0
        self.steps_window = 0
        self.record = RunRecord()
        self.lock = threading.RLock()
        self.t0 = time.perf_counter()
        for a in self.actors:
            self._start_episode(a)

    # -- snapshots -----------------------------------------------------------------

    def _publish(self) -> None:
        """Make the learner's current parameters available to actors."""
        version = self.ls.update_count
        if self._snapshot is not None and self._snapshot.version == version:
            return
        snap = _Snapshot(version, self.ls.online.copy())
        if self.pretrain:
            snap.emb_table = embed(self.emb, self.obs_table)
            snap.rnd = self.rnd.snapshot()
            snap.err_table = rnd_error(snap.rnd, self.obs_table)
        self._snapshot = snap

    def _refresh(self, a: _Actor) -> None:
        with self.lock:
            self._publish()
            a.snap = self._snapshot
        a.since_refresh = 0

    # -- acting ----------------------------------------------------------------------

    def _start_episode(self, a: _Actor) -> None:
        with self.lock:
            a.episode_id = self._next_episode_id
            self._next_episode_id += 1
        a.state = a.env.reset()
        begin_episode(a.fc)
        a.ep_return = 0.0
        a.ep_flight_steps = a.ep_extra_steps = 0
        a.ep_flights_at_start = a.fc.flights_started
        if a.memory is not None:
            a.memory.reset()

    def _intrinsic(self, a: _Actor, s: int, nxt: int) -> float:
        snap = a.snap
        a.memory.add(snap.emb_table[s])
        err = float(snap.err_table[nxt])
        ready = snap.rnd.stats.count >= 2
        if self.cfg.run.phase == "pretrain_rnd":
            return rnd_reward(snap.rnd, err) if ready else 0.0
        r_epi = episodic_reward(a.memory, snap.emb_table[nxt], self.ngu)
        alpha = lifelong_modulator(snap.rnd, err) if ready else 1.0
        return ngu_reward(r_epi, alpha, self.ngu.L)

    def actor_step(self, a: _Actor) -> None:
        if a.since_refresh >= self.cfg.run.actor_refresh:
            self._refresh(a)
        s = a.state
        qf = a.snap.qf
        q = qf.head_params["table"][s] if self.tabular else q_batch(qf, self.obs_table[s][None, :])[0]
        ch = select_action(a.fc, q, self.pi_p, s)
        nxt, r_ext, terminal = a.env.step(ch.primitive)
        goal = a.env.is_goal(nxt)
        r_int = self._intrinsic(a, s, nxt) if self.pretrain else 0.0
        tr = Transition(
            s, ch.action, ch.primitive, r_ext, r_int, nxt, terminal,
            ch.from_pretrained, ch.in_flight, ch.behavior_prob, terminal and not goal,
        )
        self.buffer.append(tr, a.episode_id, stream=a.idx)
        a.since_refresh += 1
        a.max_staleness = max(a.max_staleness, a.since_refresh)
        a.ep_return += r_ext
        a.ep_flight_steps += ch.in_flight
        a.ep_extra_steps += (not self.pretrain) and ch.action == self.n_actions
        a.state = nxt
        with self.lock:
            self.t += 1
            self.steps_window += 1
            self.flight_steps_window += ch.in_flight
            if r_ext > 0 and math.isnan(self.first_reward):
                self.first_reward = float(self.t)
            if goal and math.isnan(self.first_goal):
                self.first_goal = float(self.t)
        if terminal:
            self.record.episodes.append(
                EpisodeLog(
                    a.episode_id, a.idx, a.eps, a.fc.eps_levy, a.ep_return, a.env.steps,
                    a.ep_flight_steps, a.fc.flights_started - a.ep_flights_at_start, a.ep_extra_steps,
                )
            )
            self._start_episode(a)

    # -- learning ----------------------------------------------------------------------

    def _q_target(self, states: np.ndarray) -> np.ndarray:
        qt = self.ls.target
        return q_batch(qt, states if self.tabular else self.obs_table[states])

    def learner_step(self) -> bool:
        lr = self.cfg.learner
        if len(self.buffer) < max(1, lr.min_replay):
            return False
        batch = self.buffer.sample(lr.batch_size, self.learner_rng)
        if len(batch) == 0:
            return False
        recs = batch.records
        B = len(recs)
        arr = {k: np.stack([r.arrays[k] for r in recs]) for k in RECORD_KEYS}
        lengths = np.array([len(r) for r in recs])
        T = arr["state"].shape[1]
        valid = np.arange(T)[None, :] < lengths[:, None]
        S, A, N = arr["state"], arr["action"], arr["next_state"]
        q_next = self._q_target(N)
        ls = self.ls
        if self.pretrain:
            q_s = self._q_target(S)
            best_s = np.argmax(q_s, axis=-1)
            q_taken = np.take_along_axis(q_s, A[..., None], axis=-1)[..., 0]
            pi_taken = (A == best_s).astype(float)
            targets = retrace_batch(
                arr["reward_int"], arr["absorbing"], q_taken, q_next.max(axis=-1), pi_taken,
                arr["behavior_prob"], lengths, ls.gamma, ls.lambda_retrace,
            )
        else:
            targets = peng_batch(
                arr["reward_ext"], arr["absorbing"], q_next.max(axis=-1), lengths, ls.gamma, ls.lambda_q,
            )
        rows = np.broadcast_to(np.arange(B)[:, None], (B, T))
        states, actions, y, seq = S[valid], A[valid], targets[valid], rows[valid]
        if not self.pretrain and ls.online.has_extra_action:
            # duplicate extra-action steps under the primitive action pi_p took
            dup = valid & (A == self.n_actions) & arr["from_pretrained"]
            if dup.any():
                states = np.concatenate([states, S[dup]])
                actions = np.concatenate([actions, arr["primitive"][dup]])
                y = np.concatenate([y, targets[dup]])
                seq = np.concatenate([seq, rows[dup]])
        obs = states if self.tabular else self.obs_table[states]
        with self.lock:
            prios = apply_update(ls, obs, actions, y, seq, B)
        self.buffer.update_priorities(batch.ids, prios)
        if self.pretrain:
            self._train_intrinsic(arr, lengths)
        return True

    def _train_intrinsic(self, arr: dict, lengths: np.ndarray) -> None:
        k = self.cfg.intrinsic.train_suffix
        T = arr["state"].shape[1]
        idx = np.arange(T)[None, :]
        tail = (idx < lengths[:, None]) & (idx >= lengths[:, None] - k)
        nxt = self.obs_table[arr["next_state"][tail]]
        with self.lock:
            rnd_train(self.rnd, nxt)
            if self.emb.mode == "inverse_dynamics":
                train_inverse_dynamics(self.emb, self.obs_table[arr["state"][tail]], arr["primitive"][tail], nxt)

    # -- evaluation --------------------------------------------------------------------

    def eval_row(self) -> None:
        with self.lock:
            qf = self.ls.online.copy()
            rnd = self.rnd.snapshot() if self.rnd is not None else None
            t = self.t
            fl = self.flight_steps_window / self.steps_window if self.steps_window else 0.0
            self.flight_steps_window = self.steps_window = 0
            first_reward, first_goal = self.first_reward, self.first_goal
        ev = evaluate(qf, self.eval_env, self.cfg.run.eval_episodes, self.eval_rng, pi_p=self.pi_p, obs_table=self.obs_table)
        rnd_err = math.nan
        if rnd is not None:
            states = sorted(set().union(*ev.visited))
            rnd_err = float(np.mean(rnd_error(rnd, self.obs_table[states])))
        self.record.add(
            EvalRow(
                t, ev.mean_return, ev.median_return, ev.mean_length, first_reward, first_goal,
                ev.usage, fl, ev.coverage, rnd_err, time.perf_counter() - self.t0,
            )
        )

    # -- drivers -----------------------------------------------------------------------

    def _stop_at(self) -> int:
        r = self.cfg.run
        if r.stop_after_goal > 0 and not math.isnan(self.first_goal):
            return min(r.total_env_steps, int(self.first_goal) + r.stop_after_goal)
        return r.total_env_steps

    def run_deterministic(self) -> None:
        r, lr = self.cfg.run, self.cfg.learner
        next_eval = r.eval_every
        while self.t < self._stop_at():
            for a in self.actors:
                self.actor_step(a)
                if self.t % lr.update_every == 0:
                    self.learner_step()
                if self.t >= next_eval:
                    self.eval_row()
                    next_eval += r.eval_every
                if self.t >= self._stop_at():
                    break
        if not self.record.rows or self.record.rows[-1].env_steps != self.t:
            self.eval_row()

    def run_threaded(self) -> None:
        r, lr = self.cfg.run, self.cfg.learner
        stop = threading.Event()
        claimed = [0]

        def actor_loop(a: _Actor):
            while not stop.is_set():
                with self.lock:
                    if claimed[0] >= self._stop_at():
                        return
                    claimed[0] += 1
                self.actor_step(a)

        threads = [threading.Thread(target=actor_loop, args=(a,), daemon=True) for a in self.actors]
        for th in threads:
            th.start()
        updates = 0
        next_eval = r.eval_every
        try:
            while True:
                alive = any(th.is_alive() for th in threads)
                did = False
                if updates < self.t // lr.update_every:
                    if self.learner_step():
                        did = True
                    updates += 1
                if self.t >= next_eval:
                    self.eval_row()
                    next_eval = (self.t // r.eval_every + 1) * r.eval_every
                    did = True
                if not alive and updates >= self.t // lr.update_every:
                    break
                if not did:
                    time.sleep(0.0005)
        finally:
            stop.set()
            for th in threads:
                th.join()
        if not self.record.rows or self.record.rows[-1].env_steps != self.t:
            self.eval_row()

    def execute(self, deterministic: Optional[bool] = None) -> RunRecord:
        det = self.cfg.run.deterministic if deterministic is None else deterministic
        if det:
            self.run_deterministic()
        else:
            self.run_threaded()
        self.record.info.update(
            updates=self.ls.update_count,
            env_steps=self.t,
            replay=self.buffer.stats(),
            max_staleness=max(a.max_staleness for a in self.actors),
        )
        return self.record


# --- entry points -----------------------------------------------------------------


def run_pretrain(cfg: ExperimentConfig, deterministic: Optional[bool] = None) -> tuple[Checkpoint, RunRecord]:
    if cfg.run.phase not in ("pretrain_ngu", "pretrain_rnd"):
        raise ConfigError(f"pretraining needs run.phase pretrain_ngu or pretrain_rnd, got {cfg.run.phase!r}")
    run = _Run(cfg, pretrain=True)
    record = run.execute(deterministic)
    ckpt = Checkpoint.from_qfunction(run.ls.online, phase=cfg.run.phase, steps=run.t, seed=cfg.run.seed)
    return ckpt, record


def pretrain_run(cfg: ExperimentConfig, deterministic: Optional[bool] = None) -> Checkpoint:
    """Reward-free pre-training; returns the learned Q-function as a checkpoint."""
    return run_pretrain(cfg, deterministic)[0]


def transfer_run(cfg: ExperimentConfig, deterministic: Optional[bool] = None) -> RunRecord:
    """Learning with task rewards, optionally helped by a frozen pre-trained policy."""
    if cfg.run.phase != "transfer":
        raise ConfigError(f"transfer_run needs run.phase = transfer, got {cfg.run.phase!r}")
    run = _Run(cfg, pretrain=False)
    initial = run.pi_p.initial_digest if run.pi_p is not None else None
    record = run.execute(deterministic)
    if run.pi_p is not None:
        final = run.pi_p.digest()
        record.info.update(policy_digest_initial=initial, policy_digest_final=final)
        if final != initial:
            raise IntegrityError("pre-trained policy changed during transfer")
    return record
