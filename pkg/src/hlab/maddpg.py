"""Multi-agent actor-critic training with centralized critics.

Each agent owns four networks: an actor mapping its own observation to a
softmax distribution over the five discrete actions, a critic scoring the
joint (all observations, all actions) vector, and Polyak-averaged target
copies of both. The critic regresses on the executed one-hot actions stored
in the buffer; soft actor outputs enter the critic only where a gradient
must flow through them (the agent's own slot in its policy update, and the
target actors in the bootstrap term).

Update cadence follows the step counter, not episodes: after
`learning_start_step` environment steps, one update round runs every
`learning_frequency` steps. A round updates every agent in index order
(critic first, then actor, on one freshly sampled batch per agent) and then
soft-updates all target networks once.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from hlab import world
from hlab.nn import (
    MlpParams,
    OptimizerState,
    backward_params,
    clip_and_apply,
    forward,
    init_params,
    input_gradient,
    soft_update,
)
from hlab.world import N_ACTIONS, ScenarioConfig, WorldState


@dataclass
class TrainConfig:
    """Training hyperparameters (defaults are the reference setting)."""

    scenario_id: str = "a"
    max_episodes: int = 20000
    max_episode_length: int = 50
    learning_start_step: int = 50000
    learning_frequency: int = 100
    batch_size: int = 1256
    memory_size: int = 100000
    gamma: float = 0.97
    tau: float = 0.01
    lr_actor: float = 0.01
    lr_critic: float = 0.01
    max_grad_norm: float = 0.5
    actor_logit_reg: float = 1e-3  # squared-logit penalty, keeps softmax alive
    hidden: tuple[int, ...] = (128, 64)
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    epsilon_fraction: float = 0.25  # anneal over this fraction of max_episodes
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1 or self.memory_size < self.batch_size:
            raise ValueError("memory_size must hold at least one batch")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.max_episodes < 1 or self.max_episode_length < 1:
            raise ValueError("episode counts must be positive")
        if not 0.0 <= self.epsilon_final <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_final <= epsilon_start <= 1")
        if self.actor_logit_reg < 0.0:
            raise ValueError("actor_logit_reg must be non-negative")

    def to_json_dict(self) -> dict:
        doc = {k: getattr(self, k) for k in (
            "scenario_id", "max_episodes", "max_episode_length",
            "learning_start_step", "learning_frequency", "batch_size",
            "memory_size", "gamma", "tau", "lr_actor", "lr_critic",
            "max_grad_norm", "actor_logit_reg", "epsilon_start",
            "epsilon_final", "epsilon_fraction", "seed")}
        doc["hidden"] = list(self.hidden)
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown training config keys: {sorted(extra)}")
        kwargs = dict(doc)
        if "hidden" in kwargs:
            kwargs["hidden"] = tuple(kwargs["hidden"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def epsilon_for_episode(episode: int, config: TrainConfig) -> float:
    """Linear anneal from epsilon_start to epsilon_final, then flat."""
    horizon = max(1, int(round(config.epsilon_fraction * config.max_episodes)))
    frac = min(1.0, episode / horizon)
    return config.epsilon_start + frac * (config.epsilon_final - config.epsilon_start)


@dataclass
class AgentNets:
    """One agent's networks and optimizers."""

    actor: MlpParams
    critic: MlpParams
    target_actor: MlpParams
    target_critic: MlpParams
    actor_opt: OptimizerState
    critic_opt: OptimizerState

    @classmethod
    def create(cls, obs_dim: int, joint_dim: int, hidden: Sequence[int],
               lr_actor: float, lr_critic: float,
               rng: np.random.Generator) -> "AgentNets":
        actor = init_params(obs_dim, hidden, N_ACTIONS, "softmax", rng)
        critic = init_params(joint_dim, hidden, 1, "linear", rng)
        return cls(
            actor=actor,
            critic=critic,
            target_actor=actor.copy(),
            target_critic=critic.copy(),
            actor_opt=OptimizerState.for_params(actor, lr_actor),
            critic_opt=OptimizerState.for_params(critic, lr_critic),
        )


@dataclass
class Transition:
    obs: np.ndarray  # (n, obs_dim)
    action_probs: np.ndarray  # (n, 5) soft distributions fed to critics
    action_indices: np.ndarray  # (n,) executed action per agent
    rewards: np.ndarray  # (n,)
    next_obs: np.ndarray  # (n, obs_dim)
    terminal: bool  # true only when the goal ended the episode


@dataclass
class Batch:
    obs: np.ndarray  # (m, n, obs_dim)
    action_probs: np.ndarray  # (m, n, 5)
    action_indices: np.ndarray  # (m, n)
    rewards: np.ndarray  # (m, n)
    next_obs: np.ndarray  # (m, n, obs_dim)
    terminal: np.ndarray  # (m,) float 0/1

    @property
    def size(self) -> int:
        return self.obs.shape[0]


class ReplayBuffer:
    """Fixed-capacity ring buffer over preallocated arrays."""

    def __init__(self, capacity: int, n_agents: int, obs_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self._obs = np.zeros((capacity, n_agents, obs_dim))
        self._probs = np.zeros((capacity, n_agents, N_ACTIONS))
        self._idx = np.zeros((capacity, n_agents), dtype=np.int64)
        self._rew = np.zeros((capacity, n_agents))
        self._next = np.zeros((capacity, n_agents, obs_dim))
        self._term = np.zeros(capacity)
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, tr: Transition) -> None:
        k = self._cursor
        self._obs[k] = tr.obs
        self._probs[k] = tr.action_probs
        self._idx[k] = tr.action_indices
        self._rew[k] = tr.rewards
        self._next[k] = tr.next_obs
        self._term[k] = 1.0 if tr.terminal else 0.0
        self._cursor = (k + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self._size < batch_size:
            raise ValueError(f"buffer holds {self._size} transitions, "
                             f"cannot sample {batch_size}")
        pick = rng.choice(self._size, size=batch_size, replace=False)
        return Batch(
            obs=self._obs[pick],
            action_probs=self._probs[pick],
            action_indices=self._idx[pick],
            rewards=self._rew[pick],
            next_obs=self._next[pick],
            terminal=self._term[pick],
        )


def _joint_input(obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """(m, n, od) + (m, n, 5) -> (m, n*od + n*5) critic input."""
    m = obs.shape[0]
    return np.hstack([obs.reshape(m, -1), actions.reshape(m, -1)])


def _one_hots(indices: np.ndarray) -> np.ndarray:
    """(m, n) executed action indices -> (m, n, 5) one-hot vectors."""
    return np.eye(N_ACTIONS)[indices]


def select_action(actor: MlpParams, obs: np.ndarray, epsilon: float,
                  rng: np.random.Generator | None = None
                  ) -> tuple[int, np.ndarray]:
    """Pick an executed action index; also return the actor's soft output.

    epsilon > 0 requires an rng; with probability epsilon the executed action
    is uniform over the five choices, otherwise the argmax of the actor.
    """
    probs = forward(actor, obs)
    if epsilon > 0.0:
        if rng is None:
            raise ValueError("exploration requires an rng")
        if rng.random() < epsilon:
            return int(rng.integers(N_ACTIONS)), probs
    return int(np.argmax(probs)), probs


def td_target(rewards_i: np.ndarray, terminal: np.ndarray, q_next: np.ndarray,
              gamma: float) -> np.ndarray:
    """y = r + gamma * (1 - terminal) * Q'. Timeouts keep bootstrapping."""
    return rewards_i + gamma * (1.0 - terminal) * q_next


def critic_update(agent: int, nets: list[AgentNets], batch: Batch,
                  gamma: float, max_grad_norm: float) -> float:
    """One mean-squared TD error step on agent's critic. Returns the loss.

    Q regresses on the executed one-hot actions (the transition's cause);
    the bootstrap term evaluates the target actors' soft outputs at the
    next observations.
    """
    m = batch.size
    next_probs = np.stack(
        [forward(nets[j].target_actor, batch.next_obs[:, j]) for j in
         range(len(nets))], axis=1)
    x_next = _joint_input(batch.next_obs, next_probs)
    q_next = forward(nets[agent].target_critic, x_next)[:, 0]
    y = td_target(batch.rewards[:, agent], batch.terminal, q_next, gamma)
    x = _joint_input(batch.obs, _one_hots(batch.action_indices))
    q = forward(nets[agent].critic, x)[:, 0]
    err = q - y
    loss = float(np.mean(err ** 2))
    upstream = (2.0 / m) * err[:, None]
    grads = backward_params(nets[agent].critic, x, upstream)
    clip_and_apply(nets[agent].critic, grads, nets[agent].critic_opt,
                   max_grad_norm)
    return loss


def actor_update(agent: int, nets: list[AgentNets], batch: Batch,
                 max_grad_norm: float, logit_reg: float = 1e-3) -> float:
    """One policy-gradient step through the agent's own critic.

    The critic is evaluated with the agent's fresh soft actor output in its
    own action slot and the executed one-hot actions from the batch in every
    other slot; the upstream of -mean(Q) flows through the critic input back
    into the actor. logit_reg adds a mean squared-logit penalty that stops
    the softmax from saturating (a pinned softmax has a zero Jacobian, which
    both freezes learning and blanks the dependency analysis).

    Returns the minimized scalar: -mean(Q) plus the penalty term. The
    applied (pre-clip) gradient is exactly the gradient of that scalar.
    """
    m = batch.size
    n = len(nets)
    obs_i = batch.obs[:, agent]
    probs_i = forward(nets[agent].actor, obs_i)
    actions = _one_hots(batch.action_indices)
    actions[:, agent] = probs_i
    x = _joint_input(batch.obs, actions)
    q = forward(nets[agent].critic, x)[:, 0]
    loss = float(-np.mean(q))
    upstream = np.full((m, 1), -1.0 / m)
    dx = input_gradient(nets[agent].critic, x, upstream)
    obs_block = batch.obs.shape[2] * n
    g_action = dx[:, obs_block + agent * N_ACTIONS:
                  obs_block + (agent + 1) * N_ACTIONS]
    grads = backward_params(nets[agent].actor, obs_i, g_action)
    if logit_reg > 0.0:
        # view the same arrays with a linear head: logits = pre-softmax output
        body = MlpParams(nets[agent].actor.weights, nets[agent].actor.biases,
                         "linear")
        logits = forward(body, obs_i)
        loss += logit_reg * float(np.mean(logits ** 2))
        reg_grads = backward_params(
            body, obs_i, (2.0 * logit_reg / logits.size) * logits)
        for gw, rw in zip(grads.weights, reg_grads.weights):
            gw += rw
        for gb, rb in zip(grads.biases, reg_grads.biases):
            gb += rb
    clip_and_apply(nets[agent].actor, grads, nets[agent].actor_opt,
                   max_grad_norm)
    return loss


def sync_targets(nets: list[AgentNets], tau: float) -> None:
    for a in nets:
        soft_update(a.target_actor, a.actor, tau)
        soft_update(a.target_critic, a.critic, tau)


def build_agents(scenario: ScenarioConfig, config: TrainConfig) -> list[AgentNets]:
    """Fresh per-agent networks with seeds derived from config.seed."""
    ss = np.random.SeedSequence(config.seed)
    init_ss, _explore, _sample = ss.spawn(3)
    obs_dims = [scenario.layout(i).total_dim for i in range(scenario.n_agents)]
    joint_dim = sum(obs_dims) + scenario.n_agents * N_ACTIONS
    return [
        AgentNets.create(obs_dims[i], joint_dim, config.hidden,
                         config.lr_actor, config.lr_critic,
                         np.random.default_rng(child))
        for i, child in enumerate(init_ss.spawn(scenario.n_agents))
    ]


@dataclass
class TrainResult:
    scenario: ScenarioConfig
    config: TrainConfig
    nets: list[AgentNets]
    episode_rewards: np.ndarray  # (E, n) summed per-agent reward per episode
    episode_steps: np.ndarray  # (E,)
    episode_goal: np.ndarray  # (E,) bool
    episode_epsilon: np.ndarray  # (E,)
    total_env_steps: int
    update_rounds: int


def train(config: TrainConfig,
          scenario: ScenarioConfig | None = None,
          on_episode: Callable[[int, np.ndarray, bool, list[AgentNets]], None]
          | None = None) -> TrainResult:
    """Run the full training loop. Deterministic for a fixed config."""
    config.validate()
    if scenario is None:
        scenario = world.build_scenario(config.scenario_id)
    if scenario.max_steps != config.max_episode_length:
        scenario = replace(scenario, max_steps=config.max_episode_length)
    n = scenario.n_agents

    ss = np.random.SeedSequence(config.seed)
    _init_ss, explore_ss, sample_ss = ss.spawn(3)
    explore_rng = np.random.default_rng(explore_ss)
    sample_rng = np.random.default_rng(sample_ss)
    nets = build_agents(scenario, config)

    buffer = ReplayBuffer(config.memory_size, n,
                          scenario.layout(0).total_dim)
    ep_rewards = np.zeros((config.max_episodes, n))
    ep_steps = np.zeros(config.max_episodes, dtype=np.int64)
    ep_goal = np.zeros(config.max_episodes, dtype=bool)
    ep_eps = np.zeros(config.max_episodes)
    total_steps = 0
    rounds = 0

    for episode in range(config.max_episodes):
        epsilon = epsilon_for_episode(episode, config)
        ep_eps[episode] = epsilon
        state = world.reset(scenario)
        obs = np.stack([world.observe(state, i, scenario) for i in range(n)])
        while not state.done:
            picks = [select_action(nets[i].actor, obs[i], epsilon, explore_rng)
                     for i in range(n)]
            indices = np.array([p[0] for p in picks], dtype=np.int64)
            probs = np.stack([p[1] for p in picks])
            joint = np.stack([world.action_one_hot(k) for k in indices])
            outcome = world.step(state, joint, scenario)
            state = outcome.next_state
            next_obs = np.stack([world.observe(state, i, scenario)
                                 for i in range(n)])
            buffer.push(Transition(
                obs=obs, action_probs=probs, action_indices=indices,
                rewards=outcome.rewards, next_obs=next_obs,
                terminal=state.done_reason == "goal",
            ))
            ep_rewards[episode] += outcome.rewards
            total_steps += 1
            obs = next_obs
            if (total_steps >= config.learning_start_step
                    and total_steps % config.learning_frequency == 0
                    and len(buffer) >= config.batch_size):
                for i in range(n):
                    batch = buffer.sample(config.batch_size, sample_rng)
                    critic_update(i, nets, batch, config.gamma,
                                  config.max_grad_norm)
                    actor_update(i, nets, batch, config.max_grad_norm,
                                 config.actor_logit_reg)
                sync_targets(nets, config.tau)
                rounds += 1
        ep_steps[episode] = state.step_index
        ep_goal[episode] = state.done_reason == "goal"
        if on_episode is not None:
            on_episode(episode, ep_rewards[episode], bool(ep_goal[episode]),
                       nets)

    return TrainResult(
        scenario=scenario, config=config, nets=nets,
        episode_rewards=ep_rewards[:config.max_episodes],
        episode_steps=ep_steps, episode_goal=ep_goal, episode_epsilon=ep_eps,
        total_env_steps=total_steps, update_rounds=rounds,
    )


@dataclass
class Trajectory:
    """One executed episode plus everything the analysis needs from it."""

    scenario_id: str
    states: list[WorldState]  # T + 1 entries, reset state first
    observations: np.ndarray  # (T, n, obs_dim), taken before each action
    action_indices: np.ndarray  # (T, n)
    action_probs: np.ndarray  # (T, n, 5)
    rewards: np.ndarray  # (T, n)
    done_reason: str | None

    @property
    def n_steps(self) -> int:
        return self.action_indices.shape[0]

    @property
    def n_agents(self) -> int:
        return self.action_indices.shape[1]

    def reached_goal(self) -> bool:
        return self.done_reason == "goal"

    def write_csv(self, path) -> None:
        world.write_trajectory_csv(path, self.scenario_id, self.states,
                                   self.action_indices, self.rewards)


def _actor_list(nets: Sequence[AgentNets] | Sequence[MlpParams]) -> list[MlpParams]:
    return [a.actor if isinstance(a, AgentNets) else a for a in nets]


def rollout(nets: Sequence[AgentNets] | Sequence[MlpParams],
            scenario: ScenarioConfig, epsilon: float = 0.0,
            rng: np.random.Generator | None = None) -> Trajectory:
    """Execute one episode. epsilon=0 gives the deterministic greedy policy."""
    actors = _actor_list(list(nets))
    n = scenario.n_agents
    if len(actors) != n:
        raise ValueError(f"{len(actors)} actors for {n} agents")
    state = world.reset(scenario)
    states = [state.copy()]
    all_obs, all_idx, all_probs, all_rew = [], [], [], []
    while not state.done:
        obs = np.stack([world.observe(state, i, scenario) for i in range(n)])
        picks = [select_action(actors[i], obs[i], epsilon, rng)
                 for i in range(n)]
        indices = np.array([p[0] for p in picks], dtype=np.int64)
        probs = np.stack([p[1] for p in picks])
        joint = np.stack([world.action_one_hot(k) for k in indices])
        outcome = world.step(state, joint, scenario)
        state = outcome.next_state
        states.append(state.copy())
        all_obs.append(obs)
        all_idx.append(indices)
        all_probs.append(probs)
        all_rew.append(outcome.rewards)
    return Trajectory(
        scenario_id=scenario.scenario_id,
        states=states,
        observations=np.stack(all_obs),
        action_indices=np.stack(all_idx),
        action_probs=np.stack(all_probs),
        rewards=np.stack(all_rew),
        done_reason=state.done_reason,
    )


def trailing_mean(values: Sequence[float] | np.ndarray,
                  window: int = 100) -> np.ndarray:
    """Mean of the last `window` entries at each index (fewer at the start)."""
    x = np.asarray(values, dtype=float)
    if window < 1:
        raise ValueError("window must be positive")
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def write_rewards_csv(path, totals: np.ndarray, window: int = 100) -> None:
    """Reward log: episode, total_reward, smoothed_reward_w100."""
    smoothed = trailing_mean(totals, window)
    with open(path, "w", newline="") as fp:
        fp.write("episode,total_reward,smoothed_reward_w100\n")
        for k in range(len(totals)):
            fp.write(f"{k},{float(totals[k])!r},{float(smoothed[k])!r}\n")


def read_rewards_csv(path) -> tuple[np.ndarray, np.ndarray]:
    totals, smoothed = [], []
    with open(path, newline="") as fp:
        header = fp.readline().strip()
        if header != "episode,total_reward,smoothed_reward_w100":
            raise ValueError(f"unrecognized reward log header: {header!r}")
        for line in fp:
            _ep, tot, smo = line.strip().split(",")
            totals.append(float(tot))
            smoothed.append(float(smo))
    return np.array(totals), np.array(smoothed)


# ---------------------------------------------------------------------------
# Checkpoints: one JSON file per agent (1-based file names). Optimizer state
# is not persisted; a loaded checkpoint is for evaluation and analysis.

def save_checkpoint(nets: Sequence[AgentNets], dirpath) -> list[str]:
    os.makedirs(dirpath, exist_ok=True)
    paths = []
    for i, a in enumerate(nets, start=1):
        doc = {
            "agent": i,
            "actor": a.actor.to_json_dict(),
            "critic": a.critic.to_json_dict(),
            "target_actor": a.target_actor.to_json_dict(),
            "target_critic": a.target_critic.to_json_dict(),
        }
        path = os.path.join(dirpath, f"agent_{i}.json")
        with open(path, "w") as fp:
            json.dump(doc, fp)
        paths.append(path)
    return paths


def load_checkpoint(dirpath, lr_actor: float = 0.01,
                    lr_critic: float = 0.01) -> list[AgentNets]:
    files = sorted(
        (f for f in os.listdir(dirpath)
         if re.fullmatch(r"agent_\d+\.json", f)),
        key=lambda f: int(re.findall(r"\d+", f)[0]),
    )
    if not files:
        raise FileNotFoundError(f"no agent_<k>.json files in {dirpath}")
    nets = []
    for k, fname in enumerate(files, start=1):
        with open(os.path.join(dirpath, fname)) as fp:
            doc = json.load(fp)
        if doc.get("agent") != k:
            raise ValueError(f"{fname} carries agent label {doc.get('agent')}, "
                             f"expected {k}")
        actor = MlpParams.from_json_dict(doc["actor"])
        critic = MlpParams.from_json_dict(doc["critic"])
        nets.append(AgentNets(
            actor=actor,
            critic=critic,
            target_actor=MlpParams.from_json_dict(doc["target_actor"]),
            target_critic=MlpParams.from_json_dict(doc["target_critic"]),
            actor_opt=OptimizerState.for_params(actor, lr_actor),
            critic_opt=OptimizerState.for_params(critic, lr_critic),
        ))
    return nets
