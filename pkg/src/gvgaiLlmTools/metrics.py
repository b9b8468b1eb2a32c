"""Evaluation metrics over episode logs.

All metrics lie in [0, 1]. The overall score is the equal-weight mean of the
meaningful step ratio, the inverted step count, the normalized reward and the
win rate.
"""

from collections.abc import Sequence

import numpy as np

from .models import Action, EpisodeLog, MetricsReport, StepRecord

__all__ = [
    "MixedMaxSteps",
    "RangeViolation",
    "OutOfRangeInput",
    "CANCEL_WINDOW",
    "is_inverse",
    "mark_meaningful",
    "meaningful_ratio",
    "step_efficiency",
    "inverted_steps",
    "win_rate",
    "normalized_reward",
    "overall_score",
    "build_report",
]

# earlier records a move can cancel against
CANCEL_WINDOW = 3

_INVERSE = {
    Action.LEFT: Action.RIGHT,
    Action.RIGHT: Action.LEFT,
    Action.UP: Action.DOWN,
    Action.DOWN: Action.UP,
}


class MixedMaxSteps(ValueError):
    pass


class RangeViolation(ValueError):
    pass


class OutOfRangeInput(ValueError):
    pass


def is_inverse(a: Action, b: Action) -> bool:
    return _INVERSE.get(a) is b


def mark_meaningful(steps: Sequence[StepRecord]) -> list[StepRecord]:
    """Set the ``meaningful`` flag of every step.

    A step is meaningful when it is not NIL, earned a reward or changed the state,
    and is not part of a trivial cancellation. Step ``i`` cancels step ``j`` (one of
    the three records before it) when its action is the directional inverse of step
    ``j``'s, it brings the avatar back to where it stood before step ``j`` and neither
    step earned a reward. Both steps of a cancelling pair are not meaningful.

    Parameters
    ----------
    steps : Sequence[StepRecord]
        Records in tick order.

    Returns
    -------
    list[StepRecord]
        Copies of the records with ``meaningful`` set.
    """
    cancelled: set[int] = set()
    for i, s in enumerate(steps):
        if s.reward_delta != 0 or s.avatar_pos_after is None:
            continue
        for j in range(max(0, i - CANCEL_WINDOW), i):
            p = steps[j]
            if (
                is_inverse(s.action, p.action)
                and p.reward_delta == 0
                and s.avatar_pos_after == p.avatar_pos_before
            ):
                cancelled |= {i, j}

    return [
        s.model_copy(
            update={
                "meaningful": s.action is not Action.NIL
                and (s.reward_delta != 0 or s.state_changed)
                and i not in cancelled
            }
        )
        for i, s in enumerate(steps)
    ]


def meaningful_ratio(log: EpisodeLog) -> float:
    """Share of meaningful steps, 0 for an empty episode."""
    if not log.steps:
        return 0.0
    return sum(s.meaningful for s in log.steps) / len(log.steps)


def _max_steps(logs: Sequence[EpisodeLog]) -> int:
    caps = {log.max_steps for log in logs}
    if len(caps) > 1:
        raise MixedMaxSteps(f"Episodes use different step caps: {sorted(caps)}")
    return caps.pop()


def step_efficiency(logs: Sequence[EpisodeLog]) -> float:
    """``1 - mean(terminal_tick) / max_steps`` over every episode, clamped to [0, 1].

    Raises
    ------
    MixedMaxSteps
        If the episodes do not share one step cap.
    """
    if not logs:
        return 0.0
    cap = _max_steps(logs)
    ticks = np.array([log.terminal_tick for log in logs], dtype=float)
    return float(np.clip(1.0 - ticks.mean() / cap, 0.0, 1.0))


def inverted_steps(logs: Sequence[EpisodeLog]) -> float:
    """Mean of ``1 - terminal_tick / max_steps`` per episode; an empty episode counts 0."""
    if not logs:
        return 0.0
    _max_steps(logs)
    values = [
        float(np.clip(1.0 - log.terminal_tick / log.max_steps, 0.0, 1.0)) if log.steps else 0.0
        for log in logs
    ]
    return float(np.mean(values))


def win_rate(logs: Sequence[EpisodeLog]) -> float:
    if not logs:
        return 0.0
    return sum(log.is_win for log in logs) / len(logs)


def normalized_reward(r: float, r_min: float, r_max: float, epsilon: float = 1e-9) -> float:
    """Min-max scaled reward ``(r - r_min) / (r_max - r_min + epsilon)``.

    Raises
    ------
    RangeViolation
        If ``r`` lies outside ``[r_min, r_max]``.
    ValueError
        If ``epsilon`` is not positive.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not r_min <= r <= r_max:
        raise RangeViolation(f"Reward {r} outside [{r_min}, {r_max}]")
    return (r - r_min) / (r_max - r_min + epsilon)


def overall_score(
    meaningful_ratio: float, inverted_steps: float, normalized_reward: float, win_rate: float
) -> float:
    """Equal-weight mean of the four normalized metrics.

    Raises
    ------
    OutOfRangeInput
        If any argument lies outside [0, 1].
    """
    values = (meaningful_ratio, inverted_steps, normalized_reward, win_rate)
    for name, v in zip(("meaningful_ratio", "inverted_steps", "normalized_reward", "win_rate"), values):
        if not 0.0 <= v <= 1.0:
            raise OutOfRangeInput(f"{name} must lie in [0, 1], got {v}")
    return sum(values) / 4


def build_report(
    game: str,
    level: int,
    agent: str,
    logs: Sequence[EpisodeLog],
    r_min: float,
    r_max: float,
    epsilon: float = 1e-9,
) -> MetricsReport:
    """Metrics of one (game, level, agent) cell.

    Episodes with a ``failure`` are counted in ``excluded`` and left out of every mean.
    ``r_min`` and ``r_max`` are the extreme episode rewards of all agents on the level.
    """
    valid = [log for log in logs if log.failure is None]
    excluded = len(logs) - len(valid)
    if not valid:
        return MetricsReport(
            game=game, level=level, agent=agent, episodes=0, excluded=excluded, wins=0,
            r_min=r_min, r_max=r_max, mean_total_reward=0.0, meaningful_ratio=0.0,
            step_efficiency=0.0, win_rate=0.0, normalized_reward=0.0, inverted_steps=0.0,
            overall_score=0.0,
        )

    ratio = float(np.mean([meaningful_ratio(log) for log in valid]))
    inverted = inverted_steps(valid)
    reward = float(np.mean([normalized_reward(log.total_reward, r_min, r_max, epsilon) for log in valid]))
    wins = win_rate(valid)
    return MetricsReport(
        game=game,
        level=level,
        agent=agent,
        episodes=len(valid),
        excluded=excluded,
        wins=sum(log.is_win for log in valid),
        r_min=r_min,
        r_max=r_max,
        mean_total_reward=float(np.mean([log.total_reward for log in valid])),
        meaningful_ratio=ratio,
        step_efficiency=step_efficiency(valid),
        win_rate=wins,
        normalized_reward=reward,
        inverted_steps=inverted,
        overall_score=overall_score(ratio, inverted, reward, wins),
    )
