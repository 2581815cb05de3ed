"""Policy training against the episodic tracking objective.

The default trainer is antithetic evolution strategies: each epoch samples
``population_size / 2`` Gaussian directions, scores ``theta +/- sigma*eps`` by one
noisy rollout each, turns centred ranks into a search gradient and hands it to
Adam. The best parameters seen under noise-free evaluation are kept.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.stats
from numpy.typing import NDArray

from lfbl_racing.learning.episode import Scenario
from lfbl_racing.learning.networks import Adam
from lfbl_racing.learning.policy import CorrectionPolicy

logger = logging.getLogger(__name__)

# offset keeping evaluation seeds apart from candidate seeds within an epoch
EVAL_SEED_OFFSET = 1_000_000


@dataclass(frozen=True)
class TrainerConfig:
    population_size: int = 32
    noise_std: float = 0.02
    step_size: float = 0.01
    epochs: int = 200
    episodes_per_eval: int = 5
    exploration_std: float = 0.01
    seed: int = 0
    workers: int = 1
    log_every: int = 10

    def __post_init__(self) -> None:
        if self.population_size < 2 or self.population_size % 2:
            raise ValueError("population_size must be an even number >= 2")
        for name in ("noise_std", "step_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("epochs", "episodes_per_eval", "workers", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.exploration_std < 0:
            raise ValueError("exploration_std must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


@dataclass(frozen=True)
class CurvePoint:
    epoch: int
    mean_return: float
    best_return: float
    mean_pointwise_loss: float
    step_size: float
    aborted: bool = False


@dataclass(frozen=True)
class TrainingResult:
    policy: CorrectionPolicy
    curve: list[CurvePoint]
    initial_return: float
    best_return: float
    best_epoch: int

    @property
    def improvement_factor(self) -> float:
        if self.best_return == 0.0:
            return math.inf
        return abs(self.initial_return) / abs(self.best_return)


class Trainer(Protocol):
    """Anything that improves a correction policy on a scenario."""

    def train(self, scenario: Scenario, initial: CorrectionPolicy) -> TrainingResult: ...


# per-process state for the pool workers
_WORKER: dict[str, object] = {}


def _init_worker(scenario: Scenario, template: CorrectionPolicy) -> None:
    _WORKER["scenario"] = scenario
    _WORKER["template"] = template


def _score(task: tuple[NDArray[np.float64], float, list[int]]) -> tuple[float, float]:
    params, sigma_w, seed = task
    scenario: Scenario = _WORKER["scenario"]  # type: ignore[assignment]
    template: CorrectionPolicy = _WORKER["template"]  # type: ignore[assignment]
    return scenario.episode_return(template.with_params(params), sigma_w, seed)


@contextmanager
def _evaluator(
    scenario: Scenario, template: CorrectionPolicy, workers: int
) -> Iterator[Callable[[Sequence[tuple[NDArray[np.float64], float, list[int]]]], list]]:
    """Yield a function scoring tasks in submission order, serially or on a pool."""
    if workers <= 1:
        _init_worker(scenario, template)
        yield lambda tasks: [_score(task) for task in tasks]
        return
    with ProcessPoolExecutor(
        max_workers=workers, initializer=_init_worker, initargs=(scenario, template)
    ) as pool:
        yield lambda tasks: list(pool.map(_score, tasks))


def _centered_ranks(returns: NDArray[np.float64]) -> NDArray[np.float64]:
    ranks = scipy.stats.rankdata(returns, method="average")
    return (ranks - 1.0) / max(len(returns) - 1, 1) - 0.5


@dataclass
class EvolutionStrategiesTrainer:
    cfg: TrainerConfig = field(default_factory=TrainerConfig)

    def _evaluate(
        self,
        score: Callable[[Sequence[tuple[NDArray[np.float64], float, list[int]]]], list],
        params: NDArray[np.float64],
        epoch: int,
        scenario: Scenario,
    ) -> tuple[float, float]:
        """Mean noise-free return and pointwise loss over the evaluation episodes."""
        cfg = self.cfg
        # a fixed start with no noise makes every evaluation episode identical
        count = 1 if scenario.deterministic_start else cfg.episodes_per_eval
        tasks = [
            (params, 0.0, [cfg.seed, epoch, EVAL_SEED_OFFSET + j]) for j in range(count)
        ]
        results = score(tasks)
        returns = np.array([r for r, _ in results])
        losses = np.array([loss for _, loss in results])
        return float(returns.mean()), float(losses.mean())

    def train(self, scenario: Scenario, initial: CorrectionPolicy) -> TrainingResult:
        cfg = self.cfg
        theta = initial.params.copy()
        half = cfg.population_size // 2
        adam = Adam(lr=cfg.step_size)
        curve: list[CurvePoint] = []

        with _evaluator(scenario, initial, cfg.workers) as score:
            initial_return, _ = self._evaluate(score, theta, 0, scenario)
            best_theta, best_return, best_epoch = theta.copy(), initial_return, 0
            logger.info("Initial policy return %.4g", initial_return)

            for epoch in range(1, cfg.epochs + 1):
                rng = np.random.default_rng([cfg.seed, epoch])
                directions = rng.standard_normal((half, theta.size))
                tasks = []
                for i, eps in enumerate(directions):
                    # both members of a pair share the rollout noise
                    seed = [cfg.seed, epoch, i]
                    tasks.append((theta + cfg.noise_std * eps, cfg.exploration_std, seed))
                    tasks.append((theta - cfg.noise_std * eps, cfg.exploration_std, seed))
                returns = np.array([r for r, _ in score(tasks)])

                grad = None
                if not np.any(np.isnan(returns)):
                    ranks = _centered_ranks(returns)
                    weights = ranks[0::2] - ranks[1::2]
                    grad = weights @ directions / (cfg.population_size * cfg.noise_std)
                candidate = None if grad is None else adam.step(theta, -grad)

                if candidate is None or not np.all(np.isfinite(candidate)):
                    adam.lr *= 0.5
                    logger.warning(
                        "Epoch %d aborted on a non-finite update; step size halved to %.3g",
                        epoch,
                        adam.lr,
                    )
                    curve.append(
                        CurvePoint(
                            epoch=epoch,
                            mean_return=math.nan,
                            best_return=best_return,
                            mean_pointwise_loss=math.nan,
                            step_size=adam.lr,
                            aborted=True,
                        )
                    )
                    continue

                theta = candidate
                mean_return, mean_loss = self._evaluate(score, theta, epoch, scenario)
                if mean_return > best_return:
                    best_theta, best_return, best_epoch = theta.copy(), mean_return, epoch
                curve.append(
                    CurvePoint(
                        epoch=epoch,
                        mean_return=mean_return,
                        best_return=best_return,
                        mean_pointwise_loss=mean_loss,
                        step_size=adam.lr,
                    )
                )
                logger.debug(
                    "Epoch %d: return %.4g (best %.4g), loss %.3g",
                    epoch,
                    mean_return,
                    best_return,
                    mean_loss,
                )
                if epoch % cfg.log_every == 0 or epoch == cfg.epochs:
                    logger.info(
                        "Epoch %d/%d: mean return %.4g, best %.4g at epoch %d",
                        epoch,
                        cfg.epochs,
                        mean_return,
                        best_return,
                        best_epoch,
                    )

        return TrainingResult(
            policy=initial.with_params(best_theta),
            curve=curve,
            initial_return=initial_return,
            best_return=best_return,
            best_epoch=best_epoch,
        )


def train(
    cfg: TrainerConfig,
    scenario: Scenario,
    *,
    initial: CorrectionPolicy | None = None,
    trainer: Trainer | None = None,
) -> tuple[CorrectionPolicy, list[CurvePoint]]:
    """Train a correction policy; returns the best policy and the learning curve."""
    result = run_training(cfg, scenario, initial=initial, trainer=trainer)
    return result.policy, result.curve


def run_training(
    cfg: TrainerConfig,
    scenario: Scenario,
    *,
    initial: CorrectionPolicy | None = None,
    trainer: Trainer | None = None,
) -> TrainingResult:
    initial = initial or CorrectionPolicy.zeros()
    trainer = trainer or EvolutionStrategiesTrainer(cfg)
    return trainer.train(scenario, initial)
