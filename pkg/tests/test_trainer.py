from __future__ import annotations

import math

import numpy as np
import pytest

from lfbl_racing.control.linearize import LinearState
from lfbl_racing.control.planner import plan, tracker_gain
from lfbl_racing.control.vehicle import VehicleParams
from lfbl_racing.learning.episode import Scenario, StartPerturbation
from lfbl_racing.learning.policy import CorrectionPolicy
from lfbl_racing.learning.trainer import (
    EvolutionStrategiesTrainer,
    TrainerConfig,
    TrainingResult,
    _centered_ranks,
    run_training,
    train,
)

X0 = LinearState(x=0.0, xdot=0.0, y=0.0, ydot=0.5)


def _scenario(*, n: int = 50, xf: LinearState | None = None, **kwargs) -> Scenario:
    xf = xf or LinearState(x=1.0, xdot=0.0, y=1.0, ydot=0.0)
    reference = plan(X0, xf, n, np.zeros((4, 4)), np.eye(2), np.zeros((4, 4)), 10.0, dt=0.02)
    return Scenario(
        plant=VehicleParams(l_r=1.0),
        model=VehicleParams(l_r=0.5),
        plan=reference,
        gain=tracker_gain(np.eye(4), np.eye(2)),
        **kwargs,
    )


def _small_config(**overrides) -> TrainerConfig:
    values = {"population_size": 4, "epochs": 3, "episodes_per_eval": 2, "seed": 7}
    values.update(overrides)
    return TrainerConfig(**values)


def test_trainer_config_validation() -> None:
    with pytest.raises(ValueError, match="even"):
        TrainerConfig(population_size=3)
    with pytest.raises(ValueError, match="noise_std"):
        TrainerConfig(noise_std=0.0)
    with pytest.raises(ValueError, match="epochs"):
        TrainerConfig(epochs=0)
    with pytest.raises(ValueError, match="exploration_std"):
        TrainerConfig(exploration_std=-0.1)


def test_centered_ranks_are_symmetric() -> None:
    ranks = _centered_ranks(np.array([3.0, -1.0, 10.0, 0.5]))

    np.testing.assert_allclose(ranks, [1.0 / 6.0, -0.5, 0.5, -1.0 / 6.0])
    assert ranks.sum() == pytest.approx(0.0)


def test_training_is_deterministic_and_elitist() -> None:
    scenario = _scenario()
    initial = CorrectionPolicy.zeros(hidden_sizes=(4,))
    cfg = _small_config()

    first = run_training(cfg, scenario, initial=initial)
    again = run_training(cfg, scenario, initial=initial)

    assert isinstance(first, TrainingResult)
    assert [p.epoch for p in first.curve] == [1, 2, 3]
    assert [p.mean_return for p in first.curve] == [p.mean_return for p in again.curve]
    np.testing.assert_array_equal(first.policy.params, again.policy.params)

    bests = [p.best_return for p in first.curve]
    assert bests == sorted(bests)
    assert first.best_return >= first.initial_return
    assert first.best_return == max([first.initial_return, *bests])


def test_zero_policy_initial_return_matches_noise_free_rollout() -> None:
    scenario = _scenario()
    initial = CorrectionPolicy.zeros(hidden_sizes=(4,))

    result = run_training(_small_config(epochs=1), scenario, initial=initial)

    expected, _ = scenario.episode_return(initial, 0.0, 0)
    assert result.initial_return == expected


def test_best_epoch_zero_returns_the_initial_policy() -> None:
    scenario = _scenario()
    initial = CorrectionPolicy.zeros(hidden_sizes=(4,))

    result = run_training(_small_config(), scenario, initial=initial)

    if result.best_epoch == 0:
        np.testing.assert_array_equal(result.policy.params, initial.params)
    else:
        assert result.curve[result.best_epoch - 1].mean_return == result.best_return


def test_train_returns_policy_and_curve() -> None:
    policy, curve = train(
        _small_config(epochs=2), _scenario(), initial=CorrectionPolicy.zeros(hidden_sizes=(4,))
    )

    assert policy.param_count == CorrectionPolicy.zeros(hidden_sizes=(4,)).param_count
    assert len(curve) == 2


def test_non_finite_returns_abort_the_epoch_and_halve_the_step(monkeypatch) -> None:
    def _nan_return(self, policy, sigma_w, seed):
        return math.nan, math.nan

    monkeypatch.setattr(Scenario, "episode_return", _nan_return)
    cfg = _small_config(step_size=0.02)

    result = EvolutionStrategiesTrainer(cfg).train(
        _scenario(), CorrectionPolicy.zeros(hidden_sizes=(4,))
    )

    assert [p.aborted for p in result.curve] == [True, True, True]
    assert [p.step_size for p in result.curve] == [0.01, 0.005, 0.0025]
    assert result.best_epoch == 0


def test_parallel_scoring_matches_serial_scoring() -> None:
    scenario = _scenario(n=30)
    initial = CorrectionPolicy.zeros(hidden_sizes=(4,))

    serial = run_training(_small_config(epochs=2), scenario, initial=initial)
    parallel = run_training(_small_config(epochs=2, workers=2), scenario, initial=initial)

    assert [p.mean_return for p in serial.curve] == [p.mean_return for p in parallel.curve]
    np.testing.assert_array_equal(serial.policy.params, parallel.policy.params)


def test_randomized_start_uses_several_evaluation_episodes(monkeypatch) -> None:
    scenario = _scenario(perturbation=StartPerturbation(position=0.01))
    calls: list[tuple[float, object]] = []
    original = Scenario.episode_return

    def _spy(self, policy, sigma_w, seed):
        calls.append((sigma_w, seed))
        return original(self, policy, sigma_w, seed)

    monkeypatch.setattr(Scenario, "episode_return", _spy)
    run_training(
        _small_config(epochs=1, episodes_per_eval=3),
        scenario,
        initial=CorrectionPolicy.zeros(hidden_sizes=(4,)),
    )

    evaluations = [seed for sigma_w, seed in calls if sigma_w == 0.0]
    # initial evaluation plus one per epoch, three episodes each
    assert len(evaluations) == 6


@pytest.mark.slow
def test_full_training_run_improves_the_mismatched_baseline() -> None:
    scenario = _scenario(n=249, xf=LinearState(x=5.0, xdot=0.0, y=5.0, ydot=0.0))

    result = run_training(TrainerConfig(), scenario)

    assert result.improvement_factor >= 2.0
