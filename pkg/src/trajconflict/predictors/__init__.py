"""Trajectory predictors behind one interface.

Every predictor exposes ``predict(inputs) -> (predictions, fallback)`` where
``inputs`` is (N, 10, 4) raw rows, ``predictions`` is (N, 6, 3) of
(x_ft, y_ft, heading_deg) at 0.5 s ... 3.0 s and ``fallback`` flags rows the
predictor could not handle itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import HORIZONS_S
from ..errors import ConfigError
from ..geometry import OrientedBox, normalize_heading
from .constant_velocity import ConstantVelocity, constant_velocity_rows
from .loss import heading_loss, loss, loss_grad, position_loss
from .probabilistic import ProbModel, fit_probabilistic
from .seq2seq import (
    LstmParams,
    Normalization,
    init_params,
    load_params,
    loss_and_gradients,
    loss_gradients,
    lstm_cell_step,
    save_params,
    seq2seq_forward,
)
from .training import TrainConfig, train_seq2seq

SELECTORS = ("constant_velocity", "probabilistic", "seq2seq")


@dataclass(frozen=True)
class PredictedState:
    t_pred: float
    x_ft: float
    y_ft: float
    heading_deg: float


@dataclass
class TrajectoryForecast:
    vehicle_id: str
    anchor_frame: int
    states: list[PredictedState]
    length_ft: float
    width_ft: float
    fallback: bool = False

    def __post_init__(self):
        if len(self.states) != len(HORIZONS_S):
            raise ValueError(f"forecast needs {len(HORIZONS_S)} states, got {len(self.states)}")
        if any(b.t_pred <= a.t_pred for a, b in zip(self.states, self.states[1:])):
            raise ValueError("forecast states must have increasing t_pred")

    def as_array(self) -> np.ndarray:
        return np.array([[s.x_ft, s.y_ft, s.heading_deg] for s in self.states])

    def boxes(self) -> list[OrientedBox]:
        return [OrientedBox(s.x_ft, s.y_ft, self.length_ft, self.width_ft, s.heading_deg) for s in self.states]

    @classmethod
    def from_array(cls, vehicle_id, anchor_frame, rows, length_ft, width_ft, fallback=False):
        states = [
            PredictedState(t, float(r[0]), float(r[1]), normalize_heading(float(r[2])))
            for t, r in zip(HORIZONS_S, rows)
        ]
        return cls(str(vehicle_id), int(anchor_frame), states, float(length_ft), float(width_ft), bool(fallback))


class Seq2SeqPredictor:
    name = "seq2seq"

    def __init__(self, params: LstmParams):
        self.params = params

    def predict(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(inputs, dtype=float)
        if len(X) == 0:
            return np.zeros((0, len(HORIZONS_S), 3)), np.zeros(0, dtype=bool)
        return seq2seq_forward(self.params, X), np.zeros(len(X), dtype=bool)


def make_predictor(selector: str, model=None):
    """Resolve a selector name (plus fitted model where needed) to a predictor."""
    if selector == "constant_velocity":
        return ConstantVelocity()
    if selector == "probabilistic":
        if not isinstance(model, ProbModel):
            raise ConfigError("probabilistic predictor needs a fitted ProbModel")
        return model
    if selector == "seq2seq":
        if isinstance(model, Seq2SeqPredictor):
            return model
        if not isinstance(model, LstmParams):
            raise ConfigError("seq2seq predictor needs trained LstmParams")
        return Seq2SeqPredictor(model)
    raise ConfigError(f"unknown predictor {selector!r}; choose from {SELECTORS}")


def _resolve(predictor, model=None):
    if isinstance(predictor, str):
        return make_predictor(predictor, model)
    if isinstance(predictor, LstmParams):
        return Seq2SeqPredictor(predictor)
    if not hasattr(predictor, "predict"):
        raise ConfigError(f"not a predictor: {predictor!r}")
    return predictor


def forecast(predictor, sample_input, length_ft, width_ft, vehicle_id="", anchor_frame=0, model=None) -> TrajectoryForecast:
    """Forecast one (10, 4) input window with any predictor or selector."""
    p = _resolve(predictor, model)
    X = np.asarray(sample_input, dtype=float)[None]
    rows, fb = p.predict(X)
    return TrajectoryForecast.from_array(vehicle_id, anchor_frame, rows[0], length_ft, width_ft, fb[0])


def predict_batch(predictor, inputs, model=None) -> tuple[np.ndarray, np.ndarray]:
    return _resolve(predictor, model).predict(np.asarray(inputs, dtype=float))


__all__ = [
    "ConstantVelocity",
    "LstmParams",
    "Normalization",
    "PredictedState",
    "ProbModel",
    "SELECTORS",
    "Seq2SeqPredictor",
    "TrainConfig",
    "TrajectoryForecast",
    "constant_velocity_rows",
    "fit_probabilistic",
    "forecast",
    "heading_loss",
    "init_params",
    "load_params",
    "loss",
    "loss_and_gradients",
    "loss_gradients",
    "loss_grad",
    "lstm_cell_step",
    "make_predictor",
    "position_loss",
    "predict_batch",
    "save_params",
    "seq2seq_forward",
    "train_seq2seq",
]
