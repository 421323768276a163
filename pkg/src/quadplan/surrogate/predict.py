"""Step-wise network prediction and its use as an IK step source."""

from __future__ import annotations

import numpy as np

from quadplan.gait import MotionDescription
from quadplan.ik import CentroidalRef
from quadplan.surrogate.features import decode_targets, encode_features, layout
from quadplan.surrogate.train import SurrogateModel


def predict_step(model: SurrogateModel, history, desc: MotionDescription, t: int) -> CentroidalRef:
    """Next desired ``(c, l, k, wrench)`` in the world frame."""
    x = encode_features(history, desc, t)
    y = model.predict(x)
    c, lin, ang, wrench = decode_targets(desc.pattern_at_step(t).frame, y)
    return CentroidalRef(c, lin, ang, wrench)


class NetworkSource:
    """Closes the loop through the robot state: each query encodes the latest
    IK states, so predictions react to where the body actually is."""

    name = "network"

    def __init__(self, model: SurrogateModel, desc: MotionDescription, initial_com):
        if model.layout != layout():
            raise ValueError(f"model feature layout {model.layout} does not match encoder {layout()}")
        self.model = model
        self.desc = desc
        self.c0 = np.asarray(initial_com, dtype=float)

    def initial(self) -> CentroidalRef:
        return CentroidalRef(self.c0.copy(), np.zeros(3), np.zeros(3))

    def step(self, t: int, history) -> CentroidalRef:
        return predict_step(self.model, history, self.desc, t)
