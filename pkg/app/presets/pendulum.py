"""
Built-in data for the cart-pendulum damping example

The plant maps the servo reference of the cart to the pendulum angle and
has a pair of lightly damped poles near -0.01 +- 4.796j. The loop is shaped
with an input weight only.
"""

from typing import List

import numpy as np

from app.engine.lti import StateSpace, TransferFunctionSiso, series, tf_to_ss
from app.engine.specs import EventPattern, Square
from app.models.schemas import (
    ControllerMode,
    ControllerSpec,
    EventSampling,
    PlantSection,
    ProjectConfig,
    SimParams,
    SquareSignal,
    TransferFunctionModel,
)

PLANT_NUM = [-42.0, 0.0, 0.0]
PLANT_DEN = [float(c) for c in np.polymul([1.0, 18.0], [1.0, 0.02, 23.0])]
WEIGHT_NUM = [5.0]
WEIGHT_DEN = [1.0, 2.0]

GAMMA = 3.703
EPSILON = 0.025
H_MAX = 0.635
SQUARE_AMPLITUDE = 0.5
SQUARE_PERIOD = 10.0
HORIZON = 20.0

# Published reference values
GAMMA_OPT = 1.7213
H_SUP = 0.635
H_AV = 0.216
K0_POLE_FACTORS = ([1.0, 1.91, 1.514], [1.0, 37.26, 547.4])
K0_ZEROS = [-18.85, -1.839, -0.2895]


def plant() -> StateSpace:
    return tf_to_ss(TransferFunctionSiso(PLANT_NUM, PLANT_DEN))


def input_weight() -> StateSpace:
    return tf_to_ss(TransferFunctionSiso(WEIGHT_NUM, WEIGHT_DEN))


def shaped_plant() -> StateSpace:
    """P W_i; the output weight is 1"""
    return series(input_weight(), plant())


def reference_poles() -> np.ndarray:
    return np.concatenate([np.roots(factor) for factor in K0_POLE_FACTORS])


def reference_zeros() -> np.ndarray:
    return np.array(K0_ZEROS)


def disturbance() -> Square:
    return Square(period=SQUARE_PERIOD, amplitude=SQUARE_AMPLITUDE)


def event_pattern() -> EventPattern:
    return EventPattern(epsilon=EPSILON, h_max=H_MAX)


def config() -> ProjectConfig:
    """The example as a project document: loop-shaping design, event sampling"""
    return ProjectConfig(
        name="pendulum",
        plant=PlantSection(
            model=TransferFunctionModel(num=PLANT_NUM, den=PLANT_DEN),
            W_i=TransferFunctionModel(num=WEIGHT_NUM, den=WEIGHT_DEN),
        ),
        controller=ControllerSpec(mode=ControllerMode.LOOPSHAPE, gamma=GAMMA),
        sampling=EventSampling(epsilon=EPSILON, h_max=H_MAX),
        signal=SquareSignal(amplitude=SQUARE_AMPLITUDE, period=SQUARE_PERIOD),
        sim=SimParams(T=HORIZON),
    )


def curve_gammas(gamma_opt: float, points: int) -> List[float]:
    """Sweep grid from just above gamma_opt, always containing GAMMA"""
    grid = np.linspace(gamma_opt + 0.05, 2.0 * GAMMA - gamma_opt, max(points - 1, 1))
    return sorted(set(float(g) for g in grid) | {GAMMA})
