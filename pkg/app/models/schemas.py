"""
Pydantic models for configuration documents, sampling and signal specs,
and command reports
"""

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Annotated, Dict, List, Literal, Optional, Union
from enum import Enum

Matrix = List[List[float]]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# System descriptions
class TransferFunctionModel(StrictModel):
    kind: Literal["tf"] = "tf"
    num: List[float] = Field(..., min_length=1)
    den: List[float] = Field(..., min_length=1)


class StateSpaceModel(StrictModel):
    kind: Literal["ss"] = "ss"
    A: Matrix
    B: Matrix
    C: Matrix
    D: Matrix


class StandardPlantModel(StrictModel):
    """Generalized plant with disturbance w, control u, performance z, measurement y"""

    kind: Literal["standard"] = "standard"
    A: Matrix
    Bw: Matrix
    Bu: Matrix
    Cz: Matrix
    Dzu: Matrix
    Cy: Matrix
    Dyw: Matrix


SystemModel = Annotated[Union[TransferFunctionModel, StateSpaceModel], Field(discriminator="kind")]
PlantModel = Annotated[
    Union[TransferFunctionModel, StateSpaceModel, StandardPlantModel], Field(discriminator="kind")
]


class PlantSection(StrictModel):
    model: PlantModel
    W_i: Optional[SystemModel] = None
    W_o: Optional[SystemModel] = None

    @model_validator(mode="after")
    def weights_need_lti_plant(self):
        if self.model.kind == "standard" and (self.W_i is not None or self.W_o is not None):
            raise ValueError("weights apply to tf/ss plants only")
        return self


class ControllerMode(str, Enum):
    GIVEN = "given"
    H2 = "h2"
    HINF = "hinf"
    LOOPSHAPE = "loopshape"


class ControllerSpec(StrictModel):
    mode: ControllerMode
    K0: Optional[SystemModel] = None
    gamma: Optional[float] = Field(None, gt=0)
    F0: Optional[Matrix] = None
    L0: Optional[Matrix] = None

    @model_validator(mode="after")
    def check_mode_fields(self):
        if self.mode == ControllerMode.GIVEN and self.K0 is None:
            raise ValueError("mode 'given' requires K0")
        if self.mode in (ControllerMode.HINF, ControllerMode.LOOPSHAPE) and self.gamma is None:
            raise ValueError(f"mode '{self.mode.value}' requires gamma")
        return self


# Sampling patterns
class UniformSampling(StrictModel):
    kind: Literal["uniform"] = "uniform"
    h: float = Field(..., gt=0)


class PeriodicSampling(StrictModel):
    kind: Literal["periodic"] = "periodic"
    intervals: List[Annotated[float, Field(gt=0)]] = Field(..., min_length=1)


class ExplicitSampling(StrictModel):
    kind: Literal["explicit"] = "explicit"
    instants: List[float] = Field(..., min_length=2)

    @field_validator("instants")
    @classmethod
    def check_instants(cls, v: List[float]) -> List[float]:
        if v[0] != 0.0:
            raise ValueError("first sampling instant must be 0")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sampling instants must be strictly increasing")
        return v


class RandomSampling(StrictModel):
    kind: Literal["random"] = "random"
    h_min: float = Field(..., gt=0)
    h_max: float = Field(..., gt=0)
    seed: Optional[int] = Field(None, description="settings.default_seed when absent")

    @model_validator(mode="after")
    def check_bounds(self):
        if self.h_min > self.h_max:
            raise ValueError("h_min must not exceed h_max")
        return self


class EventSampling(StrictModel):
    kind: Literal["event"] = "event"
    epsilon: float = Field(..., gt=0)
    h_max: float = Field(..., gt=0)


SamplingSpec = Annotated[
    Union[UniformSampling, PeriodicSampling, ExplicitSampling, RandomSampling, EventSampling],
    Field(discriminator="kind"),
]


# Exogenous signals; channel None drives every disturbance channel
class ImpulseSignal(StrictModel):
    kind: Literal["impulse"] = "impulse"
    channel: int = Field(0, ge=0)
    t0: float = Field(0.0, ge=0)


class StepSignal(StrictModel):
    kind: Literal["step"] = "step"
    amplitude: float = 1.0
    channel: Optional[int] = Field(None, ge=0)


class SquareSignal(StrictModel):
    kind: Literal["square"] = "square"
    amplitude: float = 1.0
    period: float = Field(..., gt=0)
    channel: Optional[int] = Field(None, ge=0)


class SineSignal(StrictModel):
    kind: Literal["sine"] = "sine"
    amplitude: float = 1.0
    frequency: float = Field(..., gt=0, description="rad/s")
    channel: Optional[int] = Field(None, ge=0)


class NoiseSignal(StrictModel):
    kind: Literal["noise"] = "noise"
    seed: Optional[int] = Field(None, description="settings.default_seed when absent")
    sigma: float = Field(1.0, ge=0)


class SamplesSignal(StrictModel):
    """CSV file with a header row and columns t, w1, w2, ..."""

    kind: Literal["samples"] = "samples"
    path: str


SignalSpec = Annotated[
    Union[ImpulseSignal, StepSignal, SquareSignal, SineSignal, NoiseSignal, SamplesSignal],
    Field(discriminator="kind"),
]


class SimParams(StrictModel):
    T: float = Field(20.0, gt=0)
    dt: Optional[float] = Field(None, gt=0)


class OutputSection(StrictModel):
    directory: Optional[str] = None
    trace_csv: str = "trace.csv"
    curve_csv: str = "curve.csv"
    report_json: str = "report.json"


class Tolerances(StrictModel):
    gamma_opt_abs: float = Field(1e-3, gt=0)
    h_sup_abs: float = Field(5e-3, gt=0)
    h_av_rel: float = Field(0.10, gt=0)
    k0_factor_rel: float = Field(0.01, gt=0)


class ProjectConfig(StrictModel):
    name: str = "project"
    plant: PlantSection
    controller: ControllerSpec
    sampling: SamplingSpec = Field(default_factory=lambda: UniformSampling(h=0.1))
    signal: SignalSpec = Field(default_factory=lambda: StepSignal(amplitude=0.0))
    sim: SimParams = Field(default_factory=SimParams)
    output: OutputSection = Field(default_factory=OutputSection)
    tolerances: Tolerances = Field(default_factory=Tolerances)

    @model_validator(mode="after")
    def check_mode_against_plant(self):
        kind = self.plant.model.kind
        if self.controller.mode == ControllerMode.LOOPSHAPE and kind == "standard":
            raise ValueError("loopshape mode needs a tf/ss plant")
        if self.controller.mode == ControllerMode.GIVEN and kind == "standard":
            raise ValueError("mode 'given' needs a tf/ss plant")
        return self


# Reports
class ControllerMatrices(BaseModel):
    sensor_A: Matrix
    sensor_B: Matrix
    sensor_C: Matrix
    sensor_D: Matrix
    actuator_A: Matrix
    actuator_B: Matrix
    actuator_C: Matrix
    actuator_D: Matrix
    jump_M: Matrix
    jump_N: Matrix


class IntervalCost(BaseModel):
    h: float
    gamma1: float


class DesignReport(BaseModel):
    name: str
    mode: ControllerMode
    gamma: Optional[float] = None
    gamma_opt: Optional[float] = None
    rho_yx: Optional[float] = None
    h_sup: Optional[float] = None
    gamma0: Optional[float] = None
    gamma_pattern: Optional[float] = None
    per_interval: List[IntervalCost] = []
    pattern_admissible: Optional[bool] = None
    riccati_residuals: Dict[str, float] = {}
    controller: ControllerMatrices


class CurvePointModel(BaseModel):
    gamma: float
    h_sup: Optional[float] = None
    error: Optional[str] = None


class CurveRequest(StrictModel):
    config: ProjectConfig
    gamma_min: float = Field(..., gt=0)
    gamma_max: float = Field(..., gt=0)
    points: int = Field(40, ge=2, le=400)

    @model_validator(mode="after")
    def check_range(self):
        if self.gamma_max < self.gamma_min:
            raise ValueError("gamma_max must not be below gamma_min")
        return self


class CurveReport(BaseModel):
    gamma_opt: float
    points: List[CurvePointModel]
    monotone: bool


class SimSummary(BaseModel):
    T: float
    dt: float
    sampling: str
    sample_count: int
    h_av: Optional[float] = None
    max_gap: Optional[float] = None
    peak_abs_z: float
    eta_energy_peak: float
    trace: Optional[List[Dict[str, float]]] = None


class HeadlineCheck(BaseModel):
    name: str
    value: float
    expected: float
    tolerance: float
    within: bool


class PendulumReport(BaseModel):
    gamma: float
    gamma_opt: float
    h_sup: Optional[float] = None
    k0_poles: List[List[float]]
    k0_zeros: List[List[float]]
    checks: List[HeadlineCheck]
    curve: CurveReport
    analog: SimSummary
    event: SimSummary
    uniform: SimSummary
    open_loop: SimSummary
