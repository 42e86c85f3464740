"""
Hybrid closed-loop simulation

Between sampling instants the closed loop is LTI, so it is advanced with
exact matrix exponentials; only the exogenous input is held constant over
each grid step. Resets are applied at the sampling instants. Also hosts the
empirical norm oracles used to cross-check the analytic formulas.
"""

import csv
import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from app.core.errors import AlgebraicLoopError, DimensionError, InvalidInputError, NotHurwitzError
from app.engine.lti import ResetLinearSystem, StateSpace, series
from app.engine.matfun import as_block, as_square, gramian_integral
from app.engine.perf import StandardPlant
from app.engine.redesign import SampledDataController, SampledDataQ
from app.engine.specs import (
    EventPattern,
    ExplicitPattern,
    Impulse,
    Noise,
    PeriodicPattern,
    RandomPattern,
    Samples,
    Sine,
    Square,
    Step,
    UniformPattern,
)

logger = logging.getLogger(__name__)

DEFAULT_DT_DIVISOR = 200
MIN_DT_DIVISOR = 50
EVENT_RTOL = 1e-9
H2_STOP_RTOL = 1e-10
MAX_H2_INTERVALS = 200_000
DECAY_RATIO = 1e-3


def philox_generator(seed: int) -> np.random.Generator:
    """Counter-based generator; streams are reproducible across platforms"""
    return np.random.Generator(np.random.Philox(seed))


# Sampling patterns


def pattern_period(spec) -> List[float]:
    """Intervals of one period of a uniform or periodic pattern"""
    if isinstance(spec, UniformPattern):
        return [spec.h]
    if isinstance(spec, PeriodicPattern):
        return list(spec.intervals)
    raise InvalidInputError(f"{spec.kind} patterns have no period")


def pattern_bounds(spec) -> Tuple[float, float]:
    """(shortest, longest) interval a pattern can produce"""
    if isinstance(spec, UniformPattern):
        return spec.h, spec.h
    if isinstance(spec, PeriodicPattern):
        return min(spec.intervals), max(spec.intervals)
    if isinstance(spec, ExplicitPattern):
        gaps = np.diff(spec.instants)
        return float(np.min(gaps)), float(np.max(gaps))
    if isinstance(spec, RandomPattern):
        return spec.h_min, spec.h_max
    if isinstance(spec, EventPattern):
        return spec.h_max, spec.h_max
    raise InvalidInputError(f"unknown sampling spec {spec!r}")


def _interval_stream(spec) -> Iterator[float]:
    if isinstance(spec, PeriodicPattern):
        return itertools.cycle(spec.intervals)
    if isinstance(spec, RandomPattern):
        rng = philox_generator(spec.seed)

        def draws():
            while True:
                yield from rng.uniform(spec.h_min, spec.h_max, size=1024)

        return draws()
    raise InvalidInputError(f"no interval stream for {spec.kind}")


def generate_pattern(spec, T: float) -> List[float]:
    """Sampling instants in [0, T], starting at 0"""
    if T <= 0:
        raise InvalidInputError("T must be positive")
    tol = 1e-12 * max(1.0, T)
    if isinstance(spec, EventPattern):
        raise InvalidInputError("event patterns are produced by simulate_event")
    if isinstance(spec, UniformPattern):
        count = int(math.floor(T / spec.h + 1e-9))
        return [k * spec.h for k in range(count + 1)]
    if isinstance(spec, ExplicitPattern):
        if spec.instants[-1] < T - tol:
            raise InvalidInputError("explicit sampling instants must reach T")
        return [t for t in spec.instants if t <= T + tol]
    instants = [0.0]
    t = 0.0
    for h in _interval_stream(spec):
        if t + h > T + tol:
            break
        t += h
        instants.append(t)
    return instants


def resolve_grid(spec, T: float, dt: Optional[float] = None) -> Tuple[float, int]:
    """Grid step dividing T, at most the shortest interval / MIN_DT_DIVISOR"""
    h_min = pattern_bounds(spec)[0] if spec is not None else T / 10.0
    if dt is None:
        dt = h_min / DEFAULT_DT_DIVISOR
    elif dt > h_min / MIN_DT_DIVISOR * (1.0 + 1e-9):
        raise InvalidInputError(f"dt={dt:.3g} too coarse for the shortest interval {h_min:.3g}")
    n_steps = max(1, int(math.ceil(T / dt - 1e-9)))
    return T / n_steps, n_steps


# Exogenous signals


def signal_values(signal, n_w: int, dt: float, n_steps: int) -> np.ndarray:
    """Input held on each grid step, shape (n_steps, n_w)"""
    t = np.arange(n_steps) * dt
    values = np.zeros((n_steps, n_w))

    def channels(channel: Optional[int]) -> slice:
        if channel is None:
            return slice(None)
        if channel >= n_w:
            raise DimensionError(f"channel {channel} out of range for {n_w} inputs")
        return slice(channel, channel + 1)

    if isinstance(signal, Impulse):
        k = int(math.floor(signal.t0 / dt + 1e-9))
        if k < n_steps:
            values[k, channels(signal.channel)] = 1.0 / dt
    elif isinstance(signal, Step):
        values[:, channels(signal.channel)] = signal.amplitude
    elif isinstance(signal, Square):
        phase = np.mod(t + 1e-9 * dt, signal.period)
        wave = np.where(phase < 0.5 * signal.period, signal.amplitude, -signal.amplitude)
        values[:, channels(signal.channel)] = wave[:, np.newaxis]
    elif isinstance(signal, Sine):
        values[:, channels(signal.channel)] = (signal.amplitude * np.sin(signal.frequency * t))[:, np.newaxis]
    elif isinstance(signal, Noise):
        values = signal.sigma * philox_generator(signal.seed).standard_normal((n_steps, n_w))
    elif isinstance(signal, Samples):
        data = np.loadtxt(signal.path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] - 1 not in (1, n_w):
            raise DimensionError(f"{signal.path}: expected 1 or {n_w} signal columns")
        for j in range(n_w):
            column = data[:, 1 + min(j, data.shape[1] - 2)]
            values[:, j] = np.interp(t, data[:, 0], column)
    else:
        raise InvalidInputError(f"unknown signal spec {signal!r}")
    return values


# Plants


@dataclass(frozen=True, eq=False)
class GeneralizedPlant:
    """
    x' = A x + Bw w + Bu u
    z  = Cz x + Dzw w + Dzu u
    y  = Cy x + Dyw w + Dyu u
    """

    A: np.ndarray
    Bw: np.ndarray
    Bu: np.ndarray
    Cz: np.ndarray
    Dzw: np.ndarray
    Dzu: np.ndarray
    Cy: np.ndarray
    Dyw: np.ndarray
    Dyu: np.ndarray

    def __post_init__(self):
        A = np.zeros((0, 0)) if np.size(self.A) == 0 else as_square(self.A, "A")
        n = A.shape[0]
        n_w, n_u = np.shape(self.Dzw)[1], np.shape(self.Dzu)[1]
        n_z, n_y = np.shape(self.Dzw)[0], np.shape(self.Dyw)[0]
        object.__setattr__(self, "A", A)
        for name, rows, cols in (
            ("Bw", n, n_w),
            ("Bu", n, n_u),
            ("Cz", n_z, n),
            ("Dzw", n_z, n_w),
            ("Dzu", n_z, n_u),
            ("Cy", n_y, n),
            ("Dyw", n_y, n_w),
            ("Dyu", n_y, n_u),
        ):
            object.__setattr__(self, name, as_block(getattr(self, name), rows, cols, name))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_w(self) -> int:
        return self.Bw.shape[1]

    @property
    def n_u(self) -> int:
        return self.Bu.shape[1]

    @property
    def n_y(self) -> int:
        return self.Cy.shape[0]

    @classmethod
    def from_state_space(cls, P: StateSpace) -> "GeneralizedPlant":
        """Disturbance added to the plant input; z = y"""
        return cls(P.A, P.B, P.B, P.C, P.D, P.D, P.C, P.D, P.D)

    @classmethod
    def from_weighted(
        cls, P: StateSpace, W_i: Optional[StateSpace] = None, W_o: Optional[StateSpace] = None
    ) -> "GeneralizedPlant":
        """W_o P W_i with the disturbance entering at the input of P; z = y"""
        shaped = P if W_i is None else series(W_i, P)
        n_pre = shaped.n - P.n
        Bw = np.vstack([np.zeros((n_pre, P.m)), P.B])
        Dw = P.D
        if W_o is not None:
            shaped = series(shaped, W_o)
            Bw = np.vstack([Bw, W_o.B @ Dw])
            Dw = W_o.D @ Dw
        return cls(shaped.A, Bw, shaped.B, shaped.C, Dw, shaped.D, shaped.C, Dw, shaped.D)

    @classmethod
    def from_standard(cls, plant: StandardPlant) -> "GeneralizedPlant":
        n_z, n_w = plant.Cz.shape[0], plant.Bw.shape[1]
        n_y, n_u = plant.Cy.shape[0], plant.Bu.shape[1]
        return cls(
            plant.A, plant.Bw, plant.Bu, plant.Cz, np.zeros((n_z, n_w)), plant.Dzu, plant.Cy, plant.Dyw,
            np.zeros((n_y, n_u)),
        )

    @classmethod
    def passthrough(cls, n_y: int, n_u: int) -> "GeneralizedPlant":
        """y = w: drives a controller with the exogenous signal alone; z = u"""
        return cls(
            np.zeros((0, 0)), np.zeros((0, n_y)), np.zeros((0, n_u)), np.zeros((n_u, 0)),
            np.zeros((n_u, n_y)), np.eye(n_u), np.zeros((n_y, 0)), np.eye(n_y), np.zeros((n_y, n_u)),
        )


def as_generalized_plant(plant) -> GeneralizedPlant:
    if isinstance(plant, GeneralizedPlant):
        return plant
    if isinstance(plant, StandardPlant):
        return GeneralizedPlant.from_standard(plant)
    if isinstance(plant, StateSpace):
        return GeneralizedPlant.from_state_space(plant)
    raise InvalidInputError(f"unsupported plant type {type(plant).__name__}")


# Closed-loop assembly


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    """
    Augmented hybrid system in the coordinates z = (xi, w):

        xi' = A xi + B w,   signal s = maps[s] z,   xi(t_i) = jump z(t_i)
    """

    A: np.ndarray
    B: np.ndarray
    maps: Dict[str, np.ndarray]
    jump: np.ndarray
    slices: Dict[str, slice]
    sampled: bool

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_w(self) -> int:
        return self.B.shape[1]


class _Layout:
    def __init__(self, blocks: Sequence[Tuple[str, int]], n_w: int):
        self.slices: Dict[str, slice] = {}
        offset = 0
        for name, size in blocks:
            self.slices[name] = slice(offset, offset + size)
            offset += size
        self.n = offset
        self.n_w = n_w
        self.total = offset + n_w

    def select(self, name: str) -> np.ndarray:
        sl = self.slices[name]
        S = np.zeros((sl.stop - sl.start, self.total))
        S[:, sl] = np.eye(sl.stop - sl.start)
        return S

    def select_w(self) -> np.ndarray:
        S = np.zeros((self.n_w, self.total))
        S[:, self.n :] = np.eye(self.n_w)
        return S

    def rows(self, pieces: Dict[str, np.ndarray]) -> np.ndarray:
        out = np.zeros((self.n, self.total))
        for name, block in pieces.items():
            out[self.slices[name], :] = block
        return out


def _solve_signals(blocks: List[Tuple[str, int]], coupling, rhs) -> Dict[str, np.ndarray]:
    """
    Solve the static interconnection  v - coupling v = rhs  for the signal
    vector v = (s_1, s_2, ...) stacked in the order of blocks
    """
    offsets = {}
    total = 0
    for name, size in blocks:
        offsets[name] = slice(total, total + size)
        total += size
    M = np.eye(total)
    for (dst, src), block in coupling.items():
        M[offsets[dst], offsets[src]] -= block
    R = np.vstack([rhs[name] for name, _ in blocks])
    if total and np.linalg.cond(M) > 1e12:
        raise AlgebraicLoopError("closed loop has an ill-posed feedthrough loop")
    V = np.linalg.solve(M, R) if total else R
    return {name: V[offsets[name], :] for name, _ in blocks}


def _sampled_loop(plant: GeneralizedPlant, ctrl: SampledDataController) -> ClosedLoop:
    if (ctrl.n_y, ctrl.n_u) != (plant.n_y, plant.n_u):
        raise DimensionError("controller does not match the plant's measurement and control dimensions")
    q = ctrl.q_sd
    monitor = ctrl.monitor.sys if (ctrl.monitor is not None and ctrl.has_innovation) else None
    n_y, n_u = plant.n_y, plant.n_u
    lay = _Layout(
        [
            ("x_p", plant.n),
            ("x_s", ctrl.sensor.n),
            ("x_a", ctrl.actuator.n),
            ("x_qs", q.n_sampler if q else 0),
            ("x_qa", q.n_hold if q else 0),
            ("x_Q", monitor.n if monitor else 0),
        ],
        plant.n_w,
    )
    S_w = lay.select_w()
    sensor, actuator = ctrl.sensor, ctrl.actuator
    n_eps = n_y if ctrl.has_innovation else 0
    if ctrl.has_innovation:
        C_eps, D_eps = ctrl.innovation_map
    else:
        C_eps, D_eps = np.zeros((0, sensor.n)), np.zeros((0, n_y + n_u))

    blocks = [("y", n_y), ("u", n_u), ("eps", n_eps), ("eta", n_u)]
    coupling = {
        ("y", "u"): plant.Dyu,
        ("u", "eta"): actuator.D,
        ("eps", "y"): D_eps[:, :n_y],
        ("eps", "u"): D_eps[:, n_y:],
    }
    rhs = {
        "y": plant.Cy @ lay.select("x_p") + plant.Dyw @ S_w,
        "u": actuator.C @ lay.select("x_a"),
        "eps": C_eps @ lay.select("x_s"),
        "eta": np.zeros((n_u, lay.total)),
    }
    if q is not None:
        coupling[("eta", "eps")] = q.feedthrough
        rhs["eta"] = q.hold_C @ lay.select("x_qa")
    sig = _solve_signals(blocks, coupling, rhs)
    sig["z"] = plant.Cz @ lay.select("x_p") + plant.Dzw @ S_w + plant.Dzu @ sig["u"]
    if monitor is not None:
        sig["monitor"] = monitor.C @ lay.select("x_Q") + monitor.D @ sig["eps"]

    derivative = {
        "x_p": plant.A @ lay.select("x_p") + plant.Bw @ S_w + plant.Bu @ sig["u"],
        "x_s": sensor.A @ lay.select("x_s") + sensor.B[:, :n_y] @ sig["y"] + sensor.B[:, n_y:] @ sig["u"],
        "x_a": actuator.A @ lay.select("x_a") + actuator.B @ sig["eta"],
    }
    reset = {
        "x_p": lay.select("x_p"),
        "x_s": lay.select("x_s"),
        "x_a": ctrl.jump_M @ lay.select("x_s") + ctrl.jump_N @ sig["y"],
    }
    if q is not None:
        derivative["x_qs"] = q.sampler_A @ lay.select("x_qs") + q.sampler_B @ sig["eps"]
        derivative["x_qa"] = q.hold_A @ lay.select("x_qa")
        reset["x_qa"] = q.jump_M @ lay.select("x_qs") + q.sample_gain @ sig["eps"]
    if monitor is not None:
        derivative["x_Q"] = monitor.A @ lay.select("x_Q") + monitor.B @ sig["eps"]

    F = lay.rows(derivative)
    return ClosedLoop(
        A=F[:, : lay.n],
        B=F[:, lay.n :],
        maps=sig,
        jump=lay.rows(reset),
        slices=lay.slices,
        sampled=True,
    )


def _analog_loop(plant: GeneralizedPlant, K: Optional[StateSpace]) -> ClosedLoop:
    if K is None:
        K = StateSpace.static(np.zeros((plant.n_u, plant.n_y)))
    if (K.m, K.p) != (plant.n_y, plant.n_u):
        raise DimensionError("controller does not match the plant's measurement and control dimensions")
    lay = _Layout([("x_p", plant.n), ("x_k", K.n)], plant.n_w)
    S_w = lay.select_w()
    sig = _solve_signals(
        [("y", plant.n_y), ("u", plant.n_u)],
        {("y", "u"): plant.Dyu, ("u", "y"): K.D},
        {"y": plant.Cy @ lay.select("x_p") + plant.Dyw @ S_w, "u": K.C @ lay.select("x_k")},
    )
    sig["z"] = plant.Cz @ lay.select("x_p") + plant.Dzw @ S_w + plant.Dzu @ sig["u"]
    F = lay.rows(
        {
            "x_p": plant.A @ lay.select("x_p") + plant.Bw @ S_w + plant.Bu @ sig["u"],
            "x_k": K.A @ lay.select("x_k") + K.B @ sig["y"],
        }
    )
    identity = np.hstack([np.eye(lay.n), np.zeros((lay.n, lay.n_w))])
    return ClosedLoop(F[:, : lay.n], F[:, lay.n :], sig, identity, lay.slices, sampled=False)


def _parameter_loop(n_in: int, n_out: int, static: Optional[ResetLinearSystem], q: Optional[SampledDataQ]) -> ClosedLoop:
    """epsilon -> eta through the reset system static plus the parameter q"""
    Q = static.sys if static is not None else None
    lay = _Layout(
        [("x_Q", Q.n if Q else 0), ("x_qs", q.n_sampler if q else 0), ("x_qa", q.n_hold if q else 0)],
        n_in,
    )
    S_w = lay.select_w()
    eta = np.zeros((n_out, lay.total))
    derivative, reset = {}, {}
    if Q is not None:
        eta = eta + Q.C @ lay.select("x_Q") + Q.D @ S_w
        derivative["x_Q"] = Q.A @ lay.select("x_Q") + Q.B @ S_w
    if q is not None:
        eta = eta + q.hold_C @ lay.select("x_qa") + q.feedthrough @ S_w
        derivative["x_qs"] = q.sampler_A @ lay.select("x_qs") + q.sampler_B @ S_w
        derivative["x_qa"] = q.hold_A @ lay.select("x_qa")
        reset["x_qa"] = q.jump_M @ lay.select("x_qs") + q.sample_gain @ S_w
    F = lay.rows(derivative)
    return ClosedLoop(F[:, : lay.n], F[:, lay.n :], {"eta": eta}, lay.rows(reset), lay.slices, sampled=True)


def build_closed_loop(plant, ctrl) -> ClosedLoop:
    plant = as_generalized_plant(plant)
    if isinstance(ctrl, SampledDataController):
        return _sampled_loop(plant, ctrl)
    if ctrl is None or isinstance(ctrl, StateSpace):
        return _analog_loop(plant, ctrl)
    raise InvalidInputError(f"unsupported controller type {type(ctrl).__name__}")


# Propagation


class _Propagator:
    """Exact flow of the augmented system over a segment, with the energy of one signal"""

    def __init__(self, loop: ClosedLoop, energy_key: Optional[str]):
        total = loop.n + loop.n_w
        self.M = np.zeros((total, total))
        self.M[: loop.n, : loop.n] = loop.A
        self.M[: loop.n, loop.n :] = loop.B
        G = loop.maps.get(energy_key) if energy_key else None
        self.G = G if G is not None else np.zeros((0, total))
        self._cache: Dict[float, Tuple[np.ndarray, np.ndarray]] = {}

    def segment(self, tau: float, cache: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        hit = self._cache.get(tau)
        if hit is not None:
            return hit
        result = gramian_integral(self.M, self.G, tau) if self.M.shape[0] else (np.zeros((0, 0)), np.zeros((0, 0)))
        if cache:
            self._cache[tau] = result
        return result


@dataclass(frozen=True, eq=False)
class SimTrace:
    """Sampled trajectories on the simulation grid"""

    dt: float
    times: np.ndarray
    y: np.ndarray
    u: np.ndarray
    z: np.ndarray
    x_p: np.ndarray
    x_s: np.ndarray
    x_a: np.ndarray
    sample_instants: np.ndarray
    eta_energy: np.ndarray
    state_norm: np.ndarray
    h_max: Optional[float] = None

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.sample_instants)

    @property
    def h_av(self) -> Optional[float]:
        """T over the number of sampling instants in [0, T)"""
        count = int(np.sum(self.sample_instants < self.T - 1e-9 * max(1.0, self.T)))
        if count == 0:
            return None
        return self.T / count

    def sample_flags(self) -> np.ndarray:
        flags = np.zeros(self.times.size, dtype=int)
        idx = np.clip(np.rint(self.sample_instants / self.dt).astype(int), 0, self.times.size - 1)
        flags[idx] = 1
        return flags

    def summary(self) -> Dict[str, Optional[float]]:
        gaps = self.gaps
        return {
            "T": self.T,
            "dt": self.dt,
            "sample_count": int(self.sample_instants.size),
            "h_av": self.h_av,
            "max_gap": float(np.max(gaps)) if gaps.size else None,
            "peak_abs_z": float(np.max(np.abs(self.z))) if self.z.size else 0.0,
            "eta_energy_peak": float(np.max(self.eta_energy)) if self.eta_energy.size else 0.0,
        }

    def header(self) -> List[str]:
        cols = ["t"]
        for name, data in (("y", self.y), ("u", self.u), ("z", self.z)):
            cols += [f"{name}{j + 1}" for j in range(data.shape[1])]
        return cols + ["sample", "eta_energy"]

    def rows(self) -> List[List[float]]:
        flags = self.sample_flags()
        return [
            [float(self.times[k]), *self.y[k], *self.u[k], *self.z[k], int(flags[k]), float(self.eta_energy[k])]
            for k in range(self.times.size)
        ]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for row in self.rows():
                writer.writerow([repr(float(v)) if not isinstance(v, int) else v for v in row])
        return path


def _run(
    loop: ClosedLoop,
    w_values: np.ndarray,
    dt: float,
    instants: Optional[Sequence[float]] = None,
    event: Optional[Tuple[float, float]] = None,
    x0: Optional[np.ndarray] = None,
    energy_key: Optional[str] = "monitor",
) -> SimTrace:
    N = loop.n
    n_steps = w_values.shape[0]
    prop = _Propagator(loop, energy_key)
    tol = 1e-9 * dt
    xi = np.zeros(N) if x0 is None else np.asarray(x0, dtype=float).reshape(N)
    energy = 0.0
    samples: List[float] = []
    pending = list(instants[1:]) if instants is not None else []
    pending.reverse()
    last_sample = 0.0

    def apply_jump(xi, w):
        return loop.jump @ np.concatenate([xi, w])

    if loop.sampled:
        xi = apply_jump(xi, w_values[0])
        samples.append(0.0)

    rec: Dict[str, List[np.ndarray]] = {k: [] for k in ("y", "u", "z", "x_p", "x_s", "x_a")}
    energies: List[float] = []
    norms: List[float] = []
    slices = loop.slices

    def record(xi, w):
        zv = np.concatenate([xi, w])
        rec["y"].append(loop.maps["y"] @ zv if "y" in loop.maps else np.zeros(0))
        rec["u"].append(loop.maps["u"] @ zv if "u" in loop.maps else loop.maps["eta"] @ zv)
        rec["z"].append(loop.maps["z"] @ zv if "z" in loop.maps else loop.maps["eta"] @ zv)
        rec["x_p"].append(xi[slices["x_p"]] if "x_p" in slices else np.zeros(0))
        rec["x_s"].append(xi[slices.get("x_s", slices.get("x_k", slice(0, 0)))])
        rec["x_a"].append(xi[slices["x_a"]] if "x_a" in slices else np.zeros(0))
        energies.append(energy)
        norms.append(float(np.linalg.norm(xi)))

    record(xi, w_values[0])
    t = 0.0
    for k in range(n_steps):
        w = w_values[k]
        t_end = (k + 1) * dt
        while t_end - t > tol:
            remaining = t_end - t
            if event is not None:
                next_instant = last_sample + event[1]
            else:
                next_instant = pending[-1] if pending else math.inf
            hits = next_instant - t <= remaining + tol
            seg = max(next_instant - t, 0.0) if hits else remaining
            zv = np.concatenate([xi, w])
            full_step = abs(seg - dt) <= tol
            Phi, Q = prop.segment(dt if full_step else seg, cache=full_step)
            gain = float(zv @ Q @ zv) if Q.size else 0.0
            if event is not None and energy + gain >= event[0] and gain > 0.0:
                theta = _event_time(prop, zv, event[0] - energy, seg)
                Phi_t, _ = prop.segment(theta)
                xi = (Phi_t @ zv)[:N]
                t += theta
                xi = apply_jump(xi, w)
                samples.append(t)
                energy, last_sample = 0.0, t
                continue
            xi = (Phi @ zv)[:N]
            energy += gain
            if hits:
                t = next_instant
                if loop.sampled:
                    xi = apply_jump(xi, w)
                samples.append(t)
                energy, last_sample = 0.0, t
                if event is None:
                    pending.pop()
            else:
                t = t_end
        t = t_end
        record(xi, w)

    times = np.arange(n_steps + 1) * dt
    return SimTrace(
        dt=dt,
        times=times,
        y=np.array(rec["y"]).reshape(times.size, -1),
        u=np.array(rec["u"]).reshape(times.size, -1),
        z=np.array(rec["z"]).reshape(times.size, -1),
        x_p=np.array(rec["x_p"]).reshape(times.size, -1),
        x_s=np.array(rec["x_s"]).reshape(times.size, -1),
        x_a=np.array(rec["x_a"]).reshape(times.size, -1),
        sample_instants=np.array(samples if loop.sampled else []),
        eta_energy=np.array(energies),
        state_norm=np.array(norms),
        h_max=event[1] if event is not None else None,
    )


def _event_time(prop: _Propagator, zv: np.ndarray, target: float, seg: float) -> float:
    """Time within (0, seg] at which the monitored energy reaches target"""
    lo, hi = 0.0, seg
    while hi - lo > EVENT_RTOL * max(seg, 1e-300):
        mid = 0.5 * (lo + hi)
        _, Q = prop.segment(mid)
        if float(zv @ Q @ zv) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def simulate(
    plant,
    ctrl,
    input,
    spec,
    T: float,
    dt: Optional[float] = None,
    x0: Optional[np.ndarray] = None,
) -> SimTrace:
    """
    Simulate the closed loop of plant and ctrl driven by input over [0, T]

    Analog controllers (StateSpace) and the open loop (ctrl None) run
    without resets; spec then only fixes the default grid.
    """
    if isinstance(spec, EventPattern):
        return simulate_event(plant, ctrl, input, spec.epsilon, spec.h_max, T, dt, x0=x0)
    loop = build_closed_loop(plant, ctrl)
    dt, n_steps = resolve_grid(spec, T, dt)
    w_values = input if isinstance(input, np.ndarray) else signal_values(input, loop.n_w, dt, n_steps)
    instants = generate_pattern(spec, T) if (loop.sampled and spec is not None) else None
    if loop.sampled and instants is None:
        raise InvalidInputError("sampled-data controllers need a sampling spec")
    trace = _run(loop, w_values, dt, instants=instants, x0=x0)
    logger.debug(f"simulate: T={T} dt={dt:.3g} samples={trace.sample_instants.size}")
    return trace


def simulate_event(
    plant,
    ctrl: SampledDataController,
    input,
    epsilon: float,
    h_max: float,
    T: float,
    dt: Optional[float] = None,
    x0: Optional[np.ndarray] = None,
) -> SimTrace:
    """
    Sample when the energy of the monitored signal since the last sample
    reaches epsilon^2, or when h_max has elapsed
    """
    if epsilon <= 0 or h_max <= 0:
        raise InvalidInputError("epsilon and h_max must be positive")
    if not isinstance(ctrl, SampledDataController) or ctrl.monitor is None or not ctrl.has_innovation:
        raise InvalidInputError("event sampling needs a controller with a monitored innovation")
    loop = build_closed_loop(plant, ctrl)
    dt, n_steps = resolve_grid(EventPattern(epsilon=epsilon, h_max=h_max), T, dt)
    w_values = input if isinstance(input, np.ndarray) else signal_values(input, loop.n_w, dt, n_steps)
    trace = _run(loop, w_values, dt, event=(epsilon**2, h_max), x0=x0)
    logger.info(f"simulate_event: {trace.sample_instants.size} samples, h_av={trace.h_av:.4g}")
    return trace


# Empirical oracles


def _impulse_energy_average(loop: ClosedLoop, intervals: Sequence[float], key: str, density: int) -> float:
    """
    Output energy after a unit impulse at time tau, summed over input
    channels and averaged over tau in one period of the pattern
    """
    N = loop.n
    if N == 0:
        return 0.0
    C = loop.maps[key][:, :N]
    J = loop.jump[:, :N]
    full = [gramian_integral(loop.A, C, h) for h in intervals]
    nodes, weights = leggauss(density)
    n_int = len(intervals)
    total = 0.0
    for j, h_j in enumerate(intervals):
        for x, wt in zip(nodes, weights):
            offset = 0.5 * h_j * (x + 1.0)
            Phi_r, Q_r = gramian_integral(loop.A, C, h_j - offset)
            X = loop.B
            energy = float(np.trace(X.T @ Q_r @ X))
            X = J @ Phi_r @ X
            k = (j + 1) % n_int
            period_energy = 0.0
            for count in range(1, MAX_H2_INTERVALS + 1):
                Phi_k, Q_k = full[k]
                increment = float(np.trace(X.T @ Q_k @ X))
                energy += increment
                period_energy += increment
                X = J @ Phi_k @ X
                k = (k + 1) % n_int
                if count % n_int == 0:
                    if period_energy <= H2_STOP_RTOL * energy or not np.any(X):
                        break
                    period_energy = 0.0
            else:
                raise NotHurwitzError("impulse response does not decay under this pattern")
            total += 0.5 * h_j * wt * energy
    return total / sum(intervals)


def h2_empirical(plant, ctrl, spec, tau_grid_density: int = 16) -> float:
    """Average output energy of impulse responses over one pattern period, square-rooted"""
    intervals = pattern_period(spec)
    loop = build_closed_loop(plant, ctrl)
    if np.any(loop.maps["z"][:, loop.n :] != 0):
        raise InvalidInputError("direct feedthrough from w to z: the H2 norm is infinite")
    return math.sqrt(_impulse_energy_average(loop, intervals, "z", tau_grid_density))


def h2_empirical_q(q_sd: SampledDataQ, spec, tau_grid_density: int = 16) -> float:
    """H2 semi-norm of a sampled-data parameter alone"""
    if np.any(q_sd.feedthrough != 0):
        raise InvalidInputError("parameter with feedthrough has an infinite H2 norm")
    loop = _parameter_loop(q_sd.n_in, q_sd.n_out, None, q_sd)
    return math.sqrt(_impulse_energy_average(loop, pattern_period(spec), "eta", tau_grid_density))


def empirical_l2_gain(
    static: Optional[ResetLinearSystem],
    intervals: Sequence[float],
    q_sd: Optional[SampledDataQ] = None,
    steps_per_interval: int = 40,
) -> float:
    """
    L2 gain of static + q_sd over the given consecutive intervals, from
    zero state, restricted to inputs constant on a fine grid

    The restricted operator is assembled exactly (matrix exponentials and
    energy Gramians per grid step) and its norm is the largest singular
    value.
    """
    if static is None and q_sd is None:
        raise InvalidInputError("nothing to measure")
    n_in = static.sys.m if static is not None else q_sd.n_in
    n_out = static.sys.p if static is not None else q_sd.n_out
    loop = _parameter_loop(n_in, n_out, static, q_sd)
    N, p = loop.n, n_in
    steps = [(j, h / steps_per_interval) for j, h in enumerate(intervals) for _ in range(steps_per_interval)]
    K = len(steps)
    prop = _Propagator(loop, "eta")
    Xi = np.zeros((N, K * p))
    blocks = []
    scale = np.zeros(K * p)
    previous = None
    for k, (j, delta) in enumerate(steps):
        E = np.zeros((p, K * p))
        E[:, k * p : (k + 1) * p] = np.eye(p)
        scale[k * p : (k + 1) * p] = math.sqrt(delta)
        if j != previous:
            Xi = loop.jump @ np.vstack([Xi, E])
            previous = j
        Phi, Q = prop.segment(delta, cache=True)
        Z = np.vstack([Xi, E])
        vals, vecs = np.linalg.eigh(Q)
        root = (np.sqrt(np.clip(vals, 0.0, None))[:, np.newaxis] * vecs.T)
        blocks.append(root @ Z)
        Xi = (Phi @ Z)[:N]
    O = np.vstack(blocks) / scale[np.newaxis, :]
    return float(np.linalg.norm(O, 2))


@dataclass(frozen=True)
class DecayReport:
    sampling: str
    peak: float
    terminal: float
    decays: bool


def stability_probe(plant, ctrl, specs, T: float, seed: int = 0, dt: Optional[float] = None) -> List[DecayReport]:
    """Free response from a random initial state for each sampling spec"""
    loop = build_closed_loop(plant, ctrl)
    rng = philox_generator(seed)
    reports = []
    for spec in specs:
        x0 = rng.standard_normal(loop.n)
        x0 /= max(np.linalg.norm(x0), 1e-300)
        step, n_steps = resolve_grid(spec, T, dt)
        zero = np.zeros((n_steps, loop.n_w))
        if isinstance(spec, EventPattern):
            trace = _run(loop, zero, step, event=(spec.epsilon**2, spec.h_max), x0=x0)
        else:
            instants = generate_pattern(spec, T) if loop.sampled else None
            trace = _run(loop, zero, step, instants=instants, x0=x0)
        peak = float(np.max(trace.state_norm))
        terminal = float(trace.state_norm[-1])
        reports.append(DecayReport(spec.kind, peak, terminal, terminal < DECAY_RATIO * peak))
    return reports


def controller_pulse_response(ctrl, pattern, channel: int, probe_energy: float) -> Tuple[float, float]:
    """
    Input and output energy on one sampling interval when a pulse confined
    to the middle half of that interval drives the controller alone
    """
    if isinstance(pattern, EventPattern):
        pattern = UniformPattern(h=pattern.h_max)
    if isinstance(ctrl, StateSpace):
        n_y, n_u = ctrl.m, ctrl.p
    else:
        n_y, n_u = ctrl.n_y, ctrl.n_u
    plant = GeneralizedPlant.passthrough(n_y, n_u)
    loop = build_closed_loop(plant, ctrl)
    instants = generate_pattern(pattern, 2.0 * pattern_bounds(pattern)[1] + 1e-9)
    if len(instants) < 3:
        raise InvalidInputError("pattern too short for the probe")
    t_k, t_next = instants[1], instants[2]
    h = t_next - t_k
    n_steps = int(math.ceil(t_next / (h / 400.0)))
    dt = t_next / n_steps
    starts = np.arange(n_steps) * dt
    active = (starts >= t_k + 0.25 * h - 1e-12) & (starts < t_k + 0.75 * h - 1e-12)
    amplitude = math.sqrt(probe_energy / (0.5 * h))
    w_values = np.zeros((n_steps, n_y))
    w_values[active, channel] = amplitude
    energy_in = float(np.sum(w_values**2) * dt)
    trace = _run(loop, w_values, dt, instants=instants[:2], energy_key="u")
    if not loop.sampled:
        before = int(round(t_k / dt))
        energy_out = float(trace.eta_energy[-1] - trace.eta_energy[before])
    else:
        energy_out = float(trace.eta_energy[-1])
    return energy_in, energy_out
