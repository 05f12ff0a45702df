"""Integration of Hamiltonian flows of Lichnerowicz pairs with energy monitoring."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InconsistentInputs, LeftDomain, StepUnderflow
from .expr import compile_scalar
from .fields import ScalarField, _points, evaluate_fields
from .jacobi import LichnerowiczPair, hamiltonian_vf

METHODS = ("rk4", "rk45")


@dataclass
class FlowProblem:
    pair: LichnerowiczPair
    H: ScalarField
    x0: Sequence[float]
    t_span: tuple[float, float]
    step: float
    method: str = "rk4"
    rtol: float = 1e-8
    atol: float = 1e-10

    def __post_init__(self):
        self.pair.require_certified("integrate_flow")
        if self.H.chart != self.pair.chart:
            raise InconsistentInputs("Hamiltonian and pair live on different charts")
        X, _ = _points(self.pair.chart, self.x0)
        self.x0 = tuple(float(v) for v in X[0])
        t0, t1 = map(float, self.t_span)
        if not t1 > t0:
            raise ValueError("t_span must satisfy t1 > t0")
        self.t_span = (t0, t1)
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")


@dataclass
class Trajectory:
    coord_names: tuple
    times: np.ndarray
    states: np.ndarray
    H_values: np.ndarray
    residuals: np.ndarray
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(["t", *self.coord_names, "H", "drift_residual"]) + "\n")
        for row in np.column_stack([self.times, self.states, self.H_values, self.residuals]):
            buf.write(",".join(format(v, ".17g") for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        return text


def _energy_terms(pair, H, X):
    """X_H[H] and H R[H] at the points, from exact first derivatives."""
    m, n = X.shape
    hj = evaluate_fields([H], X, 1)[0]
    dH = hj.grad(m, n)
    P, _ = pair.pi.arrays(X, 0)
    R, _ = pair.R.arrays(X, 0)
    RH = np.einsum("mi,mi->m", R, dH)
    XH = np.einsum("mji,mj->mi", P, dH) + hj.v[:, None] * R
    return hj.v, np.einsum("mi,mi->m", XH, dH), hj.v * RH


def _rk4(f, x0, t0, t1, h, chart):
    nsteps = max(1, int(round((t1 - t0) / h)))
    if abs(t0 + nsteps * h - t1) > 1e-9 * max(1.0, abs(t1)):
        nsteps = int(math.ceil((t1 - t0) / h))
    times = [t0]
    states = [list(x0)]
    x = list(x0)
    n = len(x)
    comp = [0.0] * n  # Kahan compensation of the running state
    for k in range(nsteps):
        t = t0 + k * h
        hk = min(h, t1 - t)
        k1 = f(x)
        k2 = f([x[i] + 0.5 * hk * k1[i] for i in range(n)])
        k3 = f([x[i] + 0.5 * hk * k2[i] for i in range(n)])
        k4 = f([x[i] + hk * k3[i] for i in range(n)])
        new = []
        for i in range(n):
            dx = hk / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) - comp[i]
            xi = x[i] + dx
            comp[i] = (xi - x[i]) - dx
            new.append(xi)
        x = new
        tn = t1 if k == nsteps - 1 else t0 + (k + 1) * h
        if chart.bounds is not None and not chart.inside(np.array(x))[0]:
            raise LeftDomain(tn, x)
        times.append(tn)
        states.append(x)
    return times, states


# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)


def _rk45(f, x0, t0, t1, h, chart, rtol, atol):
    x = np.array(x0, dtype=float)
    t = t0
    times, states = [t0], [x.tolist()]
    k = [np.array(f(x.tolist()))]
    while t < t1:
        h = min(h, t1 - t)
        if h < 1e-14 * max(1.0, abs(t)):
            raise StepUnderflow(f"adaptive step fell to {h:.3g} at t={t!r}")
        ks = [k[0]]
        for s in range(1, 7):
            xs = x + h * sum(a * kk for a, kk in zip(_A[s], ks))
            ks.append(np.array(f(xs.tolist())))
        x5 = x + h * sum(b * kk for b, kk in zip(_B5, ks))
        x4 = x + h * sum(b * kk for b, kk in zip(_B4, ks))
        scale = atol + rtol * np.maximum(np.abs(x), np.abs(x5))
        with np.errstate(over="ignore"):
            err = float(np.sqrt(np.mean(((x5 - x4) / scale) ** 2)))
        if err <= 1.0:
            t = t1 if t + h >= t1 else t + h
            x = x5
            if chart.bounds is not None and not chart.inside(x)[0]:
                raise LeftDomain(t, x.tolist())
            times.append(t)
            states.append(x.tolist())
            k = [ks[6]]  # first-same-as-last
        h *= min(5.0, max(0.2, 0.9 * (err if err > 0 else 1e-10) ** -0.2))
    return times, states


def integrate_flow(prob: FlowProblem) -> Trajectory:
    J, H = prob.pair, prob.H
    chart = J.chart
    XH = hamiltonian_vf(J, H)
    f = compile_scalar([c.node for c in XH.components], chart.n)
    t0, t1 = prob.t_span
    if prob.method == "rk4":
        times, states = _rk4(f, prob.x0, t0, t1, prob.step, chart)
    else:
        times, states = _rk45(f, prob.x0, t0, t1, prob.step, chart, prob.rtol, prob.atol)
    S = np.array(states)
    Hv, XHH, HRH = _energy_terms(J, H, S)
    info = {"method": prob.method, "step": prob.step, "steps": len(times) - 1}
    return Trajectory(chart.coord_names, np.array(times), S, Hv, np.abs(XHH - HRH), info)


@dataclass(frozen=True)
class EnergySummary:
    pointwise_max: float
    drift_max: float

    def to_text(self):
        return f"energy.pointwise_max = {self.pointwise_max!r}\nenergy.drift_max = {self.drift_max!r}\n"


def monitor_energy(traj: Trajectory, pair: LichnerowiczPair, H: ScalarField) -> EnergySummary:
    """Exact identity X_H[H] = H R[H] along the states, and the discrete drift.

    The drift compares the difference quotient of H between consecutive
    samples with the trapezoidal mean of H R[H] at the two ends.
    """
    if tuple(traj.coord_names) != tuple(pair.chart.coord_names) or H.chart != pair.chart:
        raise InconsistentInputs("trajectory, pair and Hamiltonian use different charts")
    S = np.asarray(traj.states)
    if S.ndim != 2 or S.shape[1] != pair.chart.n or len(S) != len(traj.times):
        raise InconsistentInputs("trajectory arrays have inconsistent shapes")
    Hv, XHH, HRH = _energy_terms(pair, H, S)
    if not np.allclose(Hv, traj.H_values, rtol=1e-9, atol=1e-12):
        raise InconsistentInputs("recorded H values do not match the Hamiltonian")
    pointwise = float(np.max(np.abs(XHH - HRH)))
    t = np.asarray(traj.times)
    if len(t) < 2:
        return EnergySummary(pointwise, 0.0)
    rate = np.diff(Hv) / np.diff(t)
    drift = float(np.max(np.abs(rate - 0.5 * (HRH[1:] + HRH[:-1]))))
    return EnergySummary(pointwise, drift)
