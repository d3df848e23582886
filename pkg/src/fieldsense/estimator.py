"""Source-set generation and post-processing of parity records into
time-ordered correlators and the physical mass.

The inclusion-exclusion stencil over 2^n on/off source subsets discretizes the
n-th mixed derivative of the parity with respect to the pulse strengths.  For
the phased route (entangled pair with projector coupling) that derivative is

    d^n P / dJ_1 ... dJ_n = (-1)^(n/2) Re[ e^{i theta} G^(n) ] + O(J^2),

with theta the sensor phase at readout, so two readout phases with distinct
sines invert to the full complex correlator.  The constant in front is pinned
by the free-theory oracle (see the tests), not taken on faith from any closed
formula.

For the decoherence-free route only n = 2 is supported: the balanced-pair
parity with staggered sigma^3 coupling measures -Re Delta, and the imaginary
part comes from the same pair prepared with a pi/2 relative phase and
staggered projector coupling, which measures the ordered (Wightman) two-point
function.  A plain sign flip of the pair superposition negates the parity
wholesale and carries no new information, so it cannot serve as the imaginary
quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import least_squares

from .errors import (
    FitError,
    IllConditionedError,
    InvalidParameterError,
    UnsupportedError,
)
from .sensors import (
    CouplingForm,
    KickPulse,
    ParityRecord,
    PreparationKind,
    SensorPreparation,
    SourceSchedule,
)


class StencilVariant(str, Enum):
    GHZ_PHASED = "ghz_phased"
    DFS_REAL = "dfs_real"
    DFS_IMAG = "dfs_imag"


@dataclass(frozen=True)
class StencilPlan:
    """One n-point measurement plan: pulse points, strengths, readout."""

    points: tuple[tuple[float, int], ...]
    strengths: tuple[float, ...]
    variant: StencilVariant
    readout_time: float

    def __post_init__(self):
        n = len(self.points)
        if n < 2 or n % 2 != 0:
            raise UnsupportedError("stencils are defined for even n >= 2")
        if len(self.strengths) != n:
            raise InvalidParameterError("one strength per source point required")
        if any(s <= 0 for s in self.strengths):
            raise InvalidParameterError("strengths must be positive")
        if self.readout_time <= max(t for t, _ in self.points):
            raise InvalidParameterError("readout_time must exceed every pulse time")
        if self.variant is not StencilVariant.GHZ_PHASED:
            sites = [x for _, x in self.points]
            if len(set(sites)) != len(sites):
                raise InvalidParameterError(
                    "decoherence-free stencils need one sensor per source point"
                )

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def n_schedules(self) -> int:
        return 2**self.n

    def sensor_sites(self) -> tuple[int, ...]:
        seen: list[int] = []
        for _, x in self.points:
            if x not in seen:
                seen.append(x)
        return tuple(seen)

    def preparation(self) -> SensorPreparation:
        if self.variant is StencilVariant.GHZ_PHASED:
            return SensorPreparation(kind=PreparationKind.GHZ_SUBSET)
        if self.variant is StencilVariant.DFS_REAL:
            return SensorPreparation(kind=PreparationKind.NEEL_DFS_PLUS)
        # Quadrature pair: + superposition with a pi/2 relative phase.
        return SensorPreparation(
            kind=PreparationKind.NEEL_DFS_PLUS, relative_phase=math.pi / 2.0
        )

    def with_readout(self, readout_time: float) -> "StencilPlan":
        return StencilPlan(self.points, self.strengths, self.variant, readout_time)


def _gray_code(n: int) -> list[int]:
    return [m ^ (m >> 1) for m in range(2**n)]


def subset_label(plan: StencilPlan, mask: int) -> str:
    return f"{plan.variant.value}:n{plan.n}:m{mask:0{plan.n}b}"


def build_source_sets(plan: StencilPlan) -> list[SourceSchedule]:
    """All 2^n on/off source subsets as runnable schedules.

    Subsets are enumerated in binary-reflected Gray order, which for n = 2
    gives exactly (0,0), (J1,0), (J1,J2), (0,J2).  Pulse i carries the stagger
    sign (-1)^(i+1) and sigma^3 coupling on the decoherence-free real route;
    the phased route and the quadrature route use projector coupling (the
    latter keeps the staggering).
    """
    if plan.variant is StencilVariant.GHZ_PHASED:
        form, staggered = CouplingForm.RAMSEY_P, False
    elif plan.variant is StencilVariant.DFS_REAL:
        form, staggered = CouplingForm.DFS_SZ, True
    else:
        form, staggered = CouplingForm.RAMSEY_P, True
    schedules = []
    for mask in _gray_code(plan.n):
        pulses = []
        for i, ((t, x), strength) in enumerate(zip(plan.points, plan.strengths)):
            if not mask & (1 << i):
                continue
            sign = (-1) ** i if staggered else 1  # (-1)^(i+1) with 1-based i
            pulses.append(
                KickPulse(
                    site=x,
                    time=t,
                    strength=strength,
                    stagger_sign=int(sign),
                    coupling_form=form,
                )
            )
        schedules.append(
            SourceSchedule(
                tuple(pulses),
                readout_time=plan.readout_time,
                label=subset_label(plan, mask),
            )
        )
    return schedules


def _mask_of(record: ParityRecord) -> int:
    try:
        return int(record.label.rsplit(":m", 1)[1], 2)
    except (IndexError, ValueError):
        raise InvalidParameterError(
            f"record label {record.label!r} does not carry a subset mask"
        ) from None


def combine_general(records: list[ParityRecord], strengths: tuple[float, ...]) -> float:
    """Inclusion-exclusion mixed finite difference
    sum_S (-1)^(n-|S|) P[J_S] / prod_i J_i, estimating d^n P / dJ_1...dJ_n."""
    n = len(strengths)
    if len(records) != 2**n:
        raise InvalidParameterError(
            f"need {2**n} records for an n={n} stencil, got {len(records)}"
        )
    by_mask = {_mask_of(r): r for r in records}
    if len(by_mask) != 2**n:
        raise InvalidParameterError("duplicate or missing subset masks in records")
    total = 0.0
    for mask, rec in by_mask.items():
        bits = bin(mask).count("1")
        total += (-1) ** (n - bits) * rec.value
    return total / math.prod(strengths)


def combine_two_point(
    records: list[ParityRecord], strengths: tuple[float, float]
) -> float:
    """sum_m (-1)^m P[J^(m)] / (J1 J2) over the four two-point source sets.

    Equals minus the mixed finite difference (the alternating-m sum starts at
    the empty set with m = 1).
    """
    if len(records) != 4:
        raise InvalidParameterError("two-point combination needs 4 records")
    order = [0b00, 0b01, 0b11, 0b10]
    by_mask = {_mask_of(r): r for r in records}
    if set(by_mask) != set(order):
        raise InvalidParameterError("records do not span the four two-point sets")
    total = sum(
        (-1) ** (m + 1) * by_mask[mask].value for m, mask in enumerate(order)
    )
    return total / (strengths[0] * strengths[1])


@dataclass
class PropagatorEstimate:
    value: complex
    bias_order: int = 2
    diagnostics: dict = field(default_factory=dict)


def extract_propagator(
    derivatives: list[tuple[float, float]],
    variant: StencilVariant,
    n: int = 2,
    points: tuple[tuple[float, int], ...] | None = None,
) -> PropagatorEstimate:
    """Invert stencil derivatives into a complex correlator estimate.

    ``derivatives`` holds (theta, value) pairs for the phased route (two
    entries with distinct sines required) or (quadrature, value) pairs with
    quadrature 0 -> real route, pi/2 -> imaginary route for the
    decoherence-free variants.
    """
    if variant is StencilVariant.GHZ_PHASED:
        if len(derivatives) < 2:
            raise InvalidParameterError("phased extraction needs two readout phases")
        (t1, d1), (t2, d2) = derivatives[:2]
        det = math.sin(t1 - t2)
        if abs(det) < 1e-9:
            raise IllConditionedError(
                f"readout phases {t1}, {t2} are degenerate (equal mod pi)"
            )
        sign = (-1) ** (n // 2)
        # sign * Re[e^{i theta} G] = [cos t, -sin t] . (Re G, Im G)
        a = np.array([[math.cos(t1), -math.sin(t1)], [math.cos(t2), -math.sin(t2)]])
        rhs = np.array([sign * d1, sign * d2])
        re, im = np.linalg.solve(a, rhs)
        return PropagatorEstimate(
            value=complex(re, im),
            diagnostics={"theta": (t1, t2), "derivatives": (d1, d2)},
        )
    if n != 2:
        raise UnsupportedError(
            "decoherence-free extraction is implemented for n = 2 only"
        )
    if variant is StencilVariant.DFS_REAL:
        (_, d) = derivatives[0]
        return PropagatorEstimate(value=complex(-d, 0.0), diagnostics={"deriv": d})
    # DFS_IMAG: the quadrature parity derivative equals +Im <phi_1 phi_2>
    # (ordered product); relate it to the time-ordered function by the sign
    # of the actual time order of the two source points.
    if points is None or len(points) != 2:
        raise InvalidParameterError("imaginary-route extraction needs the two points")
    (_, d) = derivatives[0]
    s = 1.0 if points[0][0] >= points[1][0] else -1.0
    return PropagatorEstimate(value=complex(0.0, s * d), diagnostics={"deriv": d})


def richardson_extrapolate(
    coarse: PropagatorEstimate, fine: PropagatorEstimate
) -> PropagatorEstimate:
    """Cancel the O(J^2) stencil bias from estimates at strengths J and J/2."""
    value = (4.0 * fine.value - coarse.value) / 3.0
    return PropagatorEstimate(
        value=value,
        bias_order=coarse.bias_order + 2,
        diagnostics={"coarse": coarse.value, "fine": fine.value},
    )


def readout_time_for_phase(
    theta: float, n_sensors: int, omega0: float, min_time: float
) -> float:
    """Smallest readout time after ``min_time`` with sensor phase theta mod 2pi."""
    period = 2.0 * math.pi / (n_sensors * omega0)
    tau = theta / (n_sensors * omega0)
    while tau <= min_time:
        tau += period
    return tau


def _matrix_pencil(times: np.ndarray, values: np.ndarray, n_modes: int):
    """Damped-exponential spectrum of a uniformly sampled signal."""
    dt = np.diff(times)
    if np.max(np.abs(dt - dt[0])) > 1e-9 * max(abs(dt[0]), 1e-12):
        raise FitError("mass fit requires a uniform time grid")
    dt = float(dt[0])
    y = np.asarray(values, dtype=complex)
    m = len(y)
    p = max(n_modes + 1, m // 3)
    rows = m - p
    if rows < n_modes + 1:
        p = m // 2
        rows = m - p
    hank = np.array([y[i : i + p + 1] for i in range(rows)])
    _, svals, vt = np.linalg.svd(hank, full_matrices=False)
    rank = min(n_modes, int(np.sum(svals > svals[0] * 1e-12)))
    # Rows of vt span the Hankel row space (the Vandermonde directions);
    # stack them as columns without conjugation so the shift ratio is z itself.
    v = vt[:rank, :].T
    v0, v1 = v[:-1, :], v[1:, :]
    z = np.linalg.eigvals(np.linalg.pinv(v0) @ v1)
    vand = np.array([z**k for k in range(m)])
    amps, *_ = np.linalg.lstsq(vand, y, rcond=None)
    omegas = -np.angle(z) / dt
    gammas = -np.log(np.clip(np.abs(z), 1e-300, None)) / dt
    return omegas, gammas, amps, dt


def extract_mass(
    times: np.ndarray,
    values: np.ndarray,
    n_modes: int = 4,
    polish: bool = True,
) -> float:
    """Dominant oscillation frequency of a propagator time series.

    The series is modeled as a sum of damped complex exponentials; modes are
    initialized from the discrete spectrum of the sample (matrix pencil on the
    Hankel autocorrelation structure) and optionally polished by damped least
    squares.  Returns the dominant positive frequency, i.e. the physical gap.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values)
    if len(times) < 8:
        raise FitError("need at least 8 time samples")
    omegas, gammas, amps, dt = _matrix_pencil(times, values, n_modes)
    keep = omegas > 1e-9
    if not np.any(keep):
        raise FitError(
            "no oscillatory mode resolved",
            diagnostics={"omegas": omegas.tolist(), "amps": np.abs(amps).tolist()},
        )
    omegas, gammas, amps = omegas[keep], gammas[keep], amps[keep]
    if polish and np.iscomplexobj(values):
        order = np.argsort(-np.abs(amps))[: min(3, len(amps))]
        om0, gm0, am0 = omegas[order], gammas[order], amps[order]
        t0 = times - times[0]

        def model(params):
            k = len(om0)
            om = params[:k]
            gm = params[k : 2 * k]
            cr = params[2 * k : 3 * k]
            ci = params[3 * k :]
            out = np.zeros(len(times), dtype=complex)
            for i in range(k):
                out += (cr[i] + 1j * ci[i]) * np.exp((-1j * om[i] - gm[i]) * t0)
            return out

        def residual(params):
            res = model(params) - values
            return np.concatenate([res.real, res.imag])

        start = np.concatenate([om0, gm0, am0.real, am0.imag])
        sol = least_squares(residual, start, max_nfev=2000)
        k = len(om0)
        om_fit = sol.x[:k]
        amp_fit = np.abs(sol.x[2 * k : 3 * k] + 1j * sol.x[3 * k :])
        omegas, amps = om_fit, amp_fit
    dominant = int(np.argmax(np.abs(amps)))
    omega = float(abs(omegas[dominant]))
    span = times[-1] - times[0]
    if span * omega < 2.0 * math.pi * 0.95:
        raise FitError(
            f"time window {span:.3g} shorter than one period of {omega:.3g}",
            diagnostics={"omega": omega, "span": float(span)},
        )
    return omega
