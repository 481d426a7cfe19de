"""Right-hand sides for the two case studies and the systems built on them.

The rhs functions accept either plain floats or tape nodes, so the same code
serves data generation, evaluation rollouts, and recorded training graphs.
Domain validation applies only to real-number inputs; recorded nodes pass
through untouched so the tape sees unconstrained arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ParameterDomainError, StateDomainError, StructuralError

_SUM_TOL = 1e-9
_NEG_TOL = -1e-12


def _is_real(x) -> bool:
    return isinstance(x, (int, float))


@dataclass(frozen=True)
class RcState:
    """Capacitor voltage, volts."""

    v_c: object

    def __post_init__(self):
        if _is_real(self.v_c) and not (-float("inf") < self.v_c < float("inf")):
            raise StateDomainError("capacitor voltage must be finite")


@dataclass(frozen=True)
class RcParams:
    """Charging time constant (seconds) and source voltage (volts)."""

    tau: object
    v_s: object

    def __post_init__(self):
        if _is_real(self.tau) and self.tau <= 0:
            raise ParameterDomainError(f"tau must be positive, got {self.tau}")


@dataclass(frozen=True)
class SirState:
    """Population fractions; s + i + r must equal 1."""

    s: object
    i: object
    r: object

    def __post_init__(self):
        if _is_real(self.s) and _is_real(self.i) and _is_real(self.r):
            if min(self.s, self.i, self.r) < _NEG_TOL:
                raise StateDomainError(
                    f"compartment fractions must be nonnegative: ({self.s}, {self.i}, {self.r})")
            total = self.s + self.i + self.r
            if abs(total - 1.0) > _SUM_TOL:
                raise StateDomainError(f"fractions must sum to 1, got {total!r}")


@dataclass(frozen=True)
class SirParams:
    """Contact rate and recovery rate, both per day in [0, 1]."""

    beta: object
    gamma: object

    def __post_init__(self):
        if _is_real(self.beta) and not 0.0 <= self.beta <= 1.0:
            raise ParameterDomainError(f"beta must lie in [0, 1], got {self.beta}")
        if _is_real(self.gamma) and not 0.0 <= self.gamma <= 1.0:
            raise ParameterDomainError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass(frozen=True)
class NpiVector:
    """Binary activation flags for the two interventions."""

    x: tuple

    def __post_init__(self):
        if len(self.x) != 2 or any(v not in (0, 1) for v in self.x):
            raise StructuralError(f"intervention vector must be two 0/1 entries, got {self.x}")


@dataclass(frozen=True)
class NpiEffect:
    """Multiplicative reduction factors and the inherent infection rate."""

    e: tuple
    beta_hat: float

    def __post_init__(self):
        if len(self.e) != 2 or any(not 0.0 <= v <= 1.0 for v in self.e):
            raise StructuralError(f"effect entries must lie in [0, 1], got {self.e}")
        if not 0.0 <= self.beta_hat <= 1.0:
            raise ParameterDomainError(f"inherent rate must lie in [0, 1], got {self.beta_hat}")


def rc_rhs(state: RcState, params: RcParams):
    """dV/dt of the charging capacitor: (v_s - v_c) / tau."""
    return (params.v_s - state.v_c) / params.tau


def sir_rhs(state: SirState, params: SirParams):
    """Compartment derivatives (ds, di, dr) with unit total population.

    The infection flow beta*s*i is computed once so that the three
    components cancel exactly; see :func:`sir_conservation_residual`.
    """
    bsi = params.beta * state.s * state.i
    gi = params.gamma * state.i
    ds = -bsi
    di = bsi - gi
    dr = gi
    return ds, di, dr


def sir_conservation_residual(state: SirState, params: SirParams) -> float:
    """(ds + dr) + di, which is exactly 0.0 in IEEE arithmetic.

    Grouping the susceptible and recovered flows first yields -fl(b - g),
    the exact negation of di, so the residual vanishes without tolerance.
    """
    ds, di, dr = sir_rhs(state, params)
    return (ds + dr) + di


def beta_npi(npis: NpiVector, effect: NpiEffect) -> float:
    """Infection rate under active interventions: beta_hat * e1^x1 * e2^x2."""
    e1, e2 = effect.e
    x1, x2 = npis.x
    return effect.beta_hat * (e1 ** x1) * (e2 ** x2)


# ---------------------------------------------------------------------------
# Systems: known dynamics with a learnable slot
# ---------------------------------------------------------------------------


class OdeSystem:
    """A right-hand side whose unknown parameters come from an approximator.

    ``approx_inputs`` selects what the approximator sees at the start of each
    measurement interval; ``rhs`` consumes its outputs for every Euler
    sub-step inside that interval.
    """

    state_dim: int = 0
    exog_dim: int = 0

    def __init__(self, approx):
        self.approx = approx

    def approx_inputs(self, state, exog_row):
        raise NotImplementedError

    def rhs(self, state, approx_out):
        raise NotImplementedError

    def cache_key(self):
        """Identity of the recorded graph structure (not of trial data)."""
        raise NotImplementedError


class RcConstSystem(OdeSystem):
    """RC circuit with both tau and v_s unknown and constant."""

    state_dim = 1
    exog_dim = 0

    def approx_inputs(self, state, exog_row):
        return ()

    def rhs(self, state, approx_out):
        tau, v_s = approx_out
        return (rc_rhs(RcState(state[0]), RcParams(tau, v_s)),)

    def cache_key(self):
        return ("rc-const", self.approx.structure_key())


class RcObservableTauSystem(OdeSystem):
    """RC circuit with known source voltage and tau driven by an observable."""

    state_dim = 1
    exog_dim = 1

    def __init__(self, approx, v_s: float = 1.0):
        super().__init__(approx)
        self.v_s = float(v_s)

    def approx_inputs(self, state, exog_row):
        return (exog_row[0],)

    def rhs(self, state, approx_out):
        tau = approx_out[0]
        return (rc_rhs(RcState(state[0]), RcParams(tau, self.v_s)),)

    def cache_key(self):
        return ("rc-observable-tau", self.v_s, self.approx.structure_key())


class SirConstSystem(OdeSystem):
    """SIR dynamics with known gamma and a constant unknown infection rate."""

    state_dim = 3
    exog_dim = 0

    def __init__(self, approx, gamma: float):
        super().__init__(approx)
        self.gamma = float(gamma)

    def approx_inputs(self, state, exog_row):
        return ()

    def rhs(self, state, approx_out):
        beta = approx_out[0]
        return sir_rhs(SirState(*state), SirParams(beta, self.gamma))

    def cache_key(self):
        return ("sir-const", self.gamma, self.approx.structure_key())


class SirNpiSystem(OdeSystem):
    """SIR dynamics whose infection rate is predicted from the previous
    state and the currently active interventions."""

    state_dim = 3
    exog_dim = 2

    def __init__(self, approx, gamma: float):
        super().__init__(approx)
        self.gamma = float(gamma)

    def approx_inputs(self, state, exog_row):
        return (state[0], state[1], state[2], exog_row[0], exog_row[1])

    def rhs(self, state, approx_out):
        beta = approx_out[0]
        return sir_rhs(SirState(*state), SirParams(beta, self.gamma))

    def cache_key(self):
        return ("sir-npi", self.gamma, self.approx.structure_key())
