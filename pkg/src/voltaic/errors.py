"""Exception hierarchy shared by the solvers, models and CLI."""


class VoltaicError(Exception):
    """Base class for all library errors."""


class NetlistError(VoltaicError):
    """Malformed netlist text or an invalid circuit topology."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InfeasibleBounds(VoltaicError):
    """A node's diode bounds cross (v_min > v_max): the feasible set is empty."""

    def __init__(self, node, v_min, v_max, lower_diode=None, upper_diode=None):
        self.node = node
        self.v_min = v_min
        self.v_max = v_max
        self.lower_diode = lower_diode
        self.upper_diode = upper_diode
        parts = [f"node {node}: lower bound {v_min:.6g} exceeds upper bound {v_max:.6g}"]
        if lower_diode is not None:
            parts.append(f"lower bound from diode {lower_diode}")
        if upper_diode is not None:
            parts.append(f"upper bound from diode {upper_diode}")
        super().__init__("; ".join(parts))


class InfeasibleProblem(VoltaicError):
    """No steady state exists because the feasible set is empty."""

    def __init__(self, cause: InfeasibleBounds):
        self.cause = cause
        self.node = cause.node
        self.diodes = [d for d in (cause.lower_diode, cause.upper_diode) if d is not None]
        super().__init__(f"infeasible circuit: {cause}")


class NoFeasibleActiveSet(VoltaicError):
    """Active-set enumeration found no subset satisfying the KKT conditions."""


class EnumerationBudgetExceeded(VoltaicError):
    """Too many diodes for brute-force active-set enumeration."""


class ZeroDenominator(VoltaicError):
    """A unit has no incident conductance mass, so its update is undefined."""


class NonConvexNudge(ZeroDenominator):
    """Negative nudging drove an output unit's curvature to zero or below."""


class ZeroConductanceNode(VoltaicError):
    """A node has zero total incident conductance (change of variables undefined)."""


class NonFiniteState(VoltaicError):
    """A relaxation produced NaN or infinite potentials."""


class ToleranceExceeded(VoltaicError):
    """A gradient check or verification failed its tolerance."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class DataFormatError(VoltaicError):
    """Base class for dataset file errors."""


class BadMagic(DataFormatError):
    pass


class DimensionMismatch(DataFormatError):
    pass


class TruncatedFile(DataFormatError):
    pass


class ModelFormatError(VoltaicError):
    """Corrupt or unrecognised model container."""


class ConfigError(VoltaicError):
    """Invalid run configuration."""
