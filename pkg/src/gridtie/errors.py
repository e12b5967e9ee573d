"""Exception types raised by the simulator."""


class GridTieError(Exception):
    """Base class for all simulator errors."""


class InvalidParameterError(GridTieError, ValueError):
    pass


class ContractViolation(GridTieError):
    """A transition was requested while its guard does not hold."""


class NumericalBlowupError(GridTieError, FloatingPointError):
    def __init__(self, agent, time, detail=""):
        self.agent = agent
        self.time = time
        msg = f"non-finite state for agent {agent} at t={time!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class LivelockError(GridTieError, RuntimeError):
    pass


class NoOperatingAgentsError(GridTieError):
    """Every agent has failed; the grid-tie must disconnect."""


class InvalidIdentifierError(GridTieError, ValueError):
    pass


class ScenarioError(GridTieError, ValueError):
    """Scenario validation failure, carrying one entry per offending field."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"{field}: {msg}" for field, msg in self.problems]
        super().__init__("invalid scenario:\n  " + "\n  ".join(lines))


class WindowError(GridTieError, ValueError):
    pass


class DegenerateSignalError(GridTieError, ValueError):
    pass
