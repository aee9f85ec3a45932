class ContractError(ValueError):
    """Raised when an operation's input violates its documented contract."""


class BudgetExhausted(RuntimeError):
    pass


class RepeatedQuery(RuntimeError):
    """A sample identity was submitted to the oracle a second time."""


class DatasetFormatError(ValueError):
    pass
