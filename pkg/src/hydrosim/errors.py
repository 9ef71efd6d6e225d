"""Exception hierarchy shared by all hydrosim modules."""


class HydroSimError(Exception):
    """Base class for every error raised by hydrosim."""


# hydro_physics
class NegativeHead(HydroSimError, ValueError):
    pass


class UnitMismatch(HydroSimError, ValueError):
    pass


class InvalidHead(HydroSimError, ValueError):
    pass


# river_network
class StorageUnderflow(HydroSimError):
    def __init__(self, node_id, step, storage):
        self.node_id = node_id
        self.step = step
        self.storage = storage
        super().__init__(
            f"release at node {node_id!r} step {step} would drive storage to "
            f"{storage:.6g} m3, below min_storage"
        )


class TopologyError(HydroSimError):
    pass


class OutOfTable(HydroSimError, ValueError):
    pass


# dispatch
class UnservedTarget(HydroSimError):
    def __init__(self, shortfall_mw, result=None):
        self.shortfall_mw = shortfall_mw
        self.result = result
        super().__init__(f"{shortfall_mw:.6g} MW of the system target could not be served")


# dynamics
class InfeasibleInit(HydroSimError, ValueError):
    pass


class NumericalDivergence(HydroSimError, ArithmeticError):
    pass


# protection
class MissingEnvelope(HydroSimError, KeyError):
    pass


# scenario_io
class ParseError(HydroSimError):
    def __init__(self, message, line=None, column=None, field=None):
        self.line = line
        self.column = column
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if field is not None:
            where.append(f"field {field}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ValidationError(HydroSimError, ValueError):
    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class MalformedRow(HydroSimError, ValueError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class EmptySeries(HydroSimError, ValueError):
    pass
