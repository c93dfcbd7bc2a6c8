"""Exception hierarchy shared by all qnndse modules."""


class QnnDseError(Exception):
    """Base class for every error raised by this package."""


class TopologyError(QnnDseError, ValueError):
    """Malformed topology document or violated layer invariant."""

    def __init__(self, message, line=None, layer=None):
        self.line = line
        self.layer = layer
        where = []
        if line is not None:
            where.append(f"line {line}")
        if layer is not None:
            where.append(f"layer {layer}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class QuantError(QnnDseError, ValueError):
    pass


class FoldingError(QnnDseError, ValueError):
    pass


class CostTableError(QnnDseError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DeviceUnsuitableError(QnnDseError):
    """The minimal design already exceeds a device budget."""

    def __init__(self, message, resources=()):
        self.resources = tuple(resources)
        super().__init__(message)


class SimulationError(QnnDseError, ValueError):
    pass
