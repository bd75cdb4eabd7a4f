"""Exception types shared across the twinforge modules."""


class TwinforgeError(Exception):
    """Base class for all twinforge-specific errors."""


# --- building graph ---------------------------------------------------------

class InvalidAttrs(TwinforgeError, ValueError):
    """Node attributes violate an invariant of the node kind."""


class DuplicateId(TwinforgeError, ValueError):
    """A node with this id already exists in the graph."""


class MissingEndpoint(TwinforgeError, ValueError):
    """Edge endpoint references a node that is not in the graph."""


class SelfLoop(TwinforgeError, ValueError):
    """Edges must join two distinct nodes."""


class ContainsCycle(TwinforgeError, ValueError):
    """Adding this Contains edge would break the containment forest
    (cycle, duplicate parent, or contained Floor)."""


class MissingSensorValue(TwinforgeError, KeyError):
    """Telemetry frame lacks a reading for a sensor present in the graph."""


class ParseError(TwinforgeError, ValueError):
    """A persisted file could not be parsed; message carries line/field info."""


class FrozenGraph(TwinforgeError, RuntimeError):
    """Mutation attempted on a frozen graph snapshot."""


# --- plant ------------------------------------------------------------------

class TargetMismatch(TwinforgeError, ValueError):
    """Fault event targets a node whose kind does not match the fault kind."""


# --- energy / carbon --------------------------------------------------------

class InvalidCop(TwinforgeError, ValueError):
    """Coefficient of performance must be positive."""


class ZeroItPower(TwinforgeError, ValueError):
    """PUE is undefined at zero IT power."""


class NegativeEnergy(TwinforgeError, ValueError):
    """Energy quantities must be non-negative."""


class EmptyRegions(TwinforgeError, ValueError):
    """Siting report needs at least one region profile."""


# --- gnn --------------------------------------------------------------------

class BadDims(TwinforgeError, ValueError):
    """Layer dimensions do not chain."""


class DimMismatch(TwinforgeError, ValueError):
    """Feature dimension does not match the parameter shapes."""


class BadHyperparam(TwinforgeError, ValueError):
    """Training hyperparameter outside its allowed range."""


class EmptyDataset(TwinforgeError, ValueError):
    """Evaluation requires a non-empty dataset."""


class DegenerateLabels(TwinforgeError, ValueError):
    """ROC AUC is undefined when only one class is present."""


# --- tuner ------------------------------------------------------------------

class BudgetExhausted(TwinforgeError, RuntimeError):
    """The search budget has been spent; no further suggestions."""


class UnknownTrial(TwinforgeError, ValueError):
    """Reported trial does not correspond to the pending suggestion."""


class CorruptState(TwinforgeError, ValueError):
    """Search state file failed its integrity check."""


# --- agent ------------------------------------------------------------------

class InsufficientHistory(TwinforgeError, ValueError):
    """Observation window larger than the available history."""


# --- scenario ---------------------------------------------------------------

class InvalidScenario(TwinforgeError, ValueError):
    """Scenario definition violates a bound or targets a missing node."""


class BaselineMismatch(TwinforgeError, ValueError):
    """What-if reports being compared come from different baselines."""
