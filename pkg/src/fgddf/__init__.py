"""Factor-graph based heterogeneous decentralized data fusion.

A simulation and estimation library in which each robot runs a local extended
information filter over only the states it is tasked with, and neighboring
robots fuse marginals over their shared states, either exactly via channel
filters (acyclic networks, linear common dynamics) or conservatively via
covariance intersection.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    DeflationFailure,
    DegenerateGeometry,
    DimensionMismatch,
    EmptyGraph,
    FgddfError,
    MalformedMessage,
    NonPsdFusion,
    SingularCombination,
    SingularCovariance,
    SingularElimination,
    SingularInformation,
    UnknownVariable,
)
from .variables import VariableId, VariableKind, VariableOrdering  # noqa: F401
from .gaussian import (  # noqa: F401
    InfoForm,
    MomentForm,
    add_info,
    is_conservative_wrt,
    marginalize_info,
    subtract_info,
    to_info,
    to_moment,
)
