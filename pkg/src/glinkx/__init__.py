"""glinkx: scalable node classification for homophilous and heterophilous
graphs via positional embeddings, monophilous label propagation, and shallow
minibatch models."""

__version__ = "0.1.0"

from .errors import GlinkxError
from .graph import CsrGraph, LabelVector, SplitMasks, build_graph

__all__ = [
    "CsrGraph",
    "GlinkxError",
    "LabelVector",
    "SplitMasks",
    "build_graph",
    "__version__",
]
