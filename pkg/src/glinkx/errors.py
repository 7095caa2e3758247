"""Exception taxonomy.

Every error raised by the library carries a stable machine-readable ``code``
so the CLI can emit structured diagnostics on stderr.
"""


class GlinkxError(Exception):
    """Base class for all library errors."""

    code = "error"

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context

    def to_json(self):
        payload = {"error": self.code, "message": str(self)}
        if self.context:
            payload["context"] = {k: str(v) for k, v in self.context.items()}
        return payload


class GraphError(GlinkxError):
    """Invalid graph structure or graph operation precondition."""

    code = "graph"


class FormatError(GlinkxError):
    """Malformed input file (bad magic, truncation, unparsable line)."""

    code = "format"


class DimensionError(GlinkxError):
    """Shape mismatch between two artifacts that must agree."""

    code = "dimension"


class IngestError(GlinkxError):
    """Inconsistent raw dataset files; names the offending line when known."""

    code = "ingest"


class ConfigError(GlinkxError):
    """Invalid configuration value or combination."""

    code = "config"


class TrainingError(GlinkxError):
    """Optimization failure (non-finite gradients, divergence)."""

    code = "training"


class PipelineError(GlinkxError):
    """A pipeline stage could not run; message is stage-tagged."""

    code = "pipeline"


class BaselineError(GlinkxError):
    """Baseline method cannot run on this input."""

    code = "baseline"


class ReportError(GlinkxError):
    """Reporting over empty or malformed metric logs."""

    code = "report"
