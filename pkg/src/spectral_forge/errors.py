"""Exception types raised across the toolkit.

Everything derives from :class:`SpectralForgeError` so the CLI can map domain
failures to exit code 1 without swallowing programming errors.
"""


class SpectralForgeError(Exception):
    pass


# ingestion

class MissingHeader(SpectralForgeError):
    def __init__(self, key, path=""):
        self.key = key
        self.path = path
        super().__init__(f"missing header ##{key}= in {path or '<contents>'}")


class MalformedDataLine(SpectralForgeError):
    """``line_no`` is the 1-based ordinal of the data line (headers excluded)."""

    def __init__(self, line_no, text="", file_line=None):
        self.line_no = line_no
        self.text = text
        self.file_line = file_line
        where = f" (file line {file_line})" if file_line is not None else ""
        super().__init__(f"malformed data line {line_no}{where}: {text!r}")


class UnknownKindSuffix(SpectralForgeError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"cannot tell RAW/Processed from file name: {path}")


class NonMonotonicShift(SpectralForgeError):
    def __init__(self, line_no):
        self.line_no = line_no
        super().__init__(f"repeated Raman shift at data line {line_no}")


class EmptyCorpus(SpectralForgeError):
    pass


class ParseFailures(SpectralForgeError):
    def __init__(self, failures):
        self.failures = list(failures)
        lines = "\n".join(f"  {p}: {e}" for p, e in self.failures[:20])
        super().__init__(f"{len(self.failures)} file(s) failed to parse:\n{lines}")


class InconsistentFoldCount(SpectralForgeError):
    pass


class ManifestError(SpectralForgeError):
    pass


# preprocessing

class EmptyAfterPruning(SpectralForgeError):
    pass


class DegenerateSpectrum(SpectralForgeError):
    pass


class ConstantRow(SpectralForgeError):
    pass


class DatasetFormatError(SpectralForgeError):
    pass


# classical

class EmptyTrainingSet(SpectralForgeError):
    pass


class SingleClassInput(SpectralForgeError):
    pass


class SolverIterationCapExceeded(SpectralForgeError):
    pass


class UndefinedStatistic(SpectralForgeError):
    pass


# nn

class ShapeMismatch(SpectralForgeError):
    pass


class DetachedTensor(SpectralForgeError):
    pass


class InsufficientBatch(SpectralForgeError):
    pass


class CheckpointFormatError(SpectralForgeError):
    pass


# models

class CollapsedFeatureMap(SpectralForgeError):
    pass


class NoConvLayer(SpectralForgeError):
    pass
