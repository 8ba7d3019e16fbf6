"""Exception hierarchy shared by every harness module."""


class AeroBenchError(Exception):
    """Base class for all harness errors."""


# mesh_io
class MeshFormatError(AeroBenchError):
    pass


class UnsupportedSection(MeshFormatError):
    pass


class IndexOutOfRange(MeshFormatError):
    pass


class TruncatedStream(MeshFormatError):
    pass


class NonTriangleFace(MeshFormatError):
    pass


class CellDataOnly(MeshFormatError):
    pass


class BadMagic(MeshFormatError):
    pass


class VersionMismatch(MeshFormatError):
    pass


class ChecksumMismatch(MeshFormatError):
    pass


class InvalidMesh(AeroBenchError):
    pass


# dataset_registry
class OverlappingSplits(AeroBenchError):
    pass


class UnknownDesignId(AeroBenchError):
    pass


class MissingField(AeroBenchError):
    pass


class EmptyTrainSplit(AeroBenchError):
    pass


class ZeroVariance(AeroBenchError):
    pass


class EmptyCategory(AeroBenchError):
    pass


# geometry_sampling
class SampleLargerThanMesh(AeroBenchError):
    pass


class EmptyPointSet(AeroBenchError):
    pass


# metrics_core
class LengthMismatch(AeroBenchError):
    pass


class EmptyInput(AeroBenchError):
    pass


class ZeroVarianceTruth(AeroBenchError):
    pass


class ZeroNormTruth(AeroBenchError):
    pass


class MissingPrediction(AeroBenchError):
    pass


class MissingDenormalization(AeroBenchError):
    pass


# uncertainty_stats
class TooFewDesigns(AeroBenchError):
    pass


class MetricMismatch(AeroBenchError):
    pass


# physics_checks
class OrientationInconsistent(AeroBenchError):
    pass


class InvalidFlowReference(AeroBenchError):
    pass


# model_adapter
class UnknownDtype(MeshFormatError):
    pass


class CountMismatch(MeshFormatError):
    pass


class AdapterCrash(AeroBenchError):
    def __init__(self, design_id, message=""):
        super().__init__(f"{design_id}: {message}" if message else design_id)
        self.design_id = design_id


class AdapterTimeout(AeroBenchError):
    def __init__(self, design_id, seconds):
        super().__init__(f"{design_id}: no answer after {seconds} s")
        self.design_id = design_id


class ProtocolViolation(AeroBenchError):
    pass


# analysis_report / cli
class NoModels(AeroBenchError):
    pass


class MissingPair(AeroBenchError):
    pass


class RankDeficient(AeroBenchError):
    pass


class NoConvergence(AeroBenchError):
    pass


class ConfigError(AeroBenchError):
    pass


# synth_baseline
class EmptyTrainingPool(AeroBenchError):
    pass
