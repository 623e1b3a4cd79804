"""Exception hierarchy shared across the package.

Every error carries a stable ``code`` string so the control API can map it
to a structured JSON body without string-matching messages.
"""


class ScopeloopError(Exception):
    code = "internal_error"


# frame sources
class DegenerateRegion(ScopeloopError):
    code = "degenerate_region"


class SourceClosed(ScopeloopError):
    code = "source_closed"


class DecodeFailure(ScopeloopError):
    code = "decode_failure"


# tiling
class EmptyFrame(ScopeloopError):
    code = "empty_frame"


class FrameSmallerThanTile(ScopeloopError):
    code = "frame_smaller_than_tile"


class InvalidOverlap(ScopeloopError):
    code = "invalid_overlap"


# inference adapters
class WrongTileShape(ScopeloopError):
    code = "wrong_tile_shape"


class BackendFailure(ScopeloopError):
    code = "backend_failure"


class ChecksumMismatch(ScopeloopError):
    code = "checksum_mismatch"


class DownloadFailure(ScopeloopError):
    code = "download_failure"


class UnsupportedGraph(ScopeloopError):
    code = "unsupported_graph"


class UnknownModel(ScopeloopError):
    code = "unknown_model"


# aggregation / calibration
class NoCurrentResult(ScopeloopError):
    code = "no_current_result"


class OverrideOnNonCountTask(ScopeloopError):
    code = "override_on_non_count_task"


class NegativeOverride(ScopeloopError):
    code = "negative_override"


class NonPositiveArea(ScopeloopError):
    code = "non_positive_area"


class RoiDimsChangedSinceCalibration(ScopeloopError):
    code = "roi_dims_changed_since_calibration"


class Uncalibrated(ScopeloopError):
    code = "uncalibrated"


class EmptySession(ScopeloopError):
    code = "empty_session"


class IoFailure(ScopeloopError):
    code = "io_failure"


# orchestrator
class AlreadyRunning(ScopeloopError):
    code = "already_running"


class NotRunning(ScopeloopError):
    code = "not_running"


class ChatActive(ScopeloopError):
    code = "chat_active"


class InferenceRunning(ScopeloopError):
    code = "inference_running"


class BadRequest(ScopeloopError):
    code = "bad_request"


# chat bridge
class SpawnFailure(ScopeloopError):
    code = "spawn_failure"


class HandshakeTimeout(ScopeloopError):
    code = "handshake_timeout"


class ChannelBroken(ScopeloopError):
    code = "channel_broken"
