"""scopeloop: real-time tiled inference over live screen regions.

Capture a rectangle of the screen (or replayed images), tile it to fit a
model's input size, run classification / detection / segmentation through a
pluggable adapter, merge the per-tile outputs, and render annotated frames —
all behind a local control service with an aggregation workflow, physical
unit calibration, session export and an out-of-process chat assistant.
"""

__version__ = "0.1.0"

from .backends import (  # noqa: F401
    Box,
    Detection,
    InstanceMask,
    MaskLabel,
    ModelDescriptor,
    SoftmaxVector,
    Task,
)
from .errors import ScopeloopError  # noqa: F401
from .frames import (  # noqa: F401
    CaptureRegion,
    Frame,
    PixelFormat,
    convert_format,
    frame_from_array,
    open_source,
    select_region,
)
from .pipelines import (  # noqa: F401
    Band,
    NmsConfig,
    analyze_frame,
    band_for_score,
    distance_nms,
    mean_pool,
    run_classification,
    run_detection,
    run_ki67,
)
from .registry import ModelRegistry  # noqa: F401
from .session import AggregateSession, export_session  # noqa: F401
