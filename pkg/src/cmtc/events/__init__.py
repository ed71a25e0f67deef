from .dataset import load_dataset, read_manifest, save_dataset
from .io import EVENT_DTYPE, EventFormatError, EventRecord, EventStream, parse_events, write_events
from .protocol import ProtocolSplit, protocol_split
from .synth import CameraProfile, IdentityParams, SynthConfig, SyntheticClip, synth_dataset
from .voxel import FrameStack, event_counts, resize_frames, voxelize

__all__ = [
    "EVENT_DTYPE", "EventFormatError", "EventRecord", "EventStream", "parse_events", "write_events",
    "FrameStack", "event_counts", "voxelize", "resize_frames", "SynthConfig", "SyntheticClip",
    "IdentityParams", "CameraProfile", "synth_dataset", "ProtocolSplit", "protocol_split",
    "save_dataset", "load_dataset", "read_manifest",
]
