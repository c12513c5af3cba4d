from .model import (
    Event,
    EventOrderError,
    EventStream,
    EventWindow,
    GroundTruthBox,
    MovingBox,
    SceneSpec,
    SensorGeometry,
)
from .io import EventParseError, parse_event_file, parse_gt_file, write_event_file, write_gt_file
from .windows import slice_windows
from .synth import generate_stream, generate_synthetic, load_scene, random_window, save_scene
