"""Online fusion graph: bus, synchronizer, pose registration, wire replay, defect map."""

from .bus import Bus, Closed, Subscription, TimestampedMsg
from .defect_map import DefectMapRecord, export_defect_map, read_defect_map
from .pose import PoseBuffer, UnregisteredError, associate_pose, interpolate_pose
from .runner import ModelMismatchError, RunReport, check_model, offline_defect_map, run_pipeline
from .sources import dataset_messages, stream_offsets, wall_messages, walls_messages
from .sync import StreamError, Synchronizer
from .wire import Decoder, WireError, decode_all, encode, replay_connect, replay_serve
