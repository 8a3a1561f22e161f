"""
Frame log module. Replayable binary recording of a frame bundle stream.

Layout: the magic bytes, a little-endian uint32 header length and a json header (schema_version, scenario, seed),
then one record per frame, each prefixed by its uint32 payload length. A record holds the frame index, timestamp,
degenerate flag, point and sample counts, the true pose and velocity, then the float64 points and IMU rows.
"""

from __future__ import annotations
from typing import BinaryIO, Iterator

from geometry.pose import Pose
from geometry.rotation import Rotation
from mapping.preintegration import ImuSample
from simulation.exceptions import LoadingError
from simulation.scenario import Scenario
from simulation.simulator import FrameBundle

import json
import struct

import numpy as np

MAGIC = b"MMLF"
SCHEMA_VERSION = 1

_LENGTH = struct.Struct("<I")
_RECORD_HEAD = struct.Struct("<IdBII10d")

class FrameLogWriter:
    """Appends frame bundles to a frame log file. Usable as a context manager."""
    file_path: str
    _file: BinaryIO

    def __init__(self, file_path: str, scenario: Scenario, seed: int):
        """Appends frame bundles to a frame log file.
            - file_path: String representing the path of the log to create.
            - scenario: Scenario object the frames come from, stored in the header.
            - seed: Integer seed the frames were generated with."""
        self.file_path = str(file_path)
        header = json.dumps({"schema_version": SCHEMA_VERSION, "seed": int(seed), "scenario": scenario.to_dict()}).encode("utf-8")
        self._file = open(self.file_path, "wb")
        self._file.write(MAGIC)
        self._file.write(_LENGTH.pack(len(header)))
        self._file.write(header)

    def __enter__(self) -> FrameLogWriter:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def write(self, frame: FrameBundle) -> None:
        w, x, y, z = frame.true_pose.rotation.q
        head = _RECORD_HEAD.pack(frame.index, frame.timestamp, int(frame.degenerate), len(frame.scan), len(frame.imu_slice),
                                 w, x, y, z, *frame.true_pose.translation, *frame.true_velocity)
        points = np.ascontiguousarray(frame.scan, dtype="<f8").tobytes()
        imu_rows = np.array([[sample.timestamp, *sample.gyro, *sample.accel] for sample in frame.imu_slice], dtype="<f8").reshape(-1, 7).tobytes()
        payload = head + points + imu_rows
        self._file.write(_LENGTH.pack(len(payload)))
        self._file.write(payload)

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

def _read_exact(log_file: BinaryIO, size: int, what: str) -> bytes:
    data = log_file.read(size)
    if not len(data) == size:
        raise LoadingError(f"truncated frame log while reading {what}.")
    return data

def read_frame_log_header(log_file: BinaryIO) -> dict:
    if not log_file.read(len(MAGIC)) == MAGIC:
        raise LoadingError("not a frame log: bad magic bytes.")
    (length,) = _LENGTH.unpack(_read_exact(log_file, _LENGTH.size, "the header length"))
    try:
        header = json.loads(_read_exact(log_file, length, "the header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise LoadingError(f"frame log header is not valid json: {error}") from error
    if not header.get("schema_version") == SCHEMA_VERSION:
        raise LoadingError(f"unsupported frame log schema_version {header.get('schema_version')!r}.")
    return header

def _decode_record(payload: bytes) -> FrameBundle:
    if len(payload) < _RECORD_HEAD.size:
        raise LoadingError("frame log record is shorter than its fixed part.")
    index, timestamp, degenerate, point_count, imu_count, *values = _RECORD_HEAD.unpack_from(payload)
    expected = _RECORD_HEAD.size + 8 * (3 * point_count + 7 * imu_count)
    if not len(payload) == expected:
        raise LoadingError(f"frame log record {index} has {len(payload)} bytes, expected {expected}.")

    offset = _RECORD_HEAD.size
    points = np.frombuffer(payload, dtype="<f8", count=3 * point_count, offset=offset).reshape(point_count, 3).astype(np.float64)
    offset += 24 * point_count
    rows = np.frombuffer(payload, dtype="<f8", count=7 * imu_count, offset=offset).reshape(imu_count, 7)
    imu_slice = [ImuSample(float(row[0]), row[1:4].astype(np.float64), row[4:7].astype(np.float64)) for row in rows]

    pose = Pose(Rotation(values[0:4]), values[4:7])
    return FrameBundle(index=index, timestamp=timestamp, true_pose=pose, true_velocity=np.array(values[7:10]),
                       scan=points, imu_slice=imu_slice, degenerate=bool(degenerate))

def iter_frame_log(file_path: str) -> Iterator[FrameBundle]:
    """Iterates over the frames of a log without loading it whole."""
    with open(file_path, "rb") as log_file:
        read_frame_log_header(log_file)
        while True:
            length_bytes = log_file.read(_LENGTH.size)
            if not length_bytes:
                return
            if not len(length_bytes) == _LENGTH.size:
                raise LoadingError("truncated frame log while reading a record length.")
            (length,) = _LENGTH.unpack(length_bytes)
            yield _decode_record(_read_exact(log_file, length, "a record"))

def read_frame_log(file_path: str) -> tuple[dict, list[FrameBundle]]:
    """Returns the header and every frame of a log."""
    with open(file_path, "rb") as log_file:
        header = read_frame_log_header(log_file)
    return header, list(iter_frame_log(file_path))
