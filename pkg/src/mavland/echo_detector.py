"""Truth-echo detector: answers FRAME lines with the synthetic detector's output.

Run as a child process of the harness::

    mavland run scenario.yaml --detector "exec:python -m mavland.echo_detector --config {config} --seed {seed}"

It replays the simulator's own projection and noise model from the pose hint
carried by each FRAME line, so a bridged episode must reproduce the
synthetic one exactly. Useful as a protocol reference for real detectors.
"""

from __future__ import annotations

import argparse
import sys
from typing import BinaryIO

from mavland.bridge import DecodeError, DetectionMessage, FramePublication, decode, encode
from mavland.config import ScenarioConfig, load_scenario
from mavland.simulator import SyntheticDetector, VehiclePose


def serve(rfile: BinaryIO, wfile: BinaryIO, scenario: ScenarioConfig, seed: int) -> None:
    source = SyntheticDetector(scenario, seed)
    for raw in rfile:
        try:
            msg = decode(raw)
        except DecodeError as exc:
            print(f"echo_detector: {exc}", file=sys.stderr)
            continue
        if not isinstance(msg, FramePublication) or msg.pose_hint is None:
            continue
        x, y, z, yaw = msg.pose_hint
        box = source.detect(msg.frame_id, msg.timestamp_us * 1e-6, VehiclePose(x=x, y=y, z=z, yaw=yaw))
        if box is not None:
            wfile.write(encode(DetectionMessage.from_bbox(box, msg.timestamp_us)))
            wfile.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True)
    parser.add_argument("--seed", type=int, required=True)
    args = parser.parse_args(argv)
    serve(sys.stdin.buffer, sys.stdout.buffer, load_scenario(args.config), args.seed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
