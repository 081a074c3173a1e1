import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from lidar_ora.geometry import camera_box_to_lidar, points_in_box
from lidar_ora.kitti_io import KittiTree, parse_calib_file, parse_label_file, parse_split_file, read_point_cloud
from lidar_ora.synth import SynthConfig, generate_frame, sample_object_points, write_corpus
from oracles import corner_points, halfspace_inside


def test_frames_are_deterministic():
    cfg = SynthConfig(seed=5)
    a, b = generate_frame(3, cfg), generate_frame(3, cfg)
    np.testing.assert_array_equal(a.cloud.points, b.cloud.points)
    assert a.labels == b.labels
    assert not np.array_equal(a.cloud.points, generate_frame(4, cfg).cloud.points)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_object_points_land_inside_their_labelled_box(seed):
    frame = generate_frame(0, SynthConfig(seed=seed, ground_points=300))
    for label, box in zip(frame.labels, frame.boxes):
        # the box rebuilt from the written label row holds the sampled returns
        rebuilt = camera_box_to_lidar(label, frame.calib)
        assert points_in_box(frame.cloud, rebuilt).size == points_in_box(frame.cloud, box).size > 0
    owners = sum(halfspace_inside(frame.cloud.points, b).astype(int) for b in frame.boxes)
    assert np.all(owners <= 1) if frame.boxes else True


def test_returns_sit_on_the_sensor_facing_side(rng):
    frame = generate_frame(1, SynthConfig(seed=2, ground_points=0))
    box = frame.boxes[0]
    pts = sample_object_points(box, 500, rng)
    r = np.linalg.norm(pts[:, :3], axis=1)
    assert r.max() < box.horizontal_range + 1.0
    assert pts.dtype == np.float32


def test_count_range_overrides_decay():
    frame = generate_frame(0, SynthConfig(seed=1, count_range=(100, 300), ground_points=0, classes=("Pedestrian",)))
    for box in frame.boxes:
        assert 100 <= points_in_box(frame.cloud, box).size <= 300


def test_point_counts_decay_with_range():
    near, far = [], []
    for i in range(40):
        frame = generate_frame(i, SynthConfig(seed=9, ground_points=0, classes=("Car",)))
        for box in frame.boxes:
            (near if box.horizontal_range < 20 else far).append(points_in_box(frame.cloud, box).size)
    assert np.median(near) > 3 * np.median(far)


def test_separated_azimuths_do_not_overlap():
    cfg = SynthConfig(seed=4, objects_per_frame=(5, 8), separate_azimuths=True)
    for i in range(10):
        spans = []
        for box in generate_frame(i, cfg).boxes:
            az = [math.atan2(y, x) for x, y, _ in corner_points(box)]
            spans.append((min(az), max(az)))
        spans.sort()
        assert all(a[1] < b[0] for a, b in zip(spans, spans[1:]))


def test_written_corpus_parses(tmp_path):
    ids = write_corpus(tmp_path, SynthConfig(num_frames=3, seed=0))
    tree = KittiTree(tmp_path)
    assert parse_split_file(tree.split("val").read_text()) == ids == ["000000", "000001", "000002"]
    frame = generate_frame(2, SynthConfig(num_frames=3, seed=0))
    np.testing.assert_array_equal(read_point_cloud(tree.velodyne("000002")).points, frame.cloud.points)
    assert parse_label_file(tree.label("000002").read_text()) == frame.labels
    parse_calib_file(tree.calib("000002").read_text())
