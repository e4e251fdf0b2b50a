"""
Overlap supervision and tuple mining
====================================

The supervision signal is the symmetric voxelized overlap between two scans:
each scan is voxel-downsampled, then we count what fraction of one cloud has
a neighbor within tau in the other.  Pairs classify as positive (> 0.5),
semi-positive ((0, 0.5]) or negative (0), and tuples for the trainer are
mined from the resulting matrix.
"""

import numpy as np

from scanplace import (
    DEFAULT_PROFILES,
    OverlapConfig,
    OverlapMatrix,
    Pose,
    classify_pair,
    directed_overlap,
    generate_synthetic_scene_scan,
    mine_tuples,
    symmetric_overlap,
)

# hand-sized example first: directed overlap is a fraction of the *pair*
p1 = np.array([[0.0, 0.0, 0.0]])
p2 = np.array([[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]])
cfg = OverlapConfig()  # voxel 4 m, tau 6 m, truncation 200 m
print("identical clouds:", directed_overlap(p1, p1, cfg))
print("one shared point of three total:", directed_overlap(p1, p2, cfg))
print("classify 0.7 / 0.3 / 0.0:",
      classify_pair(0.7).name, classify_pair(0.3).name, classify_pair(0.0).name)

# now real scans: same scene seen from jittered vantage points
scene = 5
profiles = list(DEFAULT_PROFILES.values())
rng = np.random.default_rng(0)
clouds = []
for i, prof in enumerate(profiles):
    pose = Pose.from_yaw(float(rng.uniform(0, 2 * np.pi)),
                         (float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2)), 1.7))
    clouds.append(generate_synthetic_scene_scan(scene, pose, prof,
                                                scan_id=f"s{scene:03d}_{prof.tag}"))
# a scan from a different scene, shifted far enough to truncate to zero
far = generate_synthetic_scene_scan(9, Pose.from_yaw(0.0, (0.0, 0.0, 1.7)),
                                    profiles[0], scan_id="s009_far")
far = far.with_points(far.points + np.array([320.0, 0.0, 0.0]))
clouds.append(far)

print("\npairwise symmetric overlaps:")
n = len(clouds)
values = np.eye(n)
for i in range(n):
    for j in range(i + 1, n):
        o = symmetric_overlap(clouds[i].points, clouds[j].points, cfg)
        values[i, j] = values[j, i] = o
        print(f"  {clouds[i].scan_id:28s} {clouds[j].scan_id:28s} "
              f"{o:6.3f}  {classify_pair(o).name}")

matrix = OverlapMatrix(tuple(c.scan_id for c in clouds), values,
                       np.ones((n, n), dtype=bool))
tuples = mine_tuples(matrix, per_class_counts=(2, 2, 4))
print("\nmined tuples:")
for t in tuples:
    print(f"  anchor {t.query_id}: {len(t.positive_ids)} pos, "
          f"{len(t.semi_positive_ids)} semi, {len(t.negative_ids)} neg")
