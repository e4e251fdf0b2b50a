import numpy as np
import pytest

from scanplace.geometry import DEFAULT_PROFILES, Pose, generate_synthetic_scene_scan


@pytest.fixture(scope="session")
def sample_scans():
    """Nine scans: three scenes seen by all three sensor profiles."""
    scans = []
    for scene in range(3):
        for k, (tag, profile) in enumerate(sorted(DEFAULT_PROFILES.items())):
            rng = np.random.default_rng([scene, k])
            pose = Pose.from_yaw(rng.uniform(0, 2 * np.pi),
                                 (rng.uniform(-5, 5), rng.uniform(-5, 5), 1.5))
            scans.append(generate_synthetic_scene_scan(
                100 + scene, pose, profile,
                scan_id=f"s{scene}_{tag}", timestamp=60.0 * len(scans)))
    return scans


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
