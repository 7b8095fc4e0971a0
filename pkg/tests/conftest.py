import numpy as np
import pytest

from handemg.hand_model import default_skeleton


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()


def random_pose(rng, skeleton, margin=0.15):
    """Uniform pose strictly inside the joint limits (fraction `margin` in)."""
    lo, hi = skeleton.limits[:, 0], skeleton.limits[:, 1]
    return lo + (hi - lo) * rng.uniform(margin, 1.0 - margin, size=len(lo))
