import numpy as np
import pytest

from teleopsim.chain import ChainModel, LinkSpec
from teleopsim.rigid_body import InertialParams, L_to_phi
from teleopsim.spatial import FrameTransform, orthonormalize


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_rotation(rng):
    return orthonormalize(rng.normal(size=(3, 3)))


def random_transform(rng, parent=None, child=None):
    return FrameTransform(random_rotation(rng), rng.normal(size=3), parent, child)


def random_inertial(rng):
    """Physically consistent random body, built from a random SPD 4x4 image so
    the pseudo-inertia matrix is positive definite by construction."""
    b = rng.normal(size=(4, 4))
    return L_to_phi(b @ b.T + 0.05 * np.eye(4))


def rod_inertia(mass, length, axis):
    """Uniform slender rod from the frame origin along ``axis``."""
    axis = np.asarray(axis, float)
    com = 0.5 * length * axis
    i_com = (mass * length ** 2 / 12.0) * (np.eye(3) - np.outer(axis, axis))
    i_origin = i_com + mass * ((com @ com) * np.eye(3) - np.outer(com, com))
    return InertialParams(mass, mass * com, i_origin)


def make_test_chain(n_links=3, length=0.4, mass=2.0, rotor=0.0):
    """Small mixed-axis revolute chain used across the dynamics tests."""
    axes = [np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 0.0]),
            np.array([1.0, 0.0, 0.0])]
    links = []
    for i in range(n_links):
        axis = axes[i % 3]
        mount = FrameTransform(np.eye(3), np.zeros(3) if i == 0 else np.array([0.0, 0.0, 0.0]))
        tip = FrameTransform(np.eye(3), np.array([length, 0.0, 0.0]))
        screw = np.concatenate([np.zeros(3), axis])
        links.append(LinkSpec(mount, screw, tip, rod_inertia(mass, length, [1.0, 0.0, 0.0]),
                              rotor_inertia=rotor))
    return ChainModel(tuple(links), name="test")
