import re

import numpy as np
import pytest

from inhand.collision import Box
from inhand.geometry import Pose
from inhand.io import load_hand, load_object
from inhand.model import Finger, HandModel, Joint, Link, ObjectModel, ContactCandidate, make_contact
from inhand.scenario import DATA_DIR

FAR_PALM = Box(np.array([0.0, 0.0, -50.0]), np.array([0.01, 0.01, 0.01]))


def chain_hand(lengths, axis=(0, 0, 1), limits=(-np.pi, np.pi), name="planar", palm=FAR_PALM):
    """Serial chain along +x with revolute joints about ``axis``; tip contact on the last link."""
    joints, links = [], []
    for i, L in enumerate(lengths):
        off = 0.0 if i == 0 else lengths[i - 1]
        joints.append(Joint(f"j{i}", np.array(axis, dtype=float), Pose(np.array([off, 0.0, 0.0])), *limits))
        cps = [np.array([L, 0.0, 0.0])] if i == len(lengths) - 1 else []
        links.append(Link(f"l{i}", np.array([L, 0.0, 0.0]), 0.01, cps))
    return HandModel(name, [Finger("f", Pose(), joints, links)], palm)


def point_object(points, normals, tangents, mass=1.0):
    cands = [ContactCandidate(f"c{i}", np.asarray(p, float), np.asarray(n, float), np.asarray(t, float))
             for i, (p, n, t) in enumerate(zip(points, normals, tangents))]
    return ObjectModel("obj", mass, np.eye(3) * 0.01, cands, [])


@pytest.fixture(scope="session")
def planar():
    # +-2 pi limits: revolute joints without a wall inside one turn
    return chain_hand([1.0, 1.0], limits=(-2 * np.pi, 2 * np.pi))


@pytest.fixture(scope="session")
def hand():
    return load_hand(DATA_DIR / "three_finger_hand.yaml")


@pytest.fixture(scope="session")
def bar():
    return load_object(DATA_DIR / "bar.yaml")


@pytest.fixture(scope="session")
def grasps(hand, bar):
    T = make_contact(hand, bar, "t_dist", 0)
    I = make_contact(hand, bar, "i_dist", 1)
    M = make_contact(hand, bar, "m_dist", 2)
    return {"T": T, "I": I, "M": M}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---- acceptance verdicts: one PASS/FAIL line per criterion in the terminal summary

VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[VERDICTS] = {}


@pytest.fixture
def verdict(request):
    """``verdict(ok, detail)`` records the criterion named by the test (``test_criterion_<n>_...``)."""
    n = int(re.match(r"test_criterion_(\d+)", request.node.name).group(1))
    results = request.config.stash[VERDICTS]

    def record(ok, detail=""):
        results[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return bool(ok)
    yield record
    if n not in results:
        results[n] = (False, "error before a verdict was reached")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(VERDICTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
