import numpy as np

from motioncluster import autodiff as ad
from motioncluster.annotations import HINGE, PRISMATIC
from motioncluster.articulation import HingeParams, PrismaticParams
from motioncluster.gradcheck import (N_PARAMS, TERMS, CheckResult, fixture_joint, format_results,
                                     random_point, run_gradcheck, term_function, unpack)


def test_fixture_joint():
    joint = fixture_joint()
    assert(joint.part_id == 'lid' and joint.base_part_id == 'base')
    assert(len(joint.moving) == 64)


def test_unpack_layout():
    x = np.arange(N_PARAMS, dtype=float)
    x[0:3] = [0.0, 0.0, 2.0]
    hinge = unpack(x, HINGE)
    assert(isinstance(hinge.motion, HingeParams))
    assert(np.allclose(hinge.motion.axis, [0, 0, 1]))
    assert(np.array_equal(hinge.motion.center, [3, 4, 5]))
    assert(hinge.motion.amount == 6)
    assert(np.array_equal(hinge.align.global_translation, [7, 8, 9]))
    assert(hinge.align.global_up_rotation == 10)
    assert(np.array_equal(hinge.moving_deform.faces, x[14:20]))
    assert(np.array_equal(hinge.base_deform.faces, x[20:26]))
    assert(isinstance(unpack(x, PRISMATIC).motion, PrismaticParams))


def test_single_term_function():
    joint = fixture_joint()
    rng = np.random.default_rng(0)
    x = random_point(joint, rng)
    f = term_function('align', HINGE, joint, None)
    assert(ad.finite_diff_check(f, x) < 1e-4)


def test_run_gradcheck_small():
    results = run_gradcheck(points=2)
    assert(len(results) == 2 * len(TERMS))
    assert({r.motion_type for r in results} == {HINGE, PRISMATIC})
    failed = [(r.motion_type, r.term, r.error) for r in results if not r.passed]
    assert(failed == [])


def test_format_results():
    text = format_results([CheckResult('recon', HINGE, 1e-7, 2),
                           CheckResult('collide', PRISMATIC, 0.5, 2)])
    lines = text.splitlines()
    assert(lines[1].split()[-1] == 'ok')
    assert(lines[2].split()[-1] == 'FAIL')
