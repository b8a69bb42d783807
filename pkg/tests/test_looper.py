import asyncio

import pytest

from motioncluster.looper import Looper


def _power(x, p):
    return x ** p


def _fail(x):
    if x == 2:
        raise ValueError('bad job')
    return x


def test_map_inline_keeps_order():
    with Looper() as looper:
        assert looper.map(_power, [(i, 2) for i in range(6)]) == [0, 1, 4, 9, 16, 25]


def test_map_pool_matches_inline():
    jobs = [(i, 3) for i in range(8)]
    with Looper(workers=2) as looper:
        pooled = looper.map(_power, jobs)
    with Looper() as looper:
        inline = looper.map(_power, jobs)
    assert pooled == inline


def test_map_empty():
    looper = Looper()
    assert looper.map(_power, []) == []
    looper.close()


def test_map_raises_job_error():
    looper = Looper()
    with pytest.raises(ValueError):
        looper.map(_fail, [(i,) for i in range(4)])
    looper.close()


def test_map_accepts_coroutines():
    async def double(x):
        return 2 * x

    with Looper() as looper:
        assert looper.map(double, [(1,), (2,)]) == [2, 4]


def test_bad_arguments():
    with pytest.raises(ValueError):
        Looper(workers=0)
    with pytest.raises(TypeError):
        Looper(loop='not a loop')


def test_external_loop_is_not_closed():
    loop = asyncio.new_event_loop()
    looper = Looper(loop=loop)
    looper.map(_power, [(2, 2)])
    looper.close()
    assert not loop.is_closed()
    loop.close()
