import numpy as np
import pytest

from sampling.streams import RngPolicy, block_slices, map_blocks, ordered_sum, stream_key


def test_stream_key_is_stable():
    assert stream_key(7, 'sample/init', 0, 3) == stream_key(7, 'sample/init', 0, 3)
    assert stream_key(7, 'sample/init', 0, 3) != stream_key(7, 'sample/init', 0, 4)
    assert stream_key(7, 'sample/init', 0, 3) != stream_key(8, 'sample/init', 0, 3)
    assert stream_key(7, 'a', 1, 0) != stream_key(7, 'a', 0, 1)


def test_generators_are_reproducible():
    policy = RngPolicy(42)
    a = policy.generator('trace', 0, 5).standard_normal(8)
    b = RngPolicy(42).generator('trace', 0, 5).standard_normal(8)
    assert a.tobytes() == b.tobytes()


def test_substreams_do_not_depend_on_creation_order():
    family = RngPolicy(3).family('sweep')
    late_first = [family.generator(i).standard_normal(4) for i in (2, 1, 0)][::-1]
    in_order = [family.generator(i).standard_normal(4) for i in (0, 1, 2)]
    for a, b in zip(late_first, in_order):
        assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("seed", [-1, 2 ** 64])
def test_master_seed_must_fit_64_bits(seed):
    with pytest.raises(ValueError):
        RngPolicy(seed)


def test_children_share_the_tally():
    family = RngPolicy(1).family('sample')
    family.child('init').normals(0, (10, 3))
    step = family.child('step5')
    step.normals(0, (4, 3))
    step.normals(1, (4, 3))
    assert family.consumed == 54
    assert step.consumed == 24
    assert family.child('step6').consumed == 0


def test_tally_does_not_match_on_bare_prefix():
    family = RngPolicy(1).family('sample')
    family.child('step1').normals(0, (5,))
    family.child('step10').normals(0, (7,))
    assert family.child('step1').consumed == 5


def test_block_slices_cover_every_particle():
    slices = block_slices(10, 4)
    assert [(s.start, s.stop) for s in slices] == [(0, 4), (4, 8), (8, 10)]
    assert block_slices(0, 4) == []


def test_map_blocks_keeps_block_order():
    def work(b):
        return b * b

    assert map_blocks(work, 20, threads=4) == [b * b for b in range(20)]
    assert map_blocks(work, 20, threads=1) == [b * b for b in range(20)]


def test_ordered_sum_is_left_to_right():
    values = [1e16, 1.0, -1e16, 1.0]
    assert ordered_sum(values) == ((1e16 + 1.0) - 1e16) + 1.0
    assert ordered_sum(np.float64(v) for v in [0.5, 0.25]) == 0.75
