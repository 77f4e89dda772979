import pytest

from msflow.core import Band, Batch, Flow, PriorityKey, Request, Stage, flow_laxity, priority_compare


def key(band, level, rank=0):
    return PriorityKey(band, level, (rank, 0.0, 0))


def test_band_beats_level():
    assert priority_compare(key(Band.URGENT_P2D, 1), key(Band.EARLY, 1)) == -1


def test_level_order_within_band():
    assert priority_compare(key(Band.EARLY, 2), key(Band.EARLY, 3)) == -1


def test_identical_keys_compare_equal():
    assert priority_compare(key(Band.EARLY, 2), key(Band.EARLY, 2)) == 0


def test_tiebreak_orders_but_is_not_urgency():
    a, b = key(Band.EARLY, 2, rank=0), key(Band.EARLY, 2, rank=1)
    assert a < b and a.urgency == b.urgency


@pytest.mark.parametrize("rem,dl,expect", [(0.0, 5.0, 5.0), (4.0, 6.0, 2.0)])
def test_laxity_examples(rem, dl, expect):
    f = Flow(0, 0, Stage.P2D, 0, 1, 4.0, remaining=rem, explicit_deadline=dl)
    assert flow_laxity(f, 0.0, 1.0) == expect


def test_collective_has_no_laxity():
    assert flow_laxity(Flow(0, 0, Stage.COLLECTIVE, 0, 1, 1.0), 0.0) is None


def test_deadline_iff_p2d():
    with pytest.raises(ValueError):
        Flow(0, 0, Stage.REUSE, 0, 1, 1.0, explicit_deadline=3.0)
    with pytest.raises(ValueError):
        Flow(0, 0, Stage.P2D, 0, 1, 1.0)


def test_remaining_bounds():
    with pytest.raises(ValueError):
        Flow(0, 0, Stage.REUSE, 0, 1, 1.0, remaining=2.0)


def test_promote_rejects_demotion_but_allows_scavenger():
    f = Flow(0, 0, Stage.REUSE, 0, 1, 1.0, priority=key(Band.EARLY, 2))
    with pytest.raises(ValueError):
        f.promote_to(key(Band.EARLY, 3))
    f.promote_to(key(Band.EARLY, 1))
    f.promote_to(key(Band.SCAVENGER, 0))
    assert f.priority.band == Band.SCAVENGER


def test_only_p2d_enters_urgent_band():
    f = Flow(0, 0, Stage.COLLECTIVE, 0, 1, 1.0)
    with pytest.raises(ValueError):
        f.promote_to(key(Band.URGENT_P2D, 1))


def test_request_validation():
    with pytest.raises(ValueError):
        Request(0, 1.0, 10, 2, deadline=0.5)
    with pytest.raises(ValueError):
        Request(0, 0.0, 10, 2, compute_costs=[1.0])
    with pytest.raises(ValueError):
        Request(0, 0.0, 10, 0)


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        Batch(0, [])
