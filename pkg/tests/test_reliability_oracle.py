"""Reliable-delivery checks against the scripted lossy channel.

The channel records exactly which PSNs it dropped; that record is the
oracle: reliable transports must deliver the full byte stream, and the
selective-repeat designs must retransmit exactly the dropped set.
"""

import pytest

from lossy_channel import LossyPair, random_message
from rdmasim.transport import TransportKind

RELIABLE = [TransportKind.ROCE_GBN, TransportKind.IRN, TransportKind.SRNIC]


@pytest.mark.parametrize("kind", RELIABLE)
@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_full_delivery_under_random_drops(kind, seed):
    msg = random_message(seed, npackets=120)
    pair = LossyPair(kind, msg, drop_rate=0.05, seed=seed)
    pair.run()
    assert bytes(pair.recv_buffer) == msg
    assert pair.log.dropped_psns  # the pattern actually dropped something


@pytest.mark.parametrize("kind", [TransportKind.IRN, TransportKind.SRNIC])
@pytest.mark.parametrize("seed", [10, 11, 12, 13, 14])
def test_selective_repeat_retransmits_exactly_dropped(kind, seed):
    msg = random_message(seed, npackets=200)
    pair = LossyPair(kind, msg, drop_rate=0.04, seed=seed)
    pair.run()
    assert bytes(pair.recv_buffer) == msg
    assert pair.sender.stats.retransmitted_psns == pair.log.dropped_psns


@pytest.mark.parametrize("seed", [21, 22])
def test_gbn_delivers_in_order(seed):
    msg = random_message(seed, npackets=150)
    pair = LossyPair(TransportKind.ROCE_GBN, msg, drop_rate=0.05, seed=seed)
    pair.run()
    assert bytes(pair.recv_buffer) == msg
    offsets = pair.log.placed_offsets
    assert offsets == sorted(offsets)
    assert len(offsets) == len(set(offsets))
    # go-back-N rewinds cover at least every dropped PSN
    assert pair.log.dropped_psns <= pair.sender.stats.retransmitted_psns


def test_lossless_channel_never_retransmits():
    for kind in RELIABLE:
        msg = random_message(33, npackets=100)
        pair = LossyPair(kind, msg, drop_rate=0.0, seed=33)
        pair.run()
        assert bytes(pair.recv_buffer) == msg
        assert pair.sender.stats.retransmit_count == 0


def test_celeris_best_effort_drops_stay_dropped():
    msg = random_message(44, npackets=100)
    pair = LossyPair(TransportKind.CELERIS, msg, drop_rate=0.05, seed=44)
    pair.run(deadline_ns=50_000_000)
    # every delivered packet placed; dropped payload missing for good
    assert pair.log.drop_events > 0
    assert pair.receiver.stats.data_received == pair.log.delivered_data
    assert bytes(pair.recv_buffer) != msg


def test_tail_loss_recovered_by_timeout():
    # Drop only the very last packet: no later arrivals trigger fast paths,
    # so the retransmission timer must recover it.
    for kind in RELIABLE:
        msg = random_message(55, npackets=40)
        pair = LossyPair(kind, msg, drop_rate=0.0, seed=55)
        last_psn = 39
        dropped_once = {"done": False}
        inner = pair._egress

        def egress(pkt, control):
            from rdmasim.fabric import PacketKind
            if (pkt.kind is PacketKind.DATA and pkt.psn == last_psn
                    and not dropped_once["done"]):
                dropped_once["done"] = True
                pair.log.dropped_psns.add(pkt.psn)
                return
            inner(pkt, control)

        pair.sender.egress = egress
        pair.run()
        assert bytes(pair.recv_buffer) == msg
        assert last_psn in pair.sender.stats.retransmitted_psns
