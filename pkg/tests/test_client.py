import os
import struct

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from pirates.client import mix, mix_tagged, synthetic_voice
from pirates.config import EpochSchedule
from pirates.crypto import HeParams
from pirates.dialing import GroupDescriptor
from pirates.local import LocalDeployment
from pirates.wire import MessageType

SMALL = HeParams(n=64)


def pcm(*samples):
    return np.array(samples, dtype="<i2").tobytes()


def test_mix_identity_zero_and_saturation():
    x = pcm(1, -2, 300)
    assert mix([x]) == x
    assert mix([bytes(6), bytes(6)]) == bytes(6)
    assert mix([pcm(30000), pcm(30000)]) == pcm(32767)
    assert mix([pcm(-30000), pcm(-30000)]) == pcm(-32768)
    assert mix([]) == b""


@given(st.lists(st.lists(st.integers(-(2**15), 2**15 - 1), min_size=4, max_size=4), min_size=1, max_size=5))
def test_mix_is_saturating_sum(snips):
    out = np.frombuffer(mix([pcm(*s) for s in snips]), "<i2")
    expect = np.clip(np.sum(snips, axis=0), -(2**15), 2**15 - 1)
    assert out.tolist() == expect.tolist()


def test_mix_tagged_orders_by_sender():
    out = mix_tagged({7: b"bb", 2: b"a"})
    assert out == struct.pack(">IH", 2, 1) + b"a" + struct.pack(">IH", 7, 2) + b"bb"


def test_synthetic_voice_is_tagged():
    assert synthetic_voice(1, 2, 3, 48) != synthetic_voice(1, 2, 4, 48)
    assert len(synthetic_voice(1, 2, 3, 48)) == 48


def deployment(n_clients=4, group=(0, 1, 2), rounds=3, **kw):
    dep = LocalDeployment(group_size=3, schedule=EpochSchedule(rounds=rounds), he_params=SMALL, seed=1, **kw)
    pks = [os.urandom(32) for _ in range(n_clients)]
    g = GroupDescriptor("g", os.urandom(32), tuple(pks[i] for i in group), 0)
    clients = [dep.add_client(pk, [g]) for pk in pks]
    return dep, pks, clients


def client_bytes(dep, name):
    return sorted((e.msg_type, e.size) for e in dep.transcript.events if e.node == name and e.direction == "out")


def test_idle_client_cover_discipline():
    dep, pks, clients = deployment()
    res = dep.run_epoch()
    for c in clients:
        assert not c.decision.in_call and not c.selection.all_random
        assert all(o.snippets == {} for o in res.outputs[c.mailbox_id])
    sent = [e for e in dep.transcript.events if e.node == "client:4" and e.direction == "out"]
    counts = {t: sum(e.msg_type == t for e in sent) for t in (MessageType.INVITE_SUBMIT, MessageType.QUERY_SUBMIT, MessageType.SNIPPET_SUBMIT)}
    assert counts == {MessageType.INVITE_SUBMIT: 1, MessageType.QUERY_SUBMIT: 1, MessageType.SNIPPET_SUBMIT: 3}


def test_three_member_call_and_dialer_bytes_equal_idle():
    dep, pks, clients = deployment()
    res = dep.run_epoch({pks[0]: "g"})
    for c in clients[:3]:
        for r, out in enumerate(res.outputs[c.mailbox_id], start=1):
            partners = {m for m in (1, 2, 3) if m != c.mailbox_id}
            assert set(out.snippets) == partners
            for m in partners:
                assert out.snippets[m] == synthetic_voice(m, 1, r, dep.coordinator.schedule.capacity - 2)
    assert res.outputs[4][0].snippets == {}
    assert client_bytes(dep, "client:1") == client_bytes(dep, "client:4")


def test_hangup_keeps_shape():
    dep, pks, clients = deployment(rounds=4)
    res = dep.run_epoch({pks[0]: "g"}, hangups={pks[1]: 3})
    out2 = res.outputs[2]
    assert out2[1].snippets and not out2[2].snippets and not out2[3].snippets
    assert 2 not in res.outputs[1][2].snippets and 3 in res.outputs[1][2].snippets
    assert client_bytes(dep, "client:2") == client_bytes(dep, "client:4")


def test_one_call_discipline_prefers_own_dial():
    dep = LocalDeployment(group_size=3, schedule=EpochSchedule(rounds=2), he_params=SMALL, seed=2)
    pks = [os.urandom(32) for _ in range(4)]
    g1 = GroupDescriptor("g1", os.urandom(32), (pks[0], pks[1]), 0)
    g2 = GroupDescriptor("g2", os.urandom(32), (pks[1], pks[2], pks[3]), 0)
    for pk in pks:
        dep.add_client(pk, [g1, g2])
    res = dep.run_epoch({pks[0]: "g1", pks[2]: "g2"})
    assert res.in_call[1] == "g1" and res.in_call[3] == "g2"
    assert res.in_call[2] in ("g1", "g2")  # exactly one accepted
    c2 = dep.clients[2]
    real_targets = [t for t in c2.selection.targets if t is not None]
    members = {"g1": {1}, "g2": {3, 4}}[res.in_call[2]]
    assert set(real_targets) == members


def test_offline_client_substituted():
    dep, pks, clients = deployment()
    res = dep.run_epoch({pks[0]: "g"}, silent={pks[2]})
    assert set(res.outputs[1][0].snippets) == {2}
    assert res.rejected == []
