import io
import json
import threading

import pytest
from scipy import stats

from honeyvault.authn import calibrate_threshold, sample_shell
from honeyvault.errors import FormatError
from honeyvault.facespace import decode
from honeyvault.honeycheck import (
    CheckResult,
    CheckerUnavailable,
    FailMode,
    FrontServer,
    Honeychecker,
    HoneycheckerDb,
    LocalChannel,
    Outcome,
    check,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
    load_checker_db,
    save_checker_db,
    simulate_logins,
)
from honeyvault.streams import substream
from honeyvault.synth import REFERENCE_MIN_DIST
from honeyvault.vault import inflate


@pytest.fixture(scope="module")
def deployment(small_vault, space):
    vault, entries = small_vault
    big = inflate(vault, space, 1000, REFERENCE_MIN_DIST, 4)
    real = {u for u, _, _ in entries}
    honey = [u for u in big.usernames if u not in real]
    return big, entries, real, honey


def make_front(deployment, space, **kw):
    big, _, real, _ = deployment
    checker = Honeychecker(HoneycheckerDb(real))
    return FrontServer(big, space, LocalChannel(checker), **kw)


# -- wire format -----------------------------------------------------------


def test_request_layout():
    assert encode_request("bob") == b"HFC1\x01\x03\x00bob"
    assert decode_request(encode_request("zoë")) == "zoë"


@pytest.mark.parametrize(
    "raw",
    [b"HFC1\x01\x03\x00bo", b"HFC2\x01\x03\x00bob", b"HFC1\x02\x03\x00bob", b"HFC1", b"HFC1\x01\x02\x00\xff\xfe"],
    ids=["short", "magic", "opcode", "header", "utf8"],
)
def test_malformed_requests_rejected(raw):
    with pytest.raises(FormatError):
        decode_request(raw)


def test_response_codes():
    assert [encode_response(r) for r in CheckResult] == [b"\x00", b"\x01", b"\xff"]
    for r in CheckResult:
        assert decode_response(encode_response(r)) is r
    with pytest.raises(FormatError):
        decode_response(b"\x07")
    with pytest.raises(FormatError):
        decode_response(b"")


def test_checker_answers_error_to_garbage():
    assert Honeychecker(HoneycheckerDb([])).handle(b"junk") == b"\xff"


def test_requests_carry_no_real_honey_marker(deployment):
    _, _, real, honey = deployment
    r, h = sorted(real)[0], honey[0]
    assert encode_request(r)[:5] == encode_request(h)[:5]
    assert len(encode_request(r)) - len(r.encode()) == len(encode_request(h)) - len(h.encode())


# -- checker ---------------------------------------------------------------


def test_check_real_and_honey(deployment):
    _, _, real, honey = deployment
    db = HoneycheckerDb(real)
    assert check(db, sorted(real)[0]) is CheckResult.REAL
    assert check(db, honey[0]) is CheckResult.HONEY
    assert check(db, "never-enrolled") is CheckResult.HONEY


def test_exhaustive_sweep_counts_real_users(deployment):
    big, _, real, _ = deployment
    db = HoneycheckerDb(real)
    results = [db.check(u) for u in big.usernames]
    assert len(big) == 1000
    assert sum(r is CheckResult.REAL for r in results) == len(real) == 50


def test_checker_db_file_round_trip(deployment, tmp_path):
    _, _, real, honey = deployment
    save_checker_db(real, tmp_path / "db.txt")
    db = load_checker_db(tmp_path / "db.txt")
    assert len(db) == len(real)
    assert all(db.check(u) is CheckResult.REAL for u in real)
    assert db.check(honey[1]) is CheckResult.HONEY


def test_db_keeps_no_plain_usernames(deployment):
    _, _, real, _ = deployment
    db = HoneycheckerDb(real)
    assert not any(isinstance(v, (set, frozenset)) and real & set(v) for v in vars(db).values())


# -- front server ----------------------------------------------------------


def test_genuine_login_accepted_without_alarm(deployment, space):
    front = make_front(deployment, space)
    u, x, g = deployment[1][0]
    res = front.handle_login(u, x, g)
    assert res.outcome is Outcome.ACCEPTED_REAL
    assert front.drain_alarms() == []


def test_honey_replay_raises_exactly_one_alarm(deployment, space):
    big, _, _, honey = deployment
    sink = io.StringIO()
    front = make_front(deployment, space, alarm_sink=sink, clock=lambda: 123.5)
    res = front.handle_login(honey[7], *decode(big.get_template(honey[7]), space))
    assert res.outcome is Outcome.ACCEPTED_HONEY
    alarms = front.drain_alarms()
    assert [a.username for a in alarms] == [honey[7]]
    record = json.loads(sink.getvalue())
    assert record == {"username": honey[7], "timestamp": 123.5, "source": "front", "outcome": "accepted_honey"}


def test_rejected_login_never_consults_checker(deployment, space):
    big, entries, _, honey = deployment
    front = make_front(deployment, space)
    _, x, g = entries[1]
    res = front.handle_login(honey[0], x, g)
    assert res.outcome is Outcome.REJECTED
    assert front.channel.checker.requests == 0
    assert front.drain_alarms() == []


def test_unknown_user_is_rejected(deployment, space):
    front = make_front(deployment, space)
    _, x, g = deployment[1][0]
    res = front.handle_login("ghost", x, g)
    assert res.outcome is Outcome.REJECTED and res.decision is None


def test_partition_rejects_by_default_and_classifies_later(deployment, space):
    big, entries, _, honey = deployment
    front = make_front(deployment, space)
    assert front.fail_mode is FailMode.REJECT
    front.channel.up = False
    u, x, g = entries[0]
    assert front.handle_login(u, x, g).outcome is Outcome.REJECTED
    assert front.handle_login(honey[3], *decode(big.get_template(honey[3]), space)).outcome is Outcome.REJECTED
    assert front.backlog == [u, honey[3]]
    assert front.drain_backlog() == []
    assert front.backlog == [u, honey[3]]
    front.channel.up = True
    assert front.drain_backlog() == [(u, Outcome.ACCEPTED_REAL), (honey[3], Outcome.ACCEPTED_HONEY)]
    assert [a.username for a in front.drain_alarms()] == [honey[3]]
    assert front.backlog == []


def test_backlog_mode_lets_login_through_as_pending(deployment, space):
    front = make_front(deployment, space, fail_mode=FailMode.BACKLOG)
    front.channel.up = False
    u, x, g = deployment[1][2]
    assert front.handle_login(u, x, g).outcome is Outcome.ACCEPTED_PENDING
    with pytest.raises(CheckerUnavailable):
        front.channel.query(u)


def test_concurrent_logins_alarm_once_each(deployment, space):
    big, _, _, honey = deployment
    front = make_front(deployment, space)
    targets = honey[:40]
    probes = {u: decode(big.get_template(u), space) for u in targets}

    def worker(names):
        for u in names:
            front.handle_login(u, *probes[u])

    threads = [threading.Thread(target=worker, args=(targets[i::4],)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(a.username for a in front.drain_alarms()) == sorted(targets)
    assert front.channel.checker.requests == 40


def test_random_probes_accept_at_binomial_rate(deployment, space):
    big, _, real, _ = deployment
    far = 1e-4
    threshold = calibrate_threshold(space, far, 200_000, 3).threshold
    front = make_front(deployment, space, threshold=threshold)
    rng = substream(9, "random-probes")
    accepted = honey_accepts = 0
    n = 10_000
    for t in sample_shell(space, n, rng):
        u = big.usernames[rng.integers(len(big))]
        res = front.handle_login(u, *decode(t, space))
        if res.decision.accepted:
            accepted += 1
            honey_accepts += u not in real
    # binomial oracle: about one acceptance is expected; more than the 1e-6 upper quantile is a failure
    assert accepted <= stats.binom.isf(1e-6, n, far)
    assert len(front.drain_alarms()) == honey_accepts


def test_simulation_scores_alarms(deployment, space):
    big, entries, real, honey = deployment
    rng = substream(2, "sim")
    attempts = [entries[i % 50] for i in range(30)]
    attempts += [(u, *decode(big.get_template(u), space)) for u in honey[:30]]
    attempts += [(big.usernames[rng.integers(len(big))], *decode(sample_shell(space, 1, rng)[0], space)) for _ in range(30)]
    rep = simulate_logins(make_front(deployment, space), attempts, real)
    assert rep.attempts == 90
    assert rep.outcomes["accepted_real"] == 30
    assert rep.outcomes["accepted_honey"] == 30 == rep.honey_accepts == rep.alarms
    assert rep.false_alarms == 0 and rep.missed_alarms == 0
