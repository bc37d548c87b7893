from linkforge.core import DATA_RECV, DATA_SENT, US_PER_MS, US_PER_S
from linkforge.loopback import LoopbackConfig, run_loopback


def counts(res):
    sent = {r.seq for r in res.logs.send_log if r.event == DATA_SENT}
    got = {r.seq for r in res.logs.recv_log if r.event == DATA_RECV}
    return sent, got


def test_paced_run_delivers_what_it_sends():
    res = run_loopback(LoopbackConfig(duration=US_PER_S // 4, rate_bps=10_000_000))
    sent, got = counts(res)
    assert sent and got <= sent
    # Localhost at 10 Mbps should lose next to nothing.
    assert len(got) >= 0.95 * len(sent)
    assert res.acks_sent == len(res.logs.recv_log) // 2


def test_blocked_feedback_triggers_watchdog():
    res = run_loopback(LoopbackConfig(duration=US_PER_S // 2, block_feedback=True,
                                      watchdog_timeout=100 * US_PER_MS))
    assert res.acks_sent == 0
    assert res.watchdog_resets >= 2
