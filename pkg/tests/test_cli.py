import csv
import socket

import pytest

from linkforge.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main, resolve_seed
from linkforge.trace import read_trace

SMALL = """
[scenario]
name = small
duration_s = 2
seed = 3

[medium]
capacity_mbps = 0:10 1:20
loss_pct = 0:0.5

[flow sat]
type = saturator
mode = {mode}

[flow udp]
type = cbr
rate_mbps = 2

[workload file]
type = bulk
bytes = 300000

[replay]
prop_delay_ms = 1
horizon_s = 2
"""


@pytest.fixture
def scenario(tmp_path):
    def make(mode="one-way"):
        p = tmp_path / f"small-{mode}.cfg"
        p.write_text(SMALL.format(mode=mode))
        return str(p)
    return make


def tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_simulate_is_deterministic(scenario, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", scenario(), "-o", str(a)]) == EXIT_OK
    assert main(["simulate", scenario(), "-o", str(b)]) == EXIT_OK
    ta, tb = tree(a), tree(b)
    assert ta == tb
    assert {str(p) for p in ta} >= {"logs/flow1_send.csv", "logs/flow1_recv.csv", "metrics/summary.csv",
                                    "metrics/series.csv", "metrics/drops.csv", "scenario.cfg"}


def test_seed_changes_output(scenario, tmp_path):
    main(["simulate", scenario(), "-o", str(tmp_path / "a"), "--seed", "1"])
    main(["simulate", scenario(), "-o", str(tmp_path / "b"), "--seed", "2"])
    assert tree(tmp_path / "a") != tree(tmp_path / "b")


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv("LINKFORGE_SEED", raising=False)
    assert resolve_seed(None, 7) == 7
    monkeypatch.setenv("LINKFORGE_SEED", "11")
    assert resolve_seed(None, 7) == 11
    assert resolve_seed(5, 7) == 5


def test_repeats_write_aggregate(scenario, tmp_path):
    out = tmp_path / "r"
    assert main(["simulate", scenario(), "-o", str(out), "--repeats", "2"]) == EXIT_OK
    assert (out / "seed_3").is_dir() and (out / "seed_4").is_dir()
    assert (out / "metrics" / "aggregate.csv").exists()


def test_record_one_way_writes_only_uplink(scenario, tmp_path):
    out = tmp_path / "rec"
    assert main(["record", scenario(), "-o", str(out)]) == EXIT_OK
    assert sorted(p.name for p in (out / "traces").iterdir()) == ["up.trace"]
    assert len(read_trace(out / "traces" / "up.trace")) > 0


def test_record_two_way_writes_both(scenario, tmp_path):
    out = tmp_path / "rec2"
    assert main(["record", scenario("two-way"), "-o", str(out)]) == EXIT_OK
    assert sorted(p.name for p in (out / "traces").iterdir()) == ["down.trace", "up.trace"]


def test_replay_and_injected_loss(scenario, tmp_path, capsys):
    rec = tmp_path / "rec"
    main(["record", scenario(), "-o", str(rec)])
    capsys.readouterr()
    out = tmp_path / "rep"
    assert main(["replay", scenario(), "--traces", str(rec / "traces"), "-o", str(out)]) == EXIT_OK
    assert "Network (s)  Traces (s)" in capsys.readouterr().out
    lossy = tmp_path / "lossy"
    assert main(["replay", scenario(), "--traces", str(rec / "traces"), "-o", str(lossy),
                 "--inject-loss", "0.99"]) == EXIT_OK
    with open(lossy / "metrics" / "replay.csv") as f:
        [row] = [r for r in csv.DictReader(f) if r["dir"] == "up"]
    delivered, injected = int(row["delivered"]), int(row["injected_losses"])
    assert injected / (delivered + injected) == pytest.approx(0.99, abs=0.01)


def test_analyze_recomputes_metrics(scenario, tmp_path):
    run = tmp_path / "run"
    main(["simulate", scenario(), "-o", str(run)])
    original = (run / "metrics" / "summary.csv").read_bytes()
    assert main(["analyze", str(run), "-o", str(tmp_path / "again")]) == EXIT_OK
    assert (tmp_path / "again" / "metrics" / "summary.csv").read_bytes() == original


def test_config_errors_exit_2(scenario, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[scenario]\nname = x\nduration_s = -1\n")
    assert main(["simulate", str(bad), "-o", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "duration" in capsys.readouterr().err
    assert main(["simulate", "no-such-scenario"]) == EXIT_CONFIG
    assert main(["replay", scenario(), "--trace-up", str(tmp_path / "missing.trace")]) == EXIT_CONFIG
    assert main(["analyze", str(tmp_path)]) == EXIT_CONFIG
    nosat = tmp_path / "nosat.cfg"
    nosat.write_text("[scenario]\nname = y\nduration_s = 1\n[medium]\ncapacity_mbps = 0:5\n"
                     "[flow u]\ntype = cbr\nrate_mbps = 1\n")
    assert main(["record", str(nosat), "-o", str(tmp_path / "o2")]) == EXIT_CONFIG


def test_unwritable_output_exits_3(scenario, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", scenario(), "-o", str(blocker / "sub")]) == EXIT_IO


def test_loopback_port_in_use_exits_3(scenario, tmp_path):
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.bind(("127.0.0.1", 0))
    try:
        port = s.getsockname()[1]
        code = main(["live-loopback", scenario(), "--duration", "0.1", "--port", str(port),
                     "-o", str(tmp_path / "lb")])
    finally:
        s.close()
    assert code == EXIT_IO


def test_loopback_short_run(scenario, tmp_path, capsys):
    out = tmp_path / "lb"
    assert main(["live-loopback", scenario(), "--duration", "0.3", "--rate-mbps", "20", "-o", str(out)]) == EXIT_OK
    line = capsys.readouterr().out
    sent = int(line.split("sent ")[1].split(",")[0])
    received = int(line.split("received ")[1].split(",")[0])
    assert 0 < received <= sent
    assert (out / "logs" / "flow1_send.csv").exists()


def test_scenario_list(capsys):
    assert main(["scenario", "list"]) == EXIT_OK
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert "fig2" in names and "table1" in names
