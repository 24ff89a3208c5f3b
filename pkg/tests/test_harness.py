import json

import pytest

from hybridcc.detection import ConfigError, run_session
from hybridcc.harness import ScenarioConfig, generate_traffic, parse_scenario_text, simulate
from hybridcc.harness.cli import main
from hybridcc.labels import BENIGN, COVERT, read_labels
from hybridcc.packet_model import TcpFlags, capture_bytes, flow_key, read_capture
from hybridcc.subliminal_dsa import warden_key_for


def test_ratio_zero_all_benign():
    _, labels = generate_traffic(ScenarioConfig(seed=1, n_flows=10, packets_per_flow=8))
    assert [fl.label for fl in labels.flows] == [BENIGN] * 10
    assert labels.carriers == []


def test_ratio_floor_selection():
    cfg = ScenarioConfig(seed=7, n_flows=10, packets_per_flow=8, covert_flow_ratio=0.2)
    _, labels = generate_traffic(cfg)
    assert sum(fl.label == COVERT for fl in labels.flows) == 2
    assert ScenarioConfig(n_flows=10, covert_flow_ratio=0.29).n_covert == 2
    assert ScenarioConfig(n_flows=10, covert_flow_ratio=0.3).n_covert == 3


def test_same_config_bit_identical():
    cfg = ScenarioConfig(seed=5, n_flows=6, packets_per_flow=20, covert_flow_ratio=0.5,
                         covert_kinds=("TCP_SEQ", "HYBRID", "SUBLIMINAL_DSA"))
    a, la = generate_traffic(cfg)
    b, lb = generate_traffic(cfg)
    assert capture_bytes(a) == capture_bytes(b) and la.dumps() == lb.dumps()
    c, _ = generate_traffic(ScenarioConfig(seed=6, n_flows=6, packets_per_flow=20))
    assert capture_bytes(c) != capture_bytes(a)


def test_benign_traffic_properties():
    cap, _ = generate_traffic(ScenarioConfig(seed=3, n_flows=20, packets_per_flow=10))
    for rec in cap.records:
        tcp = rec.parse.tcp
        assert tcp.reserved == 0 and tcp.options == b""
        assert rec.parse.ip_checksum_ok and rec.parse.tcp_checksum_ok
        if TcpFlags.SYN in tcp.flags:
            assert tcp.seq_number & 0xFFFFFF
    stamps = [r.time for r in cap.records]
    gaps = {round(b - a, 9) for a, b in zip(stamps, stamps[1:])}
    assert gaps == {0.001}


def test_label_consistency():
    cfg = ScenarioConfig(seed=9, n_flows=12, packets_per_flow=40, covert_flow_ratio=0.5, learning_flows=2,
                         covert_kinds=("TCP_SEQ", "TCP_RESERVED", "TCP_PADDING", "SUBLIMINAL_DSA", "HYBRID",
                                       "PROTOCOL_ANOMALY"))
    cap, labels = generate_traffic(cfg)
    by_key = labels.flow_for_key()
    for idx in labels.carriers + labels.silent_carriers:
        fl = by_key[str(flow_key(cap.records[idx].parse))]
        assert fl.label == COVERT and not fl.learning
    assert labels.learning_packets == 80
    assert all(by_key[str(flow_key(r.parse))].learning for r in cap.records[:80])
    assert {fl.kind for fl in labels.flows if fl.label == COVERT} == {
        "TCP_SEQ", "TCP_RESERVED", "TCP_PADDING", "SUBLIMINAL_DSA", "HYBRID", "PROTOCOL_ANOMALY"}


def test_scenario_parsing():
    cfg = parse_scenario_text("seed=3\nn_flows = 4\ncovert_flow_ratio=0.5\ncovert_kinds=tcp_seq, hybrid\n"
                              "message = hello\nmessage = hex:414243\nhybrid_fields = SEQ,PADDING\n")
    assert cfg.seed == 3 and cfg.covert_kinds == ("TCP_SEQ", "HYBRID") and cfg.corpus == (b"hello", b"ABC")
    for bad in ["covert_flow_ratio = 1.5", "nope = 1", "covert_kinds = WHAT", "n_flows = x", "seed"]:
        with pytest.raises(ConfigError):
            parse_scenario_text(bad)


def test_benign_session_has_no_subliminal_findings():
    sim = simulate(ScenarioConfig(seed=21, n_flows=10, packets_per_flow=60))
    r = run_session(sim.capture, warden_key=warden_key_for(sim.signing_key), labels=sim.labels)
    assert "SUBLIMINAL_NONCES" not in r.findings_per_rule
    assert r.metrics["flow"]["false_positive_rate"] is not None
    assert r.metrics["packet"]["covert_units"] == 0


def test_mixed_session_metrics():
    sim = simulate(ScenarioConfig(seed=4, n_flows=10, packets_per_flow=260, covert_flow_ratio=0.2,
                                  covert_kinds=("TCP_SEQ", "SUBLIMINAL_DSA")))
    r = run_session(sim.capture, warden_key=warden_key_for(sim.signing_key), labels=sim.labels)
    flow = r.metrics["flow"]
    assert flow["tp"] + flow["fn"] == 2 and flow["tp"] == 2
    assert flow["fp"] + flow["tn"] == 8


def write_scenario(tmp_path, text):
    path = tmp_path / "scenario.cfg"
    path.write_text(text)
    return path


def run_cli(tmp_path, scenario_text, warden=True, tag="x"):
    scen = write_scenario(tmp_path, scenario_text)
    pcap, labels, key = tmp_path / f"{tag}.pcap", tmp_path / f"{tag}.json", tmp_path / f"{tag}.key"
    argv = ["craft", "--scenario", str(scen), "--out", str(pcap), "--labels", str(labels)]
    assert main(argv + (["--warden-key", str(key)] if warden else [])) == 0
    out = {k: tmp_path / f"{tag}.{k}" for k in ("report", "log", "plot")}
    argv = ["detect", "--in", str(pcap), "--labels", str(labels), "--report", str(out["report"]),
            "--log", str(out["log"]), "--plot", str(out["plot"])]
    if warden:
        argv += ["--warden-key", str(key)]
    return main(argv), out


def test_cli_benign_exit_zero(tmp_path):
    code, out = run_cli(tmp_path, "seed = 11\nn_flows = 8\npackets_per_flow = 30\n")
    assert code == 0
    report = json.loads(out["report"].read_text())
    assert report["alarms"] == [] and report["totals"]["alarms"] == 0


def test_cli_hybrid_exit_two(tmp_path, capsys):
    code, out = run_cli(tmp_path, "seed = 7\nn_flows = 5\npackets_per_flow = 300\ncovert_flow_ratio = 0.2\n"
                                  "covert_kinds = HYBRID\nhybrid_fields = SEQ,RESERVED\n")
    assert code == 2
    rules = json.loads(out["report"].read_text())["findings_per_rule"]
    assert "ISN_LOW24_ZERO" in rules and "RESERVED_NONZERO" in rules and "SUBLIMINAL_NONCES" in rules
    assert main(["report", "--report", str(out["report"])]) == 0
    assert "SUBLIMINAL_NONCES" in capsys.readouterr().out


def test_cli_missing_input(tmp_path, capsys):
    code = main(["detect", "--in", str(tmp_path / "missing.pcap"), "--report", str(tmp_path / "r"),
                 "--log", str(tmp_path / "l"), "--plot", str(tmp_path / "p")])
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error:")


def test_cli_bad_configs(tmp_path):
    bad = write_scenario(tmp_path, "covert_flow_ratio = 3\n")
    assert main(["craft", "--scenario", str(bad), "--out", str(tmp_path / "o"), "--labels", str(tmp_path / "l")]) == 1
    assert main(["report", "--report", str(tmp_path / "none.json")]) == 1


def test_cli_outputs_reproducible(tmp_path):
    text = "seed = 3\nn_flows = 6\npackets_per_flow = 120\ncovert_flow_ratio = 0.5\ncovert_kinds = TCP_PADDING,SUBLIMINAL_DSA\n"
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    code_a, a = run_cli(tmp_path / "a", text)
    code_b, b = run_cli(tmp_path / "b", text)
    assert code_a == code_b
    for k in ("report", "log", "plot"):
        assert a[k].read_bytes() == b[k].read_bytes()
    assert (tmp_path / "a" / "x.pcap").read_bytes() == (tmp_path / "b" / "x.pcap").read_bytes()
    labels = read_labels(tmp_path / "a" / "x.json")
    expected, _ = generate_traffic(parse_scenario_text(text))
    assert len(read_capture(tmp_path / "a" / "x.pcap").records) == len(expected.records)
    assert labels.seed == 3


@pytest.mark.parametrize("responses", [False, True])
def test_covert_syn_detection_with_or_without_responses(responses):
    cfg = ScenarioConfig(seed=12, n_flows=6, packets_per_flow=240, covert_flow_ratio=0.5,
                         covert_kinds=("TCP_SEQ", "TCP_RESERVED", "TCP_PADDING"), syn_responses=responses)
    sim = simulate(cfg)
    covert = [fl for fl in sim.labels.flows if fl.is_covert]
    assert all(len(fl.keys) == (2 if responses else 1) for fl in covert)
    synacks = [r for r in sim.capture.records if r.parse.tcp.flags == TcpFlags.SYN | TcpFlags.ACK]
    assert len(synacks) == (sum(TcpFlags.SYN == r.parse.tcp.flags for r in sim.capture.records) - 3 if responses else 0)
    for rec in synacks:
        assert rec.parse.tcp.seq_number & 0xFFFFFF and rec.parse.tcp.reserved == 0
    r = run_session(sim.capture, labels=sim.labels)
    assert r.metrics["flow"]["tp"] == 3 and r.metrics["packet"]["fn"] == 0
    assert parse_scenario_text("syn_responses = true").syn_responses
    with pytest.raises(ConfigError):
        parse_scenario_text("syn_responses = maybe")
