import os
import subprocess
import sys

import pytest

from edgeburst.cli import main


@pytest.fixture()
def burst_spec_file(tmp_path):
    p = tmp_path / "spec.txt"
    p.write_text(
        "num_nodes=60\nnum_ticks=40\nbase_rate=120\nseed=9\n"
        "burst=tick=20,src=1,targets=20,weight=4\n"
    )
    return p


@pytest.fixture()
def edge_files(tmp_path, burst_spec_file):
    edges = tmp_path / "edges.csv"
    labels = tmp_path / "labels.txt"
    rc = main(["synth", "--spec", str(burst_spec_file),
               "--out-edges", str(edges), "--out-labels", str(labels)])
    assert rc == 0
    return edges, labels


class TestScore:
    def test_score_writes_csv(self, tmp_path, edge_files, capsys):
        edges, _ = edge_files
        out = tmp_path / "scores.csv"
        rc = main(["score", "--input", str(edges), "--variant", "cms", "--rows", "2",
                   "--buckets", "719", "--partitions", "8", "--workers", "2",
                   "--relational", "--alpha", "0.6", "--output", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "seq,src,dst,tick,score,edge_score,src_score,dst_score"
        assert len(lines) == sum(1 for _ in edges.open()) + 1

    def test_empty_input_gives_header_only(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        out = tmp_path / "scores.csv"
        rc = main(["score", "--input", str(empty), "--output", str(out)])
        assert rc == 0
        assert out.read_text().splitlines() == [
            "seq,src,dst,tick,score,edge_score,src_score,dst_score"
        ]

    def test_same_command_twice_byte_identical(self, tmp_path, edge_files):
        edges, _ = edge_files
        out1, out2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
        args = ["score", "--input", str(edges), "--partitions", "6"]
        assert main(args + ["--output", str(out1)]) == 0
        assert main(args + ["--output", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_worker_count_does_not_change_file(self, tmp_path, edge_files):
        edges, _ = edge_files
        out1, out2 = tmp_path / "w1.csv", tmp_path / "w4.csv"
        assert main(["score", "--input", str(edges), "--workers", "1",
                     "--output", str(out1)]) == 0
        assert main(["score", "--input", str(edges), "--workers", "4",
                     "--output", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_timing_and_node_map_outputs(self, tmp_path, edge_files):
        edges, _ = edge_files
        out = tmp_path / "s.csv"
        timing = tmp_path / "t.csv"
        nodes = tmp_path / "n.csv"
        rc = main(["score", "--input", str(edges), "--output", str(out),
                   "--timing-output", str(timing), "--node-map", str(nodes)])
        assert rc == 0
        assert timing.read_text().splitlines()[0] == "phase,partition,worker,millis"
        assert nodes.read_text().splitlines()[0] == "node_id,token"


class TestExitCodes:
    def test_bad_flag_exits_1(self, tmp_path):
        assert main(["score", "--input", "x.csv"]) == 1  # missing --output
        assert main(["score", "--variant", "bogus", "--input", "x", "--output", "y"]) == 1
        assert main(["bogus-command"]) == 1

    def test_bad_flag_value_exits_1_before_io(self, tmp_path):
        out = tmp_path / "never.csv"
        rc = main(["score", "--input", str(tmp_path / "missing.csv"),
                   "--output", str(out), "--alpha", "7.0"])
        assert rc == 1
        assert not out.exists()

    def test_missing_input_exits_2(self, tmp_path):
        rc = main(["score", "--input", str(tmp_path / "missing.csv"),
                   "--output", str(tmp_path / "out.csv")])
        assert rc == 2

    def test_malformed_input_exits_1(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("1,2,zebra\n")
        rc = main(["score", "--input", str(bad), "--output", str(tmp_path / "o.csv")])
        assert rc == 1

    def test_missing_label_file_exits(self, tmp_path, edge_files):
        edges, _ = edge_files
        rc = main(["eval", "--input", str(edges), "--labels", str(tmp_path / "no.txt")])
        assert rc == 2

    def test_help_exits_0(self, capsys):
        assert main(["--help"]) == 0
        capsys.readouterr()
        assert main(["score", "--help"]) == 0
        out = capsys.readouterr().out
        assert "0.75" in out  # load-factor default documented
        assert "constant" in out  # decay-mode default documented


class TestEval:
    def test_eval_reports_auc(self, tmp_path, edge_files, capsys):
        edges, labels = edge_files
        rc = main(["eval", "--input", str(edges), "--labels", str(labels),
                   "--repeats", "3", "--report-jsonl", str(tmp_path / "r.jsonl"),
                   "--report-csv", str(tmp_path / "r.csv")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "auc=" in out
        assert (tmp_path / "r.jsonl").exists()
        assert len((tmp_path / "r.csv").read_text().splitlines()) == 4

    def test_eval_auc_is_high_on_burst_stream(self, edge_files, capsys):
        edges, labels = edge_files
        rc = main(["eval", "--input", str(edges), "--labels", str(labels)])
        assert rc == 0
        auc = float(capsys.readouterr().out.split("auc=")[1].split()[0])
        assert auc >= 0.95

    def test_expected_auc_deviation_warns(self, edge_files, capsys):
        edges, labels = edge_files
        rc = main(["eval", "--input", str(edges), "--labels", str(labels),
                   "--expected-auc", "0.5"])
        assert rc == 0  # warning, not failure
        assert "deviates" in capsys.readouterr().err

    def test_label_mismatch_exits_1(self, tmp_path, edge_files):
        edges, _ = edge_files
        short = tmp_path / "short.txt"
        short.write_text("0\n1\n")
        rc = main(["eval", "--input", str(edges), "--labels", str(short)])
        assert rc == 1


class TestSynth:
    def test_no_burst_spec_all_zero_labels(self, tmp_path):
        spec = tmp_path / "spec.txt"
        spec.write_text("num_nodes=10\nnum_ticks=5\nbase_rate=20\nseed=1\n")
        edges, labels = tmp_path / "e.csv", tmp_path / "l.txt"
        rc = main(["synth", "--spec", str(spec), "--out-edges", str(edges),
                   "--out-labels", str(labels)])
        assert rc == 0
        assert set(labels.read_text().split()) == {"0"}

    def test_fixed_seed_twice_identical_files(self, tmp_path, burst_spec_file):
        outs = []
        for i in (1, 2):
            e, l = tmp_path / f"e{i}.csv", tmp_path / f"l{i}.txt"
            assert main(["synth", "--spec", str(burst_spec_file),
                         "--out-edges", str(e), "--out-labels", str(l)]) == 0
            outs.append((e.read_bytes(), l.read_bytes()))
        assert outs[0] == outs[1]

    def test_single_pair_burst_at_tick_ten(self, tmp_path):
        spec = tmp_path / "spec.txt"
        spec.write_text("num_nodes=2\nnum_ticks=12\nbase_rate=3\nseed=2\n"
                        "burst=tick=10,src=0,targets=1,weight=30\n")
        edges, labels = tmp_path / "e.csv", tmp_path / "l.txt"
        assert main(["synth", "--spec", str(spec), "--out-edges", str(edges),
                     "--out-labels", str(labels)]) == 0
        lab = [int(x) for x in labels.read_text().split()]
        rows = [line.split(",") for line in edges.read_text().splitlines()]
        burst_ts = {int(r[2]) for r, y in zip(rows, lab) if y == 1}
        assert burst_ts == {10}
        assert sum(lab) == 30


class TestBench:
    def test_bench_grid(self, tmp_path, edge_files):
        edges, _ = edge_files
        out = tmp_path / "bench.csv"
        rc = main(["bench", "--input", str(edges), "--lengths", "1024,2048",
                   "--workers-list", "1,2", "--partitions-list", "4",
                   "--output", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("length,partitions,workers,repeat")
        assert len(lines) == 1 + 2 * 2 * 1
        # identical score hashes across worker counts at fixed length
        by_len = {}
        for line in lines[1:]:
            parts = line.split(",")
            by_len.setdefault(parts[0], set()).add(parts[-1])
        for hashes in by_len.values():
            assert len(hashes) == 1

    def test_bad_lengths_exit_1(self, edge_files, tmp_path):
        edges, _ = edge_files
        rc = main(["bench", "--input", str(edges), "--lengths", "0,-5",
                   "--output", str(tmp_path / "b.csv")])
        assert rc == 1


def test_console_script_installed():
    proc = subprocess.run([sys.executable, "-m", "edgeburst.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "edgeburst" in proc.stdout


def test_workers_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("MDISTRIB_WORKERS", "3")
    from edgeburst.cli import build_parser
    args = build_parser().parse_args(["score", "--input", "a", "--output", "b"])
    assert args.workers == 3
