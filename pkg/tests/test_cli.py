"""Command-line surface tests: exit codes and each subcommand."""

import json

from neolaf.cli import main
from neolaf.cognition import default_kit, system1_request
from neolaf.provider import (
    Message,
    ProviderRequest,
    Role,
    TranscriptEntry,
    fingerprint,
    save_script,
    save_transcript,
)


QUERY = "What is 2+2?"


def _script_path(tmp_path, answer="4", confidence="0.9"):
    kit = default_kit()
    script = {
        fingerprint(system1_request(kit, QUERY, "")): (
            f"ANSWER: {answer}\nEXPLANATION: known\nCONFIDENCE: {confidence}"
        )
    }
    path = tmp_path / "script.json"
    save_script(script, path)
    return path


def _dataset_path(tmp_path):
    root = tmp_path / "dataset" / "arithmetic"
    root.mkdir(parents=True, exist_ok=True)
    (root / "1.json").write_text(
        json.dumps({"problem": QUERY, "level": "Level 1",
                    "solution": "Sum: $\\boxed{4}$"}),
        encoding="utf-8",
    )
    return tmp_path / "dataset"


def test_usage_errors_exit_one(capsys):
    assert main([]) == 1
    assert main(["definitely-not-a-command"]) == 1
    assert main(["eval"]) == 1  # missing --dataset
    capsys.readouterr()


def test_solve_with_script(tmp_path, capsys):
    code = main([
        "solve", QUERY,
        "--script", str(_script_path(tmp_path)),
        "--store", str(tmp_path / "store"),
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "answer: 4" in out
    assert "route: system1" in out


def test_solve_system1_only_flag(tmp_path, capsys):
    # low confidence would normally escalate; the flag accepts it anyway
    code = main([
        "solve", QUERY, "--system1-only",
        "--script", str(_script_path(tmp_path, answer="maybe 4", confidence="0.1")),
        "--store", str(tmp_path / "store"),
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "route: system1" in out
    assert "answer: maybe 4" in out


def test_solve_runtime_error_exits_two(tmp_path, capsys):
    code = main([
        "solve", QUERY,
        "--script", str(tmp_path / "missing.json"),
        "--store", str(tmp_path / "store"),
    ])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_solve_review_rejection(tmp_path, capsys, monkeypatch):
    # escalate to system-2 so a plan exists, then reject it
    kit = default_kit()
    script = {
        fingerprint(system1_request(kit, QUERY, "")): (
            "ANSWER: ?\nEXPLANATION: unsure\nCONFIDENCE: 0.1"
        )
    }
    from neolaf.cognition import situation_request, decompose_request, plan_request

    script[fingerprint(situation_request(kit, QUERY, ""))] = "a sum"
    script[fingerprint(decompose_request(kit, QUERY, ""))] = "- add"
    script[fingerprint(plan_request(kit, QUERY, ""))] = (
        'STEP 1: self | TOOL calc(expr="2+2") | exact'
    )
    path = tmp_path / "script.json"
    save_script(script, path)
    monkeypatch.setattr("builtins.input", lambda prompt="": "n")
    code = main([
        "solve", QUERY, "--review",
        "--script", str(path),
        "--store", str(tmp_path / "store"),
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "rejected" in out


def test_eval_writes_report(tmp_path, capsys):
    report_path = tmp_path / "report.json"
    code = main([
        "eval",
        "--dataset", str(_dataset_path(tmp_path)),
        "--script", str(_script_path(tmp_path)),
        "--out", str(report_path),
        "--store", str(tmp_path / "store"),
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "accuracy=1.000" in out
    report = json.loads(report_path.read_text())
    assert report["aggregate"]["n"] == 1


def test_eval_missing_dataset_exits_two(tmp_path, capsys):
    code = main([
        "eval",
        "--dataset", str(tmp_path / "nowhere"),
        "--script", str(_script_path(tmp_path)),
    ])
    assert code == 2
    capsys.readouterr()


def test_compare_configs(tmp_path, capsys):
    script = _script_path(tmp_path)
    configs = []
    for name in ("one", "two"):
        config_path = tmp_path / f"{name}.json"
        config_path.write_text(json.dumps({
            "name": name,
            "kit": {},
            "provider": {"type": "scripted", "script": str(script)},
            "system1_only": name == "one",
        }), encoding="utf-8")
        configs.append(str(config_path))
    code = main([
        "compare",
        "--configs", ",".join(configs),
        "--dataset", str(_dataset_path(tmp_path)),
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "one" in out and "two" in out
    # JSON form
    code = main([
        "compare", "--json",
        "--configs", ",".join(configs),
        "--dataset", str(_dataset_path(tmp_path)),
    ])
    rows = json.loads(capsys.readouterr().out)
    assert code == 0
    assert [r["config_name"] for r in rows] == ["one", "two"]


def test_memory_commands(tmp_path, capsys):
    store_dir = tmp_path / "store"
    main([
        "solve", QUERY,
        "--script", str(_script_path(tmp_path)),
        "--store", str(store_dir),
    ])
    capsys.readouterr()

    assert main(["memory", "list", "--store", str(store_dir)]) == 0
    out = capsys.readouterr().out
    assert QUERY in out

    assert main(["memory", "show", "1", "--store", str(store_dir)]) == 0
    record = json.loads(capsys.readouterr().out)
    assert record["id"] == 1

    assert main(["memory", "show", "99", "--store", str(store_dir)]) == 2
    capsys.readouterr()

    assert main(["memory", "search", "2+2", "--store", str(store_dir)]) == 0
    capsys.readouterr()


def test_consolidate_command(tmp_path, capsys):
    store_dir = tmp_path / "store"
    main([
        "solve", QUERY,
        "--script", str(_script_path(tmp_path)),
        "--store", str(store_dir),
    ])
    capsys.readouterr()
    out_path = tmp_path / "data.jsonl"
    code = main(["consolidate", "--out", str(out_path), "--store", str(store_dir)])
    message = capsys.readouterr().out
    assert code == 0
    assert "wrote 1 examples" in message
    assert len(out_path.read_text().strip().splitlines()) == 1


def test_replay_command(tmp_path, capsys):
    entries = [
        TranscriptEntry(
            ProviderRequest(messages=(Message(Role.USER, "anything"),)),
            "ANSWER: 4\nEXPLANATION: replayed\nCONFIDENCE: 0.9",
        )
    ]
    transcript = tmp_path / "transcript.json"
    save_transcript(entries, transcript)
    code = main(["replay", QUERY, "--transcript", str(transcript)])
    out = capsys.readouterr().out
    assert code == 0
    assert "answer: 4" in out
