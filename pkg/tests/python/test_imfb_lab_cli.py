from __future__ import annotations

# ruff: noqa: S101, S603
import importlib.util
import json
import subprocess
import sys
from pathlib import Path
from types import ModuleType

import pytest


def load_module() -> ModuleType:
    repo_root = Path(__file__).resolve().parents[2]
    module_path = repo_root / "scripts" / "imfb-lab.py"
    spec = importlib.util.spec_from_file_location("imfb_lab", module_path)
    if spec is None or spec.loader is None:
        raise RuntimeError(f"Failed to load module spec: {module_path}")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


MODULE = load_module()
REPO_ROOT = Path(__file__).resolve().parents[2]
SCRIPT_PATH = REPO_ROOT / "scripts" / "imfb-lab.py"

SMALL_RUN = [
    "--set", "graph.synthetic.nodes=25",
    "--set", "graph.synthetic.edges=80",
    "--set", "generation.dim=3",
    "--set", "policy.imfb.dim=3",
    "--set", "T=3",
    "--set", "runs=1",
]


def write_file(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content, encoding="utf-8")


def test_missing_config_exits_with_config_code(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    missing = tmp_path / "nope.json"
    assert MODULE.main(["run", "--config", str(missing)]) == 2
    err = capsys.readouterr().err
    assert "Error: invalid configuration" in err
    assert str(missing) in err


def test_validate_echoes_resolved_config(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    config = tmp_path / "c.json"
    write_file(config, json.dumps({"K": 4, "output_dir": "out"}))
    assert MODULE.main(["validate", "-c", str(config), "--set", "oracle.kind=exact"]) == 0
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["K"] == 4
    assert resolved["oracle"]["kind"] == "exact"
    assert resolved["policy"]["imfb"]["q"] == 0.9


def test_validate_reports_every_violation(capsys: pytest.CaptureFixture[str]) -> None:
    code = MODULE.main(
        ["validate", "--set", "policy.imfb.q=1.5", "--set", "T=0"]
    )
    assert code == 2
    err = capsys.readouterr().err
    assert "- policy.imfb.q must be in (0, 1), got 1.5" in err
    assert "- T: must be >= 1" in err


def test_unknown_override_key(capsys: pytest.CaptureFixture[str]) -> None:
    assert MODULE.main(["validate", "--set", "oracle.speed=3"]) == 2
    assert "oracle.speed: unknown config key" in capsys.readouterr().err


def test_generate_hits_target_mean(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    out_dir = tmp_path / "gen"
    code = MODULE.main(
        ["generate", "--target-mean-p", "0.053", "--dim", "5", "--seed", "2", "-o", str(out_dir)]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "mean p*: 0.053000" in out
    assert "nodes: 200  edges: 2000" in out
    assert (out_dir / "graph.txt").is_file()
    truth = json.loads((out_dir / "truth.json").read_text(encoding="utf-8"))
    assert len(truth["node_ids"]) == 200


def test_generate_stratified_reports_degree_spread(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    def soft_cv(mode: str) -> float:
        MODULE.main(
            [
                "generate",
                "--synthetic", "skewed",
                "--nodes", "300",
                "--edges", "3000",
                "--skew", "1.2",
                "--mode", mode,
                "--target-mean-p", "0.05",
                "-o", str(tmp_path / mode),
            ]
        )
        out = capsys.readouterr().out
        line = next(row for row in out.splitlines() if row.startswith("soft-degree CV:"))
        return float(line.split(":")[1])

    assert soft_cv("stratified") < soft_cv("uniform")


def test_generate_unreachable_target_exits_with_generation_code(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    code = MODULE.main(["generate", "--target-mean-p", "1.0", "-o", str(tmp_path / "g")])
    assert code == 3
    assert "use a smaller target" in capsys.readouterr().err


def test_inspect_json(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    graph = tmp_path / "g.txt"
    write_file(graph, "# demo\n1 2\n2 3\n1 2\n3 3\n")
    assert MODULE.main(["inspect", str(graph), "--json"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert (summary["nodes"], summary["edges"]) == (3, 2)
    assert summary["load"] == {"data_lines": 4, "self_loops_dropped": 1, "duplicates_deduped": 1}


def test_inspect_bad_graph(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    graph = tmp_path / "g.txt"
    write_file(graph, "0 1\n1 x\n")
    assert MODULE.main(["inspect", str(graph)]) == 3
    assert "line 2:" in capsys.readouterr().err


def test_run_writes_outputs(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    out_dir = tmp_path / "results"
    code = MODULE.main(
        ["run", *SMALL_RUN, "--set", "K=0", "--set", f"output_dir={out_dir}"]
    )
    assert code == 0
    assert "final mean cumulative reward: 0.00 ± 0.00" in capsys.readouterr().out
    assert (out_dir / "run_0.csv").is_file()
    assert (out_dir / "summary.md").is_file()


def test_run_output_dir_from_environment(tmp_path: Path) -> None:
    env_dir = tmp_path / "from-env"
    proc = subprocess.run(
        [sys.executable, str(SCRIPT_PATH), "run", *SMALL_RUN, "--set", "K=1"],
        capture_output=True,
        text=True,
        cwd=tmp_path,
        env={"IMFB_LAB_OUTPUT_DIR": str(env_dir), "PATH": "/usr/bin:/bin"},
        check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert f"output={env_dir}" in proc.stdout
    assert (env_dir / "aggregate.csv").is_file()


def test_run_missing_graph_file_exits_with_generation_code(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    code = MODULE.main(
        [
            "run",
            "--set", "graph.source=file",
            "--set", f"graph.path={tmp_path / 'absent.txt'}",
            "--set", f"output_dir={tmp_path / 'out'}",
        ]
    )
    assert code == 3
    assert "failed to read edge list" in capsys.readouterr().err
