from __future__ import annotations

from pathlib import Path

import pytest

from tgt_recsys.cli import run, variant_overrides
from tgt_recsys.core import ConfigError

# fmt: off
SYNTH = [
    "--users", "30",
    "--items", "40",
    "--synth.preferred", "5",
    "--synth.horizon", "20",
    "--synth.base_rates", "0.1,0.05,0.05,0.05",
]
# fmt: on


def _synth(tmp_path: Path, name: str = "data.tsv") -> Path:
    output = tmp_path / name
    assert run(["synth", *SYNTH, "--output", str(output)]) == 0
    return output


def _settings(data: Path, out: Path) -> list[str]:
    # fmt: off
    return [
        "--data.interactions", str(data),
        "--data.vocabulary", str(data.with_suffix(".vocab")),
        "--data.window", "3",
        "--model.dim", "8",
        "--train.epochs", "2",
        "--eval.negatives", "10",
        "--run.output_dir", str(out),
    ]
    # fmt: on


def test_synth_is_reproducible(tmp_path: Path) -> None:
    first = _synth(tmp_path, "a.tsv")
    second = _synth(tmp_path, "b.tsv")
    assert first.read_bytes() == second.read_bytes()
    assert (tmp_path / "a.vocab").read_text() == "view\nfav\ncart\nbuy\n"


def test_gradcheck_passes(capsys: pytest.CaptureFixture[str]) -> None:
    assert run(["gradcheck", "--dim", "8"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [line.split("\t")[0] for line in lines] == [
        "temporal",
        "transformer",
        "propagation",
        "model",
        "max",
    ]
    assert float(lines[-1].split("\t")[1]) < 1e-4


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["fly"],
        ["train", "--model.unknown", "3"],
        ["train", "--model.dim", "eight"],
        ["recommend", "1"],
        ["ablate", "xyz"],
    ],
)
def test_usage_errors(argv: list[str]) -> None:
    assert run(argv) == 1


def test_missing_data_is_a_data_error(tmp_path: Path) -> None:
    data = tmp_path / "absent.tsv"
    assert run(["ingest", *_settings(data, tmp_path / "out")]) == 2


def test_variant_overrides() -> None:
    assert variant_overrides(["CE", "fba"]) == {
        "ablation.context_embedding_off": True,
        "ablation.frequency_aggregation": True,
    }
    assert variant_overrides(["drop:view,fav", "drop:cart"]) == {
        "data.drop_behaviors": ("view", "fav", "cart")
    }
    with pytest.raises(ConfigError):
        variant_overrides(["nothing"])


def test_help_lists_settings(capsys: pytest.CaptureFixture[str]) -> None:
    assert run(["train", "--help"]) == 0
    text = capsys.readouterr().out
    assert "--model.dim" in text
    assert "--train.learning_rate" in text


def test_pipeline(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    data = _synth(tmp_path)
    out = tmp_path / "out"
    settings = _settings(data, out)

    assert run(["ingest", *settings]) == 0
    assert run(["train", *settings]) == 0
    assert (out / "checkpoint.tgt").exists()
    assert (out / "loss.tsv").read_text().splitlines()[0] == "epoch\tloss"

    capsys.readouterr()
    assert run(["evaluate", *settings, "--eval.diagnostics", "true"]) == 0
    assert capsys.readouterr().out.startswith("cutoff\thit_rate\tndcg\tusers\tpolicy\n")
    assert (out / "ranking.tsv").exists()
    assert (out / "diagnostics.tsv").exists()

    user = (out / "ranks.tsv").read_text().splitlines()[1].split("\t")[0]
    assert run(["recommend", user, "5", *settings]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 5

    assert run(["recommend", "nobody", "5", *settings]) == 2
    assert run(["ablate", "fba", *settings]) == 0
    assert (out / "ablate-fba" / "ranking.tsv").exists()
    assert run(["ablate", "drop:buy", *settings]) == 1


def test_resume_from_checkpoint(tmp_path: Path) -> None:
    data = _synth(tmp_path)
    first, second = tmp_path / "first", tmp_path / "second"
    assert run(["train", *_settings(data, first), "--train.epochs", "1"]) == 0

    resume = ["--train.resume", str(first / "checkpoint.tgt")]
    assert run(["train", *_settings(data, second), *resume]) == 0
    assert (second / "loss.tsv").read_text().splitlines()[1].split("\t")[0] == "2"
