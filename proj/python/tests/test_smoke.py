import math

import pytest

import fairlens


def test_fd_bias_examples():
    raw, normalized = fairlens.fd_bias([[0.7, 0.3]])
    assert normalized == pytest.approx(0.4, abs=1e-12)
    assert raw == pytest.approx(0.4 / math.sqrt(2), abs=1e-12)
    assert fairlens.fd_bias([[0.5, 0.5], [1.0, 0.0]])[1] == pytest.approx(0.5)
    assert fairlens.normalization_factor(4) == pytest.approx(1 / math.sqrt(0.75))


def test_association_and_pearson():
    assert fairlens.association_score([1, 0], [0, 1], [0.8, 0.6]) == pytest.approx(0.2)
    assert fairlens.pearson([1, 2, 3], [2, 4, 7]) == pytest.approx(5 / math.sqrt(2 * 114 / 9))


def test_word_distribution_counts_phrases():
    counts = fairlens.word_distribution(["The man adjusted his tie."], "gender")
    assert counts["male"] == 2
    assert counts["female"] == 0
    with pytest.raises(fairlens.FairlensError):
        fairlens.word_distribution(["x"], "height")


def test_parse_fair_output():
    reasoning, prompt = fairlens.parse_fair_output("Why.\n<system_prompt>Be fair.</system_prompt>")
    assert (reasoning, prompt) == ("Why.", "Be fair.")
    with pytest.raises(fairlens.ParseFailed):
        fairlens.parse_fair_output("no tags")
    assert issubclass(fairlens.ParseFailed, fairlens.FairlensError)


def test_parse_label():
    assert fairlens.parse_label("female.", ["Male", "Female", "Unknown"]) == "Female"
    assert fairlens.parse_label("no idea", ["Male", "Female", "Unknown"]) == "Unknown"


def test_desk_audit(tmp_path):
    config = fairlens.desk_config()
    config["seeds"] = [0, 1]
    out = fairlens.audit(config, tmp_path)
    assert out["exit_code"] == 0, out["error"]
    report = out["report"]
    means = report["mode_means"]
    assert means["fairpro"] < means["default"]
    again = fairlens.audit(config, tmp_path)
    assert again["calls"] == 0
    assert again["report"] == report


def test_invalid_config_is_hard_failure(tmp_path):
    config = fairlens.desk_config()
    config["seeds"] = []
    out = fairlens.audit(config, tmp_path)
    assert out["exit_code"] == 1
    assert out["report"] is None
