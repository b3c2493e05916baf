import hashlib
import os
import subprocess
import sys

import numpy as np
import pytest

from gwtrap import _kernels as K
from gwtrap.cli import main
from gwtrap.config import ExperimentConfig
from gwtrap.errors import ConfigError

REF = """
experiment = gamma
offspring = 0:0.25, 2:0.75
bias = atoms 2.0:0.5 3.0:0.5
seed = 42
"""


def test_config_roundtrip():
    cfg = ExperimentConfig.from_text(REF)
    text = cfg.to_text()
    again = ExperimentConfig.from_text(text)
    assert again.to_text() == text
    assert again.config_hash() == cfg.config_hash()


def test_config_hash_ignores_execution_fields():
    cfg = ExperimentConfig.from_text(REF)
    assert cfg.replace(workers=8).config_hash() == cfg.config_hash()
    assert cfg.replace(out="elsewhere").config_hash() == cfg.config_hash()
    assert cfg.replace(seed=43).config_hash() != cfg.config_hash()


def test_config_unknown_key():
    with pytest.raises(ConfigError, match="unknown key"):
        ExperimentConfig.from_text(REF + "typo_knob = 3\n")


def test_config_field_precise_messages():
    with pytest.raises(ConfigError, match="bias"):
        ExperimentConfig.from_text(REF.replace("atoms 2.0:0.5 3.0:0.5",
                                               "atoms 0.9:1.0"))
    with pytest.raises(ConfigError, match="experiment"):
        ExperimentConfig.from_text(REF.replace("gamma", "nonsense"))
    with pytest.raises(ConfigError, match="top_fraction"):
        ExperimentConfig.from_text(REF + "top_fraction = 0.9\n")
    with pytest.raises(ConfigError, match="duplicate"):
        ExperimentConfig.from_text(REF + "seed = 7\n")
    with pytest.raises(ConfigError, match="schema"):
        ExperimentConfig.from_text("schema = 99\n" + REF)


def test_cli_gamma(tmp_path, capsys):
    cfg = tmp_path / "g.cfg"
    cfg.write_text(REF)
    code = main(["gamma", "--config", str(cfg), "--out",
                 str(tmp_path / "out")])
    assert code == 0
    out = capsys.readouterr().out
    assert "0.7604" in out or "0.760491" in out
    assert "sub-ballistic" in out


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(REF.replace("atoms 2.0:0.5 3.0:0.5", "atoms 0.9:1.0"))
    code = main(["gamma", "--config", str(cfg)])
    assert code == 2
    assert "bias" in capsys.readouterr().err


def test_cli_manifest_checksums(tmp_path):
    cfg = tmp_path / "g.cfg"
    cfg.write_text(REF)
    out = tmp_path / "out"
    assert main(["gamma", "--config", str(cfg), "--out", str(out)]) == 0
    manifest = (out / "manifest.txt").read_text().splitlines()
    checked = 0
    for line in manifest:
        if not line.startswith("output = "):
            continue
        name, sha, size = line.split(" = ")[1].split()
        digest = hashlib.sha256((out / name).read_bytes()).hexdigest()
        assert sha == f"sha256:{digest}"
        assert int(size.split(":")[1]) == (out / name).stat().st_size
        checked += 1
    assert checked == 3


def test_cli_dump_trap_roundtrip(tmp_path, capsys):
    cfg = tmp_path / "g.cfg"
    cfg.write_text(REF)
    assert main(["dump-trap", "--config", str(cfg), "--count", "0"]) == 0
    assert capsys.readouterr().out == ""
    assert main(["dump-trap", "--config", str(cfg), "--count", "5",
                 "--seed", "3"]) == 0
    text = capsys.readouterr().out
    from gwtrap.tree import WeightedTree

    blocks = []
    current: list[str] = []
    headers: list[dict] = []
    hdr: dict = {}
    for line in text.splitlines():
        if line.startswith("# trap") and current:
            blocks.append("\n".join(current))
            headers.append(hdr)
            current, hdr = [], {}
        if line.startswith("#"):
            parts = line[2:].split()
            hdr[parts[0]] = parts[1]
        else:
            current.append(line)
    blocks.append("\n".join(current))
    headers.append(hdr)
    assert len(blocks) == 5
    for block, h in zip(blocks, headers):
        tree = WeightedTree.from_text(block)
        om, _, _ = K.subtree_stats(tree.bias, tree.depth, tree.first_child,
                                   tree.next_sibling, tree.n, 1)
        assert om == pytest.approx(float(h["omega"]), abs=1e-12)


def test_cli_pair_constants_file(tmp_path, ref_harris, ref_bias):
    from gwtrap._rng import Stream
    from gwtrap.tree import make_synthetic_pair

    pair = make_synthetic_pair(ref_harris, ref_bias, 8,
                               Stream.from_seed(77, 0, 3))
    pfile = tmp_path / "pair.txt"
    pfile.write_text(pair.tree.to_text())
    cfg = tmp_path / "g.cfg"
    cfg.write_text(REF.replace("gamma", "pair-constants") + "k_ladder = 4,6,8\n")
    out = tmp_path / "out"
    assert main(["pair-constants", "--config", str(cfg), "--pair",
                 str(pfile), "--out", str(out)]) == 0
    records = (out / "records.txt").read_text()
    assert "c_f_k" in records and "fd_prob" in records
