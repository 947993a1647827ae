import math

import numpy as np
import pytest

from ymhlab import cli
from ymhlab.algebra import su2


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_config_defaults_and_round_trip():
    cfg = cli.Config.load(None)
    assert (cfg.n, cfg.N, cfg.h, cfg.c_cfl) == (5, 16, 1.0, 0.5)
    assert len(cfg.radii) == 6 and cfg.radii[-1] < math.sqrt(4 * math.pi * cfg.t_end)
    again = cli.Config.parse(cfg.dump().replace("T=nan\n", ""))
    assert again == cfg


def test_config_parse_values():
    cfg = cli.Config.parse("# comment\nN = 8\nh=0.5  # trailing\nX=0.1,0,0,0,0\nr_list=0.5,1.0\n")
    assert cfg.N == 8 and cfg.h == 0.5 and cfg.X == (0.1, 0.0, 0.0, 0.0, 0.0) and cfg.radii == [0.5, 1.0]


@pytest.mark.parametrize("text", [
    "bogus=1\n",
    "n=4\n",
    "N=abc\n",
    "c_cfl=1.5\n",
    "t_end=0.5\nr_list=1.0,3.0\n",  # past sqrt(4 pi T)
    "r_list=2.0,1.0\n",
    "q=1.0\n",
    "X=0,0\n",
    "group=/nonexistent/table.txt\n",
    "just a line\n",
])
def test_bad_config_exits_1(tmp_path, text):
    with pytest.raises(cli.ConfigError):
        cli.Config.parse(text)
    assert cli.main(["verify-heatball", "--config", write_cfg(tmp_path, text),
                     "--out", str(tmp_path / "o")]) == 1


def test_usage_errors_exit_1(tmp_path):
    assert cli.main(["no-such-command"]) == 1
    assert cli.main(["flow", "--config", str(tmp_path / "missing.cfg")]) == 1


def test_corrupted_structure_table_exits_2(tmp_path):
    table = su2().to_table().replace("1.0", "2.0", 1)
    p = tmp_path / "bad_su2.txt"
    p.write_text(table)
    cfg = write_cfg(tmp_path, f"group={p}\n")
    assert cli.main(["verify-identities", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_homogeneity_failure_exits_2(tmp_path, monkeypatch):
    from ymhlab import heatball

    def refuse(*a, **k):
        raise heatball.HomogeneityError("spot check failed")
    monkeypatch.setattr(heatball, "scaling_check", refuse)
    assert cli.main(["verify-heatball", "--out", str(tmp_path / "o")]) == 2


def test_numerical_abort_exits_3(tmp_path, monkeypatch):
    from ymhlab import flow

    def boom(*a, **k):
        raise flow.FlowAbort("non-finite state")
    monkeypatch.setattr(flow, "evolve", boom)
    cfg = write_cfg(tmp_path, "N=8\nt_end=0.1\n")
    assert cli.main(["flow", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


@pytest.mark.parametrize("command,csv", [("verify-heatball", "heatball.csv"),
                                         ("verify-identities", "identities.csv")])
def test_campaign_passes_and_is_bit_identical(tmp_path, command, csv):
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert cli.main([command, "--out", str(o)]) == 0
    a, b = ((o / csv).read_bytes() for o in outs)
    assert a == b
    lines = a.decode().splitlines()
    assert lines[0] == f"# ymhlab {csv[:-4]} v1"
    assert "fail" not in a.decode()
    assert (outs[0] / "config.txt").read_text() == cli.Config.load(None).dump()


def test_zero_data_monotonicity_all_zero(tmp_path):
    cfg = write_cfg(tmp_path, "N=8\nt_end=0.5\nk_snap=5\npotential=zero\namplitude=0\nhiggs_amplitude=0\n")
    assert cli.main(["monotonicity", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "scan.csv").read_text().splitlines()[2:]
    assert len(rows) == 6
    vals = np.array([[float(v) for v in row.split(",")[1:5]] for row in rows])
    assert np.all(vals == 0.0)
