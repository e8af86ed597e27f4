import json

import pytest

from seqcara.cli import (
    EXIT_FAILURES,
    EXIT_INVALID,
    EXIT_IO,
    EXIT_OK,
    ConfigError,
    dump_config,
    expand_grid,
    main,
    parse_config,
    parse_filter,
    preset_text,
)

SMALL = """
replications = 4
master_seed = 9

[model]
arms = [[0.1, -1.0], [0.1, 1.0]]

[grid]
m0 = [5]
t0 = [1.0]
eta0 = [0.0, 1.0]
vary_t = [false, true]
vary_eta = [false, true]

[stopping]
delta = 0.5
"""


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_defaults_and_grid():
    cfg = parse_config(SMALL)
    assert cfg.alpha == 0.05 and cfg.scale == "total" and cfg.rule == "utility"
    assert cfg.covariate == ((2.0, 1.0, 0.5), (-2.0, 1.0, 0.5))
    scs = expand_grid(cfg)
    assert len(scs) == 2 + 4
    assert cfg.n_scenarios == 6


@pytest.mark.parametrize("text,needle", [
    (SMALL + "\n[extra]\nx = 1\n", "extra"),
    (SMALL.replace("delta = 0.5", "delta = 0.5\nwidth = 2"), "width"),
    (SMALL.replace("delta = 0.5", "delta = -0.5"), "delta"),
    (SMALL.replace("master_seed = 9", "master_seed = 9\nmaster_seed = 10"), "TOML"),
    (SMALL.replace("m0 = [5]", "m0 = [0]"), "m0"),
    (SMALL.replace("replications = 4", "replications = \"four\""), "replications"),
    (SMALL + "\n[allocation]\nrule = \"greedy\"\n", "rule"),
    (SMALL + "\n[contrast]\nkind = \"custom\"\n", "rows"),
])
def test_invalid_configs_name_the_field(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def test_round_trip():
    for text in (SMALL, preset_text("paper")):
        cfg = parse_config(text)
        assert parse_config(dump_config(cfg)) == cfg


def test_preset_expands_to_full_grid():
    assert parse_config(preset_text("paper")).n_scenarios == 90
    with pytest.raises(ConfigError):
        preset_text("nope")


def test_filter():
    keep = parse_filter("m0==10, eta>0,T0_varies==Y")
    assert keep(0, {"m0": 10, "eta": 0.1, "T0_varies": True})
    assert not keep(0, {"m0": 10, "eta": 0.0, "T0_varies": True})
    assert parse_filter("index<3")(2, {})
    for bad in ("m0=10", "colour==red", "m0==ten"):
        with pytest.raises(ConfigError):
            parse_filter(bad)


def test_cli_csv_output(tmp_path, capsys):
    out = tmp_path / "out.csv"
    assert main(["--config", write(tmp_path, SMALL), "--out", str(out), "--jobs", "1"]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "m0,T0,eta,T0_varies,eta_varies,mean_tau,sd_tau,CP,CAP,censor_rate,failure_rate,replications,seed"
    assert len(lines) == 7
    assert lines[1].startswith("5,1.0000,0.0000,N,N,")
    assert lines[1].endswith(",4,9")


def test_cli_json_and_filter(tmp_path, capsys):
    assert main(["--config", write(tmp_path, SMALL), "--format", "json", "--jobs", "1",
                 "--scenario-filter", "eta>0,eta_varies==Y"]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)
    assert len(rows) == 2 and all(r["eta_varies"] for r in rows)
    assert len(rows[0]["mean_arm_proportions"]) == 2


def test_filtered_rows_match_full_run(tmp_path, capsys):
    path = write(tmp_path, SMALL)
    main(["--config", path, "--jobs", "1"])
    full = capsys.readouterr().out.splitlines()
    main(["--config", path, "--jobs", "1", "--scenario-filter", "index==3"])
    assert capsys.readouterr().out.splitlines()[1] == full[4]


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "missing.toml")]) == EXIT_IO
    assert main(["--config", write(tmp_path, "not = [toml")]) == EXIT_INVALID
    assert main(["--config", write(tmp_path, SMALL), "--scenario-filter", "m0==99"]) == EXIT_INVALID
    assert main(["--config", write(tmp_path, SMALL), "--jobs", "0"]) == EXIT_INVALID
    assert main(["--config", write(tmp_path, SMALL), "--jobs", "1",
                 "--out", str(tmp_path / "no" / "dir" / "x.csv")]) == EXIT_IO
    err = capsys.readouterr().err
    assert err.count("error:") == 5 and "jobs" in err


def test_failure_threshold_exit(tmp_path, monkeypatch, capsys):
    import seqcara.cli as cli
    real = cli.run_monte_carlo

    def broken(*args, **kwargs):
        out = real(*args, **kwargs)
        for s in out:
            s.failure_rate = 0.5
        return out

    monkeypatch.setattr(cli, "run_monte_carlo", broken)
    assert main(["--config", write(tmp_path, SMALL), "--jobs", "1", "--out", str(tmp_path / "x.csv")]) == EXIT_FAILURES


def test_print_config_and_preset(capsys):
    assert main(["--config", "preset:paper", "--print-config", "--replications", "7"]) == EXIT_OK
    cfg = parse_config(capsys.readouterr().out)
    assert cfg.replications == 7 and cfg.n_scenarios == 90
