import json
from fractions import Fraction as Fr

import pytest

from grassnorm import cli
from grassnorm import norms as nm
from grassnorm.algebra import FieldIndex, NElement
from grassnorm.verify import random_element, random_test_function, InstanceSpec


def write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def one_site(tmp_path):
    cfg = write(tmp_path / "run.toml", """
seed = 3
[torus]
d = 1
R = 2
m = 1
[norm]
h = 1.0
p_N = 4
""")
    return tmp_path, cfg


def layout_of(cfg_path):
    return cli.load_config(cfg_path).make_layout()


def tau_file(tmp_path, cfg, x=0):
    L = layout_of(cfg)
    tau = NElement.monomial(L, [FieldIndex("phi", 0, x), FieldIndex("phi", 1, x)]) + NElement.monomial(
        L, [FieldIndex("psi", 0, x), FieldIndex("psi", 1, x)])
    path = tmp_path / "tau.jsonl"
    cli.write_element(tau, path)
    return str(path)


def last_line(capsys):
    return capsys.readouterr().out.strip().splitlines()[-1]


# configuration


def test_default_config_validates():
    cfg = cli.load_config(None)
    assert cfg.torus.d == 1 and cfg.norm.mode == "exact"


@pytest.mark.parametrize("body,field", [
    ("[torus]\nR = 1\n", "torus.R"),
    ("[torus]\nd = 0\n", "torus.d"),
    ("[norm]\nh = -1.0\n", "norm.h"),
    ("[norm]\nmode = 'fancy'\n", "norm.mode"),
    ("[covariance]\nsource = 'exp_decay'\nkappa = 1.5\n", "covariance.kappa"),
    ("[covariance]\nsource = 'inline'\nmatrix = [[1.0]]\n", "covariance.matrix"),
    ("[regulator]\nalpha_G = 1.0\n", "regulator.alpha_G"),
    ("[regulator]\nlarge_field = true\n", "regulator.large_field"),
    ("suites = ['no-such-suite']\n", "suites"),
    ("[torus]\nsize = 3\n", "torus.size"),
    ("species = ['phi:quark']\n", "species"),
])
def test_invalid_configs_name_the_field(tmp_path, body, field):
    with pytest.raises(cli.ConfigError, match=field.replace(".", r"\.")):
        cli.load_config(write(tmp_path / "bad.toml", body))


def test_large_field_guard_accepts_big_tori(tmp_path):
    cli.load_config(write(tmp_path / "ok.toml", "[torus]\nm = 4\n[regulator]\nlarge_field = true\n"))


def test_exact_mode_needs_no_derivatives(tmp_path):
    cfg = cli.load_config(write(tmp_path / "c.toml", "[norm]\np_phi = 1\n"))
    with pytest.raises(cli.ConfigError):
        cfg.norm_params("exact")
    assert cfg.norm_params("grid").mode == "complex"


def test_rational_strings_stay_exact(tmp_path):
    cfg = cli.load_config(write(tmp_path / "c.toml", "[covariance]\nsource = 'exp_decay'\nkappa = '1/3'\n"))
    assert cfg.boson_matrix()[0][1] == Fr(1, 3)


# exit codes


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = write(tmp_path / "bad.toml", "[regulator]\nlarge_field = true\n")
    assert cli.main(["verify", "--config", cfg, "--suite", "product", "--trials", "1"]) == 2
    assert "diam" in capsys.readouterr().err


def test_unknown_suite_exits_2(tmp_path):
    assert cli.main(["verify", "--suite", "nope", "--out", str(tmp_path)]) == 2


def test_usage_error_exits_2():
    assert cli.main(["frobnicate"]) == 2


def test_verify_passes_and_writes_reports(tmp_path, capsys):
    code = cli.main(["verify", "--suite", "moments", "--suite", "product", "--trials", "3", "--out", str(tmp_path)])
    assert code == 0
    recs = [json.loads(x) for x in (tmp_path / "reports.jsonl").read_text().splitlines()]
    assert [r["suite"] for r in recs] == ["moments", "product"]
    assert all(r["passed"] and r["violations"] == 0 for r in recs)
    assert "worst slack" in capsys.readouterr().out


def test_verify_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        assert cli.main(["verify", "--suite", "exponential", "--trials", "4", "--seed", "5", "--out", str(d)]) == 0
        rec = json.loads((d / "reports.jsonl").read_text())
        rec.pop("runtime")
        outs.append(rec)
    assert outs[0] == outs[1]


# norm


@pytest.mark.parametrize("mode", ["exact", "lp"])
def test_norm_of_tau(one_site, capsys, mode):
    tmp_path, cfg = one_site
    el = tau_file(tmp_path, cfg)
    zero = write(tmp_path / "zero.json", json.dumps({"phi": [0, 0]}))
    one = write(tmp_path / "one.json", json.dumps({"phi": [1, 0]}))
    out = str(tmp_path / "out")
    assert cli.main(["norm", "--config", cfg, "--mode", mode, "--out", out, el, zero]) == 0
    assert float(last_line(capsys)) == pytest.approx(2.0, rel=1e-12)
    assert cli.main(["norm", "--config", cfg, "--mode", mode, "--out", out, el, one]) == 0
    assert float(last_line(capsys)) == pytest.approx(5.0, rel=1e-12)
    assert (tmp_path / "out" / "certificate.jsonl").exists()


def test_norm_grid_mode_prints_a_bracket(one_site, capsys):
    tmp_path, cfg = one_site
    el = tau_file(tmp_path, cfg)
    fld = write(tmp_path / "c.json", json.dumps({"phi": [[0.6, 0.8], 0]}))
    assert cli.main(["norm", "--config", cfg, "--mode", "grid", "--out", str(tmp_path), el, fld]) == 0
    vals = [float(x) for x in last_line(capsys).split()]
    assert vals[0] <= 5.0 * (1 + 1e-12) <= vals[-1] * (1 + 1e-12)


def test_norm_of_zero(one_site, capsys):
    tmp_path, cfg = one_site
    path = tmp_path / "zero.jsonl"
    cli.write_element(NElement.zero(layout_of(cfg)), path)
    assert cli.main(["norm", "--config", cfg, "--out", str(tmp_path), str(path)]) == 0
    assert float(last_line(capsys)) == 0.0


def test_bad_element_file_names_the_line(one_site, capsys):
    tmp_path, cfg = one_site
    good = tau_file(tmp_path, cfg)
    lines = open(good).read().splitlines()
    bad = write(tmp_path / "bad.jsonl", "\n".join(lines[:2] + ["{not json"] + lines[2:]) + "\n")
    assert cli.main(["norm", "--config", cfg, "--out", str(tmp_path), bad]) == 2
    assert "bad.jsonl:3" in capsys.readouterr().err


def test_layout_mismatch_is_rejected(one_site, tmp_path, capsys):
    _, cfg = one_site
    other = write(tmp_path / "big.toml", "[torus]\nm = 2\n")
    el = tau_file(tmp_path, other)
    assert cli.main(["norm", "--config", cfg, "--out", str(tmp_path), el]) == 2


# expect


def expect_records(capsys):
    return json.loads(last_line(capsys))


def test_expect_examples(one_site, capsys):
    tmp_path, cfg = one_site
    L = layout_of(cfg)
    out = str(tmp_path / "e")
    cases = [
        (NElement.constant(L, 1), "1"),
        (NElement.monomial(L, [FieldIndex("psi", 1, 0), FieldIndex("psi", 0, 0), FieldIndex("psi", 1, 1),
                               FieldIndex("psi", 0, 1)]), "1"),
        (NElement.monomial(L, [FieldIndex("phi", 1, 0), FieldIndex("phi", 0, 1)]), None),
    ]
    for F, want in cases:
        path = tmp_path / "in.jsonl"
        cli.write_element(F, path)
        assert cli.main(["expect", "--config", cfg, "--out", out, str(path)]) == 0
        recs = expect_records(capsys)
        if want is None:
            assert recs == []  # identity covariance: off-diagonal entry is 0
        else:
            assert recs == [{"fermions": [], "bosons": [], "re": want, "im": "0"}]


def test_expect_with_decaying_covariance(tmp_path, capsys):
    cfg = write(tmp_path / "c.toml", "[torus]\nm = 1\n[covariance]\nsource = 'exp_decay'\nkappa = 0.5\n")
    L = layout_of(cfg)
    path = tmp_path / "in.jsonl"
    cli.write_element(NElement.monomial(L, [FieldIndex("phi", 1, 0), FieldIndex("phi", 0, 1)]), path)
    assert cli.main(["expect", "--config", cfg, "--out", str(tmp_path), str(path)]) == 0
    (rec,) = expect_records(capsys)
    assert Fr(rec["re"]) == Fr(1, 2) and rec["im"] == "0"


def test_expect_rejects_truncated_input(one_site):
    tmp_path, cfg = one_site
    path = tmp_path / "t.jsonl"
    cli.write_element(NElement(layout_of(cfg), {((), ()): 1}, truncation=3), path)
    assert cli.main(["expect", "--config", cfg, "--out", str(tmp_path), str(path)]) == 2


# sample


def test_sample_writes_tables(tmp_path, capsys):
    cfg = write(tmp_path / "s.toml", """
[torus]
m = 2
[covariance]
source = 'exp_decay'
kappa = 0.5
scale = 0.01
[regulator]
samples = 20000
""")
    assert cli.main(["sample", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "regulator.csv").read_text().startswith("X,t,estimate,bound")
    rec = json.loads((tmp_path / "regulator.jsonl").read_text())
    assert rec["samples"] == 20000 and rec["within_hypothesis"]


# serialization round trips


@pytest.mark.parametrize("seed", range(5))
def test_element_round_trip(tmp_path, seed):
    import random

    L = cli.load_config(None).make_layout()
    F = random_element(random.Random(seed), L, InstanceSpec(coefficients="complex" if seed % 2 else "rational"))
    path = tmp_path / "F.jsonl"
    cli.write_element(F, path)
    assert cli.read_element(path, L) == F


@pytest.mark.parametrize("seed", range(5))
def test_test_function_round_trip(tmp_path, seed):
    import random

    L = cli.load_config(None).make_layout()
    g = random_test_function(random.Random(seed), L, 10, 3, rational=False)
    path = tmp_path / "g.jsonl"
    cli.write_test_function(g, path)
    back = cli.read_test_function(path, L)
    assert back.values == {z: complex(v) for z, v in g.items()}
    assert isinstance(back, nm.TestFunction)
