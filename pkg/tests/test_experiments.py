import json

import numpy as np
import pytest

from thinhomog.experiments import (
    ConfigError,
    StudyReport,
    config_hash,
    fit_exponent,
    inequality_suite,
    run_appendix_continuity,
    run_convergence,
    run_domain_dependence,
    run_piecewise_consistency,
    run_study,
    validate_config,
)

SINE = {"kind": "expr", "expr": "1 + 0.5*sin(2*pi*y)", "G0": 0.5, "G1": 1.5}
FLAT = {"kind": "constant", "expr": "1"}


def _cfg(**kw):
    base = {"study": "convergence", "profile": SINE, "p": [2], "eps": [0.25, 0.125]}
    base.update(kw)
    return base


# ------------------------------------------------------------------ config
def test_minimal_config_parses():
    cfg = validate_config(_cfg())
    assert cfg.study == "convergence" and cfg.p == [2.0] and cfg.eps == [0.25, 0.125]
    assert cfg.res["n1d"] == 1024


@pytest.mark.parametrize("raw, needle", [
    (_cfg(epsilonn=[0.1]), "epsilonn"),
    (_cfg(p=[1.0]), "p must exceed 1"),
    (_cfg(p=[]), "nonempty"),
    (_cfg(eps=[1 / 128]), "eps[0]"),
    (_cfg(study="nope"), "study"),
    (_cfg(resolution={"cells": 8}), "resolution.cells"),
    (_cfg(resolution={"layers": 2}), "resolution.layers"),
    (_cfg(f="cos(pi*"), "f:"),
    (_cfg(seed="1"), "seed"),
    (_cfg(study="piecewise"), "delta"),
    (_cfg(study="appendix"), "t:"),
    (_cfg(study="domaindep"), "delta"),
    ({"study": "convergence", "p": [2]}, "profile"),
    (_cfg(profile={"kind": "expr", "expr": "1+"}), "profile"),
    (_cfg(eps=[1 / 64], resolution={"points_per_period": 4096}), "cap"),
])
def test_config_errors(raw, needle):
    with pytest.raises(ConfigError) as info:
        validate_config(raw)
    assert needle in str(info.value)


def test_config_roundtrip_and_hash():
    cfg = validate_config(_cfg(seed=3, resolution={"cell": 16}))
    again = validate_config(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)
    moved = validate_config(_cfg(seed=3, resolution={"cell": 16}, out="elsewhere"))
    assert config_hash(moved) == config_hash(cfg)
    assert config_hash(validate_config(_cfg(seed=4, resolution={"cell": 16}))) != config_hash(cfg)


# ----------------------------------------------------------------- helpers
def test_fit_exponent():
    t = np.array([0.2, 0.1, 0.05, 0.025])
    assert fit_exponent(t, 3 * t ** 1.5) == pytest.approx(1.5, abs=1e-12)
    # only the three smallest parameters count
    v = 3 * t ** 2
    v[0] = 100.0
    assert fit_exponent(t, v) == pytest.approx(2.0, abs=1e-12)
    assert np.isnan(fit_exponent(t, np.zeros(4)))


@pytest.mark.parametrize("p", [1.2, 1.5, 2.0, 3.0, 4.0])
def test_inequality_suite(p):
    r = inequality_suite(p, n=2000, seed=1)
    assert r["passed"] and r["violations"] == 0
    assert r["c_monotone"] > 0 and r["c_convexity"] > 0
    if p >= 2:
        assert r["c_monotone"] >= r["c_monotone_reference"] * (1 - 1e-12)


def test_report_csv_and_json(tmp_path):
    rep = StudyReport("convergence", "abc", [{"config_hash": "abc", "eps": 0.1, "n": 3, "ok": True}],
                      {"x": True}, [0.5])
    assert rep.csv_text() == "config_hash,eps,n,ok\nabc,0.10000000000000001,3,true\n"
    paths = rep.write(tmp_path)
    doc = json.loads((tmp_path / "convergence.json").read_text())
    assert doc["pass"] is True and doc["study"] == "convergence" and doc["config_hash"] == "abc"
    assert len(paths) == 2


# ------------------------------------------------------------------ studies
def test_convergence_flat_trivial():
    cfg = validate_config(_cfg(profile=FLAT, f="1", p=[2, 3], eps=[0.25, 0.125],
                               resolution={"points_per_period": 8, "layers": 6, "n1d": 64}))
    rep = run_convergence(cfg)
    assert rep.passed
    for r in rep.rows:
        assert max(r[k] for k in r if k.startswith("defect_")) <= 1e-8
        assert r["config_hash"] == cfg.hash


def test_convergence_reproducible_bytes():
    cfg = validate_config(_cfg(eps=[0.25, 0.125], resolution={"points_per_period": 8, "layers": 6,
                                                             "n1d": 128}))
    a = run_study(cfg).csv_text()
    b = run_study(cfg).csv_text()
    assert a == b
    assert a.splitlines()[0].startswith("config_hash,p,eps")


def test_piecewise_x_independent_lift():
    cfg = validate_config({"study": "piecewise", "profile": SINE, "p": [2], "delta": [0.2, 0.1, 0.05],
                           "resolution": {"cell": 16, "n1d": 64, "x_samples": 8}})
    rep = run_piecewise_consistency(cfg)
    assert rep.passed
    assert [r["intervals"] for r in rep.rows] == [1, 1, 1]
    # only the delta/2 lift separates G^delta from G
    for r in rep.rows:
        assert r["sup_dr"] == pytest.approx(r["delta"] / 2, rel=1e-10)
    dq = np.array([r["sup_dq"] for r in rep.rows])
    assert fit_exponent([0.2, 0.1, 0.05], dq) == pytest.approx(1.0, abs=0.05)
    # 8 reference samples plus one solve per (single-interval) delta
    assert rep.extra["cell_solves"] == 8 + 3


def test_domain_dependence_identical_and_flat():
    cfg = validate_config({"study": "domaindep", "profile": FLAT, "p": [2], "eps": [0.25, 0.125],
                           "delta": [0.2, 0.1, 0.05], "f": "1", "hat_mode": "shift",
                           "resolution": {"points_per_period": 8, "layers": 6}})
    rep = run_domain_dependence(cfg)
    assert rep.passed
    for r in rep.rows:
        assert r["D"] == pytest.approx(r["delta"], rel=1e-9)


def test_appendix_zero_perturbation():
    cfg = validate_config({"study": "appendix", "profile": FLAT, "p": [2], "t": [0.1, 0.0],
                           "resolution": {"cell": 16}})
    rep = run_appendix_continuity(cfg)
    assert rep.rows[-1]["dq"] == 0.0 and rep.rows[-1]["c1_distance"] == 0.0
    assert rep.rows[0]["dq"] > 0


def test_study_profile_requirements(lp_profile):
    lp = {"kind": "expr", "expr": "1 + 0.2*x + 0.1*sin(2*pi*y)", "G0": 0.9, "G1": 1.3}
    with pytest.raises(ConfigError):
        run_appendix_continuity(validate_config({"study": "appendix", "profile": lp, "p": [2], "t": [0.1]}))
    with pytest.raises(ConfigError):
        run_convergence(validate_config(_cfg(f="x*y")))
