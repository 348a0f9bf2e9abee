import math

import pytest

from paramsindy.config import RunConfig, bundled_configs
from paramsindy.exceptions import ConfigError
from paramsindy.library import DimVec


def test_bundled_configs_load_and_build():
    assert {"heat", "burgers", "kdv_burgers", "sgs"} <= set(bundled_configs())
    for name in ("heat", "burgers", "kdv_burgers"):
        cfg = RunConfig.load(name)
        seed = cfg.seed()
        assert cfg.case_spec(seed).equation == name
        assert cfg.case_spec(seed).n_realizations == 20
        ens = cfg.ensemble_config(seed)
        assert (ens.method, ens.n_estimators, ens.cv_init, ens.cv_decay) == ("stlsq", 10, 0.15, 1.0)
    sgs = RunConfig.load("sgs")
    spec = sgs.sgs_spec(0)
    assert spec.case.advection == "conservative" and spec.widths == (3, 5, 7, 9, 11)
    assert sgs.ensemble_config(0, sgs=True).cv_decay == 0.5


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="case.n_realisations"):
        RunConfig.from_text("[case]\npreset = burgers\nn_realisations = 3\n")
    with pytest.raises(ConfigError, match=r"\[cases\]"):
        RunConfig.from_text("[cases]\npreset = burgers\n")
    with pytest.raises(ConfigError, match="ensemble.M"):
        RunConfig.load("burgers").with_overrides(["ensemble.M=3"])


def test_overrides_win_and_are_checked():
    cfg = RunConfig.load("burgers").with_overrides(["case.n_realizations=4", "run.seed=9"])
    assert cfg.case_spec(cfg.seed()).n_realizations == 4
    assert cfg.seed() == 9 and cfg.seed(3) == 3
    with pytest.raises(ConfigError, match="section.key=value"):
        cfg.with_overrides(["seed=1"])


def test_values_are_typed():
    cfg = RunConfig.from_text("""
[run]
seed = 1
[case]
preset = burgers
nu_range = 0.001/pi, 0.01/pi   # inline comment
[library]
preset = burgers
target = 2, -2
[solver]
method = sr3
lam = auto
threshold_range = 0.001, 1
""")
    assert cfg.case_spec(1).nu_range == pytest.approx((0.001 / math.pi, 0.01 / math.pi))
    assert cfg.library_spec().target == DimVec(2, -2)
    method, params = cfg.solver_params()
    assert method == "sr3" and params == {"lam": "auto", "threshold_range": (0.001, 1.0)}
    with pytest.raises(ConfigError, match="case.n_x"):
        cfg.with_overrides(["case.n_x=many"]).case_spec(1)


def test_missing_pieces():
    cfg = RunConfig.from_text("[case]\npreset = heat\n")
    with pytest.raises(ConfigError, match="seed"):
        cfg.seed()
    with pytest.raises(ConfigError, match="library"):
        cfg.library_spec()
    with pytest.raises(ConfigError, match="no config file"):
        RunConfig.load("does_not_exist")
    with pytest.raises(ConfigError, match="solver"):
        RunConfig.from_text("[solver]\nmethod = stlsq\nalpha = 1\n").solver_params()
    with pytest.raises(ConfigError, match="case"):
        RunConfig.from_text("[case]\npreset = heat\nadvection = skew\n").case_spec(0)
    with pytest.raises(ConfigError, match="cannot parse"):
        RunConfig.from_text("no section header\n")


def test_library_from_base_list():
    cfg = RunConfig.from_text("""
[library]
base = u, nu, nu^-1, u_x|uw2, u_xx|cd2
max_degree = 2
dsf_mode = hard
""")
    spec = cfg.library_spec()
    assert len(spec.base_terms) == 5 and spec.dsf_mode == "hard"
