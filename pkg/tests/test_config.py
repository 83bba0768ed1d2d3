import pytest

from m3d.config import ConfigError, PipelineConfig, format_config, load_config, parse_config


def test_defaults():
    c = PipelineConfig()
    assert (c.d_tca, c.eta, c.lam, c.rho, c.p, c.l) == (128, 0.1, 0.4, 1.0, 10, 10)
    assert c.initial_classifier == "dtree" and c.ensemble == "linkclue"
    assert c.similarity == "cts" and c.linkage == "single" and c.decay == 0.8


def test_parse_with_units_and_comments():
    c = parse_config("""
        # classifier learning
        eta = 0.2 [1]
        q = 16          # subspace dimension
        bandwidth = auto
        use_manifold = false
        linkage = average
    """)
    assert c.eta == 0.2 and c.q == 16 and c.bandwidth is None
    assert c.use_manifold is False and c.linkage == "average"


def test_unknown_key_and_bad_values():
    with pytest.raises(ConfigError, match="unknown key 'etta'"):
        parse_config("etta = 0.1")
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_config("p = ten")
    with pytest.raises(ConfigError, match="eta"):
        parse_config("eta = 0")
    with pytest.raises(ConfigError, match="expected"):
        parse_config("eta 0.1")
    with pytest.raises(ConfigError, match="decay"):
        PipelineConfig(decay=1.5)


def test_round_trip(tmp_path):
    c = PipelineConfig(q=7, fixed_mu=0.5, kernel="linear", seed=11)
    p = tmp_path / "c.cfg"
    p.write_text(format_config(c))
    assert load_config(p) == c
    with pytest.raises(FileNotFoundError, match="missing.cfg"):
        load_config(tmp_path / "missing.cfg")


def test_stage_seeds_fixed():
    a, b = PipelineConfig(seed=3).stage_seeds(), PipelineConfig(seed=3).stage_seeds()
    assert a == b and len(set(a.values())) == 3
    assert a != PipelineConfig(seed=4).stage_seeds()
