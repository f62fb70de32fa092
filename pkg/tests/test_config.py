import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emdini.config import ConfigErrors, parse_config, parse_number, parse_text

MINIMAL = """
experiment = rates
model.name = gbm
"""


def test_minimal_config_defaults():
    cfg = parse_text(MINIMAL)
    assert cfg.ref_factor == 64 and cfg.replicas == 1000
    assert cfg.T == 1.0 and cfg.p_list == [1.0] and cfg.seed == 0
    assert cfg.bands.slope_window(1.0) == pytest.approx((0.4, 0.6))


@pytest.mark.parametrize("text,value", [("1/16", 0.0625), ("2^-4", 0.0625), ("0.5", 0.5), ("-inf", -math.inf)])
def test_number_forms(text, value):
    assert parse_number(text) == value


def test_step_must_divide_grid():
    with pytest.raises(ConfigErrors, match="step must divide fine grid"):
        parse_text(MINIMAL + "delta_list = 1/3, 1/4\n")


def test_negative_seed_rejected():
    with pytest.raises(ConfigErrors, match="seed"):
        parse_text(MINIMAL + "seed = -1\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigErrors, match="unknown key 'replica'"):
        parse_text(MINIMAL + "replica = 10\n")


def test_all_problems_reported_with_lines():
    text = "experiment = rates\nmodel.name = gbm\nseed = -3\nreplicas = 1\np_list = 9\nfoo = 1\nT = abc\n"
    with pytest.raises(ConfigErrors) as info:
        parse_text(text, "x.cfg")
    probs = info.value.problems
    assert len(probs) == 5
    assert any(p.startswith("x.cfg:3:") for p in probs)
    assert any(p.startswith("x.cfg:6:") and "unknown key" for p in probs)
    assert any(p.startswith("x.cfg:7:") for p in probs)


def test_unordered_band_rejected():
    with pytest.raises(ConfigErrors, match="not ordered"):
        parse_text(MINIMAL + "bands.slope = 1:0.6:0.4\n")


def test_unknown_model_rejected():
    with pytest.raises(ConfigErrors, match="registry"):
        parse_text("experiment = rates\nmodel.name = heston\n")


def test_duplicate_key():
    with pytest.raises(ConfigErrors, match="duplicate"):
        parse_text(MINIMAL + "seed = 1\nseed = 2\n")


def test_run_keys_are_ignored():
    cfg = parse_text(MINIMAL + "run.wall_time = 3.2\n")
    assert "run.wall_time" not in cfg.values


def test_nested_blocks():
    cfg = parse_text(MINIMAL + "model.params.mu = 0.3\nmodel.spatial_modulus.kind = logpower\n"
                     "model.spatial_modulus.params.gamma = 2\n")
    assert cfg.model_params() == {"mu": 0.3}
    assert cfg.block("model.spatial_modulus") == {"kind": "logpower", "params": {"gamma": 2.0}}


def test_missing_file():
    with pytest.raises(ConfigErrors, match="cannot read"):
        parse_config("/nonexistent/file.cfg")


def test_digest_ignores_output_dir():
    a = parse_text(MINIMAL + "out = a\n")
    b = parse_text(MINIMAL + "out = b\n")
    c = parse_text(MINIMAL + "seed = 4\n")
    assert a.digest() == b.digest() != c.digest()


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2 ** 63),
    replicas=st.integers(2, 10 ** 6),
    j=st.lists(st.integers(1, 12), min_size=1, max_size=6, unique=True),
    p=st.lists(st.floats(1, 8), min_size=1, max_size=3),
    x0=st.floats(-1e6, 1e6),
    lo=st.floats(-2, 2),
    width=st.floats(0, 2),
)
def test_canonical_form_round_trips(seed, replicas, j, p, x0, lo, width):
    text = (
        f"experiment = rates\nmodel.name = bounded_nondeg\nseed = {seed}\nreplicas = {replicas}\n"
        f"delta_list = {', '.join(f'2^-{k}' for k in j)}\np_list = {', '.join(repr(v) for v in p)}\n"
        f"x0 = {x0!r}\nbands.slope = 1:{lo!r}:{lo + width!r}\n"
    )
    cfg = parse_text(text)
    again = parse_text("\n".join(cfg.canonical_lines()))
    assert again.values == cfg.values
    assert again.digest() == cfg.digest()
