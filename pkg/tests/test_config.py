import pytest
from hypothesis import given, strategies as st

from rwre.config import SchemaError, config_hash, dump_config, parse_text

MINIMAL = """\
seed: 1
law: {family: srw, d: 2}
experiments:
  - id: a
    kind: tgamma
    params: {L_grid: [1, 2]}
"""

BAD_ROW = """\
seed: 1
laws:
  x:
    family: mixture
    kernels:
      - [0.4, 0.1, 0.25, 0.25]
      - [0.4, 0.1, 0.25, 0.24]
    weights: [0.5, 0.5]
experiments: []
"""


def test_minimal_config():
    cfg = parse_text(MINIMAL)
    assert cfg.laws["default"].family == "srw"
    assert cfg.experiment("a").kind == "tgamma"


def test_kernel_row_not_summing_to_one():
    with pytest.raises(SchemaError) as err:
        parse_text(BAD_ROW)
    assert "law 'x'" in str(err.value) and "kernels[1]" in str(err.value)
    assert err.value.line == 7


def test_unknown_key_has_location():
    with pytest.raises(SchemaError) as err:
        parse_text(MINIMAL.replace("kind: tgamma", "kind: tgamma\n    colour: red"))
    assert "colour" in str(err.value) and err.value.line == 6


@pytest.mark.parametrize("text, needle", [
    (MINIMAL.replace("kind: tgamma", "kind: nope"), "nope"),
    (MINIMAL.replace("L_grid", "bogus"), "bogus"),
    (MINIMAL + "  - id: a\n    kind: llt\n", "duplicate"),
    (MINIMAL.replace("    kind: tgamma", "    kind: tgamma\n    law: other"), "other"),
    ("seed: [1\n", "line"),
])
def test_schema_errors(text, needle):
    with pytest.raises(SchemaError) as err:
        parse_text(text)
    assert needle in str(err.value)


def test_round_trip_and_hash_stability():
    cfg = parse_text(MINIMAL)
    again = parse_text(dump_config(cfg))
    assert again.to_dict() == cfg.to_dict()
    assert config_hash(again) == config_hash(cfg)
    reordered = "law: {d: 2, family: srw}\nexperiments:\n  - kind: tgamma\n    params: {L_grid: [1, 2]}\n    id: a\nseed: 1\n"
    assert config_hash(parse_text(reordered)) == config_hash(cfg)
    assert config_hash(parse_text(MINIMAL.replace("seed: 1", "seed: 2"))) != config_hash(cfg)


@given(st.integers(0, 2**63 - 1))
def test_seed_override_from_environment(seed):
    with pytest.MonkeyPatch.context() as mp:
        mp.setenv("RWRE_SEED", str(seed))
        assert parse_text(MINIMAL).seed == seed


def test_invalid_seed_override():
    with pytest.MonkeyPatch.context() as mp:
        mp.setenv("RWRE_SEED", "abc")
        with pytest.raises(SchemaError):
            parse_text(MINIMAL)
