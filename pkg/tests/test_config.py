from pathlib import Path

import pytest

from hiqc.config import KEYS, RunConfig, apply, dump_config, load_config, parse_config
from hiqc.errors import ConfigError


def test_defaults_carry_declared_values():
    c = RunConfig()
    assert c.train.learning_rate == 1e-3 and c.train.early_stop_patience == 5
    assert (c.weights.lam, c.weights.w_intra, c.weights.w_contrastive, c.weights.tau) == (1.0, 0.9, 0.1, 0.5)
    s = c.sampler
    assert (s.k_neighbors, s.w_child, s.epsilon_smoothing, s.budget_per_round, s.max_rounds) == (10, 0.3, 1e-3, 0.05, 10)
    assert (s.hnsw.m, s.hnsw.ef_construction, s.hnsw.ef_search) == (16, 200, 64)
    assert c.model.d_q == c.model.d_h == c.model.d_g == 64


def test_parse_sets_nested_fields():
    text = """
    # profile
    epochs = 7
    learning_rate = 0.01   # faster
    w_child = 0.5
    tau = 0.25
    index_kind = levenshtein
    hnsw_ef_search = 32
    use_label_hierarchy = false
    seeds = 0, 1, 2
    seed = 4
    taxonomy = data/tax.txt
    """
    c = parse_config(text)
    assert c.train.epochs == 7 and c.train.learning_rate == 0.01
    assert c.sampler.w_child == 0.5 and c.sampler.index_kind == "levenshtein"
    assert c.weights.tau == 0.25 and c.sampler.hnsw.ef_search == 32
    assert c.model.use_label_hierarchy is False
    assert c.seeds == (0, 1, 2)
    assert c.train.seed == c.sampler.seed == 4
    assert c.taxonomy == Path("data/tax.txt")


def test_round_trip(tmp_path):
    c = parse_config("epochs = 3\nw_intra = 0.7\nseeds = 5,6\nunlabeled_mode = file\nseed = 2\n")
    path = tmp_path / "c.txt"
    path.write_text(dump_config(c))
    assert load_config(path) == c
    assert dump_config(load_config(path)) == dump_config(c)


def test_every_key_round_trips():
    c = RunConfig()
    for key in KEYS:
        value = c.to_dict()[key]
        assert apply(c, key, str(value)) == c, key


@pytest.mark.parametrize(
    "text, line",
    [
        ("epochs = 3\nbogus = 1\n", 2),
        ("epochs = three\n", 1),
        ("epochs\n", 1),
        ("\n\nw_intra = 2\n", 3),
        ("use_label_hierarchy = maybe\n", 1),
        ("unlabeled_mode = both\n", 1),
    ],
)
def test_bad_lines_name_the_line(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == line


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.txt")


def test_empty_seeds_rejected():
    with pytest.raises(ConfigError):
        parse_config("seeds = \n")
