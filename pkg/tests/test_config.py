import json

import pytest

from leafarea.config import RunConfig, apply_overrides, load_config
from leafarea.core import ValidationError


def test_defaults():
    cfg = RunConfig()
    assert (cfg.color.canopy_min_ig, cfg.color.pot_max_ig) == (-0.02, -0.25)
    assert cfg.pot.known_diameter_cm == 15.0
    assert (cfg.split.test_fraction, cfg.search.k_folds, cfg.search.n_iter) == (0.3, 6, 30)
    assert cfg.selection.mi_threshold == 0.1 and cfg.selection.boruta_n_iter == 100


def test_layering_flags_win_over_file():
    doc = json.dumps({"seed": 3, "search": {"n_iter": 5}, "dbscan.min_samples": 4}).encode()
    cfg = load_config(doc, {"search.n_iter": "7"}, env={})
    assert (cfg.seed, cfg.search.n_iter, cfg.dbscan.min_samples) == (3, 7, 4)


def test_env_seed_is_only_a_fallback():
    assert load_config(env={"TLA_SEED": "42"}).seed == 42
    assert load_config(overrides={"seed": 5}, env={"TLA_SEED": "42"}).seed == 5
    assert load_config(b'{"seed": 6}', env={"TLA_SEED": "42"}).seed == 6
    assert load_config(env={}).seed == 0


@pytest.mark.parametrize("bad", [
    {"nope": 1}, {"search.nope": 1}, {"search.n_iter": "many"}, {"search.n_iter": 2.5},
    {"split.test_fraction": 1.5}, {"color.pot_max_ig": 0.5}, {"split.stratify_by": "height"},
    {"search.k_folds": 1}, {"threads": 0}, {"features.axis_extent": "maybe"},
])
def test_invalid_overrides(bad):
    with pytest.raises(ValidationError):
        apply_overrides(RunConfig(), bad)


def test_bad_documents():
    with pytest.raises(ValidationError):
        load_config(b"{not json", env={})
    with pytest.raises(ValidationError):
        load_config(b"[1, 2]", env={})


def test_coercion():
    cfg = apply_overrides(RunConfig(), {"search.refit": "false", "mc.grid_resolution": "64", "pot.known_diameter_cm": 12})
    assert cfg.search.refit is False and cfg.mc.grid_resolution == 64 and cfg.pot.known_diameter_cm == 12.0


def test_flat_round_trip():
    cfg = apply_overrides(RunConfig(), {"seed": 9, "crop.side_factor": 1.5})
    assert apply_overrides(RunConfig(), cfg.to_flat()) == cfg
    assert cfg.reconstruction().mc_grid_resolution == 128
