"""Run configuration: typed sections, JSON loading and dotted-key overrides."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from .core import ValidationError


@dataclass(frozen=True)
class CropConfig:
    side_factor: float = 1.0


@dataclass(frozen=True)
class DbscanConfig:
    eps_rel: float = 0.01
    min_samples: int = 10


@dataclass(frozen=True)
class ColorConfig:
    canopy_min_ig: float = -0.02
    pot_max_ig: float = -0.25


@dataclass(frozen=True)
class PotConfig:
    known_diameter_cm: float = 15.0


@dataclass(frozen=True)
class McConfig:
    grid_resolution: int = 128
    padding: int = 2


@dataclass(frozen=True)
class PoissonConfig:
    grid_cap: int = 256
    cg_tol: float = 1e-6
    cg_max_iter: int = 200


@dataclass(frozen=True)
class NormalsConfig:
    k: int = 10


@dataclass(frozen=True)
class FeaturesConfig:
    axis_extent: bool = False


@dataclass(frozen=True)
class SelectionConfig:
    mi_threshold: float = 0.1
    mi_bins: int = 10
    boruta_n_iter: int = 100
    boruta_alpha: float = 0.05
    enabled: bool = True


@dataclass(frozen=True)
class SearchConfig:
    n_iter: int = 30
    k_folds: int = 6
    refit: bool = True  # False: use the best fold's model on the test set


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.3
    strat_bins: int = 5
    stratify_by: str = "tla"  # or "cultivar"


@dataclass(frozen=True)
class RunConfig:
    crop: CropConfig = field(default_factory=CropConfig)
    dbscan: DbscanConfig = field(default_factory=DbscanConfig)
    color: ColorConfig = field(default_factory=ColorConfig)
    pot: PotConfig = field(default_factory=PotConfig)
    mc: McConfig = field(default_factory=McConfig)
    poisson: PoissonConfig = field(default_factory=PoissonConfig)
    normals: NormalsConfig = field(default_factory=NormalsConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    seed: int = 0
    threads: int = 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_flat(self) -> dict:
        out = {}
        for k, v in self.to_dict().items():
            if isinstance(v, dict):
                out.update({f"{k}.{kk}": vv for kk, vv in v.items()})
            else:
                out[k] = v
        return out

    def reconstruction(self):
        from .reconstruct import ReconstructionConfig

        return ReconstructionConfig(
            mc_grid_resolution=self.mc.grid_resolution, mc_padding=self.mc.padding,
            poisson_grid_cap=self.poisson.grid_cap, poisson_cg_tol=self.poisson.cg_tol,
            poisson_cg_max_iter=self.poisson.cg_max_iter, normals_k=self.normals.k, seed=self.seed,
        )


def _flatten(d: Mapping, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(value, current, key):
    """Convert ``value`` to the type of the default ``current``."""
    try:
        if isinstance(current, bool):
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(current, int):
            f = float(value)
            if f != int(f):
                raise ValueError(value)
            return int(f)
        if isinstance(current, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ValidationError(f"config key {key!r}: cannot use {value!r} as {type(current).__name__}") from None


def apply_overrides(cfg: RunConfig, overrides: Mapping) -> RunConfig:
    """Return ``cfg`` with dotted or nested keys replaced; unknown keys are errors."""
    flat = _flatten(overrides)
    known = cfg.to_flat()
    unknown = sorted(k for k in flat if k not in known)
    if unknown:
        raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")
    sections = {}
    top = {}
    for key, value in flat.items():
        v = _coerce(value, known[key], key)
        if "." in key:
            sec, name = key.split(".", 1)
            sections.setdefault(sec, {})[name] = v
        else:
            top[key] = v
    for sec, vals in sections.items():
        top[sec] = dataclasses.replace(getattr(cfg, sec), **vals)
    out = dataclasses.replace(cfg, **top)
    _validate(out)
    return out


def _validate(cfg: RunConfig):
    if not cfg.crop.side_factor > 0:
        raise ValidationError("crop.side_factor must be positive")
    if not cfg.dbscan.eps_rel > 0 or cfg.dbscan.min_samples < 1:
        raise ValidationError("dbscan.eps_rel must be > 0 and dbscan.min_samples >= 1")
    if not cfg.color.pot_max_ig < cfg.color.canopy_min_ig:
        raise ValidationError("color.pot_max_ig must be below color.canopy_min_ig")
    if not 0 < cfg.split.test_fraction < 1:
        raise ValidationError("split.test_fraction must be in (0, 1)")
    if cfg.split.stratify_by not in ("tla", "cultivar"):
        raise ValidationError("split.stratify_by must be 'tla' or 'cultivar'")
    if cfg.search.k_folds < 2 or cfg.search.n_iter < 1:
        raise ValidationError("search.k_folds must be >= 2 and search.n_iter >= 1")
    if cfg.threads < 1:
        raise ValidationError("threads must be >= 1")


def load_config(data: Optional[bytes] = None, overrides: Optional[Mapping] = None,
                env: Optional[Mapping] = None) -> RunConfig:
    """Defaults, then the JSON document, then ``overrides`` (flags win).

    When no layer sets the seed, the TLA_SEED environment variable does.
    """
    env = os.environ if env is None else env
    cfg = RunConfig()
    layers = []
    if data:
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        layers.append(doc)
    if overrides:
        layers.append(dict(overrides))
    seed_given = any("seed" in _flatten(layer) for layer in layers)
    if not seed_given and env.get("TLA_SEED"):
        cfg = apply_overrides(cfg, {"seed": env["TLA_SEED"]})
    for layer in layers:
        cfg = apply_overrides(cfg, layer)
    return cfg
