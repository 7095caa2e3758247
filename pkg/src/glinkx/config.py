"""Run configuration: flat key = value files with one section per stage,
shipped hyperparameter profiles, and grid validation.

Example config file::

    [run]
    pe_mode = adjacency
    symmetrize = true
    seeds = 0..9

    [stage2]
    layers_x = 1
    layers_p = 2
    lr = 0.001

    [stage3]
    layers_x = 1
    layers_p = 2
    layers_y = 1
    layers_agg = 1

    [kge]
    dim = 400
    epochs = 50
"""

import configparser
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .kge import KgeConfig
from .pipeline import StageConfig

# Reference per-dataset hyperparameter rows for the two embedding modes
# (branch layer counts, inner dropout, learning rate).
ADJACENCY_PROFILES = {
    "arxiv-year": dict(layers_p=1, layers_x=2, layers_agg=1, dropout=0.5, lr=0.001),
    "pubmed": dict(layers_p=1, layers_x=2, layers_agg=1, dropout=0.5, lr=0.001),
    "squirrel": dict(layers_p=2, layers_x=1, layers_agg=1, dropout=0.5, lr=0.001),
    "yelp-chi": dict(layers_p=2, layers_x=2, layers_agg=1, dropout=0.5, lr=0.01),
}
KGE_PROFILES = {
    "arxiv-year": dict(layers_p=2, layers_x=1, layers_agg=1, dropout=0.5, lr=0.01),
    "ogbn-arxiv": dict(layers_p=2, layers_x=2, layers_agg=2, dropout=0.5, lr=0.001),
    "pubmed": dict(layers_p=2, layers_x=2, layers_agg=2, dropout=0.5, lr=0.01),
    "squirrel": dict(layers_p=2, layers_x=1, layers_agg=2, dropout=0.5, lr=0.001),
    "yelp-chi": dict(layers_p=2, layers_x=2, layers_agg=2, dropout=0.5, lr=0.01),
}

# sweep grids the profiles were drawn from; --paper-grid validates against
# these
GRID = {
    "layers": (1, 2),
    "dropout": (0.5,),
    "lr": (0.1, 0.01, 0.001),
}


@dataclass
class RunConfig:
    pe_mode: str = "adjacency"
    seeds: tuple = (0,)
    split: str = "all"  # "all" or a split index
    symmetrize: bool = False
    stage2: StageConfig = field(default_factory=StageConfig)
    stage3: StageConfig = field(default_factory=StageConfig)
    kge: KgeConfig = field(default_factory=KgeConfig)

    def validate_grid(self):
        """Check the stage hyperparameters against the published sweep grid."""
        for stage_name in ("stage2", "stage3"):
            stage = getattr(self, stage_name)
            for attr in ("layers_x", "layers_p", "layers_y", "layers_agg"):
                if getattr(stage, attr) not in GRID["layers"]:
                    raise ConfigError(
                        f"{stage_name}.{attr}={getattr(stage, attr)} outside "
                        f"the sweep grid {GRID['layers']}"
                    )
            if stage.dropout not in GRID["dropout"]:
                raise ConfigError(
                    f"{stage_name}.dropout={stage.dropout} outside the grid"
                )
            if stage.lr not in GRID["lr"]:
                raise ConfigError(
                    f"{stage_name}.lr={stage.lr} outside the grid {GRID['lr']}"
                )


def profile_for(dataset_name, pe_mode):
    """The shipped hyperparameter row for a known dataset, or None."""
    table = ADJACENCY_PROFILES if pe_mode == "adjacency" else KGE_PROFILES
    return table.get(dataset_name.lower())


def apply_profile(cfg, dataset_name):
    """Return a copy of ``cfg`` with both stages set to the dataset's
    shipped hyperparameter row (no-op for unknown datasets)."""
    row = profile_for(dataset_name, cfg.pe_mode)
    if row is None:
        return cfg
    return replace(
        cfg,
        stage2=replace(cfg.stage2, **row),
        stage3=replace(cfg.stage3, **row),
    )


def parse_seed_spec(text):
    """Seed lists: "0..9" (inclusive range) or "0,2,5"."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            seeds = tuple(range(int(lo), int(hi) + 1))
        else:
            seeds = tuple(int(t) for t in text.split(",") if t.strip() != "")
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}")
    if not seeds:
        raise ConfigError(f"seed list {text!r} is empty")
    return seeds


_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def _coerce(value, target_type):
    if target_type is bool:
        try:
            return _BOOL[value.strip().lower()]
        except KeyError:
            raise ConfigError(f"not a boolean: {value!r}")
    return target_type(value)


def _fill_dataclass(instance, section):
    kwargs = {}
    known = {f.name: f.type for f in fields(instance)}
    for key, value in section.items():
        if key not in known:
            raise ConfigError(f"unknown option {key!r}")
        current = getattr(instance, key)
        kwargs[key] = _coerce(value, type(current))
    return replace(instance, **kwargs)


def load_config(path):
    """Parse a config file into a :class:`RunConfig`."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    cfg = RunConfig()
    for section in parser.sections():
        items = dict(parser[section])
        if section == "run":
            if "pe_mode" in items:
                cfg = replace(cfg, pe_mode=items.pop("pe_mode"))
            if "seeds" in items:
                cfg = replace(cfg, seeds=parse_seed_spec(items.pop("seeds")))
            if "split" in items:
                cfg = replace(cfg, split=items.pop("split"))
            if "symmetrize" in items:
                cfg = replace(
                    cfg, symmetrize=_coerce(items.pop("symmetrize"), bool)
                )
            if items:
                raise ConfigError(f"unknown [run] options {sorted(items)}")
        elif section in ("stage2", "stage3", "kge"):
            try:
                cfg = replace(
                    cfg, **{section: _fill_dataclass(getattr(cfg, section),
                                                     items)}
                )
            except ConfigError as exc:
                raise ConfigError(f"[{section}]: {exc}")
        else:
            raise ConfigError(f"unknown config section [{section}]")
    return cfg
