"""Flat ``key = value`` experiment configs.

Keys are ``section.field`` for the module dataclasses (``gan.epochs``,
``seg.lr``, ...) plus a ``run`` section for pipeline-level settings.
Unknown keys, unparsable values and invalid combinations are errors.
Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .diagramgen.recipes import KidneyRecipeConfig, LesionRecipeConfig
from .diagramgen.vae import VaeConfig
from .edgemap import EdgeConfig
from .gan.training import GanConfig
from .maskextract.extract import ExtractConfig
from .preprocess import PreprocessConfig
from .segnet import SegConfig


@dataclass
class RunConfig:
    seed: int = 0
    dataset: str = "toy"             # kidney | skin | toy
    image_size: int = 64
    manifest: str = ""               # input manifest for data-consuming stages
    runs_dir: str = "runs"
    # upstream run directories
    edges_run: str = ""
    vae_run: str = ""
    diagrams_run: str = ""
    gan_run: str = ""
    dataset_run: str = ""
    model_run: str = ""
    # sizes
    n_cones: int = 500
    n_diagrams: int = 600
    n_pairs: int = 600
    # gen-dataset --until-plateau
    plateau_chunk: int = 200
    plateau_patience: int = 2
    plateau_min_delta: float = 0.005
    # toy corpus
    toy_train: int = 300
    toy_eval: int = 50
    toy_finetune: int = 10

    def __post_init__(self):
        if self.dataset not in ("kidney", "skin", "toy"):
            raise ValueError("run.dataset must be kidney, skin or toy")
        if self.image_size < 32 or self.image_size % 32:
            raise ValueError("run.image_size must be a positive multiple of 32")
        if min(self.n_cones, self.n_diagrams, self.n_pairs, self.plateau_chunk) < 1:
            raise ValueError("run sizes must be positive")


SECTIONS = {
    "run": RunConfig,
    "prep": PreprocessConfig,
    "edge": EdgeConfig,
    "vae": VaeConfig,
    "kidney": KidneyRecipeConfig,
    "lesion": LesionRecipeConfig,
    "gan": GanConfig,
    "seg": SegConfig,
    "extract": ExtractConfig,
}


@dataclass
class Config:
    run: RunConfig = field(default_factory=RunConfig)
    prep: PreprocessConfig = field(default_factory=PreprocessConfig)
    edge: EdgeConfig = field(default_factory=EdgeConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    kidney: KidneyRecipeConfig = field(default_factory=KidneyRecipeConfig)
    lesion: LesionRecipeConfig = field(default_factory=LesionRecipeConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    seg: SegConfig = field(default_factory=SegConfig)
    extract: ExtractConfig = field(default_factory=ExtractConfig)

    def with_seed(self, seed: int) -> "Config":
        """Copy with the run seed replaced; module seeds derive from it."""
        values = parse_pairs(self.echo())
        values["run.seed"] = str(seed)
        return build(values)

    def echo(self) -> str:
        lines = []
        for sec in SECTIONS:
            obj = getattr(self, sec)
            for f in fields(obj):
                lines.append(f"{sec}.{f.name} = {format_value(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"

    def digest(self, stage: str) -> str:
        return hashlib.sha256((stage + "\n" + self.echo()).encode()).hexdigest()[:12]


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _parse(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if len(parts) != len(default):
                raise ValueError
            return tuple(_parse(p, d, key) for p, d in zip(parts, default))
        if default is None or isinstance(default, str):
            return raw or None if default is None else raw
    except ValueError:
        pass
    raise ValueError(f"{key}: cannot parse {raw!r} as {type(default).__name__}")


def parse_pairs(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in out:
            raise ValueError(f"line {n}: duplicate key {k}")
        out[k] = v
    return out


def build(values: dict[str, str]) -> Config:
    kwargs = {sec: {} for sec in SECTIONS}
    for key, raw in values.items():
        sec, _, name = key.partition(".")
        if sec not in SECTIONS:
            raise ValueError(f"unknown config key {key!r}")
        defaults = {f.name: f for f in fields(SECTIONS[sec])}
        if name not in defaults:
            raise ValueError(f"unknown config key {key!r}")
        f = defaults[name]
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        kwargs[sec][name] = _parse(raw, default, key)
    seed = kwargs["run"].get("seed", RunConfig.seed)
    # module seeds follow the run seed unless set explicitly
    for sec in ("vae", "gan", "seg"):
        kwargs[sec].setdefault("seed", seed)
    kwargs["gan"].setdefault("image_size", kwargs["run"].get("image_size", RunConfig.image_size))
    try:
        cfg = Config(**{sec: cls(**kwargs[sec]) for sec, cls in SECTIONS.items()})
    except (TypeError, ValueError) as exc:
        raise ValueError(f"invalid config: {exc}") from exc
    if cfg.gan.image_size != cfg.run.image_size:
        raise ValueError("invalid config: gan.image_size must equal run.image_size")
    return cfg


def load_config(path: str | Path, seed: int | None = None) -> Config:
    values = parse_pairs(Path(path).read_text())
    if seed is not None:
        values["run.seed"] = str(seed)
        for sec in ("vae", "gan", "seg"):
            values.pop(f"{sec}.seed", None)
    return build(values)
