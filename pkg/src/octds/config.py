"""Pipeline configuration: one JSON document with a section per stage.

Precedence is defaults < config file < command-line flags. Unknown keys are
rejected with the offending field named.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .acquisition import AcquisitionConfig, NoiseConfig
from .exceptions import ConfigurationError, ValidationError
from .phantom import PhantomModel
from .undistort import BinarizeParams, EnhanceParams, RansacParams

DESK_PHANTOM = {
    "hole_radius": 2000.0,
    "hole_length": 8000.0,
    "scatter_base": 0.7,
    "random_pockets": {"count": 30, "radius_range": [300.0, 700.0], "max_depth": 650.0},
}

DEFAULTS = {
    "seed": 0,
    "parallel": 1,
    "out": "octds_out",
    "phantom": DESK_PHANTOM,
    "acquisition": {},
    "enhance": {},
    "binarize": {},
    "ransac": {},
    "surface": {"crop_margin": 8, "min_peak": None},
    "segment": {"channel": "depth", "polarity": None},
    "endoscope": {"enabled": True, "feed_step": 200.0, "frame_size": 256, "window": None,
                  "columns": 1024, "speckle_sigma": 0.0},
}

_SURFACE_KEYS = {"crop_margin", "min_peak"}
_SEGMENT_KEYS = {"channel", "polarity"}
_ENDO_KEYS = set(DEFAULTS["endoscope"])


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("random_pockets",):
            out[k] = _merge(out[k], v, f"{path}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PipelineConfig:
    phantom: PhantomModel
    acquisition: AcquisitionConfig
    enhance: EnhanceParams
    binarize: BinarizeParams
    ransac: RansacParams
    crop_margin: int = 8
    min_peak: Optional[float] = None
    channel: str = "depth"
    polarity: Optional[str] = None
    endoscope: dict = field(default_factory=lambda: dict(DEFAULTS["endoscope"]))
    out: str = "octds_out"
    seed: int = 0
    parallel: int = 1
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d, seed_phantom=False):
        """Build from a parsed config. A ``phantom`` section replaces the
        desk default as a whole; ``seed_phantom`` forces ``phantom.rng_seed``
        to the top-level seed (the ``--seed`` flag)."""
        unknown = set(d) - set(DEFAULTS)
        if unknown:
            raise ValidationError(f"unknown config section(s): {sorted(unknown)}", field=sorted(unknown)[0])
        user_phantom = d.get("phantom")
        d = _merge(DEFAULTS, d)
        if user_phantom is not None:
            d["phantom"] = copy.deepcopy(user_phantom)
        seed = d["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer", field="seed")
        par = d["parallel"]
        if not isinstance(par, int) or par < 1:
            raise ValidationError("parallel must be a positive integer", field="parallel")
        ph = dict(d["phantom"])
        if seed_phantom or "rng_seed" not in ph:
            ph["rng_seed"] = seed
        _check_keys(d["surface"], _SURFACE_KEYS, "surface")
        _check_keys(d["segment"], _SEGMENT_KEYS, "segment")
        _check_keys(d["endoscope"], _ENDO_KEYS, "endoscope")
        if d["segment"]["channel"] not in ("depth", "intensity"):
            raise ValidationError("segment.channel must be 'depth' or 'intensity'", field="segment.channel")
        return cls(
            phantom=_section(PhantomModel.from_dict, ph, "phantom"),
            acquisition=_section(AcquisitionConfig.from_dict, d["acquisition"], "acquisition"),
            enhance=_section(lambda x: EnhanceParams(**x), d["enhance"], "enhance"),
            binarize=_section(lambda x: BinarizeParams(**x), d["binarize"], "binarize"),
            ransac=_section(lambda x: RansacParams(**x), d["ransac"], "ransac"),
            crop_margin=int(d["surface"]["crop_margin"]),
            min_peak=d["surface"]["min_peak"],
            channel=d["segment"]["channel"],
            polarity=d["segment"]["polarity"],
            endoscope=dict(d["endoscope"]),
            out=str(d["out"]),
            seed=seed,
            parallel=par,
            raw=d,
        )

    def resolved(self):
        """Fully expanded config, suitable for writing next to the outputs."""
        return {
            "seed": self.seed,
            "phantom": self.phantom.to_dict(),
            "acquisition": self.acquisition.to_dict(),
            "enhance": asdict(self.enhance),
            "binarize": asdict(self.binarize),
            "ransac": asdict(self.ransac),
            "surface": {"crop_margin": self.crop_margin, "min_peak": self.min_peak},
            "segment": {"channel": self.channel, "polarity": self.polarity},
            "endoscope": self.endoscope,
        }


def _check_keys(d, allowed, section):
    unknown = set(d) - allowed
    if unknown:
        k = sorted(unknown)[0]
        raise ValidationError(f"unknown field {section}.{k}", field=f"{section}.{k}")


def _section(build, d, name):
    try:
        return build(d)
    except ValidationError as exc:
        field_ = f"{name}.{exc.field}" if exc.field else name
        raise ValidationError(f"{name}: {exc}", field=field_) from exc
    except TypeError as exc:
        raise ValidationError(f"{name}: {exc}", field=name) from exc


def load_config(path=None, overrides=None) -> PipelineConfig:
    """Read ``path`` (optional) and apply flag ``overrides`` (a nested dict)."""
    d = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file not found: {p}")
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ValidationError("config root must be a JSON object", field="<root>")
    overrides = overrides or {}
    d = _merge(d, overrides)
    return PipelineConfig.from_dict(d, seed_phantom="seed" in overrides)
