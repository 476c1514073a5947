"""FANet assembly and its configuration / ablation switches."""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .dam import DAM, DEFAULT_MAX_POSITIONS
from .decoder import FusionDecoder, SegmentationMap, decode
from .dem_rfb import DEM, RFB, FusedFeatures, RFBConfig, dem_fuse
from .encoder import EncoderConfig, PyramidEncoder, encode
from .errors import ConfigError
from .fam import FAM
from .nn import ConvReLU, Module


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder_width: int = 16
    enable_fam: bool = True
    enable_dem: bool = True
    enable_rfb: bool = True
    enable_dam: bool = True
    tile_size: int = 64
    threshold: float = 0.5
    rfb: RFBConfig = field(default_factory=RFBConfig)
    dam_max_positions: int = DEFAULT_MAX_POSITIONS

    def __post_init__(self):
        if self.decoder_width < 1:
            raise ConfigError("must be positive", "model.decoder_width")
        if self.tile_size < 32 or self.tile_size % 32:
            raise ConfigError(f"{self.tile_size} is not a positive multiple of 32",
                              "model.tile_size")
        if not 0 < self.threshold < 1:
            raise ConfigError(f"{self.threshold} outside (0, 1)", "model.threshold")

    @classmethod
    def full_size(cls, **overrides):
        return cls(encoder=EncoderConfig.full_size(), decoder_width=64, tile_size=512, **overrides)

    def with_toggles(self, fam, rfb, dam, dem):
        d = self.to_dict()
        d.update(enable_fam=fam, enable_rfb=rfb, enable_dam=dam, enable_dem=dem)
        return ModelConfig.from_dict(d)

    def to_dict(self):
        d = asdict(self)
        d["encoder"]["channels"] = list(self.encoder.channels)
        d["rfb"]["branches"] = [list(b) for b in self.rfb.branches]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        enc = EncoderConfig(**d.pop("encoder", {}))
        rfb = RFBConfig(**d.pop("rfb", {}))
        return cls(encoder=enc, rfb=rfb, **d)


# fixed input standardisation for images in [0, 1]
INPUT_MEAN = 0.5
INPUT_STD = 0.25


def standardize(image):
    shift = T.Tensor(np.full((1,), -INPUT_MEAN / INPUT_STD, dtype=image.dtype))
    return T.add(T.scale(image, 1.0 / INPUT_STD), shift)


ABLATIONS = {
    "baseline": dict(fam=False, rfb=False, dam=False, dem=False),
    "fam": dict(fam=True, rfb=False, dam=False, dem=False),
    "fam_rfb": dict(fam=True, rfb=True, dam=False, dem=False),
    "fam_rfb_dam": dict(fam=True, rfb=True, dam=True, dem=False),
    "full": dict(fam=True, rfb=True, dam=True, dem=True),
}


class FANet(Module):
    """Every sub-module is built regardless of the toggles, in a fixed order,
    so two configs that differ only in toggles share identical weights for a
    given seed.  A disabled module is an identity pass-through."""

    def __init__(self, config=None, seed=0):
        self.config = config or ModelConfig()
        cfg = self.config
        rng = np.random.default_rng(seed)
        w = cfg.decoder_width
        self.encoder = PyramidEncoder(rng, cfg.encoder)
        for i, c in enumerate(cfg.encoder.channels, start=1):
            setattr(self, f"unit{i}", ConvReLU(rng, c, w, 1))
        for i in (1, 2, 3):
            setattr(self, f"fam{i}", FAM(rng))
        self.dem = DEM(rng, w)
        for i in (1, 2, 3, 4):
            setattr(self, f"rfb{i}", RFB(rng, w, cfg.rfb))
        self.dam = DAM(rng, w, max_positions=cfg.dam_max_positions)
        self.decoder = FusionDecoder(rng, w)
        # start from a flat 0.5 prediction instead of a large random bias
        self.decoder.classifier.weight.data[:] = 0
        self.assign_names()

    def forward(self, image, return_features=False):
        cfg = self.config
        H, W = image.shape[2:]
        pyramid = encode(standardize(image), self.encoder)
        units = [getattr(self, f"unit{i}")(x) for i, x in enumerate(pyramid.levels(), start=1)]
        low = units[:3]
        if cfg.enable_fam:
            low = [getattr(self, f"fam{i}")(x) for i, x in enumerate(low, start=1)]
        if cfg.enable_dem:
            refine = (self.rfb1, self.rfb2, self.rfb3) if cfg.enable_rfb else None
            fused = dem_fuse(*low, self.dem, refine)
        else:
            d1 = self.rfb1(low[0]) if cfg.enable_rfb else low[0]
            fused = FusedFeatures(d1, low[1], low[2])
        high = units[3]
        if cfg.enable_rfb:
            high = self.rfb4(high)
        if cfg.enable_dam:
            high = self.dam(high)
        seg = decode(high, fused, self.decoder, (H, W))
        if return_features:
            return seg, {"pyramid": pyramid, "low": low, "fused": fused, "high": high}
        return seg

    def predict_proba(self, images):
        """No-grad forward on a numpy batch (B, 3, H, W); returns (B, 1, H, W)."""
        with T.no_grad():
            seg = self.forward(T.Tensor(np.asarray(images, dtype=np.float32)))
        return seg.probabilities.data


__all__ = ["ABLATIONS", "FANet", "ModelConfig", "SegmentationMap"]
