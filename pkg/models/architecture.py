"""
architecture.py - Hyperparameters and layer schedule of a codec model
"""
import json
from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple, Optional, Tuple

from utils import config
from utils.errors import ConfigurationError

MODEL_KINDS = ("factorized", "hyperprior")
DISTORTION_KINDS = ("mse", "ms-ssim")


class LayerSpec(NamedTuple):
    filters: int
    kernel: int
    stride: int
    direction: str = "down"
    activation: Optional[str] = None  # "gdn", "igdn", "relu" or None


def normalize_distortion(kind: str) -> str:
    """Accepts the CLI spellings msssim / ms_ssim as well."""
    kind = kind.lower().replace("_", "-")
    return "ms-ssim" if kind == "msssim" else kind


@dataclass
class Architecture:
    n_filters: int = field(default_factory=lambda: config.DEFAULT_N)
    m_filters: int = field(default_factory=lambda: config.DEFAULT_M)
    lmbda: float = 0.01
    distortion: str = field(default_factory=lambda: config.DEFAULT_DISTORTION)
    model_kind: str = field(default_factory=lambda: config.DEFAULT_MODEL_KIND)
    sigma_min: float = field(default_factory=lambda: config.SIGMA_MIN)
    density_filters: Tuple[int, ...] = field(default_factory=lambda: tuple(config.DENSITY_FILTERS))
    init_scale: float = field(default_factory=lambda: config.DENSITY_INIT_SCALE)
    image_channels: int = 3

    def __post_init__(self):
        self.distortion = normalize_distortion(self.distortion)
        self.density_filters = tuple(int(f) for f in self.density_filters)
        if self.n_filters < 1 or self.m_filters < 1:
            raise ConfigurationError(f"filter counts must be positive (N={self.n_filters}, M={self.m_filters})")
        if self.model_kind not in MODEL_KINDS:
            raise ConfigurationError(f"model kind must be one of {MODEL_KINDS}, got '{self.model_kind}'")
        if self.distortion not in DISTORTION_KINDS:
            raise ConfigurationError(f"distortion must be one of {DISTORTION_KINDS}, got '{self.distortion}'")
        if self.lmbda < 0:
            raise ConfigurationError(f"lambda must be non-negative, got {self.lmbda}")
        if self.sigma_min <= 0:
            raise ConfigurationError(f"sigma_min must be positive, got {self.sigma_min}")
        if any(f < 1 for f in self.density_filters):
            raise ConfigurationError(f"density filters must be positive, got {self.density_filters}")

    @property
    def analysis_layers(self) -> List[LayerSpec]:
        n, m = self.n_filters, self.m_filters
        return [LayerSpec(n, 5, 2, "down", "gdn"),
                LayerSpec(n, 5, 2, "down", "gdn"),
                LayerSpec(n, 5, 2, "down", "gdn"),
                LayerSpec(m, 5, 2, "down")]

    @property
    def synthesis_layers(self) -> List[LayerSpec]:
        n = self.n_filters
        return [LayerSpec(n, 5, 2, "up", "igdn"),
                LayerSpec(n, 5, 2, "up", "igdn"),
                LayerSpec(n, 5, 2, "up", "igdn"),
                LayerSpec(self.image_channels, 5, 2, "up")]

    @property
    def hyper_analysis_layers(self) -> List[LayerSpec]:
        n = self.n_filters
        return [LayerSpec(n, 3, 1, "down", "relu"),
                LayerSpec(n, 5, 2, "down", "relu"),
                LayerSpec(n, 5, 2, "down")]

    @property
    def hyper_synthesis_layers(self) -> List[LayerSpec]:
        n, m = self.n_filters, self.m_filters
        return [LayerSpec(n, 5, 2, "up", "relu"),
                LayerSpec(n, 5, 2, "up", "relu"),
                LayerSpec(m, 3, 1, "down")]

    @property
    def analysis_downsampling(self) -> int:
        return _product_of_strides(self.analysis_layers)

    @property
    def total_downsampling(self) -> int:
        return self.analysis_downsampling * _product_of_strides(self.hyper_analysis_layers)

    @property
    def pad_multiple(self) -> int:
        """Image extents must be multiples of this before the analysis transform."""
        if self.model_kind == "hyperprior":
            return self.total_downsampling
        return self.analysis_downsampling

    @property
    def distortion_scale(self) -> float:
        return config.DISTORTION_SCALE[self.distortion]

    def to_dict(self) -> dict:
        data = asdict(self)
        data["density_filters"] = list(self.density_filters)
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "Architecture":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown architecture fields: {sorted(unknown)}")
        return cls(**known)

    @classmethod
    def from_json(cls, text: str) -> "Architecture":
        return cls.from_dict(json.loads(text))


def _product_of_strides(layers: List[LayerSpec]) -> int:
    factor = 1
    for layer in layers:
        factor *= layer.stride
    return factor
