"""
Configuration management for FLOSS
"""

import os
import yaml
from typing import Dict, Any, List, Optional
from dataclasses import dataclass, field, asdict, fields
from dotenv import load_dotenv

from .exceptions import ConfigurationError


LOSS_KINDS = ("raw", "normalized", "db")
WEIGHTING_KINDS = ("half_delta", "mostly_uniform", "snr_uniform", "uniform")
NOISE_KINDS = ("constant", "active_power", "envelope")
ASSIGNMENTS = ("pit", "euclidean", "ot")
SYNTH_KINDS = ("sine_chirp", "filtered_noise", "am_tones")
WAV_SUBTYPES = ("pcm16", "float32")


@dataclass
class DataConfig:
    """Synthetic data and mixing settings"""
    sample_rate: int = 16000
    n_sources: int = 2
    crop_seconds: float = 0.5
    source_seconds: float = 1.0
    level_range: List[float] = field(default_factory=lambda: [-29.0, -19.0])
    snr_range: List[float] = field(default_factory=lambda: [-10.0, 10.0])
    kinds: List[str] = field(default_factory=lambda: ["sine_chirp", "filtered_noise", "am_tones"])
    max_retries: int = 10


@dataclass
class ModelConfig:
    """Equivariant network settings"""
    n_blocks: int = 2
    embed_dim: int = 32
    n_heads: int = 4
    n_bands: int = 16
    norm_groups: int = 4
    mlp_ratio: int = 2
    bsja_kernel: int = 5
    tspa_kernel: List[int] = field(default_factory=lambda: [5, 3])
    mlp_band_kernel: int = 3
    frame_ms: float = 20.0
    compress_exponent: float = 0.33


@dataclass
class LossConfig:
    """PET loss settings"""
    kind: str = "db"
    time_weighting: str = "mostly_uniform"
    p0: float = 0.01
    r_min: float = -80.0
    r_max: float = 100.0
    db_floor: float = 1e-12
    permuted_denominator: bool = False
    pit_max: int = 4


@dataclass
class NoiseConfig:
    """Noise shaping settings"""
    kind: str = "envelope"
    sigma0: float = 1.0
    env_window_ms: float = 64.0
    env_threshold_db: float = -40.0


@dataclass
class TrainConfig:
    """Training loop settings"""
    steps: int = 5000
    batch_size: int = 8
    lr: float = 1e-4
    warmup_fraction: float = 0.1
    weight_decay: float = 0.01
    ema_decay: float = 0.999
    grad_clip: float = 1.0
    seed: int = 0
    assignment: str = "pit"
    ot_beta: float = 1e4
    ot_max: int = 64
    log_every: int = 50
    checkpoint_every: int = 1000
    output_dir: str = "./runs/default"


@dataclass
class SampleConfig:
    """Sampler settings"""
    schedule: str = "linear:25"
    use_ema: bool = True
    seed: int = 0
    wav_subtype: str = "pcm16"


@dataclass
class EvalConfig:
    """Evaluation settings"""
    n_mixtures: int = 32
    seed: int = 10_000


@dataclass
class AblationConfig:
    """Ablation harness settings"""
    max_total_steps: int = 200_000


@dataclass
class LoggingConfig:
    """Logging configuration settings"""
    level: str = "INFO"
    file: str = "./logs/floss.log"
    rotation: str = "10 MB"
    retention: str = "30 days"
    format: str = "{time:YYYY-MM-DD HH:mm:ss} | {level} | {name}:{function}:{line} | {message}"
    progress: bool = True


@dataclass
class PerformanceConfig:
    """Performance configuration settings"""
    threads: int = 1
    prefetch: int = 4
    device: str = "cpu"


@dataclass
class Config:
    """Main configuration class"""
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    performance: PerformanceConfig = field(default_factory=PerformanceConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "noise": NoiseConfig,
    "train": TrainConfig,
    "sample": SampleConfig,
    "eval": EvalConfig,
    "ablation": AblationConfig,
    "logging": LoggingConfig,
    "performance": PerformanceConfig,
}


class ConfigManager:
    """Manages configuration loading and validation"""

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[List[str]] = None):
        self.config_path = config_path or "./config/config.yaml"
        self.overrides = list(overrides or [])
        self.config = None
        self._load_config()

    def _load_config(self):
        """Load configuration from file, environment variables and overrides"""
        load_dotenv()

        config_data: Dict[str, Any] = {}
        if os.path.exists(self.config_path):
            try:
                with open(self.config_path, "r", encoding="utf-8") as f:
                    config_data = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigurationError(f"Error parsing YAML config file {self.config_path}: {e}")
            except OSError as e:
                raise ConfigurationError(f"Could not read config file {self.config_path}: {e}")
            if not isinstance(config_data, dict):
                raise ConfigurationError(f"Config file {self.config_path} must contain a mapping")

        config_data = self._apply_env_overrides(config_data)
        config_data = self._apply_overrides(config_data, self.overrides)

        self.config = self._dict_to_config(config_data)
        self._validate_config()

    def _apply_env_overrides(self, config_data: Dict[str, Any]) -> Dict[str, Any]:
        """Apply environment variable overrides"""
        env_mappings = {
            "FLOSS_THREADS": ["performance", "threads"],
            "FLOSS_DEVICE": ["performance", "device"],
            "FLOSS_LOG_LEVEL": ["logging", "level"],
            "FLOSS_LOG_FILE": ["logging", "file"],
            "FLOSS_SEED": ["train", "seed"],
            "FLOSS_OUTPUT_DIR": ["train", "output_dir"],
        }
        int_vars = {"FLOSS_THREADS", "FLOSS_SEED"}

        for env_var, config_path in env_mappings.items():
            env_value = os.getenv(env_var)
            if env_value is None:
                continue
            section = config_data.setdefault(config_path[0], {})
            if env_var in int_vars:
                try:
                    section[config_path[1]] = int(env_value)
                except ValueError:
                    raise ConfigurationError(f"Invalid value for {env_var}: {env_value!r} (expected an integer)")
            else:
                section[config_path[1]] = env_value

        return config_data

    @staticmethod
    def _apply_overrides(config_data: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
        """Apply `section.key=value` overrides (values parsed as YAML scalars)"""
        for item in overrides:
            if "=" not in item:
                raise ConfigurationError(f"Override must look like section.key=value, got {item!r}")
            dotted, raw_value = item.split("=", 1)
            parts = dotted.strip().split(".")
            if len(parts) != 2 or not all(parts):
                raise ConfigurationError(f"Override key must be section.key, got {dotted!r}")
            try:
                value = yaml.safe_load(raw_value) if raw_value.strip() else ""
            except yaml.YAMLError as e:
                raise ConfigurationError(f"Cannot parse override value {raw_value!r}: {e}")
            section = config_data.setdefault(parts[0], {})
            if not isinstance(section, dict):
                raise ConfigurationError(f"Config section {parts[0]!r} is not a mapping")
            section[parts[1]] = value
        return config_data

    def _dict_to_config(self, config_data: Dict[str, Any]) -> Config:
        """Convert dictionary to Config object"""
        unknown = set(config_data) - set(_SECTIONS)
        if unknown:
            raise ConfigurationError(f"Unknown config section(s): {', '.join(sorted(unknown))}")

        sections = {}
        for name, cls in _SECTIONS.items():
            values = config_data.get(name) or {}
            if not isinstance(values, dict):
                raise ConfigurationError(f"Config section {name!r} must be a mapping")
            known = {f.name for f in fields(cls)}
            bad = set(values) - known
            if bad:
                raise ConfigurationError(f"Unknown key(s) in section {name!r}: {', '.join(sorted(bad))}")
            try:
                sections[name] = cls(**values)
            except TypeError as e:
                raise ConfigurationError(f"Failed to parse section {name!r}: {e}")

        return Config(**sections)

    def _validate_config(self):
        """Validate configuration settings"""
        validate_config(self.config)

    def get_config(self) -> Config:
        """Get the current configuration"""
        return self.config

    def reload_config(self):
        """Reload configuration from files"""
        self._load_config()


def _ordered(pair, name: str):
    if len(pair) != 2 or not pair[0] <= pair[1]:
        raise ConfigurationError(f"{name} must be an ordered [low, high] pair, got {pair}")


def validate_config(c: Config):
    """Check cross-field constraints; raises ConfigurationError"""
    # Deferred import keeps config importable without torch-heavy modules.
    from ..core.sampler import parse_schedule
    from .exceptions import ValidationError

    if c.data.n_sources < 2:
        raise ConfigurationError("data.n_sources must be at least 2")
    if c.data.sample_rate <= 0:
        raise ConfigurationError("data.sample_rate must be positive")
    if not 0 < c.data.crop_seconds <= c.data.source_seconds:
        raise ConfigurationError("data.crop_seconds must be positive and fit inside data.source_seconds")
    _ordered(c.data.level_range, "data.level_range")
    _ordered(c.data.snr_range, "data.snr_range")
    for kind in c.data.kinds:
        if kind not in SYNTH_KINDS:
            raise ConfigurationError(f"Unknown synthetic source kind {kind!r}; choose from {SYNTH_KINDS}")

    m = c.model
    if m.embed_dim % m.n_heads != 0:
        raise ConfigurationError(f"model.embed_dim ({m.embed_dim}) must be divisible by model.n_heads ({m.n_heads})")
    if m.embed_dim % m.norm_groups != 0:
        raise ConfigurationError(f"model.embed_dim ({m.embed_dim}) must be divisible by model.norm_groups ({m.norm_groups})")
    if m.n_blocks < 1 or m.n_bands < 1:
        raise ConfigurationError("model.n_blocks and model.n_bands must be positive")
    if len(m.tspa_kernel) != 2:
        raise ConfigurationError("model.tspa_kernel must be a [time, band] pair")

    if c.loss.kind not in LOSS_KINDS:
        raise ConfigurationError(f"loss.kind must be one of {LOSS_KINDS}, got {c.loss.kind!r}")
    if c.loss.time_weighting not in WEIGHTING_KINDS:
        raise ConfigurationError(f"loss.time_weighting must be one of {WEIGHTING_KINDS}, got {c.loss.time_weighting!r}")
    if not 0 < c.loss.p0 < 1:
        raise ConfigurationError("loss.p0 must lie in (0, 1)")
    if not c.loss.r_min < c.loss.r_max:
        raise ConfigurationError("loss.r_min must be smaller than loss.r_max")

    if c.noise.kind not in NOISE_KINDS:
        raise ConfigurationError(f"noise.kind must be one of {NOISE_KINDS}, got {c.noise.kind!r}")
    if c.noise.sigma0 <= 0:
        raise ConfigurationError("noise.sigma0 must be positive")

    t = c.train
    if t.steps < 1 or t.batch_size < 1:
        raise ConfigurationError("train.steps and train.batch_size must be positive")
    if not 0 <= t.warmup_fraction < 1:
        raise ConfigurationError("train.warmup_fraction must lie in [0, 1) so that warmup < steps")
    if t.assignment not in ASSIGNMENTS:
        raise ConfigurationError(f"train.assignment must be one of {ASSIGNMENTS}, got {t.assignment!r}")
    if t.ot_beta <= 0:
        raise ConfigurationError("train.ot_beta must be positive")
    if t.assignment == "pit" and c.data.n_sources > c.loss.pit_max:
        raise ConfigurationError(
            f"PIT is limited to {c.loss.pit_max} sources; use train.assignment=euclidean for K={c.data.n_sources}"
        )

    try:
        parse_schedule(c.sample.schedule)
    except ValidationError as e:
        raise ConfigurationError(f"sample.schedule: {e}")
    if c.sample.wav_subtype not in WAV_SUBTYPES:
        raise ConfigurationError(f"sample.wav_subtype must be one of {WAV_SUBTYPES}, got {c.sample.wav_subtype!r}")

    if c.performance.threads < 1:
        raise ConfigurationError("performance.threads must be at least 1")


# Global config instance
_config_manager = None


def get_config(config_path: Optional[str] = None) -> Config:
    """Get the global configuration instance"""
    global _config_manager
    if _config_manager is None:
        _config_manager = ConfigManager(config_path)
    return _config_manager.get_config()


def reload_config():
    """Reload the global configuration"""
    global _config_manager
    if _config_manager is not None:
        _config_manager.reload_config()
