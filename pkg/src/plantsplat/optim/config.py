"""Training configuration."""

from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError

MODES = ("object-centric", "baseline", "post-background-removal")


@dataclass
class TrainConfig:
    lam: float = 0.2
    iterations: int = 30_000
    refine_every: int = 100
    warmup_iters: int = 500
    refine_stop_iter: int = 15_000
    grad_densify_threshold: float = 2e-4
    prune_opacity_threshold: float = 0.1
    # None means percent_dense * scene extent
    split_scale_threshold: float = None
    percent_dense: float = 0.01
    split_factor: float = 1.6
    opacity_reset_every: int = 3000
    max_splats: int = None
    # splats wider than this fraction of the scene extent are culled at
    # refinement; None disables
    cull_scale_fraction: float = 0.1
    # splats whose projected 3-sigma radius exceeded this fraction of the
    # image size since the last refinement are culled; None disables
    cull_screen_fraction: float = 0.15

    position_lr_init: float = 1.6e-4
    position_lr_final: float = 1.6e-6
    sh_dc_lr: float = 2.5e-3
    sh_rest_lr: float = 1.25e-4
    opacity_lr: float = 0.05
    scaling_lr: float = 5e-3
    rotation_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15

    sh_degree: int = 3
    sh_increase_every: int = 1000
    mode: str = "object-centric"
    # None: on for object-centric, off otherwise
    random_background: bool = None
    background: tuple = (0.0, 0.0, 0.0)
    tile_size: int = 16
    init_opacity: float = 0.1
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 1

    def __post_init__(self):
        self.background = tuple(float(v) for v in self.background)
        self.validate()

    def validate(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        if self.iterations <= 0:
            raise ConfigError("iterations must be positive")
        for name in ("refine_every", "grad_densify_threshold", "prune_opacity_threshold",
                     "percent_dense", "split_factor", "sh_increase_every", "tile_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("cull_scale_fraction", "cull_screen_fraction"):
            if getattr(self, name) is not None and getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.split_scale_threshold is not None and self.split_scale_threshold <= 0:
            raise ConfigError("split_scale_threshold must be positive")
        if not 0 <= self.sh_degree <= 3:
            raise ConfigError("sh_degree must be in 0..3")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if len(self.background) != 3:
            raise ConfigError("background must have three components")
        if not 0.0 < self.init_opacity < 1.0:
            raise ConfigError("init_opacity must lie in (0, 1)")
        lrs = ("position_lr_init", "position_lr_final", "sh_dc_lr", "sh_rest_lr",
               "opacity_lr", "scaling_lr", "rotation_lr")
        if any(getattr(self, name) < 0 for name in lrs):
            raise ConfigError("learning rates must be non-negative")

    @property
    def masked(self):
        return self.mode == "object-centric"

    @property
    def use_random_background(self):
        if self.random_background is None:
            return self.mode == "object-centric"
        return bool(self.random_background)

    def to_dict(self):
        d = asdict(self)
        d["background"] = list(self.background)
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown training options: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def updated(self, **overrides):
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        return TrainConfig.from_dict(d)
