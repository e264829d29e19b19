"""Experiment configuration: one flat JSON object, unknown keys rejected.

Keys and defaults are the fields of :class:`ExperimentConfig`. ``null``
for ``q`` derives the edge prior from ``er_degree``. ``ordering`` is one of
``eqvar``, ``gt``, ``random`` or ``file:PATH``. ``dataset`` is
``synthetic`` (generated per seed), ``csv`` (``data_path``, optional
``graph_path`` and ``test_path``) or ``sachs`` (like ``csv`` but the shape
must be 853 x 11).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
import json
from pathlib import Path

from .errors import ValidationError
from .likelihood import ModelConfig
from .svgd import KernelConfig, ScoreEstimatorConfig, SVGDConfig

SACHS_SHAPE = (853, 11)


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "linear"
    dataset: str = "synthetic"
    data_path: str | None = None
    graph_path: str | None = None
    test_path: str | None = None
    standardize: bool = False
    d: int = 5
    n: int = 100
    n_test: int = 100
    er_degree: float = 1.0
    ordering: str = "eqvar"
    steps: int = 1000
    particles: int = 30
    alpha_rate: float = 0.05
    learning_rate: float = 0.005
    gamma_z: float = 5.0
    gamma_theta: float = 500.0
    n_graph_samples: int = 64
    n_gumbel_samples: int = 64
    z_estimator: str = "gumbel"
    denominator: str = "soft"
    q: float | None = None
    sigma_obs: float = 0.1
    hidden: int = 5
    seed: int = 0
    seeds_count: int = 1
    checkpoint_every: int = 100
    workers: int = 1
    out: str = "runs"

    def __post_init__(self):
        if self.model not in ("linear", "nonlinear"):
            raise ValidationError(f"model must be linear or nonlinear, got {self.model!r}")
        if self.dataset not in ("synthetic", "csv", "sachs"):
            raise ValidationError(f"unknown dataset {self.dataset!r}")
        if self.dataset != "synthetic" and not self.data_path:
            raise ValidationError(f"dataset={self.dataset} needs data_path")
        if not (self.ordering in ("eqvar", "gt", "random") or self.ordering.startswith("file:")):
            raise ValidationError(f"unknown ordering source {self.ordering!r}")
        for name in ("d",):
            if getattr(self, name) < 2:
                raise ValidationError(f"{name} must be >= 2")
        for name in ("n", "particles", "seeds_count", "n_graph_samples", "n_gumbel_samples",
                     "hidden", "workers", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.n_test < 0 or self.steps < 0 or self.seed < 0:
            raise ValidationError("n_test, steps and seed must be >= 0")
        if self.er_degree < 1:
            raise ValidationError("er_degree must be >= 1")
        for name in ("alpha_rate", "learning_rate", "gamma_z", "gamma_theta", "sigma_obs"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        if self.q is not None and not 0.0 < self.q < 1.0:
            raise ValidationError("q must lie in (0, 1)")
        # delegate estimator option checks
        self.estimator_config()

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ValidationError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        types = {f.name: f.default for f in fields(cls)}
        for key, value in obj.items():
            default = types[key]
            if isinstance(default, bool) and not isinstance(value, bool):
                raise ValidationError(f"{key} must be a boolean")
            if isinstance(default, (int, float)) and not isinstance(default, bool):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ValidationError(f"{key} must be a number")
                if isinstance(default, int) and value != int(value):
                    raise ValidationError(f"{key} must be an integer")
                obj = dict(obj, **{key: type(default)(value)})
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(obj)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    def override(self, **values) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in values.items() if v is not None})

    @property
    def seeds(self) -> list[int]:
        return list(range(self.seed, self.seed + self.seeds_count))

    def model_config(self) -> ModelConfig:
        return ModelConfig(sigma_obs=self.sigma_obs, hidden=(self.hidden,))

    def estimator_config(self) -> ScoreEstimatorConfig:
        return ScoreEstimatorConfig(n_graph_samples=self.n_graph_samples,
                                    n_gumbel_samples=self.n_gumbel_samples,
                                    z_estimator=self.z_estimator, denominator=self.denominator)

    def svgd_config(self) -> SVGDConfig:
        return SVGDConfig(
            n_particles=self.particles,
            steps=self.steps,
            alpha_rate=self.alpha_rate,
            learning_rate=self.learning_rate,
            model=self.model,
            model_cfg=self.model_config(),
            estimator=self.estimator_config(),
            kernel=KernelConfig(self.gamma_z, self.gamma_theta),
            expected_degree=self.er_degree,
            q=self.q,
            workers=self.workers,
        )
