"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored. ``auto`` selects the built-in
default for optional numbers, ``none`` leaves an optional path unset. When
``input`` names a stream file the run is file-driven and the ``synth_*``,
``temporal_smoothness``, ``spatial_steps``, ``noise_sigma`` and ``drift`` keys
must not appear; otherwise a synthetic stream is generated.

Keys
----
variant, lambda, alpha, beta, gamma, gamma_scale, ranks, eps,
max_inner_iters, init_gain, use_updated_spatial, warm_start,
pattern, rate, outlier_density, outlier_magnitude, outlier_sign,
synth_dims, synth_ranks, temporal_smoothness, spatial_steps, noise_sigma,
drift, input, mask_input, adjacency, graph_sigma, seed, seeds, out, timing
"""

import dataclasses
from dataclasses import dataclass

from .engine import Hyperparams, Variant
from .masks import MaskSpec, OutlierSpec, Pattern
from .synth import SynthSpec


class ConfigError(ValueError):
    pass


def _bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(p) for p in text.split(","))


def _opt_float(text):
    return None if text.strip().lower() == "auto" else float(text)


def _opt_str(text):
    return None if text.strip().lower() == "none" else text.strip()


def _fmt_opt_float(value):
    return "auto" if value is None else repr(float(value))


def _fmt_opt_str(value):
    return "none" if value is None else value


def _fmt_ints(value):
    return ",".join(str(v) for v in value)


SYNTH_KEYS = ("synth_dims", "synth_ranks", "temporal_smoothness", "spatial_steps", "noise_sigma", "drift")


@dataclass(frozen=True)
class ExperimentConfig:
    variant: Variant = Variant.STORTD
    lam: float = 0.98
    alpha: float = 100.0
    beta: float = 100.0
    gamma: float | None = None
    gamma_scale: float = 3.0
    ranks: tuple = (3, 3, 2)
    eps: float | None = None
    max_inner_iters: int = 50
    init_gain: float = 100.0
    use_updated_spatial: bool = False
    warm_start: bool = False
    pattern: Pattern = Pattern.RM
    rate: float = 0.4
    outlier_density: float = 0.0
    outlier_magnitude: float = 10.0
    outlier_sign: str = "symmetric"
    synth_dims: tuple = (30, 20, 200)
    synth_ranks: tuple = (3, 3, 2)
    temporal_smoothness: float = 0.0
    spatial_steps: int = 0
    noise_sigma: float = 0.0
    drift: float = 0.0
    input: str | None = None
    mask_input: str | None = None
    adjacency: str | None = None
    graph_sigma: float | None = None
    seed: int = 0
    seeds: int = 1
    out: str = "results"
    timing: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        if self.seeds < 1:
            raise ConfigError("seeds must be at least 1")
        # construct the derived specs once so invalid values fail early
        try:
            self.hyperparams()
            self.mask_spec(0)
            self.outlier_spec(0)
            if self.input is None:
                self.synth_spec(0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def is_synthetic(self):
        return self.input is None

    def hyperparams(self):
        hyper = Hyperparams(
            ranks=self.ranks,
            lam=self.lam,
            alpha=self.alpha,
            beta=self.beta,
            gamma=self.gamma,
            gamma_scale=self.gamma_scale,
            eps=self.eps,
            max_inner_iters=self.max_inner_iters,
            init_gain=self.init_gain,
            use_updated_spatial=self.use_updated_spatial,
            warm_start=self.warm_start,
        )
        return self.variant.apply(hyper)

    def mask_spec(self, seed):
        return MaskSpec(pattern=self.pattern, rate=self.rate, seed=seed)

    def outlier_spec(self, seed):
        return OutlierSpec(
            density=self.outlier_density,
            magnitude=self.outlier_magnitude,
            sign=self.outlier_sign,
            seed=seed,
        )

    def synth_spec(self, seed):
        return SynthSpec(
            dims=self.synth_dims,
            true_ranks=self.synth_ranks,
            temporal_smoothness=self.temporal_smoothness,
            spatial_steps=self.spatial_steps,
            noise_sigma=self.noise_sigma,
            drift=self.drift,
            seed=seed,
        )

    def with_overrides(self, **changes):
        changes = {k: v for k, v in changes.items() if v is not None}
        try:
            return dataclasses.replace(self, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


# config key -> (field name, parser, formatter)
_KEYS = {
    "variant": ("variant", lambda s: Variant(s.strip().upper()), lambda v: v.value),
    "lambda": ("lam", float, repr),
    "alpha": ("alpha", float, repr),
    "beta": ("beta", float, repr),
    "gamma": ("gamma", _opt_float, _fmt_opt_float),
    "gamma_scale": ("gamma_scale", float, repr),
    "ranks": ("ranks", _ints, _fmt_ints),
    "eps": ("eps", _opt_float, _fmt_opt_float),
    "max_inner_iters": ("max_inner_iters", int, str),
    "init_gain": ("init_gain", float, repr),
    "use_updated_spatial": ("use_updated_spatial", _bool, lambda v: str(v).lower()),
    "warm_start": ("warm_start", _bool, lambda v: str(v).lower()),
    "pattern": ("pattern", lambda s: Pattern(s.strip().upper()), lambda v: v.value),
    "rate": ("rate", float, repr),
    "outlier_density": ("outlier_density", float, repr),
    "outlier_magnitude": ("outlier_magnitude", float, repr),
    "outlier_sign": ("outlier_sign", str.strip, str),
    "synth_dims": ("synth_dims", _ints, _fmt_ints),
    "synth_ranks": ("synth_ranks", _ints, _fmt_ints),
    "temporal_smoothness": ("temporal_smoothness", float, repr),
    "spatial_steps": ("spatial_steps", int, str),
    "noise_sigma": ("noise_sigma", float, repr),
    "drift": ("drift", float, repr),
    "input": ("input", _opt_str, _fmt_opt_str),
    "mask_input": ("mask_input", _opt_str, _fmt_opt_str),
    "adjacency": ("adjacency", _opt_str, _fmt_opt_str),
    "graph_sigma": ("graph_sigma", _opt_float, _fmt_opt_float),
    "seed": ("seed", int, str),
    "seeds": ("seeds", int, str),
    "out": ("out", str.strip, str),
    "timing": ("timing", _bool, lambda v: str(v).lower()),
}


def parse_config(text, source="<config>"):
    values = {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        name, parser, _ = _KEYS[key]
        try:
            values[name] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    if values.get("input") is not None:
        clash = sorted(seen.intersection(SYNTH_KEYS))
        if clash:
            raise ConfigError(f"{source}: 'input' cannot be combined with synthetic keys {clash}")
    try:
        return ExperimentConfig(**values)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read(), source=str(path))


def serialize_config(config):
    lines = []
    for key, (name, _, fmt) in _KEYS.items():
        if config.input is not None and key in SYNTH_KEYS:
            continue
        lines.append(f"{key} = {fmt(getattr(config, name))}")
    return "\n".join(lines) + "\n"
