"""Deterministic synthetic evaluator standing in for a real diffusion backend.

The response surface is shaped so that desk-scale experiments exhibit the
qualitative behaviour of a text-to-image pipeline: generation time grows
linearly with sampler steps, quality saturates in steps, peaks at an interior
guidance-rescale value, and gains bounded bonuses from prompt tokens. All
randomness is a pure hash of (genes, noise_seed), so results are identical
across processes and thread schedules.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

from .evaluation import Backend, EvalRequest, EvalResult, cache_key
from .space import Candidate, SearchSpace, SpaceError, TokenSubset, default_space

SURROGATE_ID = "surrogate"

REQUIRED_PARAMS = (
    "inference_steps",
    "guidance_scale",
    "guidance_rescale",
    "seed",
    "positive_prompt",
    "negative_prompt",
)


@dataclass(frozen=True)
class SurrogateConfig:
    """Shape constants of the synthetic time/quality surface.

    The time model spans roughly 1.1-24 s over steps 1-100; the quality model
    is dominated by guidance_rescale and the positive tokens, with steps
    saturating early. Those proportions are what the directional acceptance
    checks rely on, so change them deliberately.
    """

    noise_seed: int = 0
    time_base_ms: float = 900.0
    time_per_step_ms: float = 230.0
    time_jitter_frac: float = 0.02
    quality_base: float = 0.32
    steps_gain: float = 0.10
    steps_saturation: float = 6.0
    rescale_gain: float = 0.30
    rescale_peak: float = 0.55
    rescale_width: float = 0.4
    positive_token_gain: float = 0.05
    negative_token_gain: float = 0.02
    token_gain_decay: float = 0.8
    noise_sigma: float = 0.05

    def __post_init__(self) -> None:
        for name in (
            "time_base_ms",
            "time_per_step_ms",
            "time_jitter_frac",
            "quality_base",
            "steps_gain",
            "steps_saturation",
            "rescale_gain",
            "rescale_peak",
            "rescale_width",
            "positive_token_gain",
            "negative_token_gain",
            "token_gain_decay",
            "noise_sigma",
        ):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"surrogate constant {name} must be finite, got {value}")
        if self.time_per_step_ms <= 0:
            raise ValueError("time model must be strictly increasing in steps")
        if not 0.0 <= self.time_jitter_frac < 1.0:
            raise ValueError("time jitter fraction must be in [0, 1)")


def _hash_units(key: str, noise_seed: int) -> tuple[float, float, float]:
    """Three uniforms in [0, 1) derived from the candidate key and noise seed."""
    digest = hashlib.sha256(f"{key}|{noise_seed}".encode("utf-8")).digest()
    scale = float(2**64)
    u0 = int.from_bytes(digest[0:8], "big") / scale
    u1 = int.from_bytes(digest[8:16], "big") / scale
    u2 = int.from_bytes(digest[16:24], "big") / scale
    return u0, u1, u2


def _bounded_gauss(u1: float, u2: float) -> float:
    """Standard normal via Box-Muller, clipped to [-2, 2]."""
    z = math.sqrt(-2.0 * math.log(max(u1, 1e-300))) * math.cos(2.0 * math.pi * u2)
    return max(-2.0, min(2.0, z))


def surrogate_eval(
    candidate: Candidate, cfg: SurrogateConfig, space: SearchSpace | None = None
) -> EvalResult:
    """Evaluate one candidate of the default text-to-image genome.

    Returns an error result (never raises) when the candidate does not fit
    the expected genome, mirroring how a real backend reports bad requests.
    """
    space = space if space is not None else default_space()
    try:
        space.validate(candidate)
        values = space.param_values(candidate)
        steps = values["inference_steps"]
        rescale = values["guidance_rescale"]
        pos_mask = values["positive_prompt"]
        neg_mask = values["negative_prompt"]
    except (SpaceError, KeyError) as exc:
        return EvalResult(id="", error=f"candidate outside surrogate space: {exc}")

    u0, u1, u2 = _hash_units(cache_key(candidate), cfg.noise_seed)

    jitter = (2.0 * u0 - 1.0) * cfg.time_jitter_frac
    time_ms = (cfg.time_base_ms + cfg.time_per_step_ms * steps) * (1.0 + jitter)

    quality = cfg.quality_base
    quality += cfg.steps_gain * steps / (steps + cfg.steps_saturation)
    quality += cfg.rescale_gain * (1.0 - ((rescale - cfg.rescale_peak) / cfg.rescale_width) ** 2)
    for i, bit in enumerate(pos_mask):
        if bit:
            quality += cfg.positive_token_gain * cfg.token_gain_decay**i
    for i, bit in enumerate(neg_mask):
        if bit:
            quality += cfg.negative_token_gain * cfg.token_gain_decay**i
    quality += cfg.noise_sigma * _bounded_gauss(u1, u2)
    quality = max(0.0, min(1.0, quality))

    return EvalResult(id="", time_ms=time_ms, quality=quality)


class SurrogateBackend(Backend):
    """Backend adapter around :func:`surrogate_eval`; pure, parallel-safe."""

    evaluator_id = SURROGATE_ID
    parallel_safe = True

    def __init__(self, cfg: SurrogateConfig | None = None, space: SearchSpace | None = None):
        self.cfg = cfg if cfg is not None else SurrogateConfig()
        self.space = space if space is not None else default_space()
        missing = [
            name for name in REQUIRED_PARAMS if name not in {p.name for p in self.space.params}
        ]
        if missing:
            raise SpaceError(f"surrogate space missing params: {', '.join(missing)}")
        for param in self.space.params:
            if param.name in ("positive_prompt", "negative_prompt") and not isinstance(
                param.kind, TokenSubset
            ):
                raise SpaceError(f"{param.name} must be a token_subset")

    def evaluate(self, request: EvalRequest) -> EvalResult:
        result = surrogate_eval(request.candidate, self.cfg, self.space)
        return result.with_id(request.id)

    def close(self) -> None:
        pass
