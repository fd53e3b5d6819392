"""Engine cost model and capacity limits.

Iteration latency follows an affine surrogate of GPU batch cost:

    duration = base_s + prefill_per_token_s * prefill_tokens
             + decode_per_seq_s * decode_seqs

The defaults make one 512-token prefill cost about as much as 25 decode-only
iterations, the asymmetry that makes prefill preemption visible in decode
gaps.  Coefficients are configuration, not measurements; calibrate them per
deployment if absolute numbers matter.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class EngineConfig:
    base_s: float = 0.005
    prefill_per_token_s: float = 0.0003
    decode_per_seq_s: float = 0.001
    max_batch_tokens: int = 2048
    max_running_seqs: int = 64
    kv_capacity_tokens: int = 120_000

    def __post_init__(self):
        if self.base_s <= 0:
            # Token timestamps must be strictly increasing per request, so
            # every iteration needs a positive floor cost.
            raise ValueError("base_s must be positive")
        if self.prefill_per_token_s < 0 or self.decode_per_seq_s < 0:
            raise ValueError("cost coefficients must be non-negative")
        if min(self.max_batch_tokens, self.max_running_seqs,
               self.kv_capacity_tokens) < 1:
            raise ValueError("limits must be >= 1")
        if self.max_batch_tokens < self.max_running_seqs:
            # Each decode member consumes one token of batch budget, so a full
            # decode batch must always be schedulable.
            raise ValueError("max_batch_tokens must cover max_running_seqs")


def iteration_time(prefill_tokens: int, decode_seqs: int, engine: EngineConfig,
                   extra_base_s: float = 0.0) -> float:
    """Affine iteration latency; an empty batch costs ``base_s``."""
    if prefill_tokens < 0 or decode_seqs < 0:
        raise ValueError("negative batch composition")
    return (engine.base_s + extra_base_s
            + engine.prefill_per_token_s * prefill_tokens
            + engine.decode_per_seq_s * decode_seqs)


def engine_from_config(obj: dict) -> EngineConfig:
    return EngineConfig(
        base_s=float(obj.get("base_s", EngineConfig.base_s)),
        prefill_per_token_s=float(
            obj.get("prefill_per_token_s", EngineConfig.prefill_per_token_s)),
        decode_per_seq_s=float(
            obj.get("decode_per_seq_s", EngineConfig.decode_per_seq_s)),
        max_batch_tokens=int(
            obj.get("max_batch_tokens", EngineConfig.max_batch_tokens)),
        max_running_seqs=int(
            obj.get("max_running_seqs", EngineConfig.max_running_seqs)),
        kv_capacity_tokens=int(
            obj.get("kv_capacity_tokens", EngineConfig.kv_capacity_tokens)),
    )


def engine_to_config(engine: EngineConfig) -> dict:
    return {
        "base_s": engine.base_s,
        "prefill_per_token_s": engine.prefill_per_token_s,
        "decode_per_seq_s": engine.decode_per_seq_s,
        "max_batch_tokens": engine.max_batch_tokens,
        "max_running_seqs": engine.max_running_seqs,
        "kv_capacity_tokens": engine.kv_capacity_tokens,
    }
