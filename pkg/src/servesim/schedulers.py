"""Batch-formation policies for the iteration-level engine.

Three policies are provided, all FCFS by arrival with request-id tie-breaks:

* ``VllmLike``: whenever the head of the waiting queue fits the engine limits,
  schedule a prefill-only batch of full prompts (packing further waiting
  requests while they fit), stalling all decodes for that iteration.
* ``ChunkedPrefill``: every batch carries all decoding requests plus at most
  one prompt chunk from the head waiting/prefilling request, so a long prompt
  is consumed over several hybrid batches instead of one stall.
* ``DecodePrepone``: before admitting a waiting request's prefill, run ``n``
  extra decode-only iterations for the currently decoding requests and attach
  deferred-release times to those tokens, staggered by ``t_delay`` and capped
  at the projected completion of the upcoming prefill.  The buffered tokens
  are then drip-released while the prefill runs.

Policies are deterministic functions of the queue state; ``DecodePrepone``
keeps its phase bookkeeping in ``QueueState.prepone`` between iterations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

from .workload import RequestSpec

if TYPE_CHECKING:
    from .engine.config import EngineConfig


class SchedulerViolation(RuntimeError):
    """A policy emitted a batch that breaks the engine limits."""


# Policy parameter records -----------------------------------------------------


@dataclass(frozen=True)
class VllmLike:
    pass


@dataclass(frozen=True)
class ChunkedPrefill:
    chunk_tokens: int
    chunk_overhead_s: float = 0.0

    def __post_init__(self):
        if self.chunk_tokens < 1:
            raise ValueError("chunk_tokens must be >= 1")
        if self.chunk_overhead_s < 0:
            raise ValueError("chunk_overhead_s must be non-negative")


@dataclass(frozen=True)
class DecodePrepone:
    """Prepone ``n`` decode tokens ahead of each competing prefill.

    ``t_delay`` staggers the release of the preponed tokens; ``None`` selects
    an automatic spacing of prefill_duration / (n + 1), which spreads the
    buffered tokens evenly across the prefill they bridge.
    """

    n: int
    t_delay: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("prepone n must be >= 1")
        if self.t_delay is not None and self.t_delay < 0:
            raise ValueError("t_delay must be non-negative")


SchedulerPolicy = Union[VllmLike, ChunkedPrefill, DecodePrepone]


# Queue state ------------------------------------------------------------------


class Phase(enum.IntEnum):
    WAITING = 0
    PREFILLING = 1
    DECODING = 2
    FINISHED = 3


@dataclass
class RequestState:
    spec: RequestSpec
    phase: Phase = Phase.WAITING
    prefill_done: int = 0
    emitted: int = 0

    @property
    def remaining_prompt(self) -> int:
        return self.spec.prompt_len - self.prefill_done

    @property
    def remaining_output(self) -> int:
        return self.spec.output_len - self.emitted

    @property
    def kv_reservation(self) -> int:
        # Full final footprint, reserved at admission so a running request can
        # never be starved of cache mid-decode (no preemption support).
        return self.spec.prompt_len + self.spec.output_len


@dataclass
class PreponeState:
    """Progress of an in-flight prepone phase (DecodePrepone only)."""

    remaining: int
    k_next: int
    planned_ids: tuple[str, ...]
    release_cap: float
    t_delay: float


@dataclass
class QueueState:
    """Scheduler-visible snapshot of the engine at an iteration boundary."""

    clock: float
    waiting: list[RequestState]
    running: list[RequestState]
    kv_reserved: int
    engine: "EngineConfig"
    prepone: PreponeState | None = None

    def decoding(self) -> list[RequestState]:
        return [r for r in self.running if r.phase == Phase.DECODING]

    def prefilling(self) -> RequestState | None:
        for r in self.running:
            if r.phase == Phase.PREFILLING:
                return r
        return None


# Batch plans ------------------------------------------------------------------


@dataclass(frozen=True)
class PrefillItem:
    request_id: str
    start: int
    end: int  # exclusive token index within the prompt


@dataclass(frozen=True)
class BatchPlan:
    prefill_items: tuple[PrefillItem, ...] = ()
    decode_ids: tuple[str, ...] = ()
    overhead_s: float = 0.0
    # Deferred-release directive for a prepone batch: every token emitted by
    # this batch is released at min(generation + prepone_k * release_t_delay,
    # release_cap) instead of at generation time.
    prepone_k: int = 0
    release_t_delay: float = 0.0
    release_cap: float = math.inf

    @property
    def is_empty(self) -> bool:
        return not self.prefill_items and not self.decode_ids

    @property
    def prefill_tokens(self) -> int:
        return sum(item.end - item.start for item in self.prefill_items)

    @property
    def decode_seqs(self) -> int:
        return len(self.decode_ids)


def _admissible_prefix(state: QueueState, full_prompt_in_batch: bool,
                       ) -> list[RequestState]:
    """Waiting requests admissible right now, scanned FCFS from the head.

    Scanning stops at the first request that does not fit, preserving arrival
    order (no overtaking).  With ``full_prompt_in_batch`` the whole prompt
    must fit the remaining batch-token budget, and multiple prompts may pack
    into one batch; otherwise (chunked admission) only a single request is
    taken and one chunk of its prompt will be scheduled by the caller.
    """
    eng = state.engine
    token_budget = eng.max_batch_tokens
    seq_budget = eng.max_running_seqs - len(state.running)
    kv_budget = eng.kv_capacity_tokens - state.kv_reserved
    picked = []
    for req in state.waiting:
        if seq_budget < 1 or req.kv_reservation > kv_budget:
            break
        if full_prompt_in_batch and req.spec.prompt_len > token_budget:
            break
        picked.append(req)
        seq_budget -= 1
        kv_budget -= req.kv_reservation
        if full_prompt_in_batch:
            token_budget -= req.spec.prompt_len
        else:
            break  # chunked admission takes one request at a time
    return picked


def next_batch_vllm(state: QueueState) -> BatchPlan:
    """Prefill-prioritized batching: waiting prompts preempt all decoding."""
    admissible = _admissible_prefix(state, full_prompt_in_batch=True)
    if admissible:
        return BatchPlan(prefill_items=tuple(
            PrefillItem(r.spec.request_id, 0, r.spec.prompt_len)
            for r in admissible))
    decoding = state.decoding()
    if decoding:
        return BatchPlan(decode_ids=tuple(r.spec.request_id for r in decoding))
    return BatchPlan()


def next_batch_chunked(state: QueueState, chunk_tokens: int,
                       chunk_overhead_s: float = 0.0) -> BatchPlan:
    """Hybrid batching: all decodes plus one prompt chunk from the head."""
    decoding = state.decoding()
    decode_ids = tuple(r.spec.request_id for r in decoding)
    token_budget = state.engine.max_batch_tokens - len(decoding)

    head = state.prefilling()
    if head is None:
        admitted = _admissible_prefix(state, full_prompt_in_batch=False)
        head = admitted[0] if admitted else None

    if head is not None:
        span = min(chunk_tokens, head.remaining_prompt, token_budget)
        if span >= 1:
            item = PrefillItem(head.spec.request_id, head.prefill_done,
                               head.prefill_done + span)
            return BatchPlan(prefill_items=(item,), decode_ids=decode_ids,
                             overhead_s=chunk_overhead_s)
    return BatchPlan(decode_ids=decode_ids)


def _prepone_projection(state: QueueState, n: int, planned: list[RequestState],
                        ) -> tuple[int, float, float]:
    """Plan a prepone phase: iteration count, prefill duration, projected end.

    The projection replays the upcoming decode iterations exactly (membership
    shrinks as requests run out of output tokens), so the release cap equals
    the true completion time of the planned prefill.
    """
    eng = state.engine
    remaining = [r.remaining_output for r in state.decoding()]
    t = state.clock
    iters = 0
    for j in range(1, n + 1):
        members = sum(1 for rem in remaining if rem >= j)
        if members == 0:
            break
        t = t + (eng.base_s + eng.decode_per_seq_s * members)
        iters += 1
    prompt_tokens = sum(r.spec.prompt_len for r in planned)
    prefill_dur = eng.base_s + eng.prefill_per_token_s * prompt_tokens
    return iters, prefill_dur, t + prefill_dur


def next_batch_prepone(state: QueueState, n: int,
                       t_delay: float | None) -> BatchPlan:
    """Decode-prepone batching; updates ``state.prepone`` as the phase runs."""
    ps = state.prepone
    if ps is not None:
        decoding = state.decoding()
        if ps.remaining > 0 and decoding:
            k = ps.k_next
            ps.remaining -= 1
            ps.k_next += 1
            return BatchPlan(
                decode_ids=tuple(r.spec.request_id for r in decoding),
                prepone_k=k, release_t_delay=ps.t_delay,
                release_cap=ps.release_cap)
        # Phase exhausted (or every decoder finished early): run the prefill
        # that the phase was bridging.
        planned = ps.planned_ids
        state.prepone = None
        by_id = {r.spec.request_id: r for r in state.waiting}
        items = tuple(PrefillItem(rid, 0, by_id[rid].spec.prompt_len)
                      for rid in planned if rid in by_id)
        if items:
            return BatchPlan(prefill_items=items)
        # Planned set vanished (cannot happen in a closed run); fall through.

    admissible = _admissible_prefix(state, full_prompt_in_batch=True)
    if admissible:
        decoding = state.decoding()
        if decoding and n > 0:
            iters, prefill_dur, cap = _prepone_projection(state, n, admissible)
            delay = prefill_dur / (n + 1) if t_delay is None else t_delay
            state.prepone = PreponeState(
                remaining=iters - 1, k_next=2,
                planned_ids=tuple(r.spec.request_id for r in admissible),
                release_cap=cap, t_delay=delay)
            return BatchPlan(
                decode_ids=tuple(r.spec.request_id for r in decoding),
                prepone_k=1, release_t_delay=delay, release_cap=cap)
        return BatchPlan(prefill_items=tuple(
            PrefillItem(r.spec.request_id, 0, r.spec.prompt_len)
            for r in admissible))
    decoding = state.decoding()
    if decoding:
        return BatchPlan(decode_ids=tuple(r.spec.request_id for r in decoding))
    return BatchPlan()


def next_batch(policy: SchedulerPolicy, state: QueueState) -> BatchPlan:
    if isinstance(policy, VllmLike):
        return next_batch_vllm(state)
    if isinstance(policy, ChunkedPrefill):
        return next_batch_chunked(state, policy.chunk_tokens,
                                  policy.chunk_overhead_s)
    if isinstance(policy, DecodePrepone):
        return next_batch_prepone(state, policy.n, policy.t_delay)
    raise TypeError(f"unknown scheduler policy: {policy!r}")


# Config parsing ---------------------------------------------------------------


def scheduler_from_config(obj: dict) -> SchedulerPolicy:
    kind = obj.get("type")
    if kind == "vllm_like":
        return VllmLike()
    if kind == "chunked_prefill":
        return ChunkedPrefill(int(obj["chunk_tokens"]),
                              float(obj.get("chunk_overhead_s", 0.0)))
    if kind == "decode_prepone":
        delay = obj.get("t_delay_s", "auto")
        return DecodePrepone(int(obj["n"]),
                             None if delay == "auto" else float(delay))
    raise ValueError(f"unknown scheduler type: {kind!r}")


def scheduler_to_config(policy: SchedulerPolicy) -> dict:
    if isinstance(policy, VllmLike):
        return {"type": "vllm_like"}
    if isinstance(policy, ChunkedPrefill):
        return {"type": "chunked_prefill", "chunk_tokens": policy.chunk_tokens,
                "chunk_overhead_s": policy.chunk_overhead_s}
    if isinstance(policy, DecodePrepone):
        return {"type": "decode_prepone", "n": policy.n,
                "t_delay_s": "auto" if policy.t_delay is None else policy.t_delay}
    raise TypeError(f"unknown scheduler policy: {policy!r}")


def scheduler_tag(policy: SchedulerPolicy) -> str:
    if isinstance(policy, VllmLike):
        return "vllm_like"
    if isinstance(policy, ChunkedPrefill):
        return f"chunked{policy.chunk_tokens}"
    if isinstance(policy, DecodePrepone):
        return f"prepone{policy.n}"
    raise TypeError(f"unknown scheduler policy: {policy!r}")
