# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled engine backend.

A transliteration of ``pyloop.run_python`` (including the three built-in
policies) onto C arrays.  Every floating-point expression keeps the operand
order of the Python reference so both backends emit bit-identical traces;
the equivalence is enforced by tests.  Change pyloop first, then mirror here.
"""

from libc.stdlib cimport calloc, free

from ..schedulers import SchedulerViolation
from ..traces import IterationRecord, RequestTrace, SimTrace

DEF PHASE_WAITING = 0
DEF PHASE_PREFILLING = 1
DEF PHASE_DECODING = 2
DEF PHASE_FINISHED = 3

DEF KIND_VLLM = 0
DEF KIND_CHUNKED = 1
DEF KIND_PREPONE = 2


cdef struct Buffers:
    double *arrival
    long long *prompt
    long long *output
    long long *offset        # flat token-array offsets, len n+1
    int *phase
    long long *prefill_done
    long long *emitted
    long long *running       # admission-ordered indices of admitted requests
    long long *scratch       # per-iteration member scratch
    double *gen
    double *rel


cdef void _free_buffers(Buffers *b) noexcept:
    free(b.arrival); free(b.prompt); free(b.output); free(b.offset)
    free(b.phase); free(b.prefill_done); free(b.emitted)
    free(b.running); free(b.scratch); free(b.gen); free(b.rel)


def run_kernel(list workload, object engine, int kind, long long chunk_tokens,
               double chunk_overhead_s, long long prepone_n, double t_delay,
               bint t_delay_auto):
    """Run the compiled loop; parameters are pre-unpacked by the dispatcher."""
    cdef Py_ssize_t n = len(workload)
    cdef double base_s = engine.base_s
    cdef double ppt = engine.prefill_per_token_s
    cdef double dps = engine.decode_per_seq_s
    cdef long long max_batch_tokens = engine.max_batch_tokens
    cdef long long max_running_seqs = engine.max_running_seqs
    cdef long long kv_capacity = engine.kv_capacity_tokens

    ids = [spec.request_id for spec in workload]

    cdef Buffers b
    cdef long long total_tokens = 0
    cdef Py_ssize_t i, j
    b.arrival = NULL; b.prompt = NULL; b.output = NULL; b.offset = NULL
    b.phase = NULL; b.prefill_done = NULL; b.emitted = NULL
    b.running = NULL; b.scratch = NULL; b.gen = NULL; b.rel = NULL
    b.arrival = <double *> calloc(n, sizeof(double))
    b.prompt = <long long *> calloc(n, sizeof(long long))
    b.output = <long long *> calloc(n, sizeof(long long))
    b.offset = <long long *> calloc(n + 1, sizeof(long long))
    b.phase = <int *> calloc(n, sizeof(int))
    b.prefill_done = <long long *> calloc(n, sizeof(long long))
    b.emitted = <long long *> calloc(n, sizeof(long long))
    b.running = <long long *> calloc(n, sizeof(long long))
    b.scratch = <long long *> calloc(n, sizeof(long long))
    if (b.arrival == NULL or b.prompt == NULL or b.output == NULL
            or b.offset == NULL or b.phase == NULL or b.prefill_done == NULL
            or b.emitted == NULL or b.running == NULL or b.scratch == NULL):
        _free_buffers(&b)
        raise MemoryError()
    for i in range(n):
        spec = workload[i]
        b.arrival[i] = spec.arrival
        b.prompt[i] = spec.prompt_len
        b.output[i] = spec.output_len
        b.offset[i] = total_tokens
        total_tokens += b.output[i]
    b.offset[n] = total_tokens
    b.gen = <double *> calloc(total_tokens, sizeof(double))
    b.rel = <double *> calloc(total_tokens, sizeof(double))
    if b.gen == NULL or b.rel == NULL:
        _free_buffers(&b)
        raise MemoryError()

    cdef double clock = 0.0
    cdef long long kv_reserved = 0
    cdef Py_ssize_t arrive = 0, admit = 0
    cdef Py_ssize_t running_count = 0
    cdef Py_ssize_t finished = 0

    # Prepone phase bookkeeping (KIND_PREPONE only).
    cdef bint ps_active = False
    cdef long long ps_remaining = 0, ps_k_next = 0, ps_count = 0
    cdef double ps_cap = 0.0, ps_delay = 0.0

    # Per-iteration plan: prefill span items + decode member snapshot.
    cdef Py_ssize_t n_prefill, n_decode
    cdef long long pf_req[1]  # chunked uses a single item; vllm packs a range
    cdef Py_ssize_t pf_lo, pf_hi  # packed prefill = request index range
    cdef long long pf_span_start = 0, pf_span_end = 0  # chunked single item
    cdef bint pf_is_range
    cdef long long prefill_tokens, k_directive
    cdef double overhead, release_delay, release_cap
    cdef long long tok_budget, seq_budget, kv_budget, members, remaining
    cdef double duration, end, release, t_proj, prefill_dur
    cdef Py_ssize_t head, pos, r_idx
    cdef long long iters_planned, prompt_tokens

    iterations = []
    try:
        while finished < n:
            while arrive < n and b.arrival[arrive] <= clock:
                arrive += 1
            if admit == arrive and running_count == 0:
                clock = b.arrival[arrive]
                continue

            # ---- policy: build the next batch ----
            n_prefill = 0
            n_decode = 0
            pf_is_range = True
            pf_lo = pf_hi = 0
            k_directive = 0
            release_delay = 0.0
            release_cap = 0.0
            overhead = 0.0

            if kind == KIND_VLLM or (kind == KIND_PREPONE and not ps_active):
                # FCFS admissible prefix with full prompts packed in one batch.
                tok_budget = max_batch_tokens
                seq_budget = max_running_seqs - running_count
                kv_budget = kv_capacity - kv_reserved
                pf_lo = admit
                pf_hi = admit
                while pf_hi < arrive:
                    if seq_budget < 1 or b.prompt[pf_hi] + b.output[pf_hi] > kv_budget:
                        break
                    if b.prompt[pf_hi] > tok_budget:
                        break
                    seq_budget -= 1
                    kv_budget -= b.prompt[pf_hi] + b.output[pf_hi]
                    tok_budget -= b.prompt[pf_hi]
                    pf_hi += 1
                if kind == KIND_PREPONE and pf_hi > pf_lo:
                    # Count current decoders; trigger a prepone phase if any.
                    n_decode = 0
                    for j in range(running_count):
                        r_idx = <Py_ssize_t> b.running[j]
                        if b.phase[r_idx] == PHASE_DECODING:
                            b.scratch[n_decode] = r_idx
                            n_decode += 1
                    if n_decode > 0 and prepone_n > 0:
                        t_proj = clock
                        iters_planned = 0
                        for j in range(1, prepone_n + 1):
                            members = 0
                            for i in range(n_decode):
                                r_idx = <Py_ssize_t> b.scratch[i]
                                remaining = b.output[r_idx] - b.emitted[r_idx]
                                if remaining >= j:
                                    members += 1
                            if members == 0:
                                break
                            t_proj = t_proj + (base_s + dps * members)
                            iters_planned += 1
                        prompt_tokens = 0
                        for i in range(pf_lo, pf_hi):
                            prompt_tokens += b.prompt[i]
                        prefill_dur = base_s + ppt * prompt_tokens
                        ps_cap = t_proj + prefill_dur
                        if t_delay_auto:
                            ps_delay = prefill_dur / (prepone_n + 1)
                        else:
                            ps_delay = t_delay
                        ps_active = True
                        ps_remaining = iters_planned - 1
                        ps_k_next = 2
                        ps_count = pf_hi - pf_lo
                        k_directive = 1
                        release_delay = ps_delay
                        release_cap = ps_cap
                        pf_lo = pf_hi = 0  # decode-only batch this iteration
                    else:
                        n_prefill = pf_hi - pf_lo
                        n_decode = 0
                else:
                    n_prefill = pf_hi - pf_lo
                    if n_prefill == 0:
                        for j in range(running_count):
                            r_idx = <Py_ssize_t> b.running[j]
                            if b.phase[r_idx] == PHASE_DECODING:
                                b.scratch[n_decode] = r_idx
                                n_decode += 1
            elif kind == KIND_PREPONE:
                # Active prepone phase: staggered decode batches, then the
                # planned prefill prefix.
                n_decode = 0
                for j in range(running_count):
                    r_idx = <Py_ssize_t> b.running[j]
                    if b.phase[r_idx] == PHASE_DECODING:
                        b.scratch[n_decode] = r_idx
                        n_decode += 1
                if ps_remaining > 0 and n_decode > 0:
                    k_directive = ps_k_next
                    ps_remaining -= 1
                    ps_k_next += 1
                    release_delay = ps_delay
                    release_cap = ps_cap
                else:
                    ps_active = False
                    n_decode = 0
                    pf_lo = admit
                    pf_hi = admit + <Py_ssize_t> ps_count
                    n_prefill = ps_count
            else:  # KIND_CHUNKED
                n_decode = 0
                for j in range(running_count):
                    r_idx = <Py_ssize_t> b.running[j]
                    if b.phase[r_idx] == PHASE_DECODING:
                        b.scratch[n_decode] = r_idx
                        n_decode += 1
                tok_budget = max_batch_tokens - n_decode
                head = -1
                for j in range(running_count):
                    r_idx = <Py_ssize_t> b.running[j]
                    if b.phase[r_idx] == PHASE_PREFILLING:
                        head = r_idx
                        break
                if head < 0 and admit < arrive:
                    seq_budget = max_running_seqs - running_count
                    kv_budget = kv_capacity - kv_reserved
                    if seq_budget >= 1 and b.prompt[admit] + b.output[admit] <= kv_budget:
                        head = admit
                if head >= 0:
                    remaining = b.prompt[head] - b.prefill_done[head]
                    if chunk_tokens < remaining:
                        remaining = chunk_tokens
                    if tok_budget < remaining:
                        remaining = tok_budget
                    if remaining >= 1:
                        pf_is_range = False
                        pf_req[0] = head
                        pf_span_start = b.prefill_done[head]
                        pf_span_end = pf_span_start + remaining
                        n_prefill = 1
                        overhead = chunk_overhead_s

            prefill_tokens = 0
            if n_prefill > 0:
                if pf_is_range:
                    for i in range(pf_lo, pf_hi):
                        prefill_tokens += b.prompt[i]
                else:
                    prefill_tokens = pf_span_end - pf_span_start
            if n_prefill == 0 and n_decode == 0:
                raise SchedulerViolation(
                    f"scheduler idle at t={clock} with work pending")

            # ---- advance the clock and emit ----
            duration = base_s + overhead + ppt * prefill_tokens + dps * n_decode
            end = clock + duration
            queue_depth = arrive - admit

            prefill_id_list = []
            if n_prefill > 0:
                if pf_is_range:
                    for i in range(pf_lo, pf_hi):
                        # Admission: reserve the full final KV footprint.
                        b.phase[i] = PHASE_PREFILLING
                        kv_reserved += b.prompt[i] + b.output[i]
                        admit += 1
                        b.running[running_count] = i
                        running_count += 1
                        b.prefill_done[i] = b.prompt[i]
                        pos = <Py_ssize_t> (b.offset[i] + b.emitted[i])
                        b.gen[pos] = end
                        b.rel[pos] = end
                        b.emitted[i] = 1
                        prefill_id_list.append(ids[i])
                        if b.emitted[i] == b.output[i]:
                            b.phase[i] = PHASE_FINISHED
                            kv_reserved -= b.prompt[i] + b.output[i]
                            running_count = _running_remove(
                                b.running, running_count, i)
                            finished += 1
                        else:
                            b.phase[i] = PHASE_DECODING
                else:
                    i = <Py_ssize_t> pf_req[0]
                    if b.phase[i] == PHASE_WAITING:
                        b.phase[i] = PHASE_PREFILLING
                        kv_reserved += b.prompt[i] + b.output[i]
                        admit += 1
                        b.running[running_count] = i
                        running_count += 1
                    b.prefill_done[i] = pf_span_end
                    prefill_id_list.append(ids[i])
                    if b.prefill_done[i] == b.prompt[i]:
                        pos = <Py_ssize_t> (b.offset[i] + b.emitted[i])
                        b.gen[pos] = end
                        b.rel[pos] = end
                        b.emitted[i] = 1
                        if b.emitted[i] == b.output[i]:
                            b.phase[i] = PHASE_FINISHED
                            kv_reserved -= b.prompt[i] + b.output[i]
                            running_count = _running_remove(
                                b.running, running_count, i)
                            finished += 1
                        else:
                            b.phase[i] = PHASE_DECODING

            decode_id_list = []
            for j in range(n_decode):
                i = <Py_ssize_t> b.scratch[j]
                decode_id_list.append(ids[i])
                pos = <Py_ssize_t> (b.offset[i] + b.emitted[i])
                b.gen[pos] = end
                if k_directive > 0:
                    release = end + k_directive * release_delay
                    if release > release_cap:
                        release = release_cap
                    if release < end:
                        release = end
                    b.rel[pos] = release
                else:
                    b.rel[pos] = end
                b.emitted[i] += 1
                if b.emitted[i] == b.output[i]:
                    b.phase[i] = PHASE_FINISHED
                    kv_reserved -= b.prompt[i] + b.output[i]
                    running_count = _running_remove(b.running, running_count, i)
                    finished += 1

            iterations.append(IterationRecord(
                start=clock, duration=duration,
                prefill_tokens=prefill_tokens, decode_seqs=n_decode,
                prefill_ids=tuple(prefill_id_list),
                decode_ids=tuple(decode_id_list),
                queue_depth=queue_depth))
            clock = end

        records = []
        for i in range(n):
            g = [b.gen[b.offset[i] + j] for j in range(b.output[i])]
            r = [b.rel[b.offset[i] + j] for j in range(b.output[i])]
            spec = workload[i]
            records.append(RequestTrace(
                request_id=ids[i], arrival=spec.arrival,
                token_times=tuple(g), prompt_len=spec.prompt_len,
                completed=True,
                delivery_times=tuple(r) if r != g else None))
        return SimTrace(requests=records, iterations=iterations)
    finally:
        _free_buffers(&b)


cdef Py_ssize_t _running_remove(long long *running, Py_ssize_t count,
                                Py_ssize_t idx) noexcept:
    cdef Py_ssize_t j, k
    for j in range(count):
        if running[j] == idx:
            for k in range(j, count - 1):
                running[k] = running[k + 1]
            return count - 1
    return count
