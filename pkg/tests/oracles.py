"""Independent brute-force recomputation of every metric.

Everything here is written as plain Python loops, deliberately sharing no
code path with the package implementation, so the two can cross-check each
other.  Keep it dumb.
"""

import math


def ttft(arrival, times):
    return times[0] - arrival


def tbt(times):
    out = []
    for i in range(1, len(times)):
        out.append(times[i] - times[i - 1])
    return out


def tpot(times):
    return (times[-1] - times[0]) / (len(times) - 1)


def e2e(arrival, times):
    return times[-1] - arrival


def deadlines(policy_kind, params, arrival, times):
    """Deadline list (relative to arrival) for the given policy description.

    policy_kind: "reading_speed" (params: per_token, allowance),
    "e2e" (params: budget), "ttft_tbt" (params: ttft, tbt).
    """
    n = len(times)
    out = []
    if policy_kind == "reading_speed":
        per_token, allowance = params
        for i in range(1, n + 1):
            out.append(allowance + per_token * (i - 1))
    elif policy_kind == "e2e":
        (budget,) = params
        for _ in range(n):
            out.append(budget)
    elif policy_kind == "ttft_tbt":
        ttft_budget, tbt_budget = params
        for i in range(1, n + 1):
            if i == 1:
                out.append(ttft_budget)
            else:
                out.append((times[i - 2] - arrival) + tbt_budget)
    else:
        raise ValueError(policy_kind)
    return out


def peak_lateness(policy_kind, params, arrival, times):
    ds = deadlines(policy_kind, params, arrival, times)
    worst = None
    for i in range(len(times)):
        late = (times[i] - arrival) - ds[i]
        if worst is None or late > worst:
            worst = late
    return worst


def idle_latency(policy_kind, params, arrival, times):
    late = peak_lateness(policy_kind, params, arrival, times)
    return late if late > 0 else 0.0


def meets(policy_kind, params, arrival, times):
    return peak_lateness(policy_kind, params, arrival, times) <= 0


def benefit(policy_kind, params, arrival, times, alpha, penalty):
    return len(times) - alpha * penalty(idle_latency(policy_kind, params,
                                                     arrival, times))


def goodput(requests, policy_kind, params, window_len, per_request=False):
    """requests: list of (arrival, times, complete)."""
    total = 0
    for arrival, times, complete in requests:
        if complete and times and meets(policy_kind, params, arrival, times):
            total += 1 if per_request else len(times)
    return total / window_len


def smooth_goodput(requests, policy_kind, params, window_len, alpha, penalty):
    total = 0.0
    for arrival, times, _complete in requests:
        if not times:
            continue
        total += benefit(policy_kind, params, arrival, times, alpha, penalty)
    return total / window_len


def attainment(requests, policy_kind, params):
    met = 0
    for arrival, times, complete in requests:
        if complete and times and meets(policy_kind, params, arrival, times):
            met += 1
    return met / len(requests)


def nearest_rank(values, q):
    ordered = sorted(values)
    rank = math.ceil(q * len(ordered))
    if rank < 1:
        rank = 1
    return ordered[rank - 1]
