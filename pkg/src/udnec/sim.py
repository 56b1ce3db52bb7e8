"""Slot-level Monte Carlo simulator of coupled FIFO queues with state-dependent
interference.

Event order within a slot is fixed: the active set is read off the queue
states at the slot start, every active SBS serves against a fresh block-fading
draw, and only then do new arrivals join the queues.  An arrival in slot t is
therefore first servable in slot t+1, and an SBS interferes in slot t exactly
when its queue was nonempty at the start of t.

Recorded statistics (all time averages over the post-warmup slots):

* ``busy_fraction`` uses the slot-start state - the one that creates
  interference;
* the queue-threshold indicator and the mean queue length use the
  post-service, pre-arrival backlog, which is the stationary state whose tail
  the effective-bandwidth/effective-capacity balance characterizes (sampling
  at the slot start instead provably inflates the tail prefactor by the mass
  of the just-arrived, never-yet-served packet);
* per-bit FIFO delays count departure slot minus arrival slot.

Randomness: one master seed expands into independent per-run, per-purpose
streams (fading / arrival indicators / packet sizes), so a replication is
bit-reproducible from ``(seed, run_index)`` alone regardless of host
parallelism, and model-vs-baseline comparisons can share seeds pathwise.
"""
from __future__ import annotations

import json
import math
import warnings
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .analytics import IdleProfile, TrafficModel
from .model import LinkGainMatrix

__all__ = [
    "SimConfig",
    "RunStats",
    "MetricCI",
    "SimStats",
    "run_replication",
    "run_full_interference_replication",
    "aggregate",
    "simulate",
    "collect_sinr_samples",
    "write_run_stats_jsonl",
    "read_run_stats_jsonl",
]

_Z95 = 1.96  # normal-approximation 95% quantile


@dataclass(frozen=True)
class SimConfig:
    """Replication shape and measurement knobs."""

    slots: int = 100_000
    runs: int = 2000
    warmup: int | None = None          # None -> 5% of slots
    seed: int = 0
    q_threshold: float = 10.0          # bits
    record_sinr: bool = False
    max_sinr_samples: int = 100_000
    delay_threshold_slots: int | None = None

    def __post_init__(self):
        warmup = self.slots // 20 if self.warmup is None else self.warmup
        object.__setattr__(self, "warmup", int(warmup))
        if not self.slots > self.warmup >= 0:
            raise ValueError("need slots > warmup >= 0")
        if self.runs < 1:
            raise ValueError("need at least one run")
        if self.q_threshold < 0:
            raise ValueError("queue threshold cannot be negative")


@dataclass
class RunStats:
    """Raw per-replication statistics (one record per run)."""

    run_index: int
    slots: int
    warmup: int
    violation: np.ndarray          # fraction of recorded slots with backlog > threshold
    mean_queue: np.ndarray         # bits
    mean_delay_slots: np.ndarray   # nan when nothing departed
    delay_violation: np.ndarray    # nan when not measured / nothing departed
    busy_fraction: np.ndarray
    throughput: np.ndarray         # bits/s
    arrived_bits: np.ndarray       # whole run, warmup included
    served_bits: np.ndarray        # whole run, warmup included
    final_queue: np.ndarray
    sinr_samples: list | None = None

    def to_dict(self) -> dict:
        d = {
            "run_index": self.run_index,
            "slots": self.slots,
            "warmup": self.warmup,
            "violation": self.violation.tolist(),
            "mean_queue": self.mean_queue.tolist(),
            "mean_delay_slots": self.mean_delay_slots.tolist(),
            "delay_violation": self.delay_violation.tolist(),
            "busy_fraction": self.busy_fraction.tolist(),
            "throughput": self.throughput.tolist(),
            "arrived_bits": self.arrived_bits.tolist(),
            "served_bits": self.served_bits.tolist(),
            "final_queue": self.final_queue.tolist(),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunStats":
        arr = lambda k: np.asarray(d[k], dtype=float)
        return cls(
            run_index=int(d["run_index"]), slots=int(d["slots"]), warmup=int(d["warmup"]),
            violation=arr("violation"), mean_queue=arr("mean_queue"),
            mean_delay_slots=arr("mean_delay_slots"), delay_violation=arr("delay_violation"),
            busy_fraction=arr("busy_fraction"), throughput=arr("throughput"),
            arrived_bits=arr("arrived_bits"), served_bits=arr("served_bits"),
            final_queue=arr("final_queue"))


def _streams(seed: int, run_index: int):
    """Independent per-run generators for fading, arrival indicators, and sizes."""
    mk = lambda purpose: np.random.default_rng(
        np.random.SeedSequence(entropy=(seed, run_index, purpose)))
    return mk(0), mk(1), mk(2)


def run_replication(gains: LinkGainMatrix, traffic: TrafficModel, config: SimConfig,
                    run_index: int, full_interference: bool = False) -> RunStats:
    """Simulate one replication; deterministic given (config.seed, run_index)."""
    n = gains.n
    if traffic.n != n:
        raise ValueError("gain matrix and traffic model disagree on the SBS count")
    slots, warmup = config.slots, config.warmup
    q_threshold = config.q_threshold
    bandwidth = gains.bandwidth_hz
    slot_s = traffic.slot
    delay_cut = config.delay_threshold_slots

    # flattened gain lookup: bb[j * n + i] is SBS j -> UE of SBS i
    bb = [float(v) for v in gains.beta_bar.reshape(-1)]
    p_list = [float(v) for v in traffic.p]
    size_list = [float(v) for v in traffic.mean_size]
    all_idx = list(range(n))

    fading_rng, arrival_rng, size_rng = _streams(config.seed, run_index)

    queue = [0.0] * n
    fifo = [deque() for _ in range(n)]  # per SBS: [arrival_slot, bits] pairs
    busy_slots = [0] * n
    violation_slots = [0] * n
    queue_sum = [0.0] * n
    served_total = [0.0] * n
    served_recorded = [0.0] * n
    arrived_total = [0.0] * n
    delay_bitslots = [0.0] * n
    delay_bits = [0.0] * n
    delay_late_bits = [0.0] * n
    sinr_kept: list | None = [[] for _ in range(n)] if config.record_sinr else None

    log2 = math.log2
    chunk = max(64, 2_000_000 // (n * n))
    t = 0
    while t < slots:
        block = min(chunk, slots - t)
        h_block = fading_rng.standard_exponential((block, n * n)).tolist()
        occ_block = (arrival_rng.random((block, n)) < traffic.p).tolist()
        size_block = (size_rng.standard_exponential((block, n)) * traffic.mean_size).tolist()

        for k in range(block):
            h = h_block[k]
            recording = t >= warmup

            active = [i for i in all_idx if queue[i] > 0.0]
            interferers = all_idx if full_interference else active

            for i in active:
                if recording:
                    busy_slots[i] += 1
                denom = 1.0
                base = i
                for j in interferers:
                    if j != i:
                        denom += bb[j * n + base] * h[j * n + base]
                gamma = bb[base * n + base] * h[base * n + base] / denom
                capacity_bits = bandwidth * log2(1.0 + gamma) * slot_s
                q = queue[i]
                dq = capacity_bits if capacity_bits < q else q
                if dq > 0.0:
                    queue[i] = q - dq
                    served_total[i] += dq
                    if recording:
                        served_recorded[i] += dq
                    # FIFO delay bookkeeping, bit-weighted
                    remaining = dq
                    pending = fifo[i]
                    while remaining > 0.0 and pending:
                        head = pending[0]
                        take = head[1] if head[1] < remaining else remaining
                        if recording:
                            lag = t - head[0]
                            delay_bitslots[i] += take * lag
                            delay_bits[i] += take
                            if delay_cut is not None and lag > delay_cut:
                                delay_late_bits[i] += take
                        head[1] -= take
                        remaining -= take
                        if head[1] <= 0.0:
                            pending.popleft()
                if recording and sinr_kept is not None:
                    bucket = sinr_kept[i]
                    if len(bucket) < config.max_sinr_samples:
                        bucket.append(gamma)

            if recording:
                for i in all_idx:
                    q = queue[i]
                    if q > q_threshold:
                        violation_slots[i] += 1
                    queue_sum[i] += q

            occ = occ_block[k]
            sizes = size_block[k]
            for i in all_idx:
                if occ[i]:
                    s = sizes[i]
                    queue[i] += s
                    arrived_total[i] += s
                    fifo[i].append([t, s])
            t += 1

    recorded = slots - warmup
    mean_delay = np.array([delay_bitslots[i] / delay_bits[i] if delay_bits[i] > 0 else np.nan
                           for i in range(n)])
    if delay_cut is None:
        delay_violation = np.full(n, np.nan)
    else:
        delay_violation = np.array([
            delay_late_bits[i] / delay_bits[i] if delay_bits[i] > 0 else np.nan
            for i in range(n)])

    return RunStats(
        run_index=run_index,
        slots=slots,
        warmup=warmup,
        violation=np.array(violation_slots, dtype=float) / recorded,
        mean_queue=np.array(queue_sum) / recorded,
        mean_delay_slots=mean_delay,
        delay_violation=delay_violation,
        busy_fraction=np.array(busy_slots, dtype=float) / recorded,
        throughput=np.array(served_recorded) / (recorded * slot_s),
        arrived_bits=np.array(arrived_total),
        served_bits=np.array(served_total),
        final_queue=np.array(queue),
        sinr_samples=(None if sinr_kept is None
                      else [np.array(s) for s in sinr_kept]),
    )


def run_full_interference_replication(gains, traffic, config, run_index) -> RunStats:
    """Baseline replication where every peer SBS interferes in every slot."""
    return run_replication(gains, traffic, config, run_index, full_interference=True)


@dataclass(frozen=True)
class MetricCI:
    """Across-run mean and normal-approximation 95% half-width, per SBS."""

    mean: np.ndarray
    ci_halfwidth: np.ndarray
    n_samples: np.ndarray


def _summarize(stack: np.ndarray) -> MetricCI:
    count = np.sum(~np.isnan(stack), axis=0)
    with np.errstate(invalid="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-nan metric slices
        mean = np.where(count > 0, np.nanmean(stack, axis=0), np.nan)
        std = np.where(count > 1, np.nanstd(stack, axis=0, ddof=1), np.nan)
    half = np.where(count > 1, _Z95 * std / np.sqrt(np.maximum(count, 1)), np.nan)
    return MetricCI(mean=mean, ci_halfwidth=half, n_samples=count)


@dataclass
class SimStats:
    """Across-run aggregate; half-widths are nan whenever fewer than two runs contribute."""

    runs: int
    violation: MetricCI
    mean_queue: MetricCI
    mean_delay_slots: MetricCI
    delay_violation: MetricCI
    busy_fraction: MetricCI
    throughput: MetricCI

    @property
    def ci_defined(self) -> bool:
        return self.runs > 1


def aggregate(run_stats: list[RunStats]) -> SimStats:
    """Deterministic reduction of per-run records, insensitive to completion order."""
    if not run_stats:
        raise ValueError("need at least one run to aggregate")
    ordered = sorted(run_stats, key=lambda r: r.run_index)
    pick = lambda name: np.stack([getattr(r, name) for r in ordered])
    return SimStats(
        runs=len(ordered),
        violation=_summarize(pick("violation")),
        mean_queue=_summarize(pick("mean_queue")),
        mean_delay_slots=_summarize(pick("mean_delay_slots")),
        delay_violation=_summarize(pick("delay_violation")),
        busy_fraction=_summarize(pick("busy_fraction")),
        throughput=_summarize(pick("throughput")),
    )


def _run_task(args):
    gains_dict, traffic, config, run_index, full_interference = args
    gains = LinkGainMatrix.from_dict(gains_dict)
    return run_replication(gains, traffic, config, run_index, full_interference)


def simulate(gains, traffic, config: SimConfig, full_interference: bool = False,
             jobs: int = 1, raw_path=None) -> SimStats:
    """Run all replications (optionally in parallel) and aggregate them.

    The result is independent of ``jobs`` because every replication owns its
    RNG streams and the reduction sorts by run index.  When ``raw_path`` is
    given the per-run records are also streamed to a JSON-lines file so the
    aggregation can be redone without resimulating.
    """
    indices = list(range(config.runs))
    if jobs > 1:
        tasks = [(gains.to_dict(), traffic, config, r, full_interference) for r in indices]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_task, tasks))
    else:
        runs = [run_replication(gains, traffic, config, r, full_interference)
                for r in indices]
    if raw_path is not None:
        write_run_stats_jsonl(runs, raw_path)
    return aggregate(runs)


def collect_sinr_samples(gains, n: int, idle, draws: int, seed: int = 0) -> np.ndarray:
    """Sample the SINR of SBS ``n`` with peers active independently per draw.

    Peer ``j`` transmits with probability 1 - P_j in each draw; fading is a
    fresh unit-mean exponential per link per draw.  Matches the mixture the
    analytic SINR densities describe.
    """
    if draws < 1:
        raise ValueError("need at least one draw")
    P = idle.P if isinstance(idle, IdleProfile) else np.atleast_1d(np.asarray(idle, dtype=float))
    if P.shape[0] != gains.n:
        raise ValueError("idle profile length does not match the gain matrix")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, n, 3)))
    active = rng.random((draws, gains.n)) < (1.0 - P)
    active[:, n] = False
    h = rng.standard_exponential((draws, gains.n))
    denom = 1.0 + (active * h * gains.beta_bar[:, n]).sum(axis=1)
    return gains.beta_bar[n, n] * h[:, n] / denom


def write_run_stats_jsonl(runs: list[RunStats], path):
    with open(path, "w") as fh:
        for r in sorted(runs, key=lambda r: r.run_index):
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_run_stats_jsonl(path) -> list[RunStats]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(RunStats.from_dict(json.loads(line)))
    return out
