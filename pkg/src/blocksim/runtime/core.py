"""Simulated multi-rank runtime.

Ranks are cooperative execution contexts, one OS thread each, driven by a
strict-handoff scheduler: exactly one thread runs at any moment and control
changes hands only at blocking operations (receives, collectives, step
boundaries). There is no real concurrency, so executions are reproducible;
with `deterministic=True` the scheduler always resumes the lowest runnable
rank, otherwise it draws from a seeded RNG.

Ranks share no mutable state. Messages are bytes, delivered into per
(sender, tag) FIFO inboxes the moment they are sent. Collectives combine
contributions in ascending rank order, which makes reductions bit-identical
regardless of scheduling.

Failure injection kills a rank at a step boundary: `advance_step` is a soft
barrier, and the last rank arriving at step `s` applies the schedule, so all
survivors observe the failure at the same step.
"""
from __future__ import annotations

import pickle
import random
import threading

from ..errors import CommTimeoutError, RankDeadError, ValidationError

_READY, _RUNNING, _BLOCKED, _DONE, _DEAD = range(5)


class RankKilled(BaseException):
    """Raised inside a rank's thread to unwind it after an injected failure.

    Derives from BaseException so user-level `except Exception` blocks do not
    swallow the kill.
    """


class _Rank:
    __slots__ = (
        "id", "state", "predicate", "on_stuck", "wake_exc",
        "thread", "ctx", "result", "error",
    )

    def __init__(self, rank_id: int):
        self.id = rank_id
        self.state = _READY
        self.predicate = None
        self.on_stuck = None
        self.wake_exc = None
        self.thread = None
        self.ctx = None
        self.result = None
        self.error = None


class RankContext:
    """Per-rank handle passed to the program: messaging, collectives, steps."""

    def __init__(self, runtime: "SimRuntime", rank: int):
        self.runtime = runtime
        self.rank = rank
        self.n_ranks = runtime.n_ranks
        self.step = 0
        self._coll_count = 0
        # per-rank stream for seeded (non-deterministic) unpack ordering
        base = runtime.seed if runtime.seed is not None else 0
        self.rng = random.Random(base * 1_000_003 + rank)

    @property
    def deterministic(self) -> bool:
        return self.runtime.deterministic

    @property
    def debug_buffers(self) -> bool:
        return self.runtime.debug_buffers

    def send(self, dst: int, payload: bytes, tag: int = 0) -> None:
        self.runtime._send(self.rank, dst, payload, tag)

    def recv(self, src: int, tag: int = 0) -> bytes:
        return self.runtime._recv(self.rank, src, tag)

    def all_reduce(self, values, op: str = "sum"):
        """Element-wise reduction over all participating ranks.

        `values` is a scalar or a sequence of floats; the result has the same
        shape. Contributions are folded in ascending rank order, so the result
        does not depend on scheduling.
        """
        scalar = isinstance(values, (int, float))
        vec = (float(values),) if scalar else tuple(float(v) for v in values)
        out = self.runtime._all_reduce(self, vec, op)
        return out[0] if scalar else list(out)

    def all_gather(self, obj) -> dict:
        """Gather a picklable object from every participating rank.

        Returns {rank: object}; each rank receives its own deep copy.
        """
        return self.runtime._all_gather(self, obj)

    def barrier(self) -> None:
        self.runtime._all_reduce(self, (), "sum")

    def advance_step(self) -> int:
        """Soft barrier marking a step boundary; failure injection point.

        Returns the new step number (first call returns 1). A rank scheduled
        to fail at step s dies here having completed s-1 steps; survivors see
        it in `failed_ranks()` immediately after their own advance_step(s).
        """
        return self.runtime._advance_step(self)

    def failed_ranks(self) -> frozenset:
        return self.runtime.failed_ranks()

    def alive_ranks(self) -> list:
        return self.runtime.alive_ranks()

    def node_of(self, rank: int) -> int:
        return self.runtime.node_of(rank)


class SimRuntime:
    """Executes one SPMD program on `n_ranks` simulated ranks.

    Parameters
    ----------
    n_ranks : int
        Number of simulated ranks.
    seed : int or None
        Seed for the scheduler/unpack-order RNG (used when deterministic=False).
    deterministic : bool
        Resume lowest runnable rank and process expected senders in ascending
        order. Default True.
    debug_buffers : bool
        Pack per-value type tags into message buffers (checked on unpack).
    node_size : int
        Ranks per simulated node, for buddy-placement rules. Default 1.
    """

    def __init__(self, n_ranks: int, *, seed=None, deterministic: bool = True,
                 debug_buffers: bool = True, node_size: int = 1):
        if n_ranks < 1:
            raise ValidationError(f"n_ranks must be >= 1, got {n_ranks}")
        if node_size < 1:
            raise ValidationError(f"node_size must be >= 1, got {node_size}")
        self.n_ranks = n_ranks
        self.seed = seed
        self.deterministic = deterministic
        self.debug_buffers = debug_buffers
        self.node_size = node_size
        self._sched_rng = random.Random(seed)
        self._lock = threading.Lock()
        self._cv = threading.Condition(self._lock)
        self._ranks = [_Rank(i) for i in range(n_ranks)]
        self._current = None
        # inboxes[dst][(src, tag)] -> list of payloads (FIFO per sender and tag)
        self._inboxes = [dict() for _ in range(n_ranks)]
        self._dead = set()
        self._drop_count = 0
        self._failure_schedule = {}
        self._applied_steps = set()
        self._collectives = {}
        self._started = False

    # ---------------------------------------------------------------- public

    def inject_failure(self, step: int, rank: int) -> None:
        """Schedule `rank` to die at the boundary entering `step` (1-based)."""
        if not (0 <= rank < self.n_ranks):
            raise ValidationError(f"rank {rank} out of range for {self.n_ranks} ranks")
        if step < 1:
            raise ValidationError(f"failure step must be >= 1, got {step}")
        self._failure_schedule.setdefault(step, set()).add(rank)

    @property
    def drop_count(self) -> int:
        return self._drop_count

    def failed_ranks(self) -> frozenset:
        with self._lock:
            return frozenset(self._dead)

    def alive_ranks(self) -> list:
        with self._lock:
            return [i for i in range(self.n_ranks) if i not in self._dead]

    def node_of(self, rank: int) -> int:
        return rank // self.node_size

    def run(self, program, *args) -> list:
        """Run `program(ctx, *args)` on every rank; returns per-rank results.

        Results of killed ranks are None. The first error raised inside any
        rank (lowest rank id wins) propagates to the caller.
        """
        if self._started:
            raise ValidationError("a SimRuntime instance runs exactly one program")
        self._started = True
        for r in self._ranks:
            r.ctx = RankContext(self, r.id)
            r.thread = threading.Thread(
                target=self._thread_main, args=(r, program, args),
                name=f"rank{r.id}", daemon=True,
            )
        for r in self._ranks:
            r.thread.start()
        with self._cv:
            self._schedule_next()
            while any(r.state not in (_DONE, _DEAD) for r in self._ranks):
                self._cv.wait()
        for r in self._ranks:
            r.thread.join()
        for r in self._ranks:
            if r.error is not None:
                raise r.error
        return [r.result for r in self._ranks]

    # ------------------------------------------------------------- scheduler

    def _thread_main(self, r: _Rank, program, args) -> None:
        with self._cv:
            while self._current != r.id:
                self._cv.wait()
            r.state = _RUNNING
        try:
            result = program(r.ctx, *args)
        except RankKilled:
            with self._cv:
                r.state = _DEAD
                self._schedule_next()
            return
        except BaseException as exc:  # noqa: BLE001 - must not hang siblings
            with self._cv:
                r.state = _DEAD
                r.error = exc
                self._dead.add(r.id)
                self._schedule_next()
            return
        with self._cv:
            r.state = _DONE
            r.result = result
            self._schedule_next()

    def _schedule_next(self) -> None:
        # lock held; caller has already left the RUNNING state
        candidates = []
        for r in self._ranks:
            if r.state == _READY:
                candidates.append(r)
            elif r.state == _BLOCKED and (r.wake_exc is not None or r.predicate()):
                candidates.append(r)
        if candidates:
            if self.deterministic:
                pick = min(candidates, key=lambda r: r.id)
            else:
                pick = self._sched_rng.choice(sorted(candidates, key=lambda r: r.id))
            self._current = pick.id
            self._cv.notify_all()
            return
        blocked = sorted((r for r in self._ranks if r.state == _BLOCKED), key=lambda r: r.id)
        if not blocked:
            self._current = None  # program over, wake run()
            self._cv.notify_all()
            return
        # deadlock: no runnable rank and no satisfiable predicate
        for r in blocked:
            exc = r.on_stuck() if r.on_stuck is not None else None
            r.wake_exc = exc or CommTimeoutError(
                f"rank {r.id} blocked with no possible progress"
            )
        self._current = blocked[0].id
        self._cv.notify_all()

    def _block(self, rank_id: int, predicate, on_stuck=None) -> None:
        # lock held on entry and exit
        r = self._ranks[rank_id]
        r.state = _BLOCKED
        r.predicate = predicate
        r.on_stuck = on_stuck
        self._schedule_next()
        while self._current != rank_id:
            self._cv.wait()
        r.state = _RUNNING
        r.predicate = None
        r.on_stuck = None
        if r.wake_exc is not None:
            exc = r.wake_exc
            r.wake_exc = None
            raise exc

    # ------------------------------------------------------------- messaging

    def _send(self, src: int, dst: int, payload: bytes, tag: int) -> None:
        if not (0 <= dst < self.n_ranks):
            raise ValidationError(f"destination rank {dst} out of range")
        with self._cv:
            if dst in self._dead:
                self._drop_count += 1
                return
            box = self._inboxes[dst].setdefault((src, tag), [])
            box.append(bytes(payload))

    def _recv(self, dst: int, src: int, tag: int) -> bytes:
        if not (0 <= src < self.n_ranks):
            raise ValidationError(f"source rank {src} out of range")
        with self._cv:
            while True:
                box = self._inboxes[dst].get((src, tag))
                if box:
                    return box.pop(0)
                if src in self._dead:
                    raise CommTimeoutError(
                        f"rank {dst} expected a message from rank {src} "
                        f"(tag {tag}), but that rank is dead"
                    )
                self._block(
                    dst,
                    predicate=lambda: self._inboxes[dst].get((src, tag)) or src in self._dead,
                    on_stuck=lambda: CommTimeoutError(
                        f"rank {dst} timed out waiting for a message from alive "
                        f"rank {src} (tag {tag})"
                    ),
                )

    # ------------------------------------------------------------ collectives

    def _participants(self):
        return [
            r.id for r in self._ranks
            if r.id not in self._dead and r.state != _DONE
        ]

    def _collective(self, ctx: RankContext, kind: str, payload):
        """Generic rendezvous: all alive, unfinished ranks deposit, then fetch."""
        with self._cv:
            gen = ctx._coll_count
            ctx._coll_count += 1
            st = self._collectives.setdefault(
                gen, {"deposits": {}, "kinds": {}, "result": None, "have_result": False,
                      "fetched": set()},
            )
            st["deposits"][ctx.rank] = payload
            st["kinds"][ctx.rank] = kind

            def ready():
                return all(q in st["deposits"] for q in self._participants())

            if not ready():
                self._block(
                    ctx.rank,
                    predicate=ready,
                    on_stuck=lambda: CommTimeoutError(
                        f"collective #{gen} never completed: rank {ctx.rank} waits for "
                        f"{[q for q in self._participants() if q not in st['deposits']]}"
                    ),
                )
            if not st["have_result"]:
                parts = {
                    q: st["deposits"][q]
                    for q in sorted(st["deposits"])
                    if q not in self._dead
                }
                kinds = {st["kinds"][q] for q in parts}
                if len(kinds) > 1:
                    st["result"] = ValidationError(
                        f"mismatched collectives in generation {gen}: {sorted(kinds)}"
                    )
                else:
                    st["result"] = parts
                st["have_result"] = True
            st["fetched"].add(ctx.rank)
            result = st["result"]
            live_depositors = {q for q in st["deposits"] if q not in self._dead}
            if st["fetched"] >= live_depositors:
                self._collectives.pop(gen, None)
            if isinstance(result, Exception):
                raise result
            return result

    def _all_reduce(self, ctx: RankContext, vec: tuple, op: str) -> tuple:
        if op not in ("sum", "max", "min"):
            raise ValidationError(f"unknown reduction op {op!r}")
        parts = self._collective(ctx, f"reduce:{op}:{len(vec)}", vec)
        lengths = {len(v) for v in parts.values()}
        if len(lengths) > 1:
            raise ValidationError(f"allReduce length mismatch across ranks: {sorted(lengths)}")
        ranks = sorted(parts)
        if not ranks:
            return ()
        acc = list(parts[ranks[0]])
        for q in ranks[1:]:
            v = parts[q]
            if op == "sum":
                for i in range(len(acc)):
                    acc[i] = acc[i] + v[i]
            elif op == "max":
                for i in range(len(acc)):
                    acc[i] = acc[i] if acc[i] >= v[i] else v[i]
            else:
                for i in range(len(acc)):
                    acc[i] = acc[i] if acc[i] <= v[i] else v[i]
        return tuple(acc)

    def _all_gather(self, ctx: RankContext, obj) -> dict:
        parts = self._collective(ctx, "gather", pickle.dumps(obj))
        return {q: pickle.loads(blob) for q, blob in sorted(parts.items())}

    # ------------------------------------------------------------------ steps

    def _advance_step(self, ctx: RankContext) -> int:
        with self._cv:
            ctx.step += 1
            step = ctx.step

            def arrived():
                for q in self._ranks:
                    if q.id in self._dead or q.state == _DONE:
                        continue
                    if q.ctx.step < step:
                        return False
                return True

            if not arrived():
                self._block(ons := ctx.rank, predicate=arrived, on_stuck=lambda: CommTimeoutError(
                    f"step barrier {step} never completed for rank {ons}"
                ))
            if step not in self._applied_steps:
                self._applied_steps.add(step)
                for victim in sorted(self._failure_schedule.get(step, ())):
                    if victim in self._dead:
                        continue
                    self._dead.add(victim)
                    vr = self._ranks[victim]
                    if vr.state in (_BLOCKED, _READY):
                        vr.wake_exc = RankKilled()
            if ctx.rank in self._dead:
                raise RankKilled()
            return step
