"""Phased point-to-point exchange built on send/receive buffers.

A communication step walks the phase cycle
Idle -> ReceivesScheduled -> Sent -> Done (-> Idle), and any other
transition raises PhaseError. One message is sent per target rank per step;
the receive side invokes a handler exactly once per expected sender, in
ascending sender order when the runtime is deterministic, otherwise in a
seeded shuffle (the simulated stand-in for nondeterministic arrival order).

With `size_known=True` the per-sender message sizes are pinned after the
first exchange and any later size change is an error; this mirrors the
fixed-size fast path of the real thing, where no size negotiation happens.
"""
from __future__ import annotations

from ..errors import PhaseError, ValidationError
from .buffers import RecvBuffer, SendBuffer

IDLE = "Idle"
RECEIVES_SCHEDULED = "ReceivesScheduled"
SENT = "Sent"
DONE = "Done"


class BufferSystem:
    def __init__(self, ctx, tag: int, *, size_known: bool = False):
        self.ctx = ctx
        self.tag = tag
        self.size_known = size_known
        self._phase = IDLE
        self._send_buffers = {}
        self._expected = ()
        self._pinned_sizes = {}
        self.messages_sent = 0
        self.bytes_sent = 0

    @property
    def phase(self) -> str:
        return self._phase

    def send_buffer(self, target: int) -> SendBuffer:
        """Buffer for `target`; created on first use, reused afterwards."""
        if not (0 <= target < self.ctx.n_ranks):
            raise ValidationError(f"target rank {target} out of range")
        buf = self._send_buffers.get(target)
        if buf is None:
            buf = SendBuffer(debug=self.ctx.debug_buffers)
            self._send_buffers[target] = buf
        return buf

    def schedule_receives(self, expected_senders) -> None:
        if self._phase not in (IDLE, DONE):
            raise PhaseError(
                f"scheduleReceives is illegal in phase {self._phase}"
            )
        expected = sorted(set(int(s) for s in expected_senders))
        for s in expected:
            if not (0 <= s < self.ctx.n_ranks):
                raise ValidationError(f"expected sender {s} out of range")
        self._expected = tuple(expected)
        self._phase = RECEIVES_SCHEDULED

    def send_all(self) -> None:
        if self._phase != RECEIVES_SCHEDULED:
            raise PhaseError(f"sendAll is illegal in phase {self._phase}")
        for target in sorted(self._send_buffers):
            buf = self._send_buffers[target]
            payload = buf.getvalue()
            if self.size_known:
                key = ("out", target)
                pinned = self._pinned_sizes.get(key)
                if pinned is None:
                    self._pinned_sizes[key] = len(payload)
                elif pinned != len(payload):
                    raise ValidationError(
                        f"fixed-size exchange to rank {target} changed size "
                        f"{pinned} -> {len(payload)}"
                    )
            self.ctx.send(target, payload, tag=self.tag)
            self.messages_sent += 1
            self.bytes_sent += len(payload)
            buf.clear()
        self._phase = SENT

    def wait_and_unpack(self, handler) -> None:
        """Receive from every expected sender and call handler(src, RecvBuffer)."""
        if self._phase != SENT:
            raise PhaseError(f"waitAndUnpack is illegal in phase {self._phase}")
        order = list(self._expected)
        if not self.ctx.deterministic:
            self.ctx.rng.shuffle(order)
        for src in order:
            payload = self.ctx.recv(src, tag=self.tag)
            if self.size_known:
                key = ("in", src)
                pinned = self._pinned_sizes.get(key)
                if pinned is None:
                    self._pinned_sizes[key] = len(payload)
                elif pinned != len(payload):
                    raise ValidationError(
                        f"fixed-size exchange from rank {src} changed size "
                        f"{pinned} -> {len(payload)}"
                    )
            handler(src, RecvBuffer(payload, debug=self.ctx.debug_buffers))
        self._phase = DONE
