"""Circular buffers: paged wrap-around FIFOs in core-local SRAM.

Producer and consumer keep separate descriptor copies (``CBView``) and only
share the pushed/popped page counters, the way data-mover and compute cores
do on the device. A read-pointer override set through one role's view is
therefore invisible to the other roles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


class CBError(Exception):
    pass


class TooManyPages(CBError):
    pass


class NotReserved(CBError):
    pass


class NothingToPop(CBError):
    pass


class WrongRole(CBError):
    pass


class WaitQueue:
    """Tasks parked until some condition might have changed."""

    __slots__ = ("what", "tasks")

    def __init__(self, what: str):
        self.what = what
        self.tasks: list = []

    def add(self, task) -> None:
        task.blocked_on = self.what
        self.tasks.append(task)

    def __repr__(self):
        return f"WaitQueue({self.what!r}, {len(self.tasks)} waiting)"


@dataclass
class CBView:
    rd_ptr: int
    wr_ptr: int
    reserved: int = 0
    waited: int = 0
    packed: int = 0
    rd_override: Optional[int] = None


class CircularBuffer:
    def __init__(self, cb_id: int, base: int, page_size: int, page_count: int = 4,
                 producer: str = "reader", consumer: str = "compute"):
        if page_size <= 0 or page_count <= 0:
            raise CBError("page size and count must be positive")
        self.id = cb_id
        self.base = base
        self.page_size = page_size
        self.page_count = page_count
        self.producer = producer
        self.consumer = consumer
        self.size = page_size * page_count
        self.private = producer == consumer
        self.limit = base + self.size
        self.pushed = 0
        self.popped = 0
        # virtual time at which each page slot was last pushed / popped
        self.push_time = [0.0] * page_count
        self.pop_time = [0.0] * page_count
        self.views: dict[str, CBView] = {}
        self.front_waiters = WaitQueue(f"cb{cb_id}.wait_front")
        self.back_waiters = WaitQueue(f"cb{cb_id}.reserve_back")


    @property
    def committed_pages(self) -> int:
        return self.pushed - self.popped

    @property
    def free_pages(self) -> int:
        return self.page_count - self.committed_pages

    def view(self, role: str) -> CBView:
        v = self.views.get(role)
        if v is None:
            v = self.views[role] = CBView(self.base, self.base)
        return v

    @property
    def fifo_rd_ptr(self) -> int:
        return self.view(self.consumer).rd_ptr

    @property
    def fifo_wr_ptr(self) -> int:
        return self.view(self.producer).wr_ptr

    def _advance(self, ptr: int, n: int) -> int:
        ptr += n * self.page_size
        if ptr >= self.limit:
            ptr -= self.size
        return ptr

    def _check_n(self, n: int):
        if n <= 0:
            raise CBError("page count must be positive")
        if n > self.page_count:
            raise TooManyPages(f"cb{self.id}: {n} pages requested, only {self.page_count} exist")

    def _check_role(self, role: str, expected: str, op: str):
        if role != expected:
            raise WrongRole(f"cb{self.id}.{op} called by {role}, owned by {expected}")

    # The four FIFO operations split into a readiness test and a commit so
    # the scheduler can block between them.

    def can_reserve(self, n: int) -> bool:
        self._check_n(n)
        return self.free_pages >= n

    def reserve_ready(self, n: int) -> float:
        """Time at which the ``n`` slots a reserve needs were freed; valid once
        ``free_pages >= n``."""
        j = self.pushed + n - 1 - self.page_count
        return self.pop_time[j % self.page_count] if j >= 0 else 0.0

    def wait_ready(self, n: int) -> float:
        """Time at which the first ``n`` committed pages were all pushed."""
        return self.push_time[(self.popped + n - 1) % self.page_count]

    def reserve(self, role: str, n: int) -> int:
        if role != self.producer:
            self._check_role(role, self.producer, "reserve_back")
        v = self.views.get(role) or self.view(role)
        v.reserved = n
        v.packed = 0
        return v.wr_ptr

    def push(self, role: str, n: int, t: float = 0.0) -> None:
        if role != self.producer:
            self._check_role(role, self.producer, "push_back")
        if not 0 < n <= self.page_count:
            self._check_n(n)
        v = self.views.get(role) or self.view(role)
        if v.reserved < n:
            raise NotReserved(f"cb{self.id}: push of {n} pages, {v.reserved} reserved")
        v.reserved -= n
        v.packed = 0
        v.wr_ptr = self._advance(v.wr_ptr, n)
        if n == 1:
            self.push_time[self.pushed % self.page_count] = t
        else:
            for i in range(self.pushed, self.pushed + n):
                self.push_time[i % self.page_count] = t
        self.pushed += n

    def can_wait(self, n: int) -> bool:
        self._check_n(n)
        return self.committed_pages >= n

    def wait(self, role: str, n: int) -> int:
        if role != self.consumer:
            self._check_role(role, self.consumer, "wait_front")
        v = self.views.get(role) or self.view(role)
        if n > v.waited:
            v.waited = n
        return v.rd_ptr

    def pop(self, role: str, n: int, t: float = 0.0) -> None:
        if role != self.consumer:
            self._check_role(role, self.consumer, "pop_front")
        if not 0 < n <= self.page_count:
            self._check_n(n)
        v = self.views.get(role) or self.view(role)
        if v.waited < n or self.committed_pages < n:
            raise NothingToPop(f"cb{self.id}: pop of {n} pages without a matching wait")
        v.waited -= n
        v.rd_override = None
        v.rd_ptr = self._advance(v.rd_ptr, n)
        if n == 1:
            self.pop_time[self.popped % self.page_count] = t
        else:
            for i in range(self.popped, self.popped + n):
                self.pop_time[i % self.page_count] = t
        self.popped += n

    def set_rd_ptr(self, role: str, address: int) -> None:
        self.view(role).rd_override = address

    def read_address(self, role: str, index: int = 0) -> int:
        v = self.views.get(role) or self.view(role)
        if v.rd_override is not None:
            return v.rd_override + index * self.page_size
        ptr = v.rd_ptr + index * self.page_size
        return ptr - self.size if ptr >= self.limit else ptr

    def write_address(self, role: str, index: int = 0) -> int:
        ptr = self.view(role).wr_ptr + index * self.page_size
        return ptr - self.size if ptr >= self.limit else ptr
