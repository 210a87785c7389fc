"""In-memory buddy checkpointing.

Each rank belongs to a redundancy group; on save, every group member holds a
copy of every member's forest image, so the memory cost is group size times
the image size. Groups are formed by stride (rank r joins group r mod G with
G = n_ranks / group_size), which keeps ranks with consecutive ids in
different groups: failures that take out a span of neighboring ranks leave
at least one live holder per image.

Recovery needs no communication beyond the neighborhood rebuild: every
survivor derives the same adopter assignment from the shared failure list,
rolls its forest back to its own image, and the lowest-ranked live group
member of each dead rank additionally loads the dead rank's image.
"""
from __future__ import annotations

from ..errors import UnrecoverableError, ValidationError
from ..runtime.buffersystem import BufferSystem

TAG_CHECKPOINT = 104


class BuddyCheckpoint:
    def __init__(self, ctx, group_size: int):
        if group_size < 1 or ctx.n_ranks % group_size != 0:
            raise ValidationError(
                f"group size {group_size} must divide the rank count {ctx.n_ranks}")
        self.ctx = ctx
        self.group_size = int(group_size)
        self.n_groups = ctx.n_ranks // self.group_size
        self._images = {}
        self._step = None

    def group_of(self, rank: int) -> int:
        return rank % self.n_groups

    def members_of(self, group: int) -> list:
        return list(range(group, self.ctx.n_ranks, self.n_groups))

    @property
    def step(self):
        """Step of the held checkpoint, or None before the first save."""
        return self._step

    def memory_bytes(self) -> int:
        return sum(len(image) for image in self._images.values())

    def image_of(self, rank: int):
        return self._images.get(rank)

    def save(self, forest, step: int) -> None:
        """Collective: snapshot the forest and swap images within the group."""
        ctx = self.ctx
        image = forest.snapshot()
        alive = set(ctx.alive_ranks())
        peers = [m for m in self.members_of(self.group_of(ctx.rank))
                 if m != ctx.rank and m in alive]
        bs = BufferSystem(ctx, TAG_CHECKPOINT)
        bs.schedule_receives(peers)
        for peer in peers:
            bs.send_buffer(peer).pack_bytes(image)
        bs.send_all()
        images = {ctx.rank: image}

        def _store(src, buf):
            images[src] = buf.unpack_bytes()

        bs.wait_and_unpack(_store)
        self._images = images
        self._step = step

    def plan_recovery(self) -> dict:
        """{dead rank: adopting rank} from the current failure list.

        Pure group arithmetic; every rank computes the same plan.
        """
        ctx = self.ctx
        alive = set(ctx.alive_ranks())
        plan = {}
        for dead in sorted(ctx.failed_ranks()):
            holders = [m for m in self.members_of(self.group_of(dead)) if m in alive]
            if not holders:
                raise UnrecoverableError(
                    f"no live holder of rank {dead}'s checkpoint "
                    f"(group {self.group_of(dead)} lost entirely)")
            plan[dead] = holders[0]
        return plan

    def recover(self, forest):
        """Collective: roll the forest back to the checkpoint.

        Every survivor restores its own image; adopters additionally load the
        images of the dead ranks assigned to them. Returns (step, plan).
        """
        if self._step is None:
            raise UnrecoverableError("no checkpoint has been saved")
        ctx = self.ctx
        plan = self.plan_recovery()
        images = [self._images[ctx.rank]]
        for dead in sorted(plan):
            if plan[dead] == ctx.rank:
                image = self._images.get(dead)
                if image is None:
                    raise UnrecoverableError(
                        f"rank {ctx.rank} holds no image of dead rank {dead}")
                images.append(image)
        forest.load_snapshot_blocks(images)
        forest.rebuild_neighborhoods()
        return self._step, plan
