"""Reference frame selection: which frames are intra references and which
references every animated frame is predicted from."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

from .errors import InvalidInputError


class Strategy(str, enum.Enum):
    RRB = "RRB"          # progressive buffer of past references
    RP = "RP"            # pre-selected references at fixed spacing, nearest N
    RP_RRB = "RP_RRB"    # nearest past + nearest future first, then by proximity
    BIDIR = "BIDIR"      # RRB plus at most one bounded-delay future reference


class Role(str, enum.Enum):
    REFERENCE = "REFERENCE"
    ANIMATED = "ANIMATED"


@dataclass(frozen=True)
class GopConfig:
    strategy: Strategy = Strategy.RRB
    gop_size: int = 8
    rp_interval: int = 8
    max_refs: int = 1
    max_future_delay_s: float = 2.0
    fps: float = 25.0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.rp_interval < 1 or self.gop_size < 1:
            raise InvalidInputError("rp_interval and gop_size must be >= 1")
        if self.max_refs < 1:
            raise InvalidInputError("max_refs must be >= 1")
        if self.max_future_delay_s < 0:
            raise InvalidInputError("max_future_delay_s must be >= 0")
        if not self.fps > 0:
            raise InvalidInputError("fps must be > 0")

    @property
    def max_future_frames(self) -> int:
        # tolerance guards e.g. 2.0 s * 29.97 fps rounding below the intended bound
        return int(math.floor(self.max_future_delay_s * self.fps + 1e-9))

    @property
    def reference_spacing(self) -> int:
        if self.strategy in (Strategy.RRB, Strategy.BIDIR):
            return self.gop_size
        return self.rp_interval


@dataclass(frozen=True)
class SchedulePlan:
    """``roles[t]`` for every frame; ``refs[t]`` is the ordered reference list
    of an ANIMATED frame and empty for REFERENCE frames."""

    roles: tuple
    refs: tuple

    @property
    def num_frames(self) -> int:
        return len(self.roles)

    @property
    def reference_frames(self) -> list:
        return [t for t, r in enumerate(self.roles) if r is Role.REFERENCE]

    @property
    def animated_frames(self) -> list:
        return [t for t, r in enumerate(self.roles) if r is Role.ANIMATED]

    def coding_order(self) -> list:
        """Frame indices in decode order: every reference is placed before
        the first frame that needs it."""
        order, emitted = [], set()
        for t in range(self.num_frames):
            needed = [t] if self.roles[t] is Role.REFERENCE else sorted(self.refs[t]) + [t]
            for f in needed:
                if f not in emitted:
                    order.append(f)
                    emitted.add(f)
        return order


def _by_distance(t, candidates):
    # ties prefer the past reference
    return sorted(candidates, key=lambda r: (abs(t - r), r > t, r))


def plan(num_frames: int, cfg: GopConfig) -> SchedulePlan:
    """Build the coding plan for ``num_frames`` frames."""
    if num_frames < 1:
        raise InvalidInputError(f"num_frames must be >= 1, got {num_frames}")
    spacing = cfg.reference_spacing
    refs_all = list(range(0, num_frames, spacing))
    ref_set = set(refs_all)
    horizon = cfg.max_future_frames
    n = cfg.max_refs

    roles, refs = [], []
    for t in range(num_frames):
        if t in ref_set:
            roles.append(Role.REFERENCE)
            refs.append(())
            continue
        roles.append(Role.ANIMATED)
        past = [r for r in reversed(refs_all) if r < t]
        future = [r for r in refs_all if t < r <= t + horizon]
        if cfg.strategy is Strategy.RRB:
            chosen = past[:n]
        elif cfg.strategy is Strategy.RP:
            chosen = _by_distance(t, past + future)[:n]
        elif cfg.strategy is Strategy.RP_RRB:
            first = _by_distance(t, past[:1] + future[:1])
            rest = _by_distance(t, past[1:] + future[1:])
            chosen = (first + rest)[:n]
        else:
            nxt = future[:1]
            if nxt and nxt[0] - t > cfg.rp_interval:
                nxt = []
            chosen = _by_distance(t, past[:n] + nxt)[:n]
        refs.append(tuple(chosen))
    return SchedulePlan(tuple(roles), tuple(refs))


def validate_plan(plan: SchedulePlan, cfg: GopConfig) -> Optional[dict]:
    """``None`` when the plan is valid, otherwise ``{rule: first offending frame}``."""
    violations = {}

    def flag(rule, t):
        violations.setdefault(rule, t)

    if plan.num_frames == 0:
        flag("empty_plan", 0)
        return violations
    if len(plan.refs) != plan.num_frames:
        flag("refs_length", min(len(plan.refs), plan.num_frames))
    if plan.roles[0] is not Role.REFERENCE:
        flag("first_frame_reference", 0)
    horizon = cfg.max_future_frames
    for t, (role, refs) in enumerate(zip(plan.roles, plan.refs)):
        if role is Role.REFERENCE:
            if refs:
                flag("reference_has_refs", t)
            continue
        if not refs:
            flag("empty_refs", t)
        if len(refs) > cfg.max_refs:
            flag("too_many_refs", t)
        if len(set(refs)) != len(refs):
            flag("duplicate_refs", t)
        if any(not 0 <= r < plan.num_frames or plan.roles[r] is not Role.REFERENCE for r in refs):
            flag("ref_not_reference", t)
        future = [r for r in refs if r > t]
        if any(r - t > horizon for r in future):
            flag("future_delay", t)
        if cfg.strategy is Strategy.BIDIR and len(future) > 1:
            flag("bidir_multiple_future", t)
    return violations or None
