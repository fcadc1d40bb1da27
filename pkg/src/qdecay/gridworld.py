"""Slippery gridworld with teleporting special cells."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .mdp import Mdp, RewardNoise

__all__ = ["ACTIONS", "GridworldSpec", "build_gridworld", "cell_index"]

# (row, col) displacement of each action; index order is fixed.
ACTIONS = {"left": (0, -1), "up": (-1, 0), "right": (0, 1), "down": (1, 0)}
_MOVES = list(ACTIONS.values())
# perpendicular directions of each action, by action index
_PERPENDICULAR = {0: (1, 3), 1: (0, 2), 2: (1, 3), 3: (0, 2)}

Cell = tuple[int, int]


def _default_specials():
    return [((0, 1), (3, 1), 10.0), ((0, 3), (1, 3), 5.0)]


@dataclass(frozen=True)
class GridworldSpec:
    """Layout and dynamics of the gridworld.

    ``special_states`` holds ``(source, target, reward)`` triples with cells
    given as ``(row, col)``.  Every action taken in a source cell moves to
    its target with probability one and earns ``reward``.
    """

    width: int = 4
    height: int = 4
    special_states: list = field(default_factory=_default_specials)
    slip_intended: float = 0.9
    slip_perpendicular: float = 0.05
    wall_penalty: float = -1.0
    default_reward: float = 0.0
    gamma: float = 0.1
    reward_noise: RewardNoise = field(default_factory=RewardNoise)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError("grid dimensions must be positive")
        if abs(self.slip_intended + 2 * self.slip_perpendicular - 1.0) > 1e-12:
            raise InvalidArgumentError("slip_intended + 2 * slip_perpendicular must equal 1")
        if self.slip_intended < 0 or self.slip_perpendicular < 0:
            raise InvalidArgumentError("slip probabilities must be nonnegative")
        specials = [(tuple(src), tuple(dst), float(r)) for src, dst, r in self.special_states]
        sources = [src for src, _, _ in specials]
        if len(set(sources)) != len(sources):
            raise InvalidArgumentError("special source cells must be distinct")
        for src, dst, _ in specials:
            for cell in (src, dst):
                if not self.inside(cell):
                    raise InvalidArgumentError(f"special cell {cell} lies outside the grid")
        object.__setattr__(self, "special_states", specials)

    def inside(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    @classmethod
    def from_dict(cls, data: dict) -> "GridworldSpec":
        data = dict(data)
        if "reward_noise" in data and isinstance(data["reward_noise"], dict):
            data["reward_noise"] = RewardNoise(**data["reward_noise"])
        if "special_states" in data:
            data["special_states"] = [
                (tuple(item["source"]), tuple(item["target"]), item["reward"])
                if isinstance(item, dict)
                else tuple(item)
                for item in data["special_states"]
            ]
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidArgumentError(f"bad gridworld spec: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "special_states": [
                {"source": list(s), "target": list(t), "reward": r} for s, t, r in self.special_states
            ],
            "slip_intended": self.slip_intended,
            "slip_perpendicular": self.slip_perpendicular,
            "wall_penalty": self.wall_penalty,
            "default_reward": self.default_reward,
            "gamma": self.gamma,
            "reward_noise": self.reward_noise.to_dict(),
        }


def cell_index(spec: GridworldSpec, cell: Cell) -> int:
    return cell[0] * spec.width + cell[1]


def build_gridworld(spec: GridworldSpec | None = None) -> Mdp:
    """Build the gridworld MDP with states numbered row-major.

    A realized move off the grid leaves the agent in place with
    ``wall_penalty``; any other move from an ordinary cell earns
    ``default_reward``.  Slips go to one of the two perpendicular
    directions, never backwards.
    """
    spec = spec or GridworldSpec()
    S, A = spec.width * spec.height, len(_MOVES)
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    specials = {src: (dst, r) for src, dst, r in spec.special_states}
    for row in range(spec.height):
        for col in range(spec.width):
            s = cell_index(spec, (row, col))
            if (row, col) in specials:
                dst, r = specials[(row, col)]
                P[s, :, cell_index(spec, dst)] = 1.0
                R[s, :, :] = r
                continue
            for a in range(A):
                p_side = spec.slip_perpendicular
                outcomes = [(a, spec.slip_intended)] + [(b, p_side) for b in _PERPENDICULAR[a]]
                for direction, prob in outcomes:
                    if prob == 0.0:
                        continue
                    dr, dc = _MOVES[direction]
                    target = (row + dr, col + dc)
                    if spec.inside(target):
                        s2 = cell_index(spec, target)
                        P[s, a, s2] += prob
                        R[s, a, s2] = spec.default_reward
                    else:
                        P[s, a, s] += prob
                        R[s, a, s] = spec.wall_penalty
    return Mdp(P, R, spec.gamma, spec.reward_noise)
