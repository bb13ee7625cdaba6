"""Scaled-down Tetris as an exact 160-state tabular MDP.

Board: 6 columns, ``board_height`` rows, pieces no larger than 2x2. The agent
picks a rotation (4 actions, 90 degree steps); the environment drops the piece
at a uniformly random feasible column.

After each drop the board is quantized to a *profile class*: the stack level
``L = min(max column height, tolerance + 2)`` and a 3-bit lane mask, one bit
per 2-column lane, set when the lane reaches at least half the stack level.
Each class has one canonical board (marked lanes filled to ``L``, others
empty), which is the board the next piece falls on. A class whose three lanes
are all marked is a run of full rows and clears to the empty board.

Quantization table (profile id = 8 * L + mask):

    L = 0          mask ignored, canonical board empty (id 0 used)
    L = 1 .. 4     mask 1 .. 6 reachable; mask 0 and 7 never occur after a drop

State id = 4 * profile id + piece id, so there are 40 * 4 = 160 states and a
640-dimensional one-hot state-action encoding. Reward is the negative excess
stack height above the tolerance, ``-max(0, L - tolerance)``, of the board the
agent observes; learners consume it affinely rescaled to ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import TabularMDP

WIDTH = 6
NUM_LANES = 3
NUM_ACTIONS = 4
TOLERANCE = 2
NUM_LEVELS = TOLERANCE + 3  # levels 0 .. tolerance + 2
NUM_MASKS = 8
NUM_PROFILES = NUM_LEVELS * NUM_MASKS  # 40

# (width, height) of each piece in its spawn orientation
PIECES = {
    0: (2, 2),  # square
    1: (2, 1),  # 1x2 domino, lying flat
    2: (1, 2),  # 2x1 domino, standing
    3: (1, 1),  # single block
}
PIECE_NAMES = ("square", "domino-flat", "domino-upright", "single")


@dataclass(frozen=True)
class MiniTetrisConfig:
    board_width: int = WIDTH
    board_height: int = 5
    height_tolerance: int = TOLERANCE
    num_actions: int = NUM_ACTIONS
    piece_set: tuple[int, ...] = (0, 1, 2, 3)
    horizon: int = 10
    seed: int = 0

    def __post_init__(self):
        if (self.board_width, self.height_tolerance, self.num_actions) != (WIDTH, TOLERANCE, NUM_ACTIONS):
            raise ValueError("mini-Tetris fixes width 6, tolerance 2 and 4 rotation actions")
        if self.board_height < TOLERANCE + 2:
            raise ValueError("board must be at least tolerance + 2 rows tall")
        if not set(self.piece_set) <= set(PIECES) or not self.piece_set:
            raise ValueError(f"pieces must be a nonempty subset of {sorted(PIECES)}")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")

    @property
    def num_states(self) -> int:
        return NUM_PROFILES * len(PIECES)


def rotate(piece: int, action: int) -> tuple[int, int]:
    """(width, height) of ``piece`` after ``action`` quarter turns."""
    w, h = PIECES[piece]
    return (h, w) if action % 2 else (w, h)


def profile_id(level: int, mask: int) -> int:
    return NUM_MASKS * level + mask


def split_profile(pid: int) -> tuple[int, int]:
    return divmod(pid, NUM_MASKS)


def canonical_board(pid: int) -> np.ndarray:
    level, mask = split_profile(pid)
    heights = np.zeros(WIDTH, dtype=int)
    if level > 0:
        for lane in range(NUM_LANES):
            if mask >> lane & 1:
                heights[2 * lane : 2 * lane + 2] = level
    return heights


def stack_height(heights) -> int:
    return int(np.max(heights))


def excess_height(heights, tolerance: int = TOLERANCE) -> int:
    return max(0, stack_height(heights) - tolerance)


def quantize(heights, cap: int = TOLERANCE + 2) -> int:
    """Profile id of an arbitrary column-height vector."""
    level = min(stack_height(heights), cap)
    if level == 0:
        return 0
    mask = 0
    for lane in range(NUM_LANES):
        lane_h = max(heights[2 * lane], heights[2 * lane + 1])
        if 2 * lane_h >= level:
            mask |= 1 << lane
    if mask == (1 << NUM_LANES) - 1:
        return 0  # full rows clear
    return profile_id(level, mask)


def drop(heights, piece: int, action: int, column: int, board_height: int) -> np.ndarray:
    w, h = rotate(piece, action)
    if not 0 <= column <= WIDTH - w:
        raise ValueError(f"column {column} does not fit a piece of width {w}")
    out = np.array(heights, dtype=int)
    base = int(np.max(out[column : column + w]))
    out[column : column + w] = min(base + h, board_height)
    return out


def valid_profiles() -> list[int]:
    return [0] + [profile_id(L, m) for L in range(1, NUM_LEVELS) for m in range(1, NUM_MASKS - 1)]


def state_id(pid: int, piece: int) -> int:
    return len(PIECES) * pid + piece


def split_state(s: int) -> tuple[int, int]:
    return divmod(s, len(PIECES))


def board_of_state(s: int) -> np.ndarray:
    return canonical_board(split_state(s)[0])


def penalty_reward(s: int, tolerance: int = TOLERANCE) -> float:
    """Reward on the original (negative excess height) scale."""
    return -float(excess_height(board_of_state(s), tolerance))


def rescale_reward(penalty, max_excess: int = NUM_LEVELS - 1 - TOLERANCE):
    return 1.0 + np.asarray(penalty, dtype=float) / max_excess


def unrescale_reward(r, max_excess: int = NUM_LEVELS - 1 - TOLERANCE):
    return (np.asarray(r, dtype=float) - 1.0) * max_excess


def build_mini_tetris(config: MiniTetrisConfig | None = None) -> TabularMDP:
    cfg = config or MiniTetrisConfig()
    n_pieces = len(PIECES)
    S, A, H = cfg.num_states, NUM_ACTIONS, cfg.horizon
    piece_prob = np.zeros(n_pieces)
    piece_prob[list(cfg.piece_set)] = 1.0 / len(cfg.piece_set)

    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for pid in range(NUM_PROFILES):
        board = canonical_board(pid)
        for piece in range(n_pieces):
            s = state_id(pid, piece)
            R[s, :] = rescale_reward(-excess_height(board))
            for a in range(A):
                w, _ = rotate(piece, a)
                columns = range(WIDTH - w + 1)
                for col in columns:
                    nxt = quantize(drop(board, piece, a, col, cfg.board_height))
                    for p2 in range(n_pieces):
                        P[s, a, state_id(nxt, p2)] += piece_prob[p2] / len(columns)
    rho = np.zeros(S)
    for pid in valid_profiles():
        for piece in cfg.piece_set:
            rho[state_id(pid, piece)] = 1.0
    rho /= rho.sum()
    return TabularMDP(
        np.broadcast_to(P, (H, S, A, S)),
        np.broadcast_to(R, (H, S, A)),
        rho,
        name="mini-tetris",
        meta={"board_height": cfg.board_height, "horizon": H, "pieces": list(cfg.piece_set)},
    )
