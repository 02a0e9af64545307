"""Checkers positions, moves, policy encodings and synthetic game data.

Boards are stored from the perspective of the player to move: that player's
pieces are positive (men 1, kings 3) and men advance towards increasing row.
``grid[row, col]`` with row 0 the mover's back rank.

Playable squares are one colour class of the board. Canonical boards use the
squares with ``row + col`` even; mirroring the board left-to-right maps them
onto the other colour class, so every board carries a ``parity`` and
reflection toggles it. Within a row the playable squares are numbered left to
right, so square ``k`` sits in row ``k // 4`` at position ``k % 4``; this
numbering is identical for both parities and mirroring sends position p to
3 - p.

Directions are ordered NE, SE, NW, SW (north = increasing row, east =
increasing column). A move is encoded as ``square * 4 + direction`` in a
length-128 vector; the dense policy layout is (4, 8, 8), direction-major.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DIRECTIONS = ("NE", "SE", "NW", "SW")
STEPS = ((1, 1), (-1, 1), (1, -1), (-1, -1))
MAN, KING = 1, 3
MAX_PLIES = 150
DATASET_HEADER = {"rules": "american", "forced_capture": True, "indexing": "row-major-dark"}


class InvalidBoard(ValueError):
    pass


class NoLegalMoves(ValueError):
    pass


def square_coords(sq: int, parity: int = 0) -> tuple[int, int]:
    row, pos = divmod(int(sq), 4)
    return row, 2 * pos + (row + parity) % 2


def coords_square(row: int, col: int) -> int:
    return row * 4 + col // 2


def playable_mask(parity: int = 0) -> np.ndarray:
    r, c = np.indices((8, 8))
    return (r + c) % 2 == parity


@dataclass(frozen=True, eq=False)
class Board:
    grid: np.ndarray
    parity: int = 0

    def __post_init__(self):
        g = np.array(self.grid, dtype=np.int8).reshape(8, 8)
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)

    def __eq__(self, other):
        return isinstance(other, Board) and self.parity == other.parity and np.array_equal(self.grid, other.grid)

    def __hash__(self):
        return hash((self.grid.tobytes(), self.parity))

    def validate(self) -> "Board":
        g = self.grid
        if not np.isin(g, (0, 1, -1, 3, -3)).all():
            raise InvalidBoard(f"board values must be in {{0, ±1, ±3}}, got {sorted(set(g.ravel()))}")
        if (g[~playable_mask(self.parity)] != 0).any():
            raise InvalidBoard("piece on a non-playable square")
        if (g > 0).sum() > 12 or (g < 0).sum() > 12:
            raise InvalidBoard("more than 12 pieces for one side")
        return self

    def __str__(self):
        sym = {0: ".", 1: "x", 3: "X", -1: "o", -3: "O"}
        return "\n".join(" ".join(sym[int(v)] for v in self.grid[r]) for r in range(7, -1, -1))


def initial_board() -> Board:
    g = np.zeros((8, 8), dtype=np.int8)
    mask = playable_mask(0)
    g[:3][mask[:3]] = MAN
    g[5:][mask[5:]] = -MAN
    return Board(g)


@dataclass(frozen=True, order=True)
class Move:
    square: int
    direction: int
    is_jump: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.square < 32 or not 0 <= self.direction < 4:
            raise ValueError(f"invalid move square={self.square} direction={self.direction}")

    @property
    def index(self) -> int:
        return self.square * 4 + self.direction

    @classmethod
    def from_index(cls, idx: int) -> "Move":
        return cls(*divmod(int(idx), 4))

    def to_json(self) -> dict:
        return {"sq": self.square, "dir": DIRECTIONS[self.direction]}

    @classmethod
    def from_json(cls, d: dict) -> "Move":
        return cls(int(d["sq"]), DIRECTIONS.index(d["dir"]))

    def __str__(self):
        return f"{self.square}{DIRECTIONS[self.direction]}{'x' if self.is_jump else ''}"


def _on_board(r: int, c: int) -> bool:
    return 0 <= r < 8 and 0 <= c < 8


def _piece_moves(board: Board, row: int, col: int) -> tuple[list[Move], list[Move]]:
    g = board.grid
    piece = g[row, col]
    sq = coords_square(row, col)
    dirs = range(4) if piece == KING else (0, 2)
    steps, jumps = [], []
    for d in dirs:
        dr, dc = STEPS[d]
        r1, c1 = row + dr, col + dc
        if not _on_board(r1, c1):
            continue
        if g[r1, c1] == 0:
            steps.append(Move(sq, d, False))
        elif g[r1, c1] < 0:
            r2, c2 = r1 + dr, c1 + dc
            if _on_board(r2, c2) and g[r2, c2] == 0:
                jumps.append(Move(sq, d, True))
    return steps, jumps


def legal_moves(board: Board, forced_capture: bool = True, only_square: int | None = None) -> list[Move]:
    """Single-hop moves for the positive player, sorted by encoding index.

    With ``forced_capture`` any available jump excludes ordinary steps.
    ``only_square`` restricts the result to jumps of one piece (multi-jump
    continuation).
    """
    board.validate()
    steps, jumps = [], []
    for row, col in zip(*np.nonzero(board.grid > 0)):
        if only_square is not None and coords_square(row, col) != only_square:
            continue
        s, j = _piece_moves(board, int(row), int(col))
        steps += s
        jumps += j
    if only_square is not None:
        return sorted(jumps)
    if forced_capture and jumps:
        return sorted(jumps)
    return sorted(steps + jumps)


def move_target(board: Board, move: Move) -> tuple[int, int]:
    row, col = square_coords(move.square, board.parity)
    dr, dc = STEPS[move.direction]
    n = 2 if move.is_jump else 1
    return row + n * dr, col + n * dc


def apply_move(board: Board, move: Move) -> tuple[Board, bool]:
    """Play ``move`` for the positive player; return (new board, promoted)."""
    g = board.grid.copy()
    row, col = square_coords(move.square, board.parity)
    piece = g[row, col]
    dr, dc = STEPS[move.direction]
    tr, tc = move_target(board, move)
    if move.is_jump:
        g[row + dr, col + dc] = 0
    g[row, col] = 0
    promoted = piece == MAN and tr == 7
    g[tr, tc] = KING if promoted else piece
    return Board(g, board.parity), bool(promoted)


def switch_sides(board: Board) -> Board:
    """Rotate the board half a turn and swap colours so the other player moves up."""
    return Board(-board.grid[::-1, ::-1], board.parity)


# reflections -------------------------------------------------------------------


def reflect_board(board: Board) -> Board:
    return Board(board.grid[:, ::-1], 1 - board.parity)


def reflect_square(sq: int) -> int:
    row, pos = divmod(int(sq), 4)
    return row * 4 + 3 - pos


def reflect_direction(d: int) -> int:
    return d ^ 2


def reflect_move(move: Move) -> Move:
    return Move(reflect_square(move.square), reflect_direction(move.direction), move.is_jump)


_REFLECT_INDEX = np.array([reflect_square(i // 4) * 4 + reflect_direction(i % 4) for i in range(128)])


def reflect_policy(p: np.ndarray) -> np.ndarray:
    """Mirror a policy: masked (..., 128) vectors or dense (..., 4, 8, 8) tensors."""
    p = np.asarray(p)
    if p.shape[-1] == 128:
        return p[..., _REFLECT_INDEX]
    if p.shape[-3:] == (4, 8, 8):
        return p[..., [2, 3, 0, 1], :, ::-1]
    raise ValueError(f"not a policy shape: {p.shape}")


# encodings --------------------------------------------------------------------


def encode_board(board: Board) -> np.ndarray:
    return board.grid.astype(np.float64)


def encode_move(move: Move) -> np.ndarray:
    v = np.zeros(128)
    v[move.index] = 1.0
    return v


def mask_index(parity: int = 0) -> np.ndarray:
    """Flat indices into a (4, 8, 8) tensor, ordered by move encoding index."""
    idx = []
    for sq in range(32):
        row, col = square_coords(sq, parity)
        for d in range(4):
            idx.append(d * 64 + row * 8 + col)
    return np.array(idx)


_MASK = (mask_index(0), mask_index(1))


def mask_to_32(dense: np.ndarray, parity: int = 0) -> np.ndarray:
    dense = np.asarray(dense)
    flat = dense.reshape(*dense.shape[:-3], 256)
    return flat[..., _MASK[parity]]


def unmask(vec: np.ndarray, parity: int = 0) -> np.ndarray:
    vec = np.asarray(vec)
    flat = np.zeros((*vec.shape[:-1], 256), dtype=vec.dtype)
    flat[..., _MASK[parity]] = vec
    return flat.reshape(*vec.shape[:-1], 4, 8, 8)


def light_square_mass(dense: np.ndarray, parity: int = 0) -> float:
    """Total absolute policy mass on non-playable squares (dropped by the mask)."""
    dense = np.asarray(dense)
    return float(np.abs(dense[..., ~playable_mask(parity)]).sum())


def decode_policy(p: np.ndarray, board: Board | None = None, legal_only: bool = False,
                  forced_capture: bool = True) -> Move:
    """Highest-scoring move; ties go to the lowest encoding index."""
    p = np.asarray(p, dtype=float)
    if p.shape != (128,):
        raise ValueError(f"expected a length-128 policy, got {p.shape}")
    if legal_only:
        if board is None:
            raise ValueError("legal_only decoding needs the board")
        moves = legal_moves(board, forced_capture)
        if not moves:
            raise NoLegalMoves("no legal moves in this position")
        idx = np.array([m.index for m in moves])
        best = moves[int(np.argmax(p[idx]))]
        return best
    move = Move.from_index(int(np.argmax(p)))
    if board is not None:
        row, col = square_coords(move.square, board.parity)
        dr, dc = STEPS[move.direction]
        r1, c1 = row + dr, col + dc
        jump = _on_board(r1, c1) and board.grid[r1, c1] < 0
        move = Move(move.square, move.direction, bool(jump))
    return move


# synthetic games -------------------------------------------------------------------


def _attacked(board: Board, row: int, col: int) -> bool:
    """Whether a positive piece on (row, col) could be jumped by the opponent next turn."""
    g = board.grid
    for d, (dr, dc) in enumerate(STEPS):
        ar, ac = row + dr, col + dc  # attacker square
        lr, lc = row - dr, col - dc  # landing square
        if not (_on_board(ar, ac) and _on_board(lr, lc)):
            continue
        attacker = g[ar, ac]
        # opponent men move towards decreasing row, i.e. attack with dr > 0 here
        if attacker == -KING or (attacker == -MAN and dr > 0):
            if g[lr, lc] == 0:
                return True
    return False


def move_scores(board: Board, moves: Sequence[Move]) -> np.ndarray:
    """Mirror-symmetric preference scores used by the heuristic playout policy."""
    scores = np.zeros(len(moves))
    for i, m in enumerate(moves):
        after, promoted = apply_move(board, m)
        tr, tc = move_target(board, m)
        s = 0.0
        if m.is_jump:
            s += 1.0
        if promoted:
            s += 1.5
        if tc in (0, 7):
            s += 0.5
        if _attacked(after, tr, tc):
            s -= 1.5
        scores[i] = s
    return scores


@dataclass(frozen=True)
class PositionRecord:
    board: Board
    move: Move
    game: int = 0
    ply: int = 0

    def to_json(self) -> dict:
        d = {"board": [int(v) for v in self.board.grid.ravel()], "move": self.move.to_json(),
             "game": self.game, "ply": self.ply}
        if self.board.parity:
            d["parity"] = self.board.parity
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PositionRecord":
        board = Board(np.array(d["board"]).reshape(8, 8), d.get("parity", 0))
        move = Move.from_json(d["move"])
        jump = move in [m for m in _all_moves(board) if m.is_jump]
        return cls(board, Move(move.square, move.direction, jump), d.get("game", 0), d.get("ply", 0))


def _all_moves(board: Board) -> list[Move]:
    return legal_moves(board, forced_capture=False)


@dataclass
class Dataset:
    records: list[PositionRecord]
    header: dict = field(default_factory=lambda: dict(DATASET_HEADER))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def boards(self) -> np.ndarray:
        return np.stack([r.board.grid for r in self.records]).astype(np.float64)[:, None]

    def labels(self) -> np.ndarray:
        return np.array([r.move.index for r in self.records], dtype=np.int64)

    def game_ids(self) -> np.ndarray:
        return np.array([r.game for r in self.records])

    def split(self, test_fraction: float = 0.1, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Split by game id so no game contributes to both sides."""
        games = np.unique(self.game_ids())
        rng = np.random.default_rng(seed)
        n_test = max(1, int(round(test_fraction * len(games)))) if len(games) > 1 else 0
        test_games = set(rng.permutation(games)[:n_test].tolist())
        train = [r for r in self.records if r.game not in test_games]
        test = [r for r in self.records if r.game in test_games]
        return Dataset(train, dict(self.header)), Dataset(test, dict(self.header))

    def validate(self) -> int:
        """Return the number of records whose move is not legal for its board."""
        forced = self.header.get("forced_capture", True)
        bad = 0
        for r in self.records:
            legal = legal_moves(r.board, forced)
            if r.move not in legal:
                bad += 1
        return bad

    def save(self, path: str | os.PathLike):
        with open(path, "w") as f:
            f.write(json.dumps(self.header, sort_keys=True) + "\n")
            for r in self.records:
                f.write(json.dumps(r.to_json()) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Dataset":
        with open(path) as f:
            lines = [ln for ln in f if ln.strip()]
        first = json.loads(lines[0])
        header, body = (first, lines[1:]) if "board" not in first else (dict(DATASET_HEADER), lines)
        return cls([PositionRecord.from_json(json.loads(ln)) for ln in body], header)


def play_game(rng: np.random.Generator, game: int = 0, forced_capture: bool = True, policy: str = "heuristic",
              temperature: float = 0.5, max_plies: int = MAX_PLIES) -> list[PositionRecord]:
    """One random playout from the initial position, recorded hop by hop."""
    board = initial_board()
    records = []
    continuing = None  # square of a piece in the middle of a multi-jump
    for ply in range(max_plies):
        if continuing is not None:
            moves = legal_moves(board, forced_capture, only_square=continuing)
        else:
            moves = legal_moves(board, forced_capture)
        if not moves:
            break
        if policy == "uniform":
            move = moves[int(rng.integers(len(moves)))]
        else:
            z = move_scores(board, moves) / temperature
            p = np.exp(z - z.max())
            move = moves[int(rng.choice(len(moves), p=p / p.sum()))]
        records.append(PositionRecord(board, move, game, ply))
        board, promoted = apply_move(board, move)
        tr, tc = move_target(records[-1].board, move)
        continuing = None
        if move.is_jump and not promoted:
            if legal_moves(board, forced_capture, only_square=coords_square(tr, tc)):
                continuing = coords_square(tr, tc)
        if continuing is None:
            board = switch_sides(board)
    return records


def gen_synthetic_dataset(seed: int, n_games: int, forced_capture: bool = True, policy: str = "heuristic",
                          max_positions: int | None = None) -> Dataset:
    """Random playouts; game ``i`` uses a generator seeded from (seed, i)."""
    if n_games < 1:
        raise ValueError("n_games must be >= 1")
    records = []
    for i in range(n_games):
        rng = np.random.default_rng([seed, i])
        records += play_game(rng, i, forced_capture, policy)
        if max_positions is not None and len(records) >= max_positions:
            records = records[:max_positions]
            break
    header = dict(DATASET_HEADER, forced_capture=forced_capture, policy=policy, seed=seed)
    return Dataset(records, header)


def random_positions(n: int, seed: int = 0, forced_capture: bool = True) -> list[Board]:
    """``n`` positions reachable by random play, drawn across many games."""
    rng = np.random.default_rng(seed)
    boards: list[Board] = []
    game = 0
    while len(boards) < n:
        recs = play_game(np.random.default_rng([seed, game]), game, forced_capture, policy="uniform")
        game += 1
        take = rng.choice(len(recs), size=min(len(recs), 10), replace=False)
        boards += [recs[i].board for i in sorted(take)]
    return boards[:n]
