"""Dataset records, file formats, splits, and batching.

On-disk formats:
  * questions: JSONL, one object per question with keys
    {"question_id", "correct_option" ("A".."D"), "construct_id", "text_key"}
  * interactions: JSONL, one object per student:
    {"student_id", "responses": [{"question_id", "chosen"}, ...]}
  * embeddings: a JSON index {"dimension", "keys"} next to a raw blob of
    little-endian float32 vectors, row-major in key order.

In memory everything is numpy: a sequence stores both raw ids (for reporting)
and dense row indices (for embedding lookups), so batching never needs to
consult the bank again.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.rng import RngStream
from .validation import (
    DataFormatError,
    ValidationError,
    check_fraction,
    check_positive_int,
)

OPTION_LETTERS = "ABCD"
N_OPTIONS = 4


def option_to_index(letter: str) -> int:
    try:
        return OPTION_LETTERS.index(letter)
    except (ValueError, TypeError):
        raise DataFormatError(f"option must be one of A..D, got {letter!r}") from None


def index_to_option(index: int) -> str:
    if not 0 <= int(index) < N_OPTIONS:
        raise ValidationError(f"option index must be 0..3, got {index}")
    return OPTION_LETTERS[int(index)]


@dataclass(frozen=True)
class QuestionRecord:
    question_id: int
    correct_option: int  # 0..3
    construct_id: int
    text_key: str


@dataclass(frozen=True)
class InteractionRecord:
    """One response event: the question asked and the option the student chose."""

    question_id: int
    chosen: int  # 0..3


class QuestionBank:
    """All questions of a corpus, with dense row indexing in sorted-id order."""

    def __init__(self, records: list[QuestionRecord]):
        if not records:
            raise DataFormatError("question bank is empty")
        ordered = sorted(records, key=lambda r: r.question_id)
        self.records: tuple[QuestionRecord, ...] = tuple(ordered)
        self.question_ids = np.array([r.question_id for r in ordered], dtype=np.int64)
        self.row_of = {r.question_id: i for i, r in enumerate(ordered)}
        construct_ids = sorted({r.construct_id for r in ordered})
        self.construct_row = {c: i for i, c in enumerate(construct_ids)}
        self.correct_rows = np.array([r.correct_option for r in ordered], dtype=np.int64)

    @property
    def n_questions(self) -> int:
        return len(self.records)

    @property
    def n_constructs(self) -> int:
        return len(self.construct_row)

    def record(self, question_id: int) -> QuestionRecord:
        row = self.row_of.get(question_id)
        if row is None:
            raise DataFormatError(f"unknown question_id {question_id}")
        return self.records[row]

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class StudentSequence:
    """A fixed-length response history for one student (positions 0..L-1)."""

    student_id: int
    question_ids: np.ndarray   # (L,) raw ids
    question_rows: np.ndarray  # (L,) dense rows into the bank
    construct_ids: np.ndarray  # (L,) raw construct ids
    chosen: np.ndarray         # (L,) option indices 0..3

    def __post_init__(self):
        n = len(self.question_ids)
        for name in ("question_rows", "construct_ids", "chosen"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"sequence field {name} length mismatch")

    def __len__(self):
        return len(self.question_ids)

    @property
    def quiz_slots(self) -> np.ndarray:
        """Within-quiz slot of each position (quizzes are 5 questions long)."""
        return np.arange(len(self), dtype=np.int64) % 5


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[StudentSequence, ...]
    val: tuple[StudentSequence, ...]


@dataclass(frozen=True)
class LoadReport:
    """Loader accounting: who was kept, who was dropped, and how much data."""

    n_questions: int
    students_seen: int
    students_kept: int
    students_dropped: int
    interactions_seen: int
    interactions_kept: int
    sequence_length: int


# ---------------------------------------------------------------------------
# JSONL loading
# ---------------------------------------------------------------------------

def _iter_jsonl(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path.name} line {lineno}: invalid JSON ({exc.msg})") from None


def _require(obj: dict, key: str, path: Path, lineno: int):
    if key not in obj:
        raise DataFormatError(f"{path.name} line {lineno}: missing key {key!r}")
    return obj[key]


def load_questions(path) -> QuestionBank:
    path = Path(path)
    records: list[QuestionRecord] = []
    seen: set[int] = set()
    for lineno, obj in _iter_jsonl(path):
        qid = _require(obj, "question_id", path, lineno)
        if not isinstance(qid, int):
            raise DataFormatError(f"{path.name} line {lineno}: question_id must be an integer")
        if qid in seen:
            raise DataFormatError(f"{path.name} line {lineno}: duplicate question_id {qid}")
        seen.add(qid)
        correct = option_to_index(_require(obj, "correct_option", path, lineno))
        construct = _require(obj, "construct_id", path, lineno)
        if not isinstance(construct, int):
            raise DataFormatError(f"{path.name} line {lineno}: construct_id must be an integer")
        text_key = _require(obj, "text_key", path, lineno)
        if not isinstance(text_key, str):
            raise DataFormatError(f"{path.name} line {lineno}: text_key must be a string")
        records.append(QuestionRecord(qid, correct, construct, text_key))
    return QuestionBank(records)


def load_dataset(
    questions_path,
    interactions_path,
    sequence_length: int | None = 100,
) -> tuple[QuestionBank, list[StudentSequence], LoadReport]:
    """Load a corpus; keep students with >= L responses, truncated to the final L.

    ``sequence_length=None`` infers L from the first student and then requires
    every student to have exactly that many responses (the simulator's output
    shape). Positions are renumbered 0..L-1 after truncation.
    """
    bank = load_questions(questions_path)
    interactions_path = Path(interactions_path)

    sequences: list[StudentSequence] = []
    students_seen = students_dropped = interactions_seen = 0
    seen_students: set[int] = set()
    length = sequence_length

    for lineno, obj in _iter_jsonl(interactions_path):
        sid = _require(obj, "student_id", interactions_path, lineno)
        if not isinstance(sid, int):
            raise DataFormatError(
                f"{interactions_path.name} line {lineno}: student_id must be an integer"
            )
        if sid in seen_students:
            raise DataFormatError(
                f"{interactions_path.name} line {lineno}: duplicate student_id {sid}"
            )
        seen_students.add(sid)
        responses = _require(obj, "responses", interactions_path, lineno)
        if not isinstance(responses, list):
            raise DataFormatError(
                f"{interactions_path.name} line {lineno}: responses must be a list"
            )
        students_seen += 1
        interactions_seen += len(responses)
        if length is None:
            length = check_positive_int("sequence_length", len(responses))
        if len(responses) < length:
            students_dropped += 1
            continue
        if sequence_length is None and len(responses) != length:
            raise DataFormatError(
                f"{interactions_path.name} line {lineno}: expected exactly {length} "
                f"responses, got {len(responses)}"
            )
        tail = responses[-length:]
        qids = np.empty(length, dtype=np.int64)
        rows = np.empty(length, dtype=np.int64)
        constructs = np.empty(length, dtype=np.int64)
        chosen = np.empty(length, dtype=np.int64)
        for pos, resp in enumerate(tail):
            if not isinstance(resp, dict):
                raise DataFormatError(
                    f"{interactions_path.name} line {lineno}: response {pos} must be an object"
                )
            qid = resp.get("question_id")
            row = bank.row_of.get(qid)
            if row is None:
                raise DataFormatError(
                    f"{interactions_path.name} line {lineno}: student {sid} references "
                    f"unknown question_id {qid!r}"
                )
            qids[pos] = qid
            rows[pos] = row
            constructs[pos] = bank.records[row].construct_id
            chosen[pos] = option_to_index(resp.get("chosen"))
        sequences.append(StudentSequence(sid, qids, rows, constructs, chosen))

    if not sequences:
        raise DataFormatError(
            f"{interactions_path.name}: no student meets the sequence length requirement"
        )
    report = LoadReport(
        n_questions=bank.n_questions,
        students_seen=students_seen,
        students_kept=len(sequences),
        students_dropped=students_dropped,
        interactions_seen=interactions_seen,
        interactions_kept=len(sequences) * length,
        sequence_length=length,
    )
    return bank, sequences, report


# ---------------------------------------------------------------------------
# writers (simulator output, round-trip tested)
# ---------------------------------------------------------------------------

def write_questions(bank: QuestionBank, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in bank.records:
            fh.write(json.dumps({
                "question_id": int(rec.question_id),
                "correct_option": index_to_option(rec.correct_option),
                "construct_id": int(rec.construct_id),
                "text_key": rec.text_key,
            }, sort_keys=True) + "\n")


def write_interactions(sequences, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            obj = {
                "student_id": int(seq.student_id),
                "responses": [
                    {"question_id": int(q), "chosen": index_to_option(c)}
                    for q, c in zip(seq.question_ids, seq.chosen)
                ],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# splits and batches
# ---------------------------------------------------------------------------

def split_students(sequences, val_fraction: float, rng: RngStream) -> DatasetSplit:
    """Deterministic student-level partition into train/validation halves."""
    check_fraction("val_fraction", val_fraction)
    sequences = list(sequences)
    n = len(sequences)
    if n < 2:
        raise ValidationError(f"need at least 2 students to split, got {n}")
    n_val = int(round(n * val_fraction))
    n_val = min(max(n_val, 1), n - 1)
    perm = rng.generator().permutation(n)
    val_idx = set(perm[:n_val].tolist())
    train = tuple(s for i, s in enumerate(sequences) if i not in val_idx)
    val = tuple(s for i, s in enumerate(sequences) if i in val_idx)
    return DatasetSplit(train=train, val=val)


@dataclass(frozen=True)
class Batch:
    """A stack of same-length sequences, teacher-forcing layout.

    Position t of every row is a prediction target: the model sees
    interactions 0..t-1 (via its own shifted streams) plus the identity of
    question t, and must predict ``chosen[:, t]``.
    """

    student_ids: np.ndarray    # (B,)
    question_ids: np.ndarray   # (B, T) raw ids
    question_rows: np.ndarray  # (B, T) dense rows
    construct_ids: np.ndarray  # (B, T)
    chosen: np.ndarray         # (B, T)

    @property
    def size(self) -> int:
        return self.question_rows.shape[0]

    @property
    def length(self) -> int:
        return self.question_rows.shape[1]

    def history_mask(self) -> np.ndarray:
        """(T, T) bool; [t, j] is True iff interaction j is visible history at t."""
        t = self.length
        return np.tril(np.ones((t, t), dtype=bool), k=-1)


def make_batches(sequences, batch_size: int) -> list[Batch]:
    """Chunk sequences in order into batches; the final partial batch is kept."""
    check_positive_int("batch_size", batch_size)
    sequences = list(sequences)
    if not sequences:
        raise ValidationError("cannot batch an empty sequence list")
    length = len(sequences[0])
    for seq in sequences:
        if len(seq) != length:
            raise ValidationError(
                "all sequences in a batch set must share one length; "
                f"got {len(seq)} and {length}"
            )
    batches = []
    for lo in range(0, len(sequences), batch_size):
        chunk = sequences[lo:lo + batch_size]
        batches.append(Batch(
            student_ids=np.array([s.student_id for s in chunk], dtype=np.int64),
            question_ids=np.stack([s.question_ids for s in chunk]),
            question_rows=np.stack([s.question_rows for s in chunk]),
            construct_ids=np.stack([s.construct_ids for s in chunk]),
            chosen=np.stack([s.chosen for s in chunk]),
        ))
    return batches


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmbeddingTable:
    """Named float vectors (text-embedding lookups), float64 in memory."""

    dimension: int
    keys: tuple[str, ...]
    matrix: np.ndarray  # (len(keys), dimension)
    _row: dict = field(repr=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "_row", {k: i for i, k in enumerate(self.keys)})
        if self.matrix.shape != (len(self.keys), self.dimension):
            raise ValidationError(
                f"embedding matrix shape {self.matrix.shape} does not match "
                f"{len(self.keys)} keys x {self.dimension}"
            )

    def vector(self, key: str) -> np.ndarray:
        row = self._row.get(key)
        if row is None:
            raise DataFormatError(f"embedding table has no key {key!r}")
        return self.matrix[row]

    def __contains__(self, key: str) -> bool:
        return key in self._row


def load_embeddings(index_path, blob_path, truncation_dim: int | None = None) -> EmbeddingTable:
    index_path, blob_path = Path(index_path), Path(blob_path)
    try:
        index = json.loads(index_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{index_path.name}: invalid JSON ({exc.msg})") from None
    dimension = index.get("dimension")
    keys = index.get("keys")
    if not isinstance(dimension, int) or dimension <= 0:
        raise DataFormatError(f"{index_path.name}: 'dimension' must be a positive integer")
    if not isinstance(keys, list) or not all(isinstance(k, str) for k in keys):
        raise DataFormatError(f"{index_path.name}: 'keys' must be a list of strings")
    blob = blob_path.read_bytes()
    expected = len(keys) * dimension * 4
    if len(blob) != expected:
        raise DataFormatError(
            f"{blob_path.name}: size mismatch, expected {expected} bytes "
            f"({len(keys)} keys x {dimension} x 4), got {len(blob)}"
        )
    matrix = np.frombuffer(blob, dtype="<f4").reshape(len(keys), dimension).astype(np.float64)
    if truncation_dim is not None and truncation_dim < dimension:
        matrix = matrix[:, :truncation_dim].copy()
        dimension = truncation_dim
    return EmbeddingTable(dimension=dimension, keys=tuple(keys), matrix=matrix)


def write_embeddings(table: EmbeddingTable, index_path, blob_path) -> None:
    index = {"dimension": int(table.dimension), "keys": list(table.keys)}
    Path(index_path).write_text(json.dumps(index, sort_keys=True), encoding="utf-8")
    Path(blob_path).write_bytes(table.matrix.astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# difficulty
# ---------------------------------------------------------------------------

def question_difficulty(sequences, bank: QuestionBank) -> dict[int, float]:
    """Empirical error rate per question over the given sequences.

    Questions never attempted are absent from the result.
    """
    attempts = np.zeros(bank.n_questions, dtype=np.int64)
    wrong = np.zeros(bank.n_questions, dtype=np.int64)
    for seq in sequences:
        correct = bank.correct_rows[seq.question_rows]
        np.add.at(attempts, seq.question_rows, 1)
        np.add.at(wrong, seq.question_rows, (seq.chosen != correct).astype(np.int64))
    out: dict[int, float] = {}
    for row in np.nonzero(attempts)[0]:
        out[int(bank.question_ids[row])] = float(wrong[row] / attempts[row])
    return out


# ---------------------------------------------------------------------------
# simulator-directory convenience (used by the CLI)
# ---------------------------------------------------------------------------

def load_sim_dataset(data_dir):
    """Load the file set written by ``simulate`` from one directory."""
    data_dir = Path(data_dir)
    questions = data_dir / "questions.jsonl"
    for required in ("questions.jsonl", "train.jsonl", "val.jsonl",
                     "embeddings.json", "embeddings.bin"):
        if not (data_dir / required).exists():
            raise DataFormatError(f"data directory is missing {required}")
    bank, train, _ = load_dataset(questions, data_dir / "train.jsonl", sequence_length=None)
    _, val, _ = load_dataset(questions, data_dir / "val.jsonl", sequence_length=None)
    table = load_embeddings(data_dir / "embeddings.json", data_dir / "embeddings.bin")
    return bank, DatasetSplit(train=tuple(train), val=tuple(val)), table
