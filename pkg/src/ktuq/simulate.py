"""Synthetic multiple-choice response generator.

Students answer quizzes of five questions whose latent difficulty rises
strictly within the quiz. Correctness follows a guess-floored logistic in
(ability - difficulty); wrong answers pick among the three distractors in
proportion to the student's susceptibility to each distractor's misconception;
ability drifts upward a little after every completed quiz. Question text is
stood in for by pseudo-embeddings: one noisy sample around a per-construct
centroid, so questions sharing a construct look alike to the text-based model.

Everything is a pure function of (config.seed, ids): banks, students, and
responses draw from disjoint counter-based streams, so datasets are
reproducible bitwise and students could be simulated in any order or in
parallel.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .autodiff.rng import RngStream
from .data import (
    DatasetSplit,
    EmbeddingTable,
    InteractionRecord,
    N_OPTIONS,
    QuestionBank,
    QuestionRecord,
    StudentSequence,
    split_students,
    write_embeddings,
    write_interactions,
    write_questions,
)
from .validation import ValidationError, check_fraction, check_positive_int

QUIZ_LENGTH = 5

# Stream-id layout under the dataset seed. Bases are far apart so id spaces
# for per-student / per-question streams never collide.
BANK_STREAM = 1
SPLIT_STREAM = 2
STUDENT_PROFILE_BASE = 1_000_000
STUDENT_RESPONSE_BASE = 2_000_000
CONSTRUCT_EMB_BASE = 3_000_000
QUESTION_EMB_BASE = 4_000_000

_MAX_ENTITIES = 1_000_000


@dataclass(frozen=True)
class SimConfig:
    n_students: int = 100
    n_questions: int = 100          # multiple of QUIZ_LENGTH
    sequence_length: int = 50       # multiple of QUIZ_LENGTH
    ability_spread: float = 1.0
    guess_floor: float = 0.25
    ability_drift: float = 0.02     # added to ability after each quiz
    misconception_count: int = 8
    construct_count: int = 10
    embedding_dim: int = 64
    val_fraction: float = 1.0 / 6.0
    seed: int = 0

    def __post_init__(self):
        check_positive_int("n_students", self.n_students)
        check_positive_int("n_questions", self.n_questions)
        check_positive_int("sequence_length", self.sequence_length)
        check_positive_int("misconception_count", self.misconception_count)
        check_positive_int("construct_count", self.construct_count)
        check_positive_int("embedding_dim", self.embedding_dim)
        check_fraction("val_fraction", self.val_fraction)
        if self.n_questions % QUIZ_LENGTH:
            raise ValidationError("n_questions must be a multiple of 5 (quiz templates)")
        if self.n_questions < QUIZ_LENGTH:
            raise ValidationError("need at least one quiz template of 5 questions")
        if self.sequence_length % QUIZ_LENGTH:
            raise ValidationError("sequence_length must be a multiple of 5")
        if not 0.0 <= self.guess_floor < 1.0:
            raise ValidationError("guess_floor must lie in [0, 1)")
        if self.misconception_count < N_OPTIONS - 1:
            raise ValidationError("need at least 3 misconceptions (one per distractor)")
        if self.n_students > _MAX_ENTITIES or self.n_questions > _MAX_ENTITIES:
            raise ValidationError("entity count exceeds the stream-id layout")

    @property
    def n_templates(self) -> int:
        return self.n_questions // QUIZ_LENGTH

    @property
    def quizzes_per_student(self) -> int:
        return self.sequence_length // QUIZ_LENGTH


@dataclass(frozen=True)
class SimQuestion:
    """A bank question plus the latent fields only the simulator knows."""

    question_id: int
    construct_id: int
    quiz_slot: int                 # 0..4 within its template
    difficulty: float
    correct_option: int
    distractor_misconceptions: tuple[int, int, int]  # per distractor, option order
    text_key: str

    @property
    def distractor_options(self) -> tuple[int, ...]:
        return tuple(o for o in range(N_OPTIONS) if o != self.correct_option)


@dataclass(frozen=True)
class SimStudent:
    student_id: int
    ability: float
    susceptibility: np.ndarray  # (misconception_count,) non-negative


def probability_correct(ability: float, difficulty: float, guess_floor: float) -> float:
    """Chance of answering correctly: guess floor plus a logistic in (theta - b)."""
    return guess_floor + (1.0 - guess_floor) * float(expit(ability - difficulty))


# ---------------------------------------------------------------------------
# bank / students
# ---------------------------------------------------------------------------

def generate_bank(config: SimConfig) -> list[SimQuestion]:
    """Deterministic question bank: templates of 5 with strictly rising difficulty."""
    gen = RngStream(config.seed, BANK_STREAM).generator()
    questions: list[SimQuestion] = []
    for template in range(config.n_templates):
        difficulties = np.sort(gen.normal(0.0, 1.0, size=QUIZ_LENGTH))
        for i in range(1, QUIZ_LENGTH):  # ties have measure zero; make strict anyway
            if difficulties[i] <= difficulties[i - 1]:
                difficulties[i] = np.nextafter(difficulties[i - 1], np.inf)
        construct = template % config.construct_count
        for slot in range(QUIZ_LENGTH):
            qid = template * QUIZ_LENGTH + slot
            correct = int(gen.integers(N_OPTIONS))
            miscons = tuple(
                int(m) for m in gen.choice(
                    config.misconception_count, size=N_OPTIONS - 1, replace=False
                )
            )
            questions.append(SimQuestion(
                question_id=qid,
                construct_id=construct,
                quiz_slot=slot,
                difficulty=float(difficulties[slot]),
                correct_option=correct,
                distractor_misconceptions=miscons,
                text_key=f"question:{qid}",
            ))
    return questions


def bank_records(questions: list[SimQuestion]) -> QuestionBank:
    return QuestionBank([
        QuestionRecord(q.question_id, q.correct_option, q.construct_id, q.text_key)
        for q in questions
    ])


def generate_student(config: SimConfig, student_id: int) -> tuple[SimStudent, np.ndarray]:
    """One student's latent profile plus their quiz-template sequence."""
    gen = RngStream(config.seed, STUDENT_PROFILE_BASE + student_id).generator()
    ability = float(gen.normal(0.0, config.ability_spread))
    susceptibility = gen.gamma(1.0, 1.0, size=config.misconception_count)
    quiz_sequence = gen.integers(0, config.n_templates, size=config.quizzes_per_student)
    return SimStudent(student_id, ability, susceptibility), quiz_sequence


# ---------------------------------------------------------------------------
# response simulation
# ---------------------------------------------------------------------------

def simulate_student(
    student: SimStudent,
    quiz_sequence,
    questions: list[SimQuestion],
    config: SimConfig,
    rng,
) -> list[InteractionRecord]:
    """Roll one student through their quizzes.

    ``rng`` is an RngStream (a fresh generator is derived) or an already
    positioned Generator. Ability gains ``ability_drift`` after each quiz.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    theta = student.ability
    responses: list[InteractionRecord] = []
    for template in np.asarray(quiz_sequence):
        base = int(template) * QUIZ_LENGTH
        for slot in range(QUIZ_LENGTH):
            q = questions[base + slot]
            p = probability_correct(theta, q.difficulty, config.guess_floor)
            if gen.random() < p:
                chosen = q.correct_option
            else:
                weights = student.susceptibility[list(q.distractor_misconceptions)]
                total = weights.sum()
                if total > 0.0:
                    probs = weights / total
                else:
                    probs = np.full(N_OPTIONS - 1, 1.0 / (N_OPTIONS - 1))
                pick = int(gen.choice(N_OPTIONS - 1, p=probs))
                chosen = q.distractor_options[pick]
            responses.append(InteractionRecord(q.question_id, int(chosen)))
        theta += config.ability_drift
    return responses


# ---------------------------------------------------------------------------
# pseudo-embeddings
# ---------------------------------------------------------------------------

_NOISE_SCALE = 0.35


def construct_centroid(config: SimConfig, construct_id: int) -> np.ndarray:
    gen = RngStream(config.seed, CONSTRUCT_EMB_BASE + construct_id).generator()
    return gen.normal(0.0, 1.0, size=config.embedding_dim)


def question_embedding(config: SimConfig, question: SimQuestion) -> np.ndarray:
    """Centroid of the question's construct plus per-question noise."""
    centroid = construct_centroid(config, question.construct_id)
    gen = RngStream(config.seed, QUESTION_EMB_BASE + question.question_id).generator()
    return centroid + gen.normal(0.0, _NOISE_SCALE, size=config.embedding_dim)


def generate_embeddings(config: SimConfig, questions: list[SimQuestion]) -> EmbeddingTable:
    """Pseudo-embedding table for all question and construct text keys.

    Values are squeezed through float32 (the on-disk precision) so the
    in-memory table round-trips the blob format exactly.
    """
    keys: list[str] = []
    rows: list[np.ndarray] = []
    for q in questions:
        keys.append(q.text_key)
        rows.append(question_embedding(config, q))
    for construct in range(config.construct_count):
        keys.append(f"construct:{construct}")
        rows.append(construct_centroid(config, construct))
    matrix = np.stack(rows).astype(np.float32).astype(np.float64)
    return EmbeddingTable(dimension=config.embedding_dim, keys=tuple(keys), matrix=matrix)


# ---------------------------------------------------------------------------
# full datasets
# ---------------------------------------------------------------------------

def _to_sequence(student_id: int, responses: list[InteractionRecord],
                 bank: QuestionBank) -> StudentSequence:
    qids = np.array([r.question_id for r in responses], dtype=np.int64)
    rows = np.array([bank.row_of[r.question_id] for r in responses], dtype=np.int64)
    constructs = np.array(
        [bank.records[row].construct_id for row in rows], dtype=np.int64
    )
    chosen = np.array([r.chosen for r in responses], dtype=np.int64)
    return StudentSequence(student_id, qids, rows, constructs, chosen)


def generate_dataset(config: SimConfig) -> tuple[QuestionBank, DatasetSplit, EmbeddingTable]:
    questions = generate_bank(config)
    bank = bank_records(questions)
    sequences = []
    for sid in range(config.n_students):
        student, quiz_sequence = generate_student(config, sid)
        responses = simulate_student(
            student, quiz_sequence, questions, config,
            RngStream(config.seed, STUDENT_RESPONSE_BASE + sid),
        )
        sequences.append(_to_sequence(sid, responses, bank))
    split = split_students(sequences, config.val_fraction, RngStream(config.seed, SPLIT_STREAM))
    table = generate_embeddings(config, questions)
    return bank, split, table


def write_dataset(config: SimConfig, out_dir) -> tuple[QuestionBank, DatasetSplit, EmbeddingTable]:
    """Generate and persist a dataset directory; returns the in-memory pieces."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bank, split, table = generate_dataset(config)
    write_questions(bank, out_dir / "questions.jsonl")
    write_interactions(split.train, out_dir / "train.jsonl")
    write_interactions(split.val, out_dir / "val.jsonl")
    write_embeddings(table, out_dir / "embeddings.json", out_dir / "embeddings.bin")
    (out_dir / "sim_config.json").write_text(
        json.dumps(asdict(config), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return bank, split, table
