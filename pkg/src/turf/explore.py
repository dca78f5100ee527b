"""Joint model/hardware search: greedy top-down layer replacement.

The search starts from a pre-trained model and replaces replaceable
positions one at a time from the top (output end) toward the bottom,
running the hardware design-space exploration on each candidate.  Accuracy
evaluation -- fine-tuning in the real flow -- sits behind an oracle
interface; the shipped SyntheticOracle is explicitly synthetic and only
reproduces the qualitative shape of measured accuracy curves (a peak at
one top replacement, decay toward the bottom).  Real accuracies come from
a TableOracle replay or an ExternalOracle command.
"""

from __future__ import annotations

import csv
import json
import shlex
import subprocess
from dataclasses import dataclass, field

from .errors import NoSolution, TurfError, UnknownModel
from .ir import ModelSpec, Replacement, count_ops_params, replace_layer
from .resources import (CalibrationTable, ModelDesign, PlatformSpec,
                        evaluate_model)


@dataclass(frozen=True)
class Requirements:
    """Search requirements: accuracy floor plus one performance target."""

    min_accuracy: float
    min_gops: float | None = None
    max_latency_ms: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.min_accuracy <= 1.0:
            raise TurfError("min_accuracy must lie in [0, 1]")
        if (self.min_gops is None) == (self.max_latency_ms is None):
            raise TurfError("declare exactly one of min_gops / max_latency_ms")

    @property
    def metric(self) -> str:
        return "gops" if self.min_gops is not None else "latency"

    def performance(self, gops: float, latency_ms: float) -> float:
        """Scalar score, larger is better, for the p > p* comparison."""
        return gops if self.metric == "gops" else -latency_ms

    def meets(self, gops: float, latency_ms: float) -> bool:
        if self.metric == "gops":
            return gops >= self.min_gops
        return latency_ms <= self.max_latency_ms


def replacement_key(model: ModelSpec) -> str:
    return "".join("S" if r is Replacement.SEPARABLE else "O"
                   for r in model.replacement_vector)


class SyntheticOracle:
    """Deterministic stand-in for fine-tuned accuracy (clearly labelled so).

    accuracy = base + top_bonus (if the top position is replaced)
             - sum over replaced positions of decay * depth^exponent
    where depth counts from the top (top position = 1).  Defaults peak at
    one top replacement and fall off sharply toward the bottom.
    """

    name = "synthetic"

    def __init__(self, base: float = 0.905, top_bonus: float = 0.035,
                 decay: float = 0.005, exponent: float = 3.0, seed: int = 0):
        self.base = base
        self.top_bonus = top_bonus
        self.decay = decay
        self.exponent = exponent
        self.seed = seed  # salt only; the oracle is deterministic

    def evaluate(self, model: ModelSpec, budget: int = 1) -> float:
        n = model.num_replaceable
        acc = self.base
        for pos, state in enumerate(model.replacement_vector):
            if state is Replacement.SEPARABLE:
                depth = n - pos  # 1 at the top position
                acc -= self.decay * depth ** self.exponent
                if pos == n - 1:
                    acc += self.top_bonus
        return max(0.0, min(1.0, acc))


class TableOracle:
    """Replays measured accuracies keyed by the replacement vector (O/S string)."""

    name = "table"

    def __init__(self, table: dict[str, float]):
        self.table = dict(table)

    @classmethod
    def from_csv(cls, path: str) -> "TableOracle":
        table = {}
        with open(path) as fh:
            for row in csv.DictReader(fh):
                table[row["replacement_vector"].strip()] = float(row["accuracy"])
        return cls(table)

    def evaluate(self, model: ModelSpec, budget: int = 1) -> float:
        key = replacement_key(model)
        if key not in self.table:
            raise UnknownModel(f"no table entry for replacement vector {key!r}")
        return self.table[key]


class ExternalOracle:
    """Shells out: the command receives the model JSON on stdin and prints
    an accuracy in [0, 1]."""

    name = "external"

    def __init__(self, command: str):
        self.command = command

    def evaluate(self, model: ModelSpec, budget: int = 1) -> float:
        from .ir import model_to_json
        payload = json.dumps({"model": model_to_json(model), "budget": budget})
        proc = subprocess.run(shlex.split(self.command), input=payload,
                              capture_output=True, text=True, check=True)
        return float(proc.stdout.strip())


def model_gen(pretrained: ModelSpec, current: ModelSpec | None = None,
              feedback: float | None = None) -> ModelSpec | None:
    """Next candidate model, or None when the space is exhausted.

    The first call returns the pretrained model unchanged; each subsequent
    call replaces one more position, strictly top-down.  ``feedback`` (the
    previous candidate's performance) is accepted for interface
    compatibility; the greedy order does not depend on it.
    """
    if current is None:
        return pretrained
    replaced = sum(1 for r in current.replacement_vector if r is Replacement.SEPARABLE)
    n = current.num_replaceable
    if replaced >= n:
        return None
    return replace_layer(current, n - 1 - replaced)


@dataclass(frozen=True)
class CandidateRecord:
    index: int
    replacement_vector: str
    replaced_positions: int
    accuracy: float
    accuracy_passed: bool
    gops: float | None = None
    latency_ms: float | None = None
    performance: float | None = None
    performance_passed: bool | None = None
    dsp_used: int | None = None
    bram_used: int | None = None
    alm_used: int | None = None


@dataclass(frozen=True)
class ExplorationResult:
    best_model: ModelSpec
    best_design: ModelDesign
    best_gops: float
    best_latency_ms: float
    best_performance: float
    candidates: tuple[CandidateRecord, ...]
    oracle_name: str


def run_framework(requirements: Requirements, platform: PlatformSpec,
                  pretrained: ModelSpec, oracle,
                  exhaustive: bool = False,
                  finetune_budget: int = 1,
                  coeffs: CalibrationTable | None = None,
                  max_parallel: int = 64) -> ExplorationResult:
    """Greedy joint search over model and hardware design spaces.

    Loop: while the candidate is valid and its oracle accuracy meets the
    requirement, run the hardware DSE, evaluate performance, keep the best
    (performance above the requirement and above the incumbent), then move
    to the next candidate with one more top-down replacement.  With
    ``exhaustive`` the accuracy requirement no longer terminates the walk;
    every candidate is visited and accuracy only gates record updates.

    Raises NoSolution (with the full candidate log) when nothing meets
    both requirements.
    """
    records: list[CandidateRecord] = []
    best: tuple[float, ModelSpec, ModelDesign, float, float] | None = None

    m = model_gen(pretrained)
    index = 0
    while m is not None:
        acc = oracle.evaluate(m, budget=finetune_budget)
        acc_ok = acc >= requirements.min_accuracy
        if not acc_ok and not exhaustive:
            records.append(CandidateRecord(
                index=index, replacement_vector=replacement_key(m),
                replaced_positions=sum(r is Replacement.SEPARABLE
                                       for r in m.replacement_vector),
                accuracy=acc, accuracy_passed=False))
            break

        if acc_ok:
            design = evaluate_model(m, platform, coeffs, max_parallel=max_parallel)
            ops = count_ops_params(m).total_ops
            gops = design.gops(ops, platform)
            latency = design.latency_ms(platform)
            perf = requirements.performance(gops, latency)
            perf_ok = requirements.meets(gops, latency)
            records.append(CandidateRecord(
                index=index, replacement_vector=replacement_key(m),
                replaced_positions=sum(r is Replacement.SEPARABLE
                                       for r in m.replacement_vector),
                accuracy=acc, accuracy_passed=True, gops=gops,
                latency_ms=latency, performance=perf, performance_passed=perf_ok,
                dsp_used=design.dsp_used, bram_used=design.bram_used,
                alm_used=design.alm_used))
            if perf_ok and (best is None or perf > best[0]):
                best = (perf, m, design, gops, latency)
        else:
            records.append(CandidateRecord(
                index=index, replacement_vector=replacement_key(m),
                replaced_positions=sum(r is Replacement.SEPARABLE
                                       for r in m.replacement_vector),
                accuracy=acc, accuracy_passed=False))

        m = model_gen(pretrained, m)
        index += 1

    if best is None:
        raise NoSolution(
            f"no candidate met accuracy >= {requirements.min_accuracy} and the "
            f"{requirements.metric} requirement", candidates=records)
    perf, model, design, gops, latency = best
    return ExplorationResult(
        best_model=model, best_design=design, best_gops=gops,
        best_latency_ms=latency, best_performance=perf,
        candidates=tuple(records), oracle_name=getattr(oracle, "name", "custom"))
