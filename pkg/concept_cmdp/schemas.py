"""Pydantic schemas for files, run configurations and reports."""

from datetime import datetime
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import CMDP_VERSION, CLASSIFIER_VERSION


# ── Environment file ───────────────────────────────────────────────────

class EnvironmentLabels(BaseModel):
    states: Optional[list[str]] = None
    actions: Optional[list[str]] = None
    contexts: Optional[list[str]] = None


class EnvironmentFile(BaseModel):
    cmdp_version: Literal[CMDP_VERSION] = CMDP_VERSION
    n_states: int = Field(ge=1)
    n_actions: int = Field(ge=1)
    n_contexts: int = Field(ge=1)
    gamma: float
    transitions: list[list[list[list[float]]]]
    rewards: list[list[list[float]]]
    p_context: list[float]
    p_initial: list[list[float]]
    labels: EnvironmentLabels = EnvironmentLabels()


class GridSpec(BaseModel):
    """Layout characters: ``.`` free, ``#`` wall, ``T`` target, ``E`` exit, ``S`` start."""
    layout: list[str] = Field(min_length=1)
    tasks: list[Literal["plain", "seek", "avoid", "exit"]] = Field(min_length=1)
    gamma: float = Field(0.9, ge=0.0, lt=1.0)
    slip: float = Field(0.0, ge=0.0, le=1.0)
    move_reward: float = 0.1
    target_reward: float = 1.0
    exit_reward: float = 1.0


# ── Solution file ──────────────────────────────────────────────────────

class SolverMetadata(BaseModel):
    tol: float
    iterations: list[int]
    tau: float
    occupancy_policy: Literal["soft", "greedy"]


class SolutionFile(BaseModel):
    q_values: list[list[list[float]]]
    v_values: list[list[float]]
    soft_optimal: list[list[list[float]]]
    occupancy: list[list[float]]
    f_constant: float
    metadata: SolverMetadata


# ── Classifier file ────────────────────────────────────────────────────

class ClassifierFile(BaseModel):
    classifier_version: Literal[CLASSIFIER_VERSION] = CLASSIFIER_VERSION
    n_concepts: int = Field(ge=1)
    logits: list[list[float]]
    temperature: float = Field(gt=0)
    mode: Literal["soft", "hard"]
    factor_sizes: list[int]
    method: Optional[str] = None
    objective: Optional[float] = None

    @model_validator(mode="after")
    def _factor_product(self):
        product = 1
        for size in self.factor_sizes:
            product *= size
        if product != self.n_concepts:
            raise ValueError("factor_sizes must multiply to n_concepts")
        if any(len(row) != sum(self.factor_sizes) for row in self.logits):
            raise ValueError("each logits row must have sum(factor_sizes) entries")
        return self


# ── Run configurations ─────────────────────────────────────────────────

class TemperatureSchedule(BaseModel):
    initial: float = Field(1.0, gt=0)
    decay: float = Field(0.97, gt=0, le=1)
    floor: float = Field(0.05, gt=0)
    every: int = Field(100, ge=1)


class LearnConfig(BaseModel):
    method: Literal["exhaustive", "local_search", "gradient"] = "gradient"
    seed: int = 0
    restarts: int = Field(8, ge=1)
    max_iters: int = Field(500, ge=1)
    step_size: float = Field(5.0, gt=0)
    temperature_schedule: TemperatureSchedule = TemperatureSchedule()
    tol: float = Field(1e-10, gt=0)


class TRMCConfig(BaseModel):
    epsilon_mc: float = Field(0.05, gt=0)
    initial_entropy_frac: float = Field(0.95, gt=0, le=1)
    entropy_decay: float = Field(0.95, gt=0, le=1)
    entropy_floor: float = Field(0.01, ge=0)
    update_period_episodes: int = Field(5, ge=1)
    alpha_bounds: tuple[float, float] = (1e-4, 1e4)
    episode_budget: int = Field(500, ge=0)
    horizon: Optional[int] = Field(None, ge=1)
    seed: int = 0
    eval_period: int = Field(1, ge=1)

    @field_validator("alpha_bounds")
    @classmethod
    def _ordered_bounds(cls, v):
        low, high = v
        if not 0 < low < high:
            raise ValueError("alpha_bounds must satisfy 0 < alpha_min < alpha_max")
        return v


class MCConfig(BaseModel):
    """Raw-state every-visit epsilon-soft Monte Carlo control."""
    episode_budget: int = Field(500, ge=0)
    horizon: Optional[int] = Field(None, ge=1)
    seed: int = 0
    epsilon_start: float = Field(1.0, ge=0, le=1)
    epsilon_end: float = Field(0.05, ge=0, le=1)
    prior_weight: float = Field(1.0, ge=0)
    prior_hold: float = Field(0.5, ge=0, le=1)
    eval_period: int = Field(1, ge=1)


class ExperimentConfig(BaseModel):
    train_env: Optional[str] = None
    test_env: Optional[str] = None
    n_concepts: int = Field(2, ge=1)
    factor_sizes: Optional[list[int]] = None
    learner: LearnConfig = LearnConfig()
    trmc: TRMCConfig = TRMCConfig()
    mc: MCConfig = MCConfig()
    methods: list[Literal["trmc", "prior"]] = ["trmc", "prior"]
    n_seeds: int = Field(8, ge=1)
    seed: int = 0
    thresholds: list[float] = [0.5, 0.8]
    jumpstart_window: int = Field(5, ge=1)
    asymptotic_window: int = Field(10, ge=1)
    out_dir: Optional[str] = None
    formats: list[Literal["json", "csv"]] = ["json", "csv"]

    @field_validator("train_env", "test_env")
    @classmethod
    def _file_exists(cls, v):
        if v is not None and not Path(v).is_file():
            raise ValueError(f"environment file not found: {v}")
        return v


# ── Reports ────────────────────────────────────────────────────────────

class BoundReportModel(BaseModel):
    classifier: str
    f_constant: float
    regret: float
    regret_sq_over_f: float
    lemma1_bound: float
    theorem1_mi: float
    theorem2_bound: float
    corollary1_bound: float
    corollary1_witness: Optional[list[int]]
    bellman_residual: float
    margins: dict[str, float]
    violations: list[str]


class EnvironmentVerificationModel(BaseModel):
    environment: str
    solution_violations: list[str]
    reports: list[BoundReportModel]
    total_violations: int


class CheckSummary(BaseModel):
    checked: int = 0
    violations: int = 0
    worst_margin: Optional[float] = None


class SuiteReportModel(BaseModel):
    n_instances: int
    n_states: int
    n_actions: int
    n_contexts: int
    gamma: float
    seed: int
    margin_tol: float
    checks: dict[str, CheckSummary]
    total_violations: int
    violations: list[str]


class CurveSummary(BaseModel):
    n_seeds: int
    mean: list[float]
    stderr: list[float]


class TRMCReportModel(BaseModel):
    seed: int
    episodes: int
    n_updates: int
    entropy_target: float
    max_kl_step: Optional[float]
    final_expected_return: float
    policy: list[list[list[float]]]
    q_table: list[list[list[float]]]
    visit_counts: list[list[list[int]]]
    curve: CurveSummary


class ThresholdModel(BaseModel):
    fraction: float
    threshold: float
    baseline_episodes: Optional[int]
    treatment_episodes: Optional[int]
    ratio: Optional[float]
    status: Literal["reached", "not_reached"]


class TransferMetricsModel(BaseModel):
    jumpstart: float
    asymptotic_gap: float
    time_to_threshold: list[ThresholdModel]


class DiagnosticsModel(BaseModel):
    concept_entropy: float
    concept_context_mi: float


class TransferReportModel(BaseModel):
    seed: int
    seeds: list[int]
    n_concepts: int
    train_objective: float
    curves: dict[str, CurveSummary]
    metrics: dict[str, TransferMetricsModel]
    bound_report: BoundReportModel
    diagnostics: DiagnosticsModel


# ── Run ledger ─────────────────────────────────────────────────────────

class RunResponse(BaseModel):
    id: int
    command: str
    arguments: Optional[str]
    seed: Optional[int]
    status: str
    exit_code: Optional[int]
    outputs: Optional[str]
    error_message: Optional[str]
    created_at: datetime
    completed_at: Optional[datetime]

    model_config = ConfigDict(from_attributes=True)
