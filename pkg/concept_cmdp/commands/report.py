"""``report``: summarize a report file or list the run ledger."""

import json
from pathlib import Path

from pydantic import ValidationError
from sqlalchemy.exc import SQLAlchemyError

from database import get_db
from errors import InvalidInputError
from models import Run
from schemas import EnvironmentVerificationModel, RunResponse, SuiteReportModel, TransferReportModel
from services.info import bits
from commands.common import common_flags, emit, track_run


def register(subparsers):
    parser = subparsers.add_parser("report", parents=[common_flags()], help="summarize a report or the run ledger")
    parser.add_argument("file", nargs="?", default=None, help="transfer, suite or environment verification report")
    parser.add_argument("--runs", action="store_true", help="list recorded runs")
    parser.add_argument("--limit", type=int, default=20)
    parser.add_argument("--bits", action="store_true", help="show information quantities in bits instead of nats")
    parser.set_defaults(handler=run)


# ── Ledger ─────────────────────────────────────────────────────────────

def list_runs(limit: int) -> list[RunResponse]:
    db = get_db()
    try:
        rows = db.query(Run).order_by(Run.created_at.desc(), Run.id.desc()).limit(limit).all()
        return [RunResponse.model_validate(row) for row in rows]
    finally:
        db.close()


def _runs_text(runs: list[RunResponse]) -> str:
    lines = [f"{'id':>5}  {'command':<15} {'status':<10} {'exit':>4}  created"]
    for r in runs:
        exit_code = "" if r.exit_code is None else str(r.exit_code)
        lines.append(f"{r.id:>5}  {r.command:<15} {r.status:<10} {exit_code:>4}  {r.created_at:%Y-%m-%d %H:%M:%S}")
    return "\n".join(lines)


# ── Report files ───────────────────────────────────────────────────────

class _Units:
    """Formats information quantities in nats or bits."""

    def __init__(self, in_bits: bool = False):
        self.in_bits = in_bits
        self.name = "bits" if in_bits else "nats"

    def __call__(self, nats: float, spec: str = ".4g") -> str:
        return format(bits(nats) if self.in_bits else nats, spec)


def _transfer_text(report: TransferReportModel, units: _Units) -> str:
    lines = [
        f"Transfer report (seed {report.seed}, {len(report.seeds)} seeds, {report.n_concepts} concepts)",
        f"  train objective I(S:A|S_phi,C) = {units(report.train_objective, '.6g')} {units.name}",
        f"  concept entropy {units(report.diagnostics.concept_entropy, '.4f')}, "
        f"concept/context MI {units(report.diagnostics.concept_context_mi, '.4f')} {units.name}",
    ]
    for name, curve in report.curves.items():
        final = curve.mean[-1] if curve.mean else float("nan")
        lines.append(f"  {name:<9} final mean return {final:.4f}")
    for name, metrics in report.metrics.items():
        lines.append(f"  {name} vs baseline: jumpstart {metrics.jumpstart:+.4f}, asymptotic gap {metrics.asymptotic_gap:+.4f}")
        for t in metrics.time_to_threshold:
            ratio = "not reached" if t.ratio is None else f"{t.ratio:.2f}"
            lines.append(f"    J_tt({t.fraction:.0%}) = {ratio}")
    b = report.bound_report
    lines.append(
        f"  test bounds: regret {b.regret:.4g}, I {units(b.theorem1_mi)} {units.name}, "
        f"coupling bound {b.theorem2_bound:.4g}"
    )
    return "\n".join(lines)


def _suite_text(report: SuiteReportModel, units: _Units) -> str:
    lines = [
        f"Bound suite: {report.n_instances} instances of (S, A, C) = "
        f"({report.n_states}, {report.n_actions}, {report.n_contexts}), gamma {report.gamma}, seed {report.seed}",
    ]
    for name, check in report.checks.items():
        if check.worst_margin is None:
            worst = "n/a"
        elif name == "bellman":
            worst = f"{check.worst_margin:.3e}"
        else:
            worst = f"{units(check.worst_margin, '.3e')} {units.name}"
        lines.append(f"  {name:<16} checked {check.checked:>6}  violations {check.violations:>4}  worst margin {worst}")
    lines.append(f"  total violations: {report.total_violations}")
    return "\n".join(lines)


def _environment_text(report: EnvironmentVerificationModel, units: _Units) -> str:
    lines = [f"Bounds for {report.environment} (I in {units.name})"]
    lines += [f"  solution: {message}" for message in report.solution_violations]
    for b in report.reports:
        lines.append(
            f"  {b.classifier:<12} regret^2/F {b.regret_sq_over_f:.4g}  I {units(b.theorem1_mi)}  "
            f"coupling {b.theorem2_bound:.4g}  max D {b.corollary1_bound:.4g}  violations {len(b.violations)}"
        )
    lines.append(f"  total violations: {report.total_violations}")
    return "\n".join(lines)


_RENDERERS = (
    (TransferReportModel, _transfer_text),
    (SuiteReportModel, _suite_text),
    (EnvironmentVerificationModel, _environment_text),
)


def summarize(path: str, in_bits: bool = False) -> str:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read report {path}: {exc}") from exc
    for model, render in _RENDERERS:
        try:
            return render(model.model_validate_json(text), _Units(in_bits))
        except ValidationError:
            continue
    raise InvalidInputError(f"{path} is not a transfer, suite or environment verification report")


def run(args) -> int:
    if (args.file is None) == (not args.runs):
        raise InvalidInputError("give a report file or --runs")
    with track_run("report", args) as outputs:
        if args.runs:
            try:
                runs = list_runs(args.limit)
            except SQLAlchemyError as exc:
                raise InvalidInputError(f"run ledger unavailable: {exc}") from exc
            if args.format == "json":
                text = json.dumps([r.model_dump(mode="json") for r in runs], indent=2)
            else:
                text = _runs_text(runs)
        else:
            text = summarize(args.file, args.bits)
        outputs.append(emit(text, args.out))
    return 0
