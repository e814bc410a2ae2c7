"""Acceptance suite: every headline guarantee at full sweep scale.

Each test prints one PASS/FAIL line with the measured values so a log
reader can audit the run without opening the JSON report. The sweeps are
the same ones behind ``kvpack verify``; here they run at the full sizes.
"""
import sys

import pytest

from kvpack.verification import (
    baseline_dominance,
    batching_ablation,
    budget_safety,
    competitive_sweep,
    determinism_check,
    oracle_self_check,
    placement_property_sweep,
    zero_baseline_migrations,
)


def report(check):
    status = "PASS" if check.passed else "FAIL"
    print(f"{status} {check.name} {check.measured}", file=sys.stderr)
    assert check.passed, f"{check.name}: {check.measured}"


@pytest.fixture(scope="module")
def operation_sweep():
    """One shared 50-seed random-operation sweep (shape + move bounds)."""
    return placement_property_sweep(seeds=50, ops_per_seed=2000)


def test_placement_properties_hold_everywhere(operation_sweep):
    """>= 50 seeds x 2000 random operations, zero shape violations."""
    props, _ = operation_sweep
    report(props)


def test_per_operation_migration_bounds(operation_sweep):
    """Every unbatched operation stays within its per-kind move bound."""
    _, bounds = operation_sweep
    report(bounds)


def test_competitive_ratio_against_exact_oracle():
    """>= 200 traces, concurrency <= 12: peak <= ceil(4/3 * OPT) + 4."""
    report(competitive_sweep(traces=200, max_concurrency=12, slack=4))


def test_exact_packing_matches_exhaustive_enumeration():
    """1000 random instances with n <= 8, exact equality."""
    report(oracle_self_check(instances=1000, max_items=8))


def test_baseline_dominance_on_frequent_poisson():
    """mell <= lb <= max(bf, wf) mean peak; >= 5% reduction; best util."""
    report(baseline_dominance(seeds=20, min_requests=5000))


def test_batching_reduces_migrations():
    """Batched migrations <= unbatched on every epoch and full run."""
    report(batching_ablation(seeds=10))


def test_migration_budget_safety_and_consensus():
    """No un-flagged budget overrun; ordering survives 10^4 shuffles."""
    report(budget_safety(move_sets=200, shuffles=10_000))


def test_simulation_is_deterministic():
    """Two identical runs serialize to byte-identical artifacts."""
    report(determinism_check())


def test_bf_wf_never_migrate():
    """Best-fit and worst-fit runs log exactly zero migrations."""
    report(zero_baseline_migrations(seeds=5))
