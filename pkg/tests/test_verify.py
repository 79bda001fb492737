"""Self-check runner: suites pass as shipped, broken corrections get flagged."""

import pytest

from zeromode.verify import (
    CheckResult,
    all_passed,
    available_suites,
    format_results,
    run_checks,
)


class TestSuites:
    def test_everything_passes_as_shipped(self):
        results = run_checks("all")
        assert all_passed(results), format_results(results)

    def test_suite_filtering(self):
        for suite in available_suites():
            results = run_checks(suite)
            assert results
            assert {r.suite for r in results} == {suite}
        assert {r.suite for r in run_checks("all")} == set(available_suites())

    def test_unknown_suite(self):
        with pytest.raises(ValueError, match="unknown suite"):
            run_checks("vibes")

    def test_results_carry_timing(self):
        results = run_checks("theorems")
        assert all(isinstance(r, CheckResult) for r in results)
        assert all(r.elapsed >= 0.0 for r in results)


class TestMutantDetection:
    """A wrong correction must be reported, or the suite is decorative."""

    def test_noop_correction_fails_mean_pinning(self):
        noop = lambda values, targets, flags: values
        results = run_checks("theorems", correction=noop)
        failed = {r.name for r in results if not r.passed}
        assert "mean_pinning" in failed
        detail = next(r.detail for r in results if r.name == "mean_pinning")
        assert "seed" in detail  # counterexample is named

    def test_rescaling_correction_fails_shift_check(self):
        def rescale(values, targets, flags):
            out = values.copy()
            for c, on in enumerate(flags):
                if on:
                    out[c] *= targets[c] / values[c].mean()
            return out

        results = run_checks("theorems", correction=rescale)
        failed = {r.name for r in results if not r.passed}
        # pins the mean, but by bending nonzero structure
        assert "shift_only_action" in failed

    def test_crashing_correction_is_a_failure_not_an_abort(self):
        def broken(values, targets, flags):
            raise ZeroDivisionError("boom")

        results = run_checks("theorems", correction=broken)
        assert not all_passed(results)
        crashed = [r for r in results if "ZeroDivisionError" in r.detail]
        assert crashed


class TestFormatting:
    def test_report_lines(self):
        results = run_checks("gradients")
        text = format_results(results)
        lines = text.splitlines()
        assert all(line.startswith(("PASS", "FAIL")) for line in lines[:-1])
        assert "passed" in lines[-1] and "failed" in lines[-1]

    def test_failure_line_carries_detail(self):
        noop = lambda values, targets, flags: values
        text = format_results(run_checks("theorems", correction=noop))
        assert "FAIL" in text
