"""Registered gradient suites stay green and within tolerance."""

from xdistil.verify import (GRAD_TOL, PRIMITIVE_TOL, SUITES, run_suites,
                            suite_distillation, suite_primitives,
                            suite_transformer)


def test_primitive_suite_tight_tolerance():
    assert suite_primitives() < PRIMITIVE_TOL


def test_transformer_suite():
    assert suite_transformer() < GRAD_TOL


def test_distillation_suite():
    assert suite_distillation() < GRAD_TOL


def test_run_suites_covers_registry():
    results = run_suites()
    assert set(results) == set(SUITES)
    assert max(results.values()) < GRAD_TOL
