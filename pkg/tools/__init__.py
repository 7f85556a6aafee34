"""
verispec - Tools Package

This package contains wrappers around external tools used by the benchmark
harness.
"""

from .functional_checker import CheckResult, FunctionalChecker

__all__ = ['CheckResult', 'FunctionalChecker']
