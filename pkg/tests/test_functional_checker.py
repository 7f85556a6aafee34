"""Tests for the external functional checker wrapper."""

import pytest

from tools.functional_checker import FunctionalChecker
from verispec.errors import CheckerError

DESIGN = "module m; endmodule\n"


class TestFunctionalChecker:
    def test_zero_exit_passes(self):
        result = FunctionalChecker("sh -c 'exit 0'").check(DESIGN)
        assert result.ok
        assert result.returncode == 0

    def test_nonzero_exit_fails_with_reason(self):
        result = FunctionalChecker("sh -c 'exit 3'").check(DESIGN)
        assert not result.ok
        assert result.returncode == 3
        assert result.reason == "exit code 3"

    def test_design_file_is_written(self):
        checker = FunctionalChecker("sh -c 'grep -q endmodule {{ design }}'")
        assert checker.check(DESIGN).ok
        assert not checker.check("module m;\n").ok

    def test_testbench_and_prompt_are_rendered(self, tmp_path):
        bench = tmp_path / "tb.v"
        bench.write_text("module tb; endmodule\n")
        checker = FunctionalChecker("sh -c 'test -f {{ testbench }} && test {{ prompt_id }} = p7'")
        assert checker.check(DESIGN, bench, "p7").ok

    def test_environment_passthrough(self):
        checker = FunctionalChecker("sh -c 'test \"$SIM_MODE\" = fast'", env={"SIM_MODE": "fast"})
        assert checker.check(DESIGN).ok

    def test_timeout_is_a_failure(self):
        result = FunctionalChecker("sleep 5", timeout=0.2).check(DESIGN)
        assert not result.ok
        assert result.reason.startswith("timeout")

    def test_render_splits_arguments(self, tmp_path):
        args = FunctionalChecker("iverilog -o {{ workdir }}/sim {{ design }}").render(tmp_path / "d.v", None, tmp_path)
        assert args == ["iverilog", "-o", f"{tmp_path}/sim", str(tmp_path / "d.v")]

    def test_empty_command(self):
        with pytest.raises(CheckerError):
            FunctionalChecker("   ").check(DESIGN)

    def test_unknown_template_variable(self):
        with pytest.raises(CheckerError):
            FunctionalChecker("run {{ simulator }}").check(DESIGN)

    def test_broken_template(self):
        with pytest.raises(CheckerError):
            FunctionalChecker("run {{ design ")

    def test_missing_executable(self):
        with pytest.raises(CheckerError):
            FunctionalChecker("verispec-no-such-simulator {{ design }}").check(DESIGN)
