"""
Functional Checker Tool for verispec benchmarks

Runs an external command (typically a simulator such as iverilog plus a
testbench) against a generated design. The command line is a jinja2 template
rendered with `design`, `testbench`, `workdir` and `prompt_id`; exit code 0
means the design passed.
"""

import logging
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

from jinja2 import Environment, StrictUndefined, TemplateError

from verispec.errors import CheckerError

logger = logging.getLogger(__name__)

_ENV = Environment(undefined=StrictUndefined, autoescape=False)


@dataclass
class CheckResult:
    ok: bool
    reason: Optional[str] = None
    returncode: Optional[int] = None


class FunctionalChecker:
    """
    Render a command template, run it, and turn the exit status into data.

    Args:
        command_template: e.g. "sh -c 'iverilog -o {{ workdir }}/sim {{ design }} {{ testbench }} && vvp {{ workdir }}/sim'"
        timeout: Seconds before the run counts as failed
        env: Extra environment variables passed through to the command
    """

    def __init__(self, command_template: str, timeout: float = 30.0, env: Optional[Dict[str, str]] = None):
        try:
            self.template = _ENV.from_string(command_template)
        except TemplateError as e:
            logger.error(f"❌ Invalid checker command template: {e}")
            raise CheckerError(f"invalid checker command template: {e}") from e
        self.command_template = command_template
        self.timeout = timeout
        self.env = dict(env or {})

    def render(self, design: Union[str, Path], testbench: Optional[Union[str, Path]], workdir: Union[str, Path], prompt_id: str = "") -> list:
        try:
            line = self.template.render(
                design=str(design), testbench=str(testbench or ""), workdir=str(workdir), prompt_id=prompt_id
            )
        except TemplateError as e:
            logger.error(f"❌ Cannot render checker command: {e}")
            raise CheckerError(f"cannot render checker command: {e}") from e
        args = shlex.split(line)
        if not args:
            raise CheckerError("checker command renders to an empty command line")
        return args

    def check(self, design_text: Union[str, bytes], testbench: Optional[Union[str, Path]] = None, prompt_id: str = "") -> CheckResult:
        """
        Write the design to a scratch directory and run the command on it.

        Returns:
            CheckResult; nonzero exit and timeouts are failures, not errors

        Raises:
            CheckerError: the command cannot be started at all
        """
        data = design_text.encode("utf-8") if isinstance(design_text, str) else design_text
        with tempfile.TemporaryDirectory(prefix="verispec-check-") as workdir:
            design = Path(workdir) / "design.v"
            design.write_bytes(data)
            args = self.render(design, testbench, workdir, prompt_id)
            try:
                completed = subprocess.run(
                    args,
                    cwd=workdir,
                    env={**os.environ, **self.env},
                    capture_output=True,
                    timeout=self.timeout,
                )
            except subprocess.TimeoutExpired:
                logger.warning(f"⚠️ Checker timed out after {self.timeout}s for prompt {prompt_id}")
                return CheckResult(False, f"timeout after {self.timeout}s")
            except OSError as e:
                logger.error(f"❌ Cannot run checker command {args[:1]}: {e}")
                raise CheckerError(f"cannot run checker command: {e}") from e
        if completed.returncode != 0:
            return CheckResult(False, f"exit code {completed.returncode}", completed.returncode)
        return CheckResult(True, None, 0)
