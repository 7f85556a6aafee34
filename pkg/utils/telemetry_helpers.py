"""
Telemetry Helper Functions for verispec

Decode loops and benchmark jobs open OpenTelemetry spans through the API
package. Without a configured provider those spans are no-ops; the CLI flag
`--otel-console` installs an SDK provider that prints finished spans.
"""

import logging
from typing import Optional

from opentelemetry import trace
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import ConsoleSpanExporter, SimpleSpanProcessor

logger = logging.getLogger(__name__)

SERVICE_NAME = "verispec"

_provider: Optional[TracerProvider] = None


def setup_console_tracing(service_name: str = SERVICE_NAME) -> TracerProvider:
    """
    Install a TracerProvider that exports spans to stdout.

    Calling it twice returns the provider installed the first time.

    Returns:
        The active SDK TracerProvider
    """
    global _provider
    if _provider is not None:
        return _provider
    provider = TracerProvider(resource=Resource.create({"service.name": service_name}))
    provider.add_span_processor(SimpleSpanProcessor(ConsoleSpanExporter()))
    trace.set_tracer_provider(provider)
    _provider = provider
    logger.info("✅ Console span exporter installed")
    return provider


def get_tracer(name: str) -> trace.Tracer:
    return trace.get_tracer(name)


def shutdown_tracing() -> None:
    if _provider is not None:
        _provider.shutdown()
