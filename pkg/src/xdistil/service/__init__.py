"""HTTP service wrapping the distillation pipeline.

The FastAPI app exposes one endpoint per pipeline operation; the CLI
calls the same handlers in-process, so both surfaces share behavior.
"""

from .app import app

__all__ = ["app"]
