import logging
import sys

SIMPLE = "%(message)s"
VERBOSE = "%(asctime)s %(levelname)1.1s %(name)s %(message)s"

# Third-party loggers that flood DEBUG output during plotting
NOISY_LOGGERS = ("matplotlib", "PIL")


def setup_logging(level) -> logging.Handler:
    """Send diagnostics to stderr; results only ever go to files.

    Returns the installed handler so the caller can remove it again.
    """
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(VERBOSE if level <= logging.DEBUG else SIMPLE))
    handler.setLevel(level)
    root = logging.getLogger()
    root.addHandler(handler)
    root.setLevel(level)
    for name in NOISY_LOGGERS:
        logging.getLogger(name).setLevel(max(level, logging.WARNING))
    return handler
