import logging

SEPARATOR = "-" * 60
BANNER = "=" * 60

STATUS = {"tag": "STATUS"}
SKIP = {"tag": "SKIP"}
COMPLETE = {"tag": "COMPLETE"}

_TAGS = {
    logging.DEBUG: "DEBUG",
    logging.INFO: "INFO",
    logging.WARNING: "WARN",
    logging.ERROR: "ERROR",
    logging.CRITICAL: "ERROR",
}


class TagFormatter(logging.Formatter):
    """Renders records as ``[TAG] message``, the batch-pipeline output style.

    A record may carry its own tag, e.g. ``extra={"tag": "SKIP"}``.
    """

    def format(self, record):
        tag = getattr(record, "tag", None) or _TAGS.get(record.levelno, record.levelname)
        return f"[{tag}] {record.getMessage()}"


def configure_logging(level=logging.INFO, stream=None):
    root = logging.getLogger("divlab")
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(stream)
    handler.setFormatter(TagFormatter())
    root.addHandler(handler)
    root.setLevel(level)
    return root
