"""Knowledge-graph question answering through typed action sequences."""

__version__ = "0.1.0"
