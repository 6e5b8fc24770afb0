"""Link integrity management: policy DSL, verification pipeline, and
enforcement protocol for intercepting and vetting outbound page requests."""

__version__ = "0.1.0"
