"""LabGraph: ICD-style coding as label-graph generation over a code hierarchy."""

__version__ = "0.1.0"
