"""charter: package, distribute and manage templated manifest bundles."""

__version__ = "0.1.0"
