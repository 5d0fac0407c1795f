"""Multi-market contextual assortment-pricing lab.

MNL demand simulator, transfer-learning episodic pricing policies,
estimation and information-geometry machinery, and a seeded benchmark
harness.  Submodules are imported lazily so the CLI can pin BLAS
thread counts before numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = ("mnl", "pricing", "estimation", "geometry", "policy",
               "environment", "harness", "cli", "errors")

__all__ = list(_SUBMODULES)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib
        return importlib.import_module("." + name, __name__)
    raise AttributeError("module %r has no attribute %r" % (__name__, name))
