"""Hot numeric loops, compiled when the extension built, pure Python otherwise."""

try:
    from ._ckernels import kcenter_greedy, lcs_length

    BACKEND = "compiled"
except ImportError:  # pragma: no cover - depends on the build environment
    from ._pykernels import kcenter_greedy, lcs_length

    BACKEND = "python"

__all__ = ["kcenter_greedy", "lcs_length", "BACKEND"]
