"""Sub-band denoising of Bayer RAW images.

A small, self-contained deep-denoising stack: dense 4-D tensors on numpy, a
reverse-mode autodiff tape, orthonormal Haar/DCT transforms, three swappable
wavelet bottleneck blocks, a top-k DCT frequency loss, synthetic RGGB data,
RAdam training, and a Bayer-phase-preserving 8-way self-ensemble.

Submodules are imported lazily so that entry points can pin BLAS thread
counts via environment variables before numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "tensor",
    "autodiff",
    "transforms",
    "blocks",
    "model",
    "loss",
    "data",
    "train",
    "report",
    "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
