"""Object-centric radiance fields learned from single views.

Subpackages: ``tape`` (autodiff), ``geometry`` (cameras, boxes, rays),
``field`` (conditioned decoders), ``encoder`` (image-to-code CNN),
``renderer`` (bounded volume rendering), ``training`` (losses, Adam,
train loop, test-time optimization), ``data`` (synthetic scenes and
dataset IO), ``metrics`` (PSNR/SSIM/depth), ``cli`` and ``service``.
"""

__version__ = "0.1.0"


def _tune_allocator() -> None:
    """Keep large numpy buffers on the heap instead of mmap round-trips.

    The autodiff graph allocates and frees many MB-sized arrays per step;
    glibc's default mmap threshold turns each into a page-fault storm.
    """
    import ctypes

    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except OSError:
        pass


_tune_allocator()
