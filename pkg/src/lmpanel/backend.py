"""Selection of the forward-backward kernel.

The compiled kernel is used when the extension was built; otherwise the
numpy implementation is used.  Setting ``LMPANEL_BACKEND=python`` forces the
numpy kernel.
"""

import os

from . import _fb_python

python_forward_backward = _fb_python.forward_backward

try:
    from ._fb_cython import forward_backward as compiled_forward_backward
except ImportError:  # extension not built
    compiled_forward_backward = None

if compiled_forward_backward is not None and os.environ.get("LMPANEL_BACKEND", "").lower() != "python":
    forward_backward = compiled_forward_backward
    BACKEND = "cython"
else:
    forward_backward = python_forward_backward
    BACKEND = "python"
