"""Self-supervised 6D object pose learning via neural texture synthesis.

Desk-scale laboratory: a procedural object + analytic ray-cast renderer stand
in for the CAD pipeline, a small neural object field learns appearance from
noisily-posed views, and a convolutional pose estimator is trained on data
synthesised from the learned field.
"""

import os as _os

# Cap BLAS thread pools before numpy is first imported anywhere in the
# package. TEXPOSE_THREADS is the documented knob.
_threads = _os.environ.get("TEXPOSE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
