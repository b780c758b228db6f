"""Online dictionary learning under the tensor t-product.

Submodules:

* :mod:`tensordl.tensor_core` - t-product algebra on order-N arrays
* :mod:`tensordl.tensor_linalg` - t-Cholesky, T-QR, Lipschitz constants
* :mod:`tensordl.sparse_coding` - tensor OMP
* :mod:`tensordl.prox_solvers` - ISTA, FISTA, Anderson-accelerated ISTA
* :mod:`tensordl.dict_learning` - online dictionary updates
* :mod:`tensordl.completion` - masked image completion
* :mod:`tensordl.recovery` - null space property experiments
"""

from .tensor_core import fold, identity_tensor, inner, tprod, ttranspose, unfold

__version__ = "0.1.0"

__all__ = ["fold", "identity_tensor", "inner", "tprod", "ttranspose", "unfold"]
