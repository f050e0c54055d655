"""Two-memory recurrent model built on outer-product attention.

The package splits into layers that mirror how the model is constructed:

* :mod:`samstm.tensor` - fp64 reverse-mode autodiff on numpy storage.
* :mod:`samstm.attention` - dot-product and outer-product attention plus the
  contraction that maps relational tensors back to matrices.
* :mod:`samstm.sam` - the self-attentive associative memory operator and the
  classical associative-memory toolkit used to analyse it.
* :mod:`samstm.stm` - the recurrent cell with separate item and relational
  memories, and an LSTM baseline of matched interface.
* :mod:`samstm.tasks` - synthetic sequence tasks with oracle solvers.
* :mod:`samstm.training` - losses, optimizers, the training loop, and
  capacity/cost diagnostics.
* :mod:`samstm.props` - executable checks of the algebraic identities the
  attention/memory constructions rely on.
"""

from samstm.tensor import Tensor
from samstm.rng import Rng

__all__ = ["Tensor", "Rng"]
__version__ = "0.1.0"
