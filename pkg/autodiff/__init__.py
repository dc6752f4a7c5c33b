"""Reparameterized parameters, differentiable primitives, layers and Adam over torch autograd."""
