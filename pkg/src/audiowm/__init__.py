"""Audio world models from flow matching, at desk scale.

A numpy reverse-mode autodiff engine drives a block autoencoder, a
flow-matching latent world model, an action-chunk policy and a piano
lookahead controller, evaluated on synthetic water-filling and piano tasks.
"""

__version__ = "0.1.0"
