"""Group-batched disentangled VAE training with pseudo-label self-training."""
