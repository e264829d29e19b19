"""Acyclic Bayesian structure learning: G = P S P^T with SVGD over latent embeddings."""
