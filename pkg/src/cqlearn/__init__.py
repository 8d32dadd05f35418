"""Learning classical-quantum processes from product-state data.

Submodules:
    qcore: density matrices, projectors, distances, matrix functions.
    pbnoise: Poisson-binomial sums with exponential smoothing noise.
    simstate: product-state simulation and gentle measurements.
    batching: disjoint batches drawn without replacement.
    concepts: concept classes and classical-quantum sources.
    nets: empirical nets and covering-number bounds.
    algorithms: threshold search, ERM, risk estimation, hypothesis selection.
    learner: end-to-end learning pipelines with oracle validation.
    cli: experiment harness.
"""

__version__ = "0.1.0"
