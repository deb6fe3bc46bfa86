"""trainscape: map where a small character transformer trains or diverges.

The package trains a decoder-only character model under Adam with two
learning rates (one for attention parameters, one for everything else),
summarizes each run with a convergence measure mu in [-1, 1], sweeps the
two rates over a grid, and studies the convergent/divergent boundary with
edge extraction and box-counting dimension.

Modules:
    diffcore   reverse-mode autodiff over float64 numpy arrays
    model      the transformer: parameters, forward pass, loss, sampling
    dataio     vocabulary, token streams, windows, batches, token cache
    training   Adam, the training loop, convergence criterion and measure
    sweep      grid sweeps with checkpoint/resume and worker pools
    fractal    reference fractals, Sobel edges, box-counting dimension
    render     colormap, heatmaps, PPM image output
    cli        the trainscape command
"""

__version__ = "0.1.0"
