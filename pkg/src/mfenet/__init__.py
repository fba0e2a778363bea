"""mfenet: a from-scratch multi-scale frequency-enhanced image deblurring engine.

Everything is plain numpy: NCHW tensors, hand-written layer ops with analytic
gradients, a define-by-run tape, Haar wavelets, strip pooling, the MS-FE and
FEBP blocks, a 3-scale MIMO U-Net, dual-domain losses, image-quality metrics,
synthetic blur data, an Adam trainer with binary checkpoints, and a CLI.

Submodules (import explicitly; this package root stays import-light so the
CLI can configure BLAS threading before numpy loads):

    mfenet.ops        elementary NCHW layer operations (forward + backward)
    mfenet.autodiff   Var/Tape reverse-mode differentiation
    mfenet.wavelet    2-D Haar DWT/IDWT
    mfenet.blocks     MS-FE, FEBP, strip pooling, residual blocks
    mfenet.network    model config, parameter init, full forward pass
    mfenet.objectives multi-scale L1 + FFT reconstruction loss
    mfenet.metrics    MSE / PSNR / SSIM / pixel-domain VIF
    mfenet.data       PPM I/O, motion kernels, synthetic corpus
    mfenet.trainer    Adam loop, evaluation, checkpoints
    mfenet.selftest   built-in oracle suites
    mfenet.cli        command-line front end
"""

__version__ = "0.1.0"
