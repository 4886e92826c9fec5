"""Reader identification from eye movements during reading.

Per-reader generative models of saccade type, amplitude and fixation
duration, with densities estimated semiparametrically (gamma base times
an exponentiated latent function under a Gaussian-process prior) and
readers identified by the likelihood of held-out scanpaths.
"""

__version__ = "0.1.0"
