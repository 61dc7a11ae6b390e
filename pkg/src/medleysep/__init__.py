"""medleysep: multi-singing voice separation toolkit."""

from .audio_core import (AudioBuffer, ComplexSpectrogram, StftConfig, istft,
                         loudness, read_wav, resample, stft, write_wav)
from .objectives import (LossConfig, mixture_consistency, multi_res_stft_loss,
                         orpit_loss, ri_stft_loss, si_sdr, snr, upit_loss)

__version__ = "0.1.0"
