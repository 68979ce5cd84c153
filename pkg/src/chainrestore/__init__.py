"""Chain-of-restoration toolkit for images with composite degradations.

Degradations are multisets of isolated symbols (``low``, ``haze``, ``rain``,
``snow``, ``noise15/25/50``).  A restoration "model" knows a set of bases
and removes one basis per call; the discriminator looks at the current
image and picks the next basis, or says the image is clean.
"""

from .algebra import BasisSet, Label, combine, decompose, enumerate_bases, parse_label
from .complexity import emit_curves, ir, phi, tr, varphi
from .cor import CoRConfig, CoRTrace, OracleDD, RandomDD, TrainedDD, oracle_dd, run_cor, step_count_expectation
from .discriminator import ClassifierModel, MarginConfig, apply_margins, discriminate, predict_probs, train
from .imaging import INF, load_png, psnr, save_png, ssim
from .restorers import RestorerRegistry, coupling_gap, oracle_remove
from .synthesis import SynthesisConfig, SynthesisRecord, build_dataset, gen_clean, synthesize

__version__ = "0.1.0"
