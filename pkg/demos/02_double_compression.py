"""Demo: what a second compression pass does to a frame.

Re-encoding a frame at a different quality moves pixels again; re-encoding
at the same quality is a no-op, because the coefficients already sit on
that quantization grid. This asymmetry is the trace the classifiers learn.

Run:  python3 demos/02_double_compression.py
"""

import numpy as np

from provnet.synth import ChainStage, CompressionChain, apply_chain, base_image

rng = np.random.default_rng(7)
frame = base_image(rng, 128)

single = apply_chain(frame, CompressionChain("single", [ChainStage(90)]))
double = apply_chain(frame, CompressionChain("double", [ChainStage(90), ChainStage(70)]))
repeat = apply_chain(single, CompressionChain("again", [ChainStage(90)]))

print("single (Q=90)    vs original:       mean |diff| = %.4f"
      % np.abs(single - frame).mean())
print("double (90->70)  vs single:         mean |diff| = %.4f"
      % np.abs(double - single).mean())
print("re-quantize at the same Q=90:       max  |diff| = %.4f  (idempotent)"
      % np.abs(repeat - single).max())

# the same distinction holds in residual statistics, which is what the
# networks actually see
from provnet.preprocess import hpf_s5a

r_single = hpf_s5a(single)
r_double = hpf_s5a(double)
print("\nS5a residual std: single %.4f   double %.4f" % (r_single.std(), r_double.std()))
