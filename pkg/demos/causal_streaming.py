"""Frame-by-frame lifting with the causal variant.

The causal model only looks backwards in time, so a prediction for frame t
can be emitted as soon as frame t arrives, and later frames never change it.
"""

import io
import json

import numpy as np

from posemagic import PoseMagicModel, tiny_config
from posemagic.cli import stream_frames
from posemagic.training import SynthConfig, synth_dataset

model = PoseMagicModel(tiny_config("causal", seed=3)).eval()
seq2d, _ = synth_dataset(SynthConfig(seed=5, T=40, sequences=1, noise_sigma=0.005))[0]

# Whole-sequence inference, then the same input cut short: the shared prefix agrees.
full = model.predict(seq2d)
prefix = model.predict(seq2d[:10])
print("prefix gap:", np.abs(full[:10] - prefix).max())

# Streaming with the window covering all history reproduces batch inference.
# A junk line is reported and skipped, as the CLI does on stdin.
lines = [json.dumps(frame.tolist()) for frame in seq2d]
lines.insert(5, "{oops")
out, err = io.StringIO(), io.StringIO()
stream_frames(model, lines, window=64, out=out, err=err)
streamed = np.array([json.loads(line)["pose"] for line in out.getvalue().splitlines()])
print("stream vs batch:", np.abs(streamed - full).max())
print("stderr:", err.getvalue().strip())
