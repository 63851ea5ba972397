"""
Overfitting one synthetic episode end to end
============================================

The small preset trains on a single planted episode until it segments it
perfectly, then the episode (with the model's prediction attached) round
trips through the manifest format and is re-scored from disk.
"""

import tempfile

from corrseg.arch import get_arch
from corrseg.episodes import (SyntheticEpisodeSpec, generate_synthetic_episode,
                              read_manifest, write_manifest)
from corrseg.metrics import fbiou, miou, report
from corrseg.model import Model
from corrseg.trainer import TrainConfig, evaluate, train_episodes

episode = generate_synthetic_episode(SyntheticEpisodeSpec(seed=0))
model = Model(get_arch("toy"), seed=0)

# a few hundred Adam steps drive the loss to ~1e-4 on the planted episode
trace = train_episodes(model, [episode], TrainConfig(max_steps=400, log_every=50),
                       log=print)
print("final loss:", round(trace[-1], 6))

acc = evaluate(model, [episode])
print("episode mIoU :", miou(acc))
print("episode FB-IoU:", fbiou(acc))

# store the trained prediction alongside the episode and re-score from disk
episode.prediction = model.predict(
    episode.query_features, [(s.features, s.mask) for s in episode.supports])
with tempfile.TemporaryDirectory() as out:
    path = write_manifest(out, [episode], "toy")
    print("manifest:", path.split("/")[-1])
    _, loaded = read_manifest(path)
    stored = evaluate(None, loaded, from_predictions=True)
    print(report(stored))
