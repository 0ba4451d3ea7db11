# %% [markdown]
# # Ranking empathic moments
#
# The full chain on a small synthetic corpus: segment sessions into ~25 s
# chunks, label chunks that overlap an annotated interaction, build
# features, train an RBF SVM with a small grid, and rank the held-out
# chunks. The numbers to watch are average precision against the
# positive rate, and how much audio a reviewer would need to listen to.

# %%
import numpy as np

from empathy_pipeline import pipeline as P
from empathy_pipeline.classifier import TrainConfig, train_pipeline
from empathy_pipeline.corpus_io import split_sessions
from empathy_pipeline.evaluation import RankedPredictions, average_precision, edr_report
from empathy_pipeline.synth import SynthConfig, generate_corpus

corpus = generate_corpus(SynthConfig(seed=1, n_sessions=60, mean_session_s=150, interactions_per_session=0.3))
known = {sid: {spk: corpus.lm_role(sid, spk) for spk in corpus.roles[sid]} for sid in corpus.transcribed}
lms = P.train_role_models(corpus.background_pat, corpus.background_hcp, corpus.sessions, known)
roles = P.annotate_sessions(corpus.sessions, lms)
segments = P.segment_sessions(corpus.sessions, corpus.intervals)
print(f"{len(segments)} segments, {sum(s.label for s in segments)} positive")

# %% [markdown]
# Lexical features only here, which keeps the demo fast. Pass an
# `audio_loader` to `featurize` to add the acoustic blocks.

# %%
table = P.featurize(corpus.sessions, segments, roles, corpus.liwc, corpus.empath)
train_ids, test_ids = split_sessions(corpus.sessions, 0.25, 0, corpus.transcribed)
tr, te = table.rows_for(train_ids), table.rows_for(test_ids)
combo = "embed+liwc+empath"
X = table.matrix(combo)
y = np.where(table.labels, 1.0, -1.0)
config = TrainConfig(C=(0.1, 1.0), gamma=(1e-3, 1e-2), W=(1, 3), folds=3)
model, grid, _ = train_pipeline(X[tr], y[tr], table.session_ids[tr], combo, config)
print(f"picked C={grid.C} gamma={grid.gamma} W={grid.W} (cv AP {grid.cv_score:.3f})")

# %%
scores = model.predict_proba(X[te])
labels = table.labels[te]
print(f"test AP {average_precision(scores, labels):.3f} against positive rate {labels.mean():.3f}")

ranked = RankedPredictions(scores, labels, table.durations[te], [table.parents[i] for i in np.flatnonzero(te)])
report = edr_report(ranked)
for r, pos, poa in zip(report.levels, report.pos_fraction, report.audio_fraction):
    print(f"find {r:.0%} of interactions: review {pos:.1f}% of segments, {poa:.1f}% of audio")
