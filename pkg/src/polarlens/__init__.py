"""polarlens: multimodal classification of two follower populations.

Text side: tweets are tokenized, concatenated into super-tweets, embedded
with pretrained word vectors and classified by an LSTM (or an RBF SVM on
averaged embeddings).  Visual side: precomputed deep image features are
maxpool-reduced and classified by an RBF SVM.  A softmax fusion head joins
both modalities.  Cluster analysis (k-means + silhouette + two-proportion
score tests) describes how the two populations distribute over image
clusters.  Everything is seeded and bit-reproducible.
"""

__version__ = "0.1.0"

from . import backend

__all__ = ["backend", "__version__"]
