"""Splitting classes into subclasses.

Each class in the `multimodal` data is two distant blobs, which a single
mean per class describes badly.  The subclass pipeline embeds the data with
an autoencoder, splits every class with k-means, trains on the subclass
labels and folds predictions back into classes.  k=1 is the plain pipeline.
"""
import warnings

from rdlda.harness import ExperimentConfig, run_experiment

warnings.simplefilter("ignore", RuntimeWarning)
for seed in range(3):
    row = []
    for k in (1, 2):
        cfg = ExperimentConfig(synthetic=f"multimodal:c=3,n=120,d=10,sep=3,seed={seed}", subclass=True, k=k,
                               hidden=(64, 64), epochs=50, alpha=0.5, seed=seed)
        row.append(run_experiment(cfg, write=False)["accuracy"]["hyperplane"])
    print(f"seed {seed}: k=1 accuracy {row[0]:.3f}   k=2 accuracy {row[1]:.3f}")
