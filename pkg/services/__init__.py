"""Scene documents, the fitting schedule, evaluation and the end-to-end pipeline."""
