"""Standardized log and error messages for ocverify."""
ARCH_POOL_UNDERFLOW = "Block %d pools a %dx%d map below 1x1."
BAD_FILENAME = "Cannot parse identity and phase from file name '%s'."
CONFIG_UNKNOWN_KEY = "Unknown configuration key '%s'."
CONFIG_BAD_VALUE = "Invalid value %r for configuration key '%s'."
DB_APPEND = "Stored record %d (%s, label=%r)."
DB_DIMENSION_MISMATCH = "Tag %s stores %d-dimensional vectors, got %d."
DB_BAD_MAGIC = "Not an embedding database (magic %r)."
DB_TRUNCATED = "Embedding database truncated at byte %d."
DUPLICATE_FOUND = "%s image duplicates record %d (distance %.6f)."
EMPTY_VIEW = "Variant %s has no eligible items."
ELA_VERDICT = "ELA verdict %s: %d suspect blocks, median %.3f, max %.3f."
EPOCH_LOSS = "Epoch %d/%d mean loss %.6f."
FORGERY_EARLY_RETURN = "Forgery detected in %s image; skipping embeddings."
LOSS_NOT_FOUND = "Loss '%s' does not exist."
MANIFEST_MISSING = "Manifest '%s' not found."
MODEL_BAD_MAGIC = "Not a model file (magic %r)."
NON_FINITE_GRADIENT = "Non-finite gradient for parameter '%s'."
NON_FINITE_LOSS = "Non-finite training loss."
NON_FINITE_ACTIVATION = "Non-finite activation after layer '%s'."
OPTION_NOT_SUPPORTED = "Option '%s' is not supported."
SWEEP_ROW = "theta=%.4f FA=%.4f FR=%.4f accuracy=%.4f"
VIEW_AUDIT = "Variant %s served phases %s."
