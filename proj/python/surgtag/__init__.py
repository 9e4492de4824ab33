"""Open-vocabulary surgical video tagging."""

from ._surgtag import (
    ConfigError,
    DimensionError,
    FormatError,
    Gazetteer,
    IoError,
    Model,
    NumericError,
    SurgtagError,
    TagVocabulary,
    TransportError,
    ValidationError,
    __version__,
    average_precision,
    build_dataset,
    build_vocabulary,
    evaluate,
    extract_actions,
    extract_entities,
    f_beta,
    hashed_embedding,
    lemmatize_verb,
    lr_at,
    normalize_tag,
    read_image,
    search_threshold,
    sha256_hex,
    train,
    write_pnm,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
