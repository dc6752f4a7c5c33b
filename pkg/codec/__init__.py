"""Container format, compress/decompress, evaluation and diagnostics."""
