"""Application layer: file formats, configuration, pipeline, figures, service and CLI."""
