class PlacekitError(Exception):
    """Base class for every error raised by this package."""


class ParseError(PlacekitError, ValueError):
    """Malformed label, calibration, image or manifest content."""

    def __init__(self, message, line=None, field=None, source=None):
        self.line = line
        self.field = field
        self.source = source
        self.detail = message
        where = []
        if source is not None:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)

    def located(self, source):
        """Copy of this error with the offending file attached."""
        return ParseError(self.detail, self.line, self.field, source)


class GeometryError(PlacekitError, ValueError):
    """Degenerate geometric input (point behind camera, origin location, ...)."""


class CorpusError(PlacekitError):
    """Empty or unusable dataset for the requested operation."""


class ConfigError(PlacekitError):
    """Invalid or incomplete configuration."""
