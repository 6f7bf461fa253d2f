class FormatError(ValueError):
    """Malformed input; the message names the file and the position."""

    def __init__(self, path, where, message):
        self.path = str(path)
        self.where = where
        super().__init__(f"{path}: {where}: {message}")


class UnsupportedFormatError(FormatError):
    pass


class UnsupportedDepthError(FormatError):
    pass
