"""Exception types shared across the package."""


class OnionLeakError(Exception):
    pass


class MalformedInput(OnionLeakError, ValueError):
    """Raised by every decoder when the input octets are not a valid message."""


class NoRelaysAvailable(OnionLeakError):
    pass


class StreamClosed(OnionLeakError):
    pass


class ConflictingAttribution(OnionLeakError):
    """One stream was linked to two different client addresses."""

    def __init__(self, stream_id, ips):
        self.stream_id = stream_id
        self.ips = tuple(sorted(ips))
        super().__init__(f"stream {stream_id} attributed to several IPs: {', '.join(self.ips)}")


class ConfigInvalid(OnionLeakError, ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class IoFailure(OnionLeakError, OSError):
    pass
