"""Exception types raised across the protocol stack."""


class PiratesError(Exception):
    """Base class for all protocol errors."""


# crypto
class OversizePlaintext(PiratesError, ValueError):
    pass


class MalformedPadding(PiratesError, ValueError):
    """Ciphertext did not decrypt to a well-formed padded plaintext.

    Clients treat this as "this answer was not meant for me".
    """


# pir
class IndexOutOfRange(PiratesError, IndexError):
    pass


class WrongItemSize(PiratesError, ValueError):
    pass


class LengthMismatch(PiratesError, ValueError):
    pass


# bucket mapping
class UnknownMailbox(PiratesError, KeyError):
    pass


class MappingFault(PiratesError, RuntimeError):
    pass


# wire
class Truncated(PiratesError, ValueError):
    pass


class UnknownType(PiratesError, ValueError):
    pass


class OversizeFrame(PiratesError, ValueError):
    pass


class Oversize(PiratesError, ValueError):
    pass


# nodes
class RegistrationClosed(PiratesError):
    pass


class BadToken(PiratesError):
    pass


class WrongSize(PiratesError, ValueError):
    pass


class WrongQueryCount(PiratesError, ValueError):
    pass


class UnknownClient(PiratesError, KeyError):
    pass


# client
class PhaseMissed(PiratesError):
    pass


class AnswerTimeout(PiratesError):
    pass


# testbed
class SpawnFailure(PiratesError, RuntimeError):
    pass


class DeadlineOverrun(PiratesError):
    pass


class NoFeasible(PiratesError):
    pass
