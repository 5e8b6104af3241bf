"""Error types shared across the package."""


class ContractViolation(ValueError):
    """Raised when an operation's input breaks a documented contract.

    Examples: dimension mismatch between an affine map and its input, a
    non-orthonormal rotation, a non-planar relative pose handed to the BEV
    warp, or a malformed scene/config file. The CLI converts this into a
    JSON diagnostic and a nonzero exit code.
    """


def require(condition: bool, message: str) -> None:
    """Raise ContractViolation with `message` unless `condition` holds."""
    if not condition:
        raise ContractViolation(message)
