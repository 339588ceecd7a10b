"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: InputError (and subclasses) -> 3,
NumericalError -> 4. Anything else is a bug and propagates.
"""


class InputError(Exception):
    """Invalid user-supplied data (files, flags, cross-references)."""


class NewickError(InputError):
    """Malformed Newick text; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ProfileError(InputError):
    """Malformed or inconsistent profile matrix."""


class NumericalError(Exception):
    """A numerical procedure failed to produce a usable value."""
