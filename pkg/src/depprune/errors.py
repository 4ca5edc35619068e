"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto its
exit-code contract without a lookup table.
"""


class DepPruneError(Exception):
    exit_code = 2


# -- input documents -------------------------------------------------------


class MalformedDocument(DepPruneError):
    def __init__(self, message, line=None, column=None, source=None):
        self.line = line
        self.column = column
        self.source = source
        where = ""
        if line is not None:
            where = f" (line {line}, column {column})"
        prefix = f"{source}: " if source else ""
        super().__init__(f"{prefix}{message}{where}")


class DuplicateKey(MalformedDocument):
    pass


class UnsupportedLockfileVersion(DepPruneError):
    pass


class BadInstallPath(DepPruneError):
    pass


class MalformedModulePath(DepPruneError):
    pass


# -- analysis ----------------------------------------------------------------


class UnresolvableDependency(DepPruneError):
    def __init__(self, requester, name):
        self.requester = requester
        self.name = name
        super().__init__(
            f"{name!r} requested by {requester or '<root>'!r} resolves to no installed instance"
        )


class AccessOutsideLockfile(DepPruneError):
    pass


class ZeroTotal(DepPruneError):
    pass


class UnknownDirectDependency(DepPruneError):
    pass


class RemovalBreaksSurvivor(DepPruneError):
    """Removing an instance would make a survivor resolve to a different copy."""

    def __init__(self, conflicts):
        # conflicts: list of (survivor_path, dep_name, removed_target, fallback_target)
        self.conflicts = list(conflicts)
        first = self.conflicts[0]
        more = f" (+{len(self.conflicts) - 1} more)" if len(self.conflicts) > 1 else ""
        super().__init__(
            f"removing {first[2]!r} makes {first[0] or '<root>'!r} fall back to "
            f"{first[3]!r} for {first[1]!r}{more}; pass --allow-shadow-fallback or re-detect"
        )

    @property
    def removed_targets(self):
        return {c[2] for c in self.conflicts}


class LengthMismatch(DepPruneError):
    pass


class TooFewPoints(DepPruneError):
    pass


# -- process orchestration ---------------------------------------------------


class InstallFailed(DepPruneError):
    exit_code = 1

    def __init__(self, message, returncode=None, output=""):
        self.returncode = returncode
        self.output = output
        super().__init__(message)


class SpawnFailed(DepPruneError):
    exit_code = 1


class Timeout(DepPruneError):
    exit_code = 1


class TracerUnavailable(DepPruneError):
    exit_code = 2


class WorkloadBrokenIndependently(DepPruneError):
    exit_code = 3
