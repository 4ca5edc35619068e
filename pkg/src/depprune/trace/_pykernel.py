"""Pure-Python trace scanning kernel.

Mirrors ``_ckernel.pyx`` line for line in behaviour; the test suite runs
both over the same corpus.  A parsed event is the tuple
``(pid, syscall, path, result, errno)``.
"""

import posixpath
import re

# "[pid 12] ", "[12] " or "12 " followed by an optional -t/-tt/-ttt stamp.
# ASCII classes only, so the compiled kernel can scan the same grammar.
_HEAD = r"^[ \t]*(?:\[(?:pid[ \t]+)?([0-9]+)\][ \t]*|([0-9]+)[ \t]+)?(?:[0-9][0-9:.]*[ \t]+)?"
_CALL_RE = re.compile(_HEAD + r"([a-z_][a-z0-9_]*)\((.*)$", re.S)
_RESUMED_RE = re.compile(_HEAD + r"<\.\.\.[ \t]+([a-z_][a-z0-9_]*)[ \t]+resumed>(.*)$", re.S)
_UNFINISHED = "<unfinished ...>"
_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "v": "\v", "f": "\f", "\\": "\\", '"': '"', "'": "'"}

MALFORMED = -1
PENDING = 1


def unescape(raw):
    if "\\" not in raw:
        return raw
    out = []
    i = 0
    n = len(raw)
    while i < n:
        c = raw[i]
        if c != "\\" or i + 1 >= n:
            out.append(c)
            i += 1
            continue
        nxt = raw[i + 1]
        if nxt == "x" and i + 3 < n:
            try:
                out.append(chr(int(raw[i + 2 : i + 4], 16)))
                i += 4
                continue
            except ValueError:
                pass
        if nxt in "01234567":
            j = i + 1
            while j < n and j < i + 4 and raw[j] in "01234567":
                j += 1
            out.append(chr(int(raw[i + 1 : j], 8)))
            i = j
            continue
        out.append(_ESCAPES.get(nxt, nxt))
        i += 2
    # strace escapes bytes, so rebuild them as UTF-8 where possible.
    text = "".join(out)
    try:
        return text.encode("latin-1").decode("utf-8")
    except (UnicodeEncodeError, UnicodeDecodeError):
        return text


def first_quoted(args):
    """Return the first quoted string in ``args``; None if absent or truncated."""
    n = len(args)
    i = 0
    while i < n and args[i] not in "\"'":
        i += 1
    if i >= n:
        return None
    quote = args[i]
    start = i + 1
    i = start
    while i < n:
        c = args[i]
        if c == "\\":
            i += 2
            continue
        if c == quote:
            if args.startswith("...", i + 1):
                return None
            return unescape(args[start:i])
        i += 1
    return None


def split_result(tail):
    """Parse ``") = -1 ENOENT (...)"`` style tails into (result, errno)."""
    idx = tail.rfind(") = ")
    if idx < 0:
        return None
    parts = tail[idx + 4 :].split()
    if not parts:
        return None
    token = parts[0]
    try:
        result = int(token, 0) if token.startswith(("0x", "-0x")) else int(token)
    except ValueError:
        return None
    errno = None
    if len(parts) > 1 and parts[1][:1] == "E" and parts[1].isupper():
        errno = parts[1]
    return result, errno


def _pid(match):
    raw = match.group(1) or match.group(2)
    return int(raw) if raw else 0


class Scanner:
    """Stateful line scanner that joins unfinished/resumed pairs by pid."""

    def __init__(self, tracked):
        self.tracked = frozenset(tracked)
        self.pending = {}
        self.lines = 0
        self.events = 0
        self.ignored = 0
        self.malformed = 0

    def feed(self, line):
        self.lines += 1
        parsed = self._parse(line.rstrip("\r\n"))
        if parsed is None:
            self.ignored += 1
            return None
        if parsed == MALFORMED:
            self.malformed += 1
            return None
        if parsed == PENDING:
            return None
        self.events += 1
        return parsed

    def _parse(self, line):
        m = _CALL_RE.match(line)
        if m is not None:
            syscall = m.group(3)
            if syscall not in self.tracked:
                return None
            rest = m.group(4)
            pid = _pid(m)
            if rest.rstrip().endswith(_UNFINISHED):
                if pid in self.pending:
                    self.malformed += 1
                self.pending[pid] = (syscall, rest[: rest.rstrip().rfind(_UNFINISHED)])
                return PENDING
            return self._complete(pid, syscall, rest)
        m = _RESUMED_RE.match(line)
        if m is not None:
            syscall = m.group(3)
            pid = _pid(m)
            head = self.pending.get(pid)
            if head is None or head[0] != syscall:
                return MALFORMED if syscall in self.tracked else None
            del self.pending[pid]
            return self._complete(pid, syscall, head[1] + m.group(4))
        return None

    def _complete(self, pid, syscall, rest):
        path = first_quoted(rest)
        if path is None:
            return MALFORMED
        res = split_result(rest)
        if res is None:
            return MALFORMED
        return (pid, syscall, path, res[0], res[1])

    def finish(self):
        """Count unjoined unfinished fragments as malformed."""
        self.malformed += len(self.pending)
        self.pending.clear()


def normalize(path):
    if "//" in path or "/." in path:
        path = posixpath.normpath(path)
        if path.startswith("//"):
            path = "/" + path.lstrip("/")
    return path


def collect_modules(lines, tracked, prefixes, extensions, scanner=None):
    """Scan ``lines`` and return the set of successfully opened module files.

    ``prefixes`` are ``<root>/node_modules/`` strings; a path under any of
    them is rewritten onto the first (canonical) prefix.
    """
    if scanner is None:
        scanner = Scanner(tracked)
    exts = tuple(extensions)
    canonical = prefixes[0]
    found = set()
    feed = scanner.feed
    for line in lines:
        ev = feed(line)
        if ev is None or ev[3] < 0:
            continue
        path = normalize(ev[2])
        if not path.endswith(exts):
            continue
        for prefix in prefixes:
            if path.startswith(prefix):
                if prefix is not canonical:
                    path = canonical + path[len(prefix) :]
                found.add(path)
                break
    scanner.finish()
    return found, scanner
