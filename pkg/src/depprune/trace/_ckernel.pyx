# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled trace scanning kernel.

Same grammar and counters as ``_pykernel``; the line header is scanned by
hand instead of through ``re``.
"""

from ._pykernel import normalize, split_result, unescape

cdef enum:
    _NOMATCH = 0
    _CALL = 2
    _RESUMED = 3

_UNFINISHED = "<unfinished ...>"


cdef inline bint _is_ws(Py_UCS4 c):
    return c == u' ' or c == u'\t'


cdef inline bint _is_digit(Py_UCS4 c):
    return u'0' <= c <= u'9'


cdef inline bint _is_name_start(Py_UCS4 c):
    return (u'a' <= c <= u'z') or c == u'_'


cdef inline bint _is_name_char(Py_UCS4 c):
    return (u'a' <= c <= u'z') or (u'0' <= c <= u'9') or c == u'_'


cdef class _Header:
    cdef public int kind
    cdef public long pid
    cdef public str syscall
    cdef public Py_ssize_t rest_at


cdef int _scan_header(str line, _Header h):
    cdef Py_ssize_t n = len(line)
    cdef Py_ssize_t i = 0, j, start
    cdef Py_UCS4 c
    h.pid = 0
    while i < n and _is_ws(line[i]):
        i += 1
    if i >= n:
        return _NOMATCH
    c = line[i]
    if c == u'[':
        j = i + 1
        if j + 3 <= n and line[j] == u'p' and line[j + 1] == u'i' and line[j + 2] == u'd':
            if j + 3 < n and _is_ws(line[j + 3]):
                j += 3
                while j < n and _is_ws(line[j]):
                    j += 1
            else:
                return _NOMATCH
        start = j
        while j < n and _is_digit(line[j]):
            j += 1
        if j == start or j >= n or line[j] != u']':
            return _NOMATCH
        h.pid = int(line[start:j])
        i = j + 1
        while i < n and _is_ws(line[i]):
            i += 1
    elif _is_digit(c):
        j = i
        while j < n and _is_digit(line[j]):
            j += 1
        if j < n and _is_ws(line[j]):
            h.pid = int(line[i:j])
            i = j
            while i < n and _is_ws(line[i]):
                i += 1
    # optional timestamp token
    if i < n and _is_digit(line[i]):
        j = i
        while j < n and (_is_digit(line[j]) or line[j] == u':' or line[j] == u'.'):
            j += 1
        if j < n and _is_ws(line[j]):
            i = j
            while i < n and _is_ws(line[i]):
                i += 1
        else:
            return _NOMATCH
    if i >= n:
        return _NOMATCH
    c = line[i]
    if _is_name_start(c):
        j = i + 1
        while j < n and _is_name_char(line[j]):
            j += 1
        if j >= n or line[j] != u'(':
            return _NOMATCH
        h.syscall = line[i:j]
        h.rest_at = j + 1
        h.kind = _CALL
        return _CALL
    if c == u'<':
        if not line.startswith("<...", i):
            return _NOMATCH
        j = i + 4
        if j >= n or not _is_ws(line[j]):
            return _NOMATCH
        while j < n and _is_ws(line[j]):
            j += 1
        if j >= n or not _is_name_start(line[j]):
            return _NOMATCH
        start = j
        while j < n and _is_name_char(line[j]):
            j += 1
        h.syscall = line[start:j]
        if j >= n or not _is_ws(line[j]):
            return _NOMATCH
        while j < n and _is_ws(line[j]):
            j += 1
        if not line.startswith("resumed>", j):
            return _NOMATCH
        h.rest_at = j + 8
        h.kind = _RESUMED
        return _RESUMED
    return _NOMATCH


cpdef object first_quoted(str args):
    cdef Py_ssize_t n = len(args)
    cdef Py_ssize_t i = 0, start
    cdef Py_UCS4 c, quote
    while i < n:
        c = args[i]
        if c == u'"' or c == u"'":
            break
        i += 1
    if i >= n:
        return None
    quote = args[i]
    start = i + 1
    i = start
    while i < n:
        c = args[i]
        if c == u'\\':
            i += 2
            continue
        if c == quote:
            if args.startswith("...", i + 1):
                return None
            return unescape(args[start:i])
        i += 1
    return None


cdef class Scanner:
    cdef readonly frozenset tracked
    cdef public dict pending
    cdef public long lines, events, ignored, malformed
    cdef _Header _h

    def __init__(self, tracked):
        self.tracked = frozenset(tracked)
        self.pending = {}
        self.lines = 0
        self.events = 0
        self.ignored = 0
        self.malformed = 0
        self._h = _Header()

    cpdef object feed(self, str line):
        cdef object parsed
        self.lines += 1
        parsed = self._parse(line.rstrip("\r\n"))
        if parsed is None:
            self.ignored += 1
            return None
        if parsed is _MALFORMED_OBJ:
            self.malformed += 1
            return None
        if parsed is _PENDING_OBJ:
            return None
        self.events += 1
        return parsed

    cdef object _parse(self, str line):
        cdef int kind = _scan_header(line, self._h)
        cdef str syscall, rest, stripped
        cdef tuple head
        cdef long pid
        if kind == _NOMATCH:
            return None
        syscall = self._h.syscall
        pid = self._h.pid
        rest = line[self._h.rest_at:]
        if kind == _CALL:
            if syscall not in self.tracked:
                return None
            stripped = rest.rstrip()
            if stripped.endswith(_UNFINISHED):
                if pid in self.pending:
                    self.malformed += 1
                self.pending[pid] = (syscall, rest[:stripped.rfind(_UNFINISHED)])
                return _PENDING_OBJ
            return self._complete(pid, syscall, rest)
        head = self.pending.get(pid)
        if head is None or head[0] != syscall:
            return _MALFORMED_OBJ if syscall in self.tracked else None
        del self.pending[pid]
        return self._complete(pid, syscall, head[1] + rest)

    cdef object _complete(self, long pid, str syscall, str rest):
        path = first_quoted(rest)
        if path is None:
            return _MALFORMED_OBJ
        res = split_result(rest)
        if res is None:
            return _MALFORMED_OBJ
        return (pid, syscall, path, res[0], res[1])

    def finish(self):
        self.malformed += len(self.pending)
        self.pending.clear()


_MALFORMED_OBJ = object()
_PENDING_OBJ = object()


def collect_modules(lines, tracked, prefixes, extensions, Scanner scanner=None):
    cdef set found = set()
    cdef tuple exts = tuple(extensions)
    cdef tuple prefs = tuple(prefixes)
    cdef str canonical = prefs[0]
    cdef str path, prefix
    cdef object ev
    if scanner is None:
        scanner = Scanner(tracked)
    for line in lines:
        ev = scanner.feed(line)
        if ev is None or (<tuple>ev)[3] < 0:
            continue
        path = normalize((<tuple>ev)[2])
        if not path.endswith(exts):
            continue
        for prefix in prefs:
            if path.startswith(prefix):
                if prefix is not canonical:
                    path = canonical + path[len(prefix):]
                found.add(path)
                break
    scanner.finish()
    return found, scanner
