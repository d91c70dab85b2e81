"""Program execution.

The built-in executor evaluates a small, side-effect-free expression
language: a Python expression over the single variable ``x`` built from
integer/float/string/bool literals, lists, arithmetic, comparisons,
conditional expressions, comprehensions, indexing/slicing and a fixed set of
builtins. Example::

    sorted([(v * 3 + 1) % 7 for v in x if v % 2 == 0])[::-1]

Every evaluation step checks a wall-clock deadline, so runaway programs
(``sum(range(10 ** 15))``) end in a ``timeout`` status instead of hanging.
``clock()`` is provided on purpose: it is the one nondeterministic primitive
and exists so the repeated-run determinism check has something to catch.

Out-of-process executors speak a JSON wire contract over HTTP::

    POST /execute  {"program": str, "input": any, "timeout_ms": int}
    ->             {"status": "ok" | "error" | "timeout", "output": any}
"""

from __future__ import annotations

import ast
import json
import operator
import re
import threading
import time
from dataclasses import dataclass
from functools import lru_cache
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Protocol

import httpx

DEFAULT_TIMEOUT = 2.0

# Operations a proposal program may never reference. Matched on identifier
# tokens, so it is a static check that runs before anything executes.
DENY_LIST = frozenset(
    {
        # filesystem / process
        "open", "os", "sys", "shutil", "pathlib", "subprocess", "file", "remove",
        "unlink", "rmdir", "mkdir", "chdir", "system", "popen",
        # network
        "socket", "urllib", "requests", "httpx", "http", "ftplib", "smtplib",
        # randomness sources
        "random", "randint", "randrange", "shuffle", "choice", "uuid", "uuid4",
        "urandom", "secrets", "getrandbits",
        # escape hatches
        "__import__", "eval", "exec", "compile", "globals", "locals", "vars",
        "getattr", "setattr", "delattr", "__builtins__", "input", "breakpoint",
    }
)

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class ExecutionError(Exception):
    """The program itself failed (bad syntax, runtime fault)."""


class ExecutionTimeout(ExecutionError):
    pass


class ExecutorUnavailable(Exception):
    """The execution infrastructure failed; says nothing about the program."""


@dataclass(frozen=True)
class ExecResult:
    status: str  # "ok" | "error" | "timeout"
    output: Any = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_wire(self) -> dict:
        out = {"status": self.status, "output": self.output}
        if self.error:
            out["error"] = self.error
        return out


class Executor(Protocol):
    concurrent_safe: bool

    def run(self, program: str, value: Any, timeout: float = DEFAULT_TIMEOUT) -> ExecResult: ...


def denied_names(program: str) -> set[str]:
    """Identifiers in ``program`` that hit the deny-list."""
    found = set(_IDENT.findall(program)) & DENY_LIST
    if "__" in program:
        found |= {tok for tok in _IDENT.findall(program) if tok.startswith("__")}
    return found


def normalize(value: Any) -> Any:
    """Canonical JSON-shaped form used for output comparison."""
    if isinstance(value, (list, tuple)):
        return [normalize(v) for v in value]
    if isinstance(value, dict):
        return {str(k): normalize(v) for k, v in value.items()}
    if isinstance(value, float) and value.is_integer() and abs(value) < 2**53:
        return int(value)
    return value


def values_equal(a: Any, b: Any) -> bool:
    return normalize(a) == normalize(b)


# ---------------------------------------------------------------------------
# interpreter


_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.FloorDiv: operator.floordiv,
    ast.Mod: operator.mod,
    ast.Pow: operator.pow,
}
_CMPOPS = {
    ast.Eq: operator.eq,
    ast.NotEq: operator.ne,
    ast.Lt: operator.lt,
    ast.LtE: operator.le,
    ast.Gt: operator.gt,
    ast.GtE: operator.ge,
    ast.In: lambda a, b: a in b,
    ast.NotIn: lambda a, b: a not in b,
}
_MAX_POW_EXP = 64
_MAX_SEQ = 100_000


class _Interp:
    def __init__(self, deadline: float):
        self.deadline = deadline
        self.ticks = 0

    def tick(self) -> None:
        self.ticks += 1
        if self.ticks & 63 == 0 and time.monotonic() > self.deadline:
            raise ExecutionTimeout("deadline exceeded")

    def _range(self, *args):
        for v in range(*(int(a) for a in args)):
            self.tick()
            yield v

    def builtins(self) -> dict:
        def _list(it=()):
            out = []
            for v in it:
                self.tick()
                out.append(v)
                if len(out) > _MAX_SEQ:
                    raise ExecutionError("sequence too long")
            return out

        def _iter(it):
            for v in it:
                self.tick()
                yield v

        def _extreme(fn):
            def inner(*args, **kw):
                if len(args) == 1:
                    return fn(_iter(args[0]), **kw)
                return fn(*args, **kw)

            return inner

        return {
            "len": len,
            "sum": lambda it, start=0: sum(_iter(it), start),
            "min": _extreme(min),
            "max": _extreme(max),
            "abs": abs,
            "sorted": lambda it, reverse=False: sorted(_list(it), reverse=reverse),
            "reversed": lambda it: _list(it)[::-1],
            "list": _list,
            "range": self._range,
            "any": lambda it: any(_iter(it)),
            "all": lambda it: all(_iter(it)),
            "int": int,
            "bool": bool,
            "str": str,
            "clock": time.perf_counter_ns,
        }

    def eval(self, node: ast.AST, env: dict) -> Any:
        self.tick()
        method = getattr(self, "_" + type(node).__name__, None)
        if method is None:
            raise ExecutionError(f"unsupported syntax: {type(node).__name__}")
        return method(node, env)

    def _Expression(self, node, env):
        return self.eval(node.body, env)

    def _Constant(self, node, env):
        return node.value

    def _Name(self, node, env):
        if node.id in env:
            return env[node.id]
        raise ExecutionError(f"unknown name {node.id!r}")

    def _List(self, node, env):
        return [self.eval(e, env) for e in node.elts]

    _Tuple = _List

    def _BinOp(self, node, env):
        op = _BINOPS.get(type(node.op))
        if op is None:
            raise ExecutionError(f"unsupported operator {type(node.op).__name__}")
        left = self.eval(node.left, env)
        right = self.eval(node.right, env)
        if isinstance(node.op, ast.Pow) and isinstance(right, (int, float)) and abs(right) > _MAX_POW_EXP:
            raise ExecutionError("exponent too large")
        if isinstance(node.op, ast.Mult):
            seq, count = (left, right) if isinstance(left, (list, str)) else (right, left)
            if isinstance(seq, (list, str)) and isinstance(count, int) and len(seq) * count > _MAX_SEQ:
                raise ExecutionError("sequence too long")
        return op(left, right)

    def _UnaryOp(self, node, env):
        v = self.eval(node.operand, env)
        if isinstance(node.op, ast.USub):
            return -v
        if isinstance(node.op, ast.UAdd):
            return +v
        if isinstance(node.op, ast.Not):
            return not v
        raise ExecutionError(f"unsupported unary operator {type(node.op).__name__}")

    def _BoolOp(self, node, env):
        if isinstance(node.op, ast.And):
            result = True
            for v in node.values:
                result = self.eval(v, env)
                if not result:
                    return result
            return result
        result = False
        for v in node.values:
            result = self.eval(v, env)
            if result:
                return result
        return result

    def _Compare(self, node, env):
        left = self.eval(node.left, env)
        for op, comp in zip(node.ops, node.comparators):
            right = self.eval(comp, env)
            if not _CMPOPS[type(op)](left, right):
                return False
            left = right
        return True

    def _IfExp(self, node, env):
        return self.eval(node.body if self.eval(node.test, env) else node.orelse, env)

    def _Subscript(self, node, env):
        target = self.eval(node.value, env)
        sl = node.slice
        if isinstance(sl, ast.Slice):
            parts = [None if p is None else self.eval(p, env) for p in (sl.lower, sl.upper, sl.step)]
            return target[slice(*parts)]
        return target[self.eval(sl, env)]

    def _Call(self, node, env):
        if not isinstance(node.func, ast.Name):
            raise ExecutionError("only builtin functions may be called")
        fn = self._Name(node.func, env)
        if not callable(fn):
            raise ExecutionError(f"{node.func.id!r} is not callable")
        args = [self.eval(a, env) for a in node.args]
        kwargs = {kw.arg: self.eval(kw.value, env) for kw in node.keywords}
        return fn(*args, **kwargs)

    def _scopes(self, generators, env):
        if not generators:
            yield env
            return
        gen, rest = generators[0], generators[1:]
        if not isinstance(gen.target, ast.Name):
            raise ExecutionError("comprehension targets must be plain names")
        for item in self.eval(gen.iter, env):
            self.tick()
            inner = dict(env)
            inner[gen.target.id] = item
            if all(self.eval(cond, inner) for cond in gen.ifs):
                yield from self._scopes(rest, inner)

    def _ListComp(self, node, env):
        out: list = []
        for scope in self._scopes(node.generators, env):
            out.append(self.eval(node.elt, scope))
            if len(out) > _MAX_SEQ:
                raise ExecutionError("sequence too long")
        return out

    def _GeneratorExp(self, node, env):
        return (self.eval(node.elt, scope) for scope in self._scopes(node.generators, env))


@lru_cache(maxsize=4096)
def parse_program(program: str) -> ast.Expression:
    try:
        return ast.parse(program.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExecutionError(f"syntax error: {exc.msg}") from None


def evaluate(program: str, value: Any, timeout: float = DEFAULT_TIMEOUT) -> Any:
    """Run ``program`` with ``x`` bound to ``value``. Raises on failure."""
    tree = parse_program(program)
    interp = _Interp(time.monotonic() + timeout)
    env = interp.builtins()
    env["x"] = value
    try:
        return normalize(interp.eval(tree, env))
    except ExecutionError:
        raise
    except RecursionError:
        raise ExecutionError("expression nested too deeply") from None
    except Exception as exc:  # arithmetic faults, bad indexing, type errors
        raise ExecutionError(f"{type(exc).__name__}: {exc}") from None


class BuiltinExecutor:
    """In-process executor for the expression language. Thread safe."""

    concurrent_safe = True

    def run(self, program: str, value: Any, timeout: float = DEFAULT_TIMEOUT) -> ExecResult:
        try:
            return ExecResult("ok", evaluate(program, value, timeout))
        except ExecutionTimeout as exc:
            return ExecResult("timeout", None, str(exc))
        except ExecutionError as exc:
            return ExecResult("error", None, str(exc))


def handle_execute_request(body: dict, executor: Executor | None = None) -> dict:
    """Server side of the wire contract."""
    executor = executor or BuiltinExecutor()
    program = body.get("program")
    if not isinstance(program, str):
        return {"status": "error", "output": None, "error": "missing program"}
    timeout = float(body.get("timeout_ms", DEFAULT_TIMEOUT * 1000)) / 1000.0
    return executor.run(program, body.get("input"), timeout).to_wire()


class HttpExecutor:
    """Client for an out-of-process executor speaking the JSON contract."""

    def __init__(
        self,
        url: str,
        *,
        version: str = "v1",
        concurrent_safe: bool = True,
        client: httpx.Client | None = None,
        transport_slack: float = 5.0,
    ):
        self.url = url.rstrip("/")
        self.version = version
        self.concurrent_safe = concurrent_safe
        self.transport_slack = transport_slack
        self._client = client or httpx.Client()

    def run(self, program: str, value: Any, timeout: float = DEFAULT_TIMEOUT) -> ExecResult:
        payload = {"program": program, "input": value, "timeout_ms": int(round(timeout * 1000))}
        try:
            resp = self._client.post(
                f"{self.url}/execute",
                json=payload,
                headers={"X-Contract-Version": self.version},
                timeout=timeout + self.transport_slack,
            )
            resp.raise_for_status()
            data = resp.json()
        except (httpx.HTTPError, json.JSONDecodeError) as exc:
            raise ExecutorUnavailable(str(exc)) from exc
        status = data.get("status")
        if status not in ("ok", "error", "timeout"):
            raise ExecutorUnavailable(f"bad executor status {status!r}")
        return ExecResult(status, normalize(data.get("output")), data.get("error"))


def serve_executor(host: str = "127.0.0.1", port: int = 0, executor: Executor | None = None):
    """Start a threaded HTTP server for the built-in executor.

    Returns ``(server, thread)``; call ``server.shutdown()`` to stop it.
    """
    backend = executor or BuiltinExecutor()

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802
            if self.path.rstrip("/") != "/execute":
                self.send_error(404)
                return
            length = int(self.headers.get("Content-Length", 0))
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
            except json.JSONDecodeError:
                self.send_error(400, "body is not JSON")
                return
            out = json.dumps(handle_execute_request(body, backend)).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(out)))
            self.end_headers()
            self.wfile.write(out)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer((host, port), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
