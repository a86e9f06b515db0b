"""Arithmetic expression evaluator (recursive descent).

Grammar, with standard precedence and a right-associative power operator:

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | '(' expr ')'

``-2^2`` is ``-(2^2)`` and ``2^3^2`` is ``2^(3^2)``.
"""

from __future__ import annotations

import math
import re


class CalculatorError(Exception):
    label = "CalculatorError"


class CalcSyntaxError(CalculatorError):
    label = "SyntaxError"


class CalcMathError(CalculatorError):
    label = "MathError"


_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*|\.\d+)|([-+*/^()]))")


def _tokenize(expr: str) -> list[str]:
    tokens: list[str] = []
    pos = 0
    while pos < len(expr):
        match = _TOKEN.match(expr, pos)
        if match is None:
            remainder = expr[pos:].strip()
            if not remainder:
                break
            raise CalcSyntaxError(f"unexpected character {remainder[0]!r}")
        tokens.append(match.group(1) or match.group(2))
        pos = match.end()
    return tokens


class _Parser:
    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> str:
        token = self.peek()
        if token is None:
            raise CalcSyntaxError("unexpected end of expression")
        self.pos += 1
        return token

    def expr(self) -> float:
        value = self.term()
        while self.peek() in ("+", "-"):
            op = self.take()
            rhs = self.term()
            value = value + rhs if op == "+" else value - rhs
        return value

    def term(self) -> float:
        value = self.unary()
        while self.peek() in ("*", "/"):
            op = self.take()
            rhs = self.unary()
            if op == "*":
                value = value * rhs
            else:
                if rhs == 0:
                    raise CalcMathError("division by zero")
                value = value / rhs
        return value

    def unary(self) -> float:
        if self.peek() == "-":
            self.take()
            return -self.unary()
        if self.peek() == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> float:
        base = self.atom()
        if self.peek() == "^":
            self.take()
            exponent = self.unary()
            try:
                return base**exponent
            except (ZeroDivisionError, OverflowError) as exc:
                raise CalcMathError(f"cannot raise {base} to {exponent}") from exc
        return base

    def atom(self) -> float:
        token = self.take()
        if token == "(":
            value = self.expr()
            if self.peek() != ")":
                raise CalcSyntaxError("missing closing parenthesis")
            self.take()
            return value
        # Numbers never carry a sign here; unary minus handles that.
        if token[0].isdigit() or token[0] == ".":
            return float(token)
        raise CalcSyntaxError(f"unexpected token {token!r}")


def calculator_eval(expr: str) -> float:
    """Evaluate an arithmetic expression.

    Raises CalcSyntaxError for bad tokens or structure and CalcMathError for
    division by zero or overflow.
    """
    if not expr or not expr.strip():
        raise CalcSyntaxError("empty expression")
    parser = _Parser(_tokenize(expr))
    value = parser.expr()
    if parser.peek() is not None:
        raise CalcSyntaxError(f"trailing input at token {parser.peek()!r}")
    if isinstance(value, complex) or not math.isfinite(value):
        raise CalcMathError("result is not a finite real number")
    return value


def format_number(value: float) -> str:
    """Up to 10 significant digits, trailing zeros trimmed."""
    if value == 0:
        value = 0.0
    return f"{value:.10g}"
