"""
Verilog Syntax Helpers for verispec

This module lexes and parses a Verilog-2005 subset, extracts the syntactically
significant tokens from the resulting AST, and segments source code into
fragments that end exactly at those tokens.

Supported subset (anything else is a syntax error):
    - module / macromodule declarations with ANSI or non-ANSI port lists and
      `#(...)` parameter port lists
    - input/output/inout, wire/reg/integer/real/time/tri*/supply*/event,
      parameter/localparam/defparam and genvar declarations
    - continuous assign, always/initial, generate regions (for/if/begin)
    - function/task declarations
    - begin/end (optionally named), if/else, case/casez/casex, for, while,
      repeat, forever, event (@) and delay (#) controls, blocking and
      non-blocking assignments, system and user task calls
    - module and gate instantiations with named or positional connections
    - expressions with Verilog operator precedence, concatenation,
      replication, bit/part selects, function calls

Compiler directives are single tokens and opaque items; no preprocessing.
"""

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Tuple

from .errors import LexError, VerilogSyntaxError, VerispecError

logger = logging.getLogger(__name__)

Span = Tuple[int, int]


class TokenKind(str, Enum):
    KEYWORD = "Keyword"
    IDENTIFIER = "Identifier"
    OPERATOR = "Operator"
    NUMBER = "NumberLiteral"
    STRING = "StringLiteral"
    PUNCTUATION = "Punctuation"
    COMMENT = "Comment"
    WHITESPACE = "Whitespace"
    DIRECTIVE = "Directive"


TRIVIA_KINDS = frozenset({TokenKind.COMMENT, TokenKind.WHITESPACE})

KEYWORDS: FrozenSet[bytes] = frozenset(
    w.encode()
    for w in """
    module macromodule endmodule input output inout wire reg integer real time
    realtime event tri tri0 tri1 triand trior wand wor supply0 supply1 signed
    unsigned parameter localparam defparam specparam genvar assign deassign
    always initial begin end fork join if else case casez casex endcase default
    for while repeat forever wait disable posedge negedge or and nand nor xor
    xnor not buf bufif0 bufif1 notif0 notif1 function endfunction task endtask
    automatic generate endgenerate force release specify endspecify
    """.split()
)

# Longest operators first so the alternation picks maximal munch.
OPERATORS: Tuple[bytes, ...] = (
    b"<<<", b">>>", b"===", b"!==",
    b"==", b"!=", b"<=", b">=", b"&&", b"||", b"**", b"<<", b">>",
    b"~&", b"~|", b"~^", b"^~", b"->", b"+:", b"-:",
    b"+", b"-", b"*", b"/", b"%", b"<", b">", b"!", b"~", b"&", b"|", b"^",
    b"=", b"?", b":",
)
PUNCTUATION: Tuple[bytes, ...] = (b"(", b")", b"[", b"]", b"{", b"}", b";", b",", b".", b"#", b"@")

# Directives that own the rest of their line (with backslash continuations).
LINE_DIRECTIVES = (
    "define", "undef", "include", "timescale", "default_nettype", "ifdef",
    "ifndef", "elsif", "line", "pragma",
)

_TOKEN_PATTERNS = [
    ("WS", rb"[ \t\r\n\f\v]+"),
    ("LINE_COMMENT", rb"//[^\n]*"),
    ("BLOCK_COMMENT", rb"/\*.*?\*/"),
    ("BAD_COMMENT", rb"/\*"),
    ("STRING", rb'"(?:[^"\\\n]|\\.)*"'),
    ("BAD_STRING", rb'"'),
    (
        "DIRECTIVE",
        rb"`(?:" + b"|".join(d.encode() for d in LINE_DIRECTIVES) + rb")\b(?:\\\r?\n|\\.|[^\n\\])*"
        rb"|`[A-Za-z_][A-Za-z0-9_$]*",
    ),
    (
        "NUMBER",
        rb"(?:[0-9][0-9_]*)?'[sS]?[bBoOdDhH][0-9a-fA-FxXzZ?_]+"
        rb"|[0-9][0-9_]*\.[0-9][0-9_]*(?:[eE][+-]?[0-9]+)?"
        rb"|[0-9][0-9_]*[eE][+-]?[0-9]+"
        rb"|[0-9][0-9_]*",
    ),
    ("IDENT", rb"[A-Za-z_][A-Za-z0-9_$]*|\\[^ \t\r\n]+|\$[A-Za-z0-9_$]+"),
    ("OP", b"|".join(re.escape(op) for op in OPERATORS)),
    ("PUNCT", b"|".join(re.escape(p) for p in PUNCTUATION)),
]
# Directives without arguments that may sit between statements.
BARE_DIRECTIVES = frozenset(
    {b"else", b"endif", b"resetall", b"celldefine", b"endcelldefine", b"nounconnected_drive"}
)

_MASTER = re.compile(b"|".join(b"(?P<%s>%s)" % (name.encode(), pat) for name, pat in _TOKEN_PATTERNS), re.S)

_GROUP_KIND = {
    "WS": TokenKind.WHITESPACE,
    "LINE_COMMENT": TokenKind.COMMENT,
    "BLOCK_COMMENT": TokenKind.COMMENT,
    "STRING": TokenKind.STRING,
    "DIRECTIVE": TokenKind.DIRECTIVE,
    "NUMBER": TokenKind.NUMBER,
    "OP": TokenKind.OPERATOR,
    "PUNCT": TokenKind.PUNCTUATION,
}


@dataclass(frozen=True)
class LexToken:
    kind: TokenKind
    text: bytes
    span: Span

    @property
    def is_trivia(self) -> bool:
        return self.kind in TRIVIA_KINDS

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "text": self.text.decode("utf-8", errors="replace"),
            "span": list(self.span),
        }


def lex(source: bytes) -> List[LexToken]:
    """
    Split Verilog source into tokens without dropping a single byte.

    Args:
        source: Raw file bytes

    Returns:
        Tokens in source order; whitespace and comments are tokens too

    Raises:
        LexError: on an unterminated string or block comment, or a byte
            sequence no token rule accepts
    """
    if isinstance(source, str):
        source = source.encode("utf-8")
    tokens: List[LexToken] = []
    pos = 0
    end = len(source)
    while pos < end:
        match = _MASTER.match(source, pos)
        if match is None:
            raise LexError(f"unexpected character {source[pos:pos + 1]!r}", pos)
        group = match.lastgroup
        if group == "BAD_COMMENT":
            raise LexError("unterminated block comment", pos)
        if group == "BAD_STRING":
            raise LexError("unterminated string literal", pos)
        text = match.group()
        if group == "IDENT":
            kind = TokenKind.KEYWORD if text in KEYWORDS else TokenKind.IDENTIFIER
        else:
            kind = _GROUP_KIND[group]
        tokens.append(LexToken(kind, text, (pos, match.end())))
        pos = match.end()
    return tokens


class NodeKind(str, Enum):
    SOURCE_TEXT = "SourceText"
    MODULE_DECL = "ModuleDecl"
    PARAM_PORT_LIST = "ParamPortList"
    PORT_LIST = "PortList"
    PORT = "Port"
    PORT_DECL = "PortDecl"
    DECL = "Decl"
    PARAM_DECL = "ParamDecl"
    RANGE = "Range"
    ASSIGN_STMT = "AssignStmt"
    ALWAYS_BLOCK = "AlwaysBlock"
    INITIAL_BLOCK = "InitialBlock"
    GENERATE_BLOCK = "GenerateBlock"
    FUNCTION_DECL = "FunctionDecl"
    TASK_DECL = "TaskDecl"
    INSTANTIATION = "Instantiation"
    PORT_CONNECTION = "PortConnection"
    DIRECTIVE = "Directive"
    SEQ_BLOCK = "SeqBlock"
    IF_STMT = "IfStmt"
    CASE_STMT = "CaseStmt"
    CASE_ITEM = "CaseItem"
    LOOP_STMT = "LoopStmt"
    EVENT_CONTROL = "EventControl"
    EVENT_EXPR = "EventExpr"
    DELAY_CONTROL = "DelayControl"
    BLOCKING_ASSIGN = "BlockingAssign"
    NONBLOCKING_ASSIGN = "NonBlockingAssign"
    TASK_CALL = "TaskCall"
    NULL_STMT = "NullStmt"
    LVALUE = "LValue"
    EXPR = "Expr"
    PRIMARY = "Primary"
    CONCAT = "Concatenation"
    CALL = "Call"
    TOKEN = "Token"


@dataclass
class Node:
    symbol: NodeKind
    children: List["Node"] = field(default_factory=list)
    token: Optional[LexToken] = None

    @property
    def is_leaf(self) -> bool:
        return self.token is not None

    def leaves(self) -> Iterator[LexToken]:
        """In-order leaf tokens."""
        if self.token is not None:
            yield self.token
            return
        stack = [iter(self.children)]
        while stack:
            child = next(stack[-1], None)
            if child is None:
                stack.pop()
            elif child.token is not None:
                yield child.token
            else:
                stack.append(iter(child.children))

    def walk(self) -> Iterator["Node"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def first_token(self) -> Optional[LexToken]:
        return next(self.leaves(), None)

    def to_dict(self) -> dict:
        if self.token is not None:
            return {"symbol": self.symbol.value, "token": self.token.to_dict()}
        return {"symbol": self.symbol.value, "children": [c.to_dict() for c in self.children]}


_HEADER_KINDS = frozenset({NodeKind.TOKEN, NodeKind.PARAM_PORT_LIST, NodeKind.PORT_LIST})


def module_items(module: Node) -> List[Node]:
    """Body items of a ModuleDecl node (header parts excluded)."""
    return [c for c in module.children if c.symbol not in _HEADER_KINDS]


@dataclass
class Ast:
    root: Node

    @property
    def modules(self) -> List[Node]:
        return [c for c in self.root.children if c.symbol is NodeKind.MODULE_DECL]

    def leaves(self) -> List[LexToken]:
        return list(self.root.leaves())

    def to_dict(self) -> dict:
        return self.root.to_dict()


NET_TYPES = frozenset(
    w.encode()
    for w in "wire reg integer real time realtime event tri tri0 tri1 triand trior wand wor supply0 supply1".split()
)
GATE_TYPES = frozenset(
    w.encode() for w in "and nand or nor xor xnor not buf bufif0 bufif1 notif0 notif1".split()
)
DIRECTIONS = frozenset({b"input", b"output", b"inout"})

BINARY_PRECEDENCE: Dict[bytes, int] = {
    b"||": 1,
    b"&&": 2,
    b"|": 3,
    b"^": 4, b"^~": 4, b"~^": 4,
    b"&": 5,
    b"==": 6, b"!=": 6, b"===": 6, b"!==": 6,
    b"<": 7, b"<=": 7, b">": 7, b">=": 7,
    b"<<": 8, b">>": 8, b"<<<": 8, b">>>": 8,
    b"+": 9, b"-": 9,
    b"*": 10, b"/": 10, b"%": 10,
    b"**": 11,
}
UNARY_OPERATORS = frozenset({b"+", b"-", b"!", b"~", b"&", b"~&", b"|", b"~|", b"^", b"~^", b"^~"})


def _is_compiler_directive(tok: LexToken) -> bool:
    """True for conditional and line directives, false for macro uses."""
    name = re.match(rb"`([A-Za-z_][A-Za-z0-9_$]*)", tok.text).group(1)
    return name in BARE_DIRECTIVES or name.decode() in LINE_DIRECTIVES


class _Parser:
    """Recursive-descent parser; every consumed token becomes a leaf in order."""

    def __init__(self, tokens: Iterable[LexToken]):
        all_tokens = list(tokens)
        self.tokens = [t for t in all_tokens if not t.is_trivia]
        self.pos = 0
        self.end_offset = all_tokens[-1].span[1] if all_tokens else 0

    # -- token helpers -------------------------------------------------

    def peek(self, ahead: int = 0) -> Optional[LexToken]:
        index = self.pos + ahead
        return self.tokens[index] if index < len(self.tokens) else None

    def at(self, *texts: bytes) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind not in (TokenKind.STRING, TokenKind.NUMBER) and tok.text in texts

    def at_kind(self, kind: TokenKind) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind is kind

    def error(self, expected: str) -> VerilogSyntaxError:
        tok = self.peek()
        if tok is None:
            return VerilogSyntaxError(expected, (self.end_offset, self.end_offset))
        return VerilogSyntaxError(expected, tok.span, tok.text)

    def take(self) -> Node:
        tok = self.peek()
        if tok is None:
            raise self.error("more input")
        self.pos += 1
        return Node(NodeKind.TOKEN, token=tok)

    def expect(self, text: bytes, expected: Optional[str] = None) -> Node:
        if not self.at(text):
            raise self.error(expected or f"'{text.decode()}'")
        return self.take()

    def expect_identifier(self, what: str = "identifier") -> Node:
        if not self.at_kind(TokenKind.IDENTIFIER):
            raise self.error(what)
        return self.take()

    # -- source text ---------------------------------------------------

    def parse_source_text(self) -> Node:
        root = Node(NodeKind.SOURCE_TEXT)
        while self.peek() is not None:
            if self.at_kind(TokenKind.DIRECTIVE):
                root.children.append(Node(NodeKind.DIRECTIVE, [self.take()]))
            elif self.at(b"module", b"macromodule"):
                root.children.append(self.parse_module())
            else:
                raise self.error("'module' or compiler directive")
        return root

    def parse_module(self) -> Node:
        node = Node(NodeKind.MODULE_DECL, [self.take()])
        node.children.append(self.expect_identifier("module name"))
        if self.at(b"#"):
            node.children.append(self.parse_param_port_list())
        if self.at(b"("):
            node.children.append(self.parse_port_list())
        node.children.append(self.expect(b";"))
        while not self.at(b"endmodule"):
            if self.peek() is None:
                raise self.error("'endmodule'")
            node.children.append(self.parse_module_item())
        node.children.append(self.take())
        return node

    def parse_param_port_list(self) -> Node:
        node = Node(NodeKind.PARAM_PORT_LIST, [self.take(), self.expect(b"(")])
        while True:
            if self.at(b"parameter", b"localparam"):
                node.children.append(self.take())
            self._optional_signing_and_range(node)
            node.children.append(self.expect_identifier("parameter name"))
            node.children.append(self.expect(b"="))
            node.children.append(self.parse_expr())
            if not self.at(b","):
                break
            node.children.append(self.take())
        node.children.append(self.expect(b")"))
        return node

    def parse_port_list(self) -> Node:
        node = Node(NodeKind.PORT_LIST, [self.take()])
        if self.at(b")"):
            node.children.append(self.take())
            return node
        while True:
            port = Node(NodeKind.PORT)
            if self.at(*DIRECTIONS):
                port.children.append(self.take())
                if self.at(*NET_TYPES):
                    port.children.append(self.take())
                self._optional_signing_and_range(port)
            port.children.append(self.expect_identifier("port name"))
            if len(port.children) > 1 and self.at(b"="):
                port.children.append(self.take())
                port.children.append(self.parse_expr())
            node.children.append(port)
            if not self.at(b","):
                break
            node.children.append(self.take())
        node.children.append(self.expect(b")"))
        return node

    def _optional_signing_and_range(self, node: Node) -> None:
        if self.at(b"signed", b"unsigned", b"integer"):
            node.children.append(self.take())
        if self.at(b"["):
            node.children.append(self.parse_range())

    def _optional_delay(self, node: Node) -> None:
        if self.at(b"#"):
            node.children.append(Node(NodeKind.DELAY_CONTROL, [self.take(), self.parse_delay_value()]))

    def parse_range(self) -> Node:
        node = Node(NodeKind.RANGE, [self.take(), self.parse_expr()])
        if self.at(b":", b"+:", b"-:"):
            node.children.append(self.take())
            node.children.append(self.parse_expr())
        node.children.append(self.expect(b"]"))
        return node

    # -- module items ----------------------------------------------------

    def parse_module_item(self) -> Node:
        tok = self.peek()
        if tok is None:
            raise self.error("module item")
        if tok.kind is TokenKind.DIRECTIVE:
            return Node(NodeKind.DIRECTIVE, [self.take()])
        if tok.kind is TokenKind.KEYWORD:
            text = tok.text
            if text in DIRECTIONS:
                return self.parse_port_decl()
            if text in NET_TYPES or text == b"genvar":
                return self.parse_decl()
            if text in (b"parameter", b"localparam", b"defparam"):
                return self.parse_param_decl()
            if text == b"assign":
                return self.parse_continuous_assign()
            if text == b"always":
                return Node(NodeKind.ALWAYS_BLOCK, [self.take(), self.parse_statement()])
            if text == b"initial":
                return Node(NodeKind.INITIAL_BLOCK, [self.take(), self.parse_statement()])
            if text == b"generate":
                return self.parse_generate()
            if text in (b"for", b"if"):
                return self.parse_generate_item()
            if text == b"function":
                return self.parse_subroutine(NodeKind.FUNCTION_DECL, b"endfunction")
            if text == b"task":
                return self.parse_subroutine(NodeKind.TASK_DECL, b"endtask")
            if text in GATE_TYPES:
                return self.parse_gate_instantiation()
        if tok.kind is TokenKind.IDENTIFIER:
            return self.parse_instantiation()
        if self.at(b";"):
            return Node(NodeKind.NULL_STMT, [self.take()])
        raise self.error("module item")

    def parse_port_decl(self) -> Node:
        node = Node(NodeKind.PORT_DECL, [self.take()])
        if self.at(*NET_TYPES):
            node.children.append(self.take())
        self._optional_signing_and_range(node)
        self._declarator_list(node, allow_init=True)
        node.children.append(self.expect(b";"))
        return node

    def parse_decl(self) -> Node:
        node = Node(NodeKind.DECL, [self.take()])
        self._optional_signing_and_range(node)
        self._optional_delay(node)
        self._declarator_list(node, allow_init=True)
        node.children.append(self.expect(b";"))
        return node

    def _declarator_list(self, node: Node, allow_init: bool) -> None:
        while True:
            node.children.append(self.expect_identifier())
            while self.at(b"["):
                node.children.append(self.parse_range())
            if allow_init and self.at(b"="):
                node.children.append(self.take())
                node.children.append(self.parse_expr())
            if not self.at(b","):
                return
            node.children.append(self.take())

    def parse_param_decl(self) -> Node:
        node = Node(NodeKind.PARAM_DECL, [self.take()])
        self._optional_signing_and_range(node)
        while True:
            node.children.append(self.parse_lvalue())
            node.children.append(self.expect(b"="))
            node.children.append(self.parse_expr())
            if not self.at(b","):
                break
            node.children.append(self.take())
        node.children.append(self.expect(b";"))
        return node

    def parse_continuous_assign(self) -> Node:
        node = Node(NodeKind.ASSIGN_STMT, [self.take()])
        self._optional_delay(node)
        while True:
            node.children.append(self.parse_lvalue())
            node.children.append(self.expect(b"="))
            node.children.append(self.parse_expr())
            if not self.at(b","):
                break
            node.children.append(self.take())
        node.children.append(self.expect(b";"))
        return node

    def parse_generate(self) -> Node:
        node = Node(NodeKind.GENERATE_BLOCK, [self.take()])
        while not self.at(b"endgenerate"):
            if self.peek() is None:
                raise self.error("'endgenerate'")
            node.children.append(self.parse_generate_item())
        node.children.append(self.take())
        return node

    def parse_generate_item(self) -> Node:
        if self.at(b"for"):
            node = Node(NodeKind.LOOP_STMT, [self.take(), self.expect(b"(")])
            node.children.append(self.parse_assignment(NodeKind.BLOCKING_ASSIGN, terminator=None))
            node.children.append(self.expect(b";"))
            node.children.append(self.parse_expr())
            node.children.append(self.expect(b";"))
            node.children.append(self.parse_assignment(NodeKind.BLOCKING_ASSIGN, terminator=None))
            node.children.append(self.expect(b")"))
            node.children.append(self.parse_generate_item())
            return node
        if self.at(b"if"):
            node = Node(NodeKind.IF_STMT, [self.take(), self.expect(b"("), self.parse_expr(), self.expect(b")")])
            node.children.append(self.parse_generate_item())
            if self.at(b"else"):
                node.children.append(self.take())
                node.children.append(self.parse_generate_item())
            return node
        if self.at(b"begin"):
            node = Node(NodeKind.SEQ_BLOCK, [self.take()])
            if self.at(b":"):
                node.children.append(self.take())
                node.children.append(self.expect_identifier("block name"))
            while not self.at(b"end"):
                if self.peek() is None:
                    raise self.error("'end'")
                node.children.append(self.parse_generate_item())
            node.children.append(self.take())
            return node
        return self.parse_module_item()

    def parse_subroutine(self, kind: NodeKind, terminator: bytes) -> Node:
        node = Node(kind, [self.take()])
        if self.at(b"automatic"):
            node.children.append(self.take())
        self._optional_signing_and_range(node)
        node.children.append(self.expect_identifier("subroutine name"))
        if self.at(b"("):
            node.children.append(self.parse_port_list())
        node.children.append(self.expect(b";"))
        while not self.at(terminator):
            tok = self.peek()
            if tok is None:
                raise self.error(f"'{terminator.decode()}'")
            if tok.kind is TokenKind.KEYWORD and tok.text in DIRECTIONS:
                node.children.append(self.parse_port_decl())
            elif tok.kind is TokenKind.KEYWORD and (tok.text in NET_TYPES or tok.text in (b"parameter", b"localparam")):
                node.children.append(self.parse_module_item())
            else:
                node.children.append(self.parse_statement())
        node.children.append(self.take())
        return node

    def parse_gate_instantiation(self) -> Node:
        node = Node(NodeKind.INSTANTIATION, [self.take()])
        while True:
            if self.at_kind(TokenKind.IDENTIFIER):
                node.children.append(self.take())
            node.children.append(self.parse_connections())
            if not self.at(b","):
                break
            node.children.append(self.take())
        node.children.append(self.expect(b";"))
        return node

    def parse_instantiation(self) -> Node:
        node = Node(NodeKind.INSTANTIATION, [self.take()])
        if self.at(b"#"):
            node.children.append(self.take())
            node.children.append(self.parse_connections())
        while True:
            node.children.append(self.expect_identifier("instance name"))
            if self.at(b"["):
                node.children.append(self.parse_range())
            node.children.append(self.parse_connections())
            if not self.at(b","):
                break
            node.children.append(self.take())
        node.children.append(self.expect(b";"))
        return node

    def parse_connections(self) -> Node:
        node = Node(NodeKind.PORT_LIST, [self.expect(b"(")])
        if self.at(b")"):
            node.children.append(self.take())
            return node
        while True:
            if self.at(b"."):
                conn = Node(NodeKind.PORT_CONNECTION, [self.take(), self.expect_identifier("port name")])
                conn.children.append(self.expect(b"("))
                if not self.at(b")"):
                    conn.children.append(self.parse_expr())
                conn.children.append(self.expect(b")"))
                node.children.append(conn)
            else:
                node.children.append(self.parse_expr())
            if not self.at(b","):
                break
            node.children.append(self.take())
        node.children.append(self.expect(b")"))
        return node

    # -- statements ------------------------------------------------------

    def parse_statement(self) -> Node:
        tok = self.peek()
        if tok is None:
            raise self.error("statement")
        if self.at(b"@"):
            return self.parse_event_control()
        if self.at(b"#"):
            node = Node(NodeKind.DELAY_CONTROL, [self.take(), self.parse_delay_value()])
            node.children.append(self.parse_statement())
            return node
        if tok.kind is TokenKind.DIRECTIVE and _is_compiler_directive(tok):
            return Node(NodeKind.DIRECTIVE, [self.take()])
        if self.at(b";"):
            return Node(NodeKind.NULL_STMT, [self.take()])
        if tok.kind is TokenKind.KEYWORD:
            text = tok.text
            if text in (b"begin", b"fork"):
                return self.parse_seq_block(b"end" if text == b"begin" else b"join")
            if text == b"if":
                node = Node(NodeKind.IF_STMT, [self.take(), self.expect(b"("), self.parse_expr(), self.expect(b")")])
                node.children.append(self.parse_statement())
                if self.at(b"else"):
                    node.children.append(self.take())
                    node.children.append(self.parse_statement())
                return node
            if text in (b"case", b"casez", b"casex"):
                return self.parse_case()
            if text == b"for":
                node = Node(NodeKind.LOOP_STMT, [self.take(), self.expect(b"(")])
                node.children.append(self.parse_assignment(NodeKind.BLOCKING_ASSIGN, terminator=None))
                node.children.append(self.expect(b";"))
                node.children.append(self.parse_expr())
                node.children.append(self.expect(b";"))
                node.children.append(self.parse_assignment(NodeKind.BLOCKING_ASSIGN, terminator=None))
                node.children.append(self.expect(b")"))
                node.children.append(self.parse_statement())
                return node
            if text in (b"while", b"repeat", b"wait"):
                node = Node(NodeKind.LOOP_STMT, [self.take(), self.expect(b"("), self.parse_expr(), self.expect(b")")])
                node.children.append(self.parse_statement())
                return node
            if text == b"forever":
                return Node(NodeKind.LOOP_STMT, [self.take(), self.parse_statement()])
            if text == b"disable":
                return Node(NodeKind.TASK_CALL, [self.take(), self.expect_identifier(), self.expect(b";")])
            if text in NET_TYPES:
                return self.parse_decl()
            raise self.error("statement")
        if tok.kind is TokenKind.IDENTIFIER and tok.text.startswith(b"$"):
            node = Node(NodeKind.TASK_CALL, [self.take()])
            if self.at(b"("):
                node.children.append(self.parse_arguments())
            node.children.append(self.expect(b";"))
            return node
        if self.at(b"->"):
            return Node(NodeKind.TASK_CALL, [self.take(), self.expect_identifier("event name"), self.expect(b";")])
        if tok.kind is TokenKind.IDENTIFIER and self._is_task_enable():
            node = Node(NodeKind.TASK_CALL, [self.take()])
            if self.at(b"("):
                node.children.append(self.parse_arguments())
            node.children.append(self.expect(b";"))
            return node
        if tok.kind is TokenKind.IDENTIFIER or self.at(b"{"):
            return self.parse_assignment(None, terminator=b";")
        raise self.error("statement")

    def _is_task_enable(self) -> bool:
        nxt = self.peek(1)
        return nxt is not None and nxt.kind is TokenKind.PUNCTUATION and nxt.text in (b";", b"(")

    def parse_seq_block(self, terminator: bytes) -> Node:
        node = Node(NodeKind.SEQ_BLOCK, [self.take()])
        if self.at(b":"):
            node.children.append(self.take())
            node.children.append(self.expect_identifier("block name"))
        while not self.at(terminator):
            if self.peek() is None:
                raise self.error(f"'{terminator.decode()}'")
            node.children.append(self.parse_statement())
        node.children.append(self.take())
        return node

    def parse_case(self) -> Node:
        node = Node(NodeKind.CASE_STMT, [self.take(), self.expect(b"("), self.parse_expr(), self.expect(b")")])
        while not self.at(b"endcase"):
            if self.peek() is None:
                raise self.error("'endcase'")
            if self.at_kind(TokenKind.DIRECTIVE) and _is_compiler_directive(self.peek()):
                node.children.append(Node(NodeKind.DIRECTIVE, [self.take()]))
                continue
            item = Node(NodeKind.CASE_ITEM)
            if self.at(b"default"):
                item.children.append(self.take())
                if self.at(b":"):
                    item.children.append(self.take())
            else:
                while True:
                    item.children.append(self.parse_expr())
                    if not self.at(b","):
                        break
                    item.children.append(self.take())
                item.children.append(self.expect(b":"))
            item.children.append(self.parse_statement())
            node.children.append(item)
        node.children.append(self.take())
        return node

    def parse_event_control(self) -> Node:
        node = Node(NodeKind.EVENT_CONTROL, [self.take()])
        if self.at(b"*"):
            node.children.append(self.take())
        elif self.at(b"("):
            node.children.append(self.take())
            if self.at(b"*"):
                node.children.append(self.take())
            else:
                while True:
                    event = Node(NodeKind.EVENT_EXPR)
                    if self.at(b"posedge", b"negedge"):
                        event.children.append(self.take())
                    event.children.append(self.parse_expr())
                    node.children.append(event)
                    if not self.at(b"or", b","):
                        break
                    node.children.append(self.take())
            node.children.append(self.expect(b")"))
        else:
            node.children.append(self.expect_identifier("event expression"))
        node.children.append(self.parse_statement())
        return node

    def parse_delay_value(self) -> Node:
        if self.at_kind(TokenKind.NUMBER) or self.at_kind(TokenKind.IDENTIFIER):
            return self.take()
        if self.at(b"("):
            node = Node(NodeKind.EXPR, [self.take(), self.parse_expr()])
            # rise, fall and turn-off delays
            while self.at(b","):
                node.children.append(self.take())
                node.children.append(self.parse_expr())
            node.children.append(self.expect(b")"))
            return node
        raise self.error("delay value")

    def parse_assignment(self, kind: Optional[NodeKind], terminator: Optional[bytes]) -> Node:
        target = self.parse_lvalue()
        if self.at(b"="):
            op = self.take()
            node_kind = kind or NodeKind.BLOCKING_ASSIGN
        elif self.at(b"<=") and kind is None:
            op = self.take()
            node_kind = NodeKind.NONBLOCKING_ASSIGN
        else:
            raise self.error("'=' or '<='")
        node = Node(node_kind, [target, op])
        if self.at(b"#"):
            node.children.append(Node(NodeKind.DELAY_CONTROL, [self.take(), self.parse_delay_value()]))
        node.children.append(self.parse_expr())
        if terminator is not None:
            node.children.append(self.expect(terminator))
        return node

    def parse_lvalue(self) -> Node:
        if self.at(b"{"):
            node = Node(NodeKind.CONCAT, [self.take()])
            while True:
                node.children.append(self.parse_lvalue())
                if not self.at(b","):
                    break
                node.children.append(self.take())
            node.children.append(self.expect(b"}"))
            return node
        if not self.at_kind(TokenKind.IDENTIFIER):
            raise self.error("expression")
        node = Node(NodeKind.LVALUE, [self.take()])
        self._selects_and_hierarchy(node)
        return node

    def _selects_and_hierarchy(self, node: Node) -> None:
        while True:
            if self.at(b"."):
                node.children.append(self.take())
                node.children.append(self.expect_identifier())
            elif self.at(b"["):
                node.children.append(self.parse_range())
            else:
                return

    # -- expressions -----------------------------------------------------

    def parse_expr(self) -> Node:
        cond = self.parse_binary(1)
        if self.at(b"?"):
            node = Node(NodeKind.EXPR, [cond, self.take(), self.parse_expr()])
            node.children.append(self.expect(b":"))
            node.children.append(self.parse_expr())
            return node
        return cond

    def parse_binary(self, min_prec: int) -> Node:
        left = self.parse_unary()
        while True:
            tok = self.peek()
            if tok is None or tok.kind is not TokenKind.OPERATOR:
                return left
            prec = BINARY_PRECEDENCE.get(tok.text)
            if prec is None or prec < min_prec:
                return left
            op = self.take()
            # ** is right-associative, everything else left-associative.
            right = self.parse_binary(prec if tok.text == b"**" else prec + 1)
            left = Node(NodeKind.EXPR, [left, op, right])

    def parse_unary(self) -> Node:
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.OPERATOR and tok.text in UNARY_OPERATORS:
            return Node(NodeKind.EXPR, [self.take(), self.parse_unary()])
        return self.parse_primary()

    def parse_primary(self) -> Node:
        tok = self.peek()
        if tok is None:
            raise self.error("expression")
        if tok.kind in (TokenKind.NUMBER, TokenKind.STRING, TokenKind.DIRECTIVE):
            return self.take()
        if tok.kind is TokenKind.IDENTIFIER:
            ident = self.take()
            if self.at(b"("):
                return Node(NodeKind.CALL, [ident, self.parse_arguments()])
            node = Node(NodeKind.PRIMARY, [ident])
            self._selects_and_hierarchy(node)
            return node if len(node.children) > 1 else ident
        if self.at(b"("):
            return Node(NodeKind.EXPR, [self.take(), self.parse_expr(), self.expect(b")")])
        if self.at(b"{"):
            return self.parse_concatenation()
        raise self.error("expression")

    def parse_concatenation(self) -> Node:
        node = Node(NodeKind.CONCAT, [self.take(), self.parse_expr()])
        if self.at(b"{"):
            node.children.append(self.parse_concatenation())
        else:
            while self.at(b","):
                node.children.append(self.take())
                node.children.append(self.parse_expr())
        node.children.append(self.expect(b"}"))
        return node

    def parse_arguments(self) -> Node:
        node = Node(NodeKind.PORT_LIST, [self.expect(b"(")])
        if not self.at(b")"):
            while True:
                node.children.append(self.parse_expr())
                if not self.at(b","):
                    break
                node.children.append(self.take())
        node.children.append(self.expect(b")"))
        return node


def parse(tokens: List[LexToken]) -> Ast:
    """
    Parse a lexed token stream into an AST.

    Trivia tokens are skipped; every other token ends up as exactly one leaf.

    Raises:
        VerilogSyntaxError: with the offending span and what was expected
    """
    return Ast(_Parser(tokens).parse_source_text())


# The constructs every significant-token set carries.
MANDATORY_CONSTRUCTS: FrozenSet[bytes] = frozenset(
    w.encode()
    for w in "module endmodule input output wire reg assign always posedge negedge begin end if else case endcase".split()
)
DEFAULT_SUPPLEMENTAL: FrozenSet[bytes] = MANDATORY_CONSTRUCTS | frozenset(
    w.encode()
    for w in """
    inout integer parameter localparam genvar initial default casez casex for
    while generate endgenerate function endfunction task endtask or signed
    """.split()
)
DEFAULT_CRITICAL_NONTERMINALS: FrozenSet[NodeKind] = frozenset(
    {
        NodeKind.MODULE_DECL,
        NodeKind.PORT_DECL,
        NodeKind.DECL,
        NodeKind.PARAM_DECL,
        NodeKind.ASSIGN_STMT,
        NodeKind.ALWAYS_BLOCK,
        NodeKind.INITIAL_BLOCK,
        NodeKind.SEQ_BLOCK,
        NodeKind.IF_STMT,
        NodeKind.CASE_STMT,
        NodeKind.LOOP_STMT,
        NodeKind.EVENT_CONTROL,
        NodeKind.EVENT_EXPR,
        NodeKind.GENERATE_BLOCK,
        NodeKind.FUNCTION_DECL,
        NodeKind.TASK_DECL,
    }
)


@dataclass(frozen=True)
class SignificantTokenSet:
    keywords: FrozenSet[bytes]
    operator_classes: FrozenSet[bytes]
    includes_identifiers: bool = True
    includes_literals: bool = True

    def is_significant(self, tok: LexToken) -> bool:
        kind = tok.kind
        if kind is TokenKind.KEYWORD:
            return tok.text in self.keywords
        if kind is TokenKind.IDENTIFIER:
            return self.includes_identifiers
        if kind in (TokenKind.NUMBER, TokenKind.STRING):
            return self.includes_literals
        if kind in (TokenKind.OPERATOR, TokenKind.PUNCTUATION):
            return tok.text in self.operator_classes
        # Directives are opaque units and always end a fragment.
        return kind is TokenKind.DIRECTIVE

    def to_dict(self) -> dict:
        return {
            "keywords": sorted(k.decode() for k in self.keywords),
            "operator_classes": sorted(o.decode() for o in self.operator_classes),
            "includes_identifiers": self.includes_identifiers,
            "includes_literals": self.includes_literals,
        }


def extract_significant_tokens(
    ast: Ast,
    critical: Iterable[NodeKind] = DEFAULT_CRITICAL_NONTERMINALS,
    supplemental: Optional[Iterable[bytes]] = None,
) -> SignificantTokenSet:
    """
    Collect the syntactically significant tokens of a parsed file.

    Args:
        ast: Parsed source
        critical: Non-terminal kinds whose heading token is significant
        supplemental: Extra constructs to include; None means the default
            supplemental list. The mandatory constructs are always present.

    Returns:
        SignificantTokenSet with identifiers and literals flagged significant
    """
    critical = frozenset(critical)
    keywords = set(MANDATORY_CONSTRUCTS)
    keywords.update(DEFAULT_SUPPLEMENTAL if supplemental is None else supplemental)
    operators = set()

    def add(tok: LexToken) -> None:
        if tok.kind is TokenKind.KEYWORD:
            keywords.add(tok.text)
        elif tok.kind in (TokenKind.OPERATOR, TokenKind.PUNCTUATION):
            operators.add(tok.text)

    for node in ast.root.walk():
        if node.token is not None:
            add(node.token)
        elif node.symbol in critical:
            head = node.first_token()
            if head is not None:
                add(head)
    return SignificantTokenSet(frozenset(keywords), frozenset(operators))


def lexical_significant_tokens() -> SignificantTokenSet:
    """Every keyword, operator and punctuation mark; used when a file does not parse."""
    return SignificantTokenSet(KEYWORDS | MANDATORY_CONSTRUCTS, frozenset(OPERATORS + PUNCTUATION))


def default_significant_tokens(source: bytes) -> SignificantTokenSet:
    try:
        return extract_significant_tokens(parse(lex(source)))
    except VerilogSyntaxError as e:
        logger.debug(f"Falling back to lexical significant tokens: {e}")
        return lexical_significant_tokens()


class FragmentKind(str, Enum):
    KEYWORD = "Keyword"
    IDENTIFIER = "Identifier"
    OPERATOR = "Operator"
    LITERAL = "Literal"
    PUNCTUATION = "Punctuation"
    TRIVIA = "Trivia"


_FRAGMENT_KIND = {
    TokenKind.KEYWORD: FragmentKind.KEYWORD,
    TokenKind.DIRECTIVE: FragmentKind.KEYWORD,
    TokenKind.IDENTIFIER: FragmentKind.IDENTIFIER,
    TokenKind.OPERATOR: FragmentKind.OPERATOR,
    TokenKind.NUMBER: FragmentKind.LITERAL,
    TokenKind.STRING: FragmentKind.LITERAL,
    TokenKind.PUNCTUATION: FragmentKind.PUNCTUATION,
}


@dataclass(frozen=True)
class Fragment:
    text: bytes
    kind: FragmentKind
    span: Span
    core: Optional[Span] = None

    def to_dict(self) -> dict:
        return {
            "text": self.text.decode("utf-8", errors="replace"),
            "kind": self.kind.value,
            "span": list(self.span),
            "core": list(self.core) if self.core else None,
        }


@dataclass(frozen=True)
class FragmentedCode:
    fragments: Tuple[Fragment, ...]

    @property
    def source(self) -> bytes:
        return b"".join(f.text for f in self.fragments)

    @property
    def texts(self) -> List[bytes]:
        return [f.text for f in self.fragments]

    def __len__(self) -> int:
        return len(self.fragments)

    def __iter__(self) -> Iterator[Fragment]:
        return iter(self.fragments)

    def to_dict(self) -> List[dict]:
        return [f.to_dict() for f in self.fragments]


def segment(source: bytes, sig: SignificantTokenSet) -> FragmentedCode:
    """
    Cut source into fragments that each end right after a significant token.

    Whitespace and comments attach to the preceding fragment (leading trivia
    of the file goes to the first fragment). Tokens that are not significant
    join the fragment of the next significant token.

    Raises:
        LexError: propagated from lex
    """
    tokens = lex(source)
    fragments: List[Fragment] = []
    pending: List[LexToken] = []

    def flush(core: Optional[LexToken], kind: FragmentKind) -> None:
        start = pending[0].span[0]
        end = pending[-1].span[1]
        fragments.append(Fragment(source[start:end], kind, (start, end), core.span if core else None))
        pending.clear()

    def extend_last(tok: LexToken) -> None:
        last = fragments[-1]
        fragments[-1] = Fragment(last.text + tok.text, last.kind, (last.span[0], tok.span[1]), last.core)

    for tok in tokens:
        if tok.is_trivia:
            if fragments and not pending:
                extend_last(tok)
            else:
                pending.append(tok)
            continue
        pending.append(tok)
        if sig.is_significant(tok):
            flush(tok, _FRAGMENT_KIND[tok.kind])

    if pending:
        cores = [t for t in pending if not t.is_trivia]
        if cores:
            flush(cores[-1], _FRAGMENT_KIND[cores[-1].kind])
        elif fragments:
            for tok in list(pending):
                extend_last(tok)
            pending.clear()
        else:
            flush(None, FragmentKind.TRIVIA)
    return FragmentedCode(tuple(fragments))


@dataclass
class SyntaxReport:
    ok: bool
    diagnostics: List[VerispecError] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "diagnostics": [
                d.to_dict() if isinstance(d, VerilogSyntaxError) else {"message": str(d)} for d in self.diagnostics
            ],
        }


def syntax_check(source: bytes) -> SyntaxReport:
    """Accept/reject a source file; lexer and parser errors come back as diagnostics."""
    try:
        parse(lex(source))
    except (LexError, VerilogSyntaxError) as e:
        return SyntaxReport(ok=False, diagnostics=[e])
    return SyntaxReport(ok=True)


def dump_ast(source: bytes) -> dict:
    return parse(lex(source)).to_dict()


def dump_fragments(source: bytes, sig: Optional[SignificantTokenSet] = None) -> List[dict]:
    sig = sig or default_significant_tokens(source)
    return segment(source, sig).to_dict()


def comment_bytes(tokens: Iterable[LexToken]) -> Tuple[int, int]:
    """Return (comment bytes, non-whitespace bytes) of a token stream."""
    comments = 0
    content = 0
    for tok in tokens:
        if tok.kind is TokenKind.WHITESPACE:
            continue
        size = tok.span[1] - tok.span[0]
        content += size
        if tok.kind is TokenKind.COMMENT:
            comments += size
    return comments, content
