"""Tests for the Verilog lexer, parser, significant tokens and segmentation."""

import random

import pytest

from verispec.errors import LexError, VerilogSyntaxError
from verispec.verilog_syntax import (
    MANDATORY_CONSTRUCTS,
    FragmentKind,
    NodeKind,
    SignificantTokenSet,
    TokenKind,
    comment_bytes,
    default_significant_tokens,
    dump_ast,
    dump_fragments,
    extract_significant_tokens,
    lex,
    lexical_significant_tokens,
    module_items,
    parse,
    segment,
    syntax_check,
)


def _non_trivia(tokens):
    return [t for t in tokens if not t.is_trivia]


class TestLex:
    def test_assign_statement_kinds(self):
        kinds = [t.kind for t in lex(b"assign y = a & b;")]
        assert kinds == [
            TokenKind.KEYWORD,
            TokenKind.WHITESPACE,
            TokenKind.IDENTIFIER,
            TokenKind.WHITESPACE,
            TokenKind.OPERATOR,
            TokenKind.WHITESPACE,
            TokenKind.IDENTIFIER,
            TokenKind.WHITESPACE,
            TokenKind.OPERATOR,
            TokenKind.WHITESPACE,
            TokenKind.IDENTIFIER,
            TokenKind.PUNCTUATION,
        ]

    def test_empty_input(self):
        assert lex(b"") == []

    def test_based_literal_is_one_token(self):
        tokens = lex(b"4'b0010")
        assert len(tokens) == 1
        assert tokens[0].kind is TokenKind.NUMBER
        assert tokens[0].text == b"4'b0010"

    def test_comments_and_directives_are_single_tokens(self):
        source = b"`define WIDTH 8\n// line\n/* block\n comment */ wire w;"
        tokens = lex(source)
        assert tokens[0].kind is TokenKind.DIRECTIVE
        assert tokens[0].text == b"`define WIDTH 8"
        comments = [t.text for t in tokens if t.kind is TokenKind.COMMENT]
        assert comments == [b"// line", b"/* block\n comment */"]

    def test_maximal_munch_operators(self):
        texts = [t.text for t in lex(b"a<=b===c>>>1") if t.kind is TokenKind.OPERATOR]
        assert texts == [b"<=", b"===", b">>>"]

    def test_unterminated_block_comment(self):
        with pytest.raises(LexError) as info:
            lex(b"wire a; /* never closed")
        assert info.value.offset == 8

    def test_unterminated_string(self):
        with pytest.raises(LexError):
            lex(b'initial $display("oops);')

    def test_spans_are_contiguous_and_total(self, counter_source):
        tokens = lex(counter_source)
        assert b"".join(t.text for t in tokens) == counter_source
        position = 0
        for tok in tokens:
            assert tok.span[0] == position
            position = tok.span[1]
        assert position == len(counter_source)

    def test_random_printable_input_keeps_every_byte(self):
        rng = random.Random(7)
        alphabet = b"abc_01 \n\t+-*=<>!&|^~?:;,.()[]{}#@"
        for _ in range(50):
            source = bytes(rng.choice(alphabet) for _ in range(rng.randint(0, 200)))
            assert b"".join(t.text for t in lex(source)) == source


class TestParse:
    def test_minimal_module(self):
        ast = parse(lex(b"module m; endmodule"))
        assert ast.root.symbol is NodeKind.SOURCE_TEXT
        assert len(ast.modules) == 1
        assert ast.modules[0].symbol is NodeKind.MODULE_DECL
        assert module_items(ast.modules[0]) == []

    def test_missing_expression_reports_endmodule(self):
        with pytest.raises(VerilogSyntaxError) as info:
            parse(lex(b"module m; assign endmodule"))
        error = info.value
        assert error.expected == "expression"
        assert error.found == b"endmodule"
        assert error.span == (17, 26)

    def test_counter_leaves_match_token_stream(self, counter_source):
        tokens = lex(counter_source)
        ast = parse(tokens)
        assert ast.leaves() == _non_trivia(tokens)

    def test_counter_structure(self, counter_source):
        ast = parse(lex(counter_source))
        symbols = {node.symbol for node in ast.root.walk()}
        assert {NodeKind.ALWAYS_BLOCK, NodeKind.IF_STMT, NodeKind.NONBLOCKING_ASSIGN, NodeKind.EVENT_EXPR} <= symbols

    def test_operator_precedence(self):
        ast = parse(lex(b"module m; assign y = a + b * c; endmodule"))
        assign = module_items(ast.modules[0])[0]
        expr = assign.children[3]
        # a + (b * c): the top-level operator is '+'
        assert expr.symbol is NodeKind.EXPR
        assert expr.children[1].token.text == b"+"
        assert expr.children[2].children[1].token.text == b"*"

    @pytest.mark.parametrize(
        "source",
        [
            b"module m (input a, output y); assign #1 y = a; endmodule",
            b"module m (input a, output y); assign #(1, 2) y = a; endmodule",
            b"module m; wire #2 w; wire [3:0] #(1, 2, 3) bus; endmodule",
            b"module m (input clk, output reg [3:0] q = 0); endmodule",
            b"module m; genvar i; for (i = 0; i < 4; i = i + 1) begin : g assign w[i] = 1'b0; end endmodule",
            b"module m; parameter W = 8; if (W > 4) begin : wide wire x; end else begin : narrow wire y; end endmodule",
            b"module m (input clk); always @(posedge clk) begin\n`ifdef SIM\n$display(\"tick\");\n`else\nx <= 1;\n`endif\nend endmodule",
            b"module m (input [1:0] s); always @(*) case (s)\n`ifdef FULL\n2'b11: y = 1;\n`endif\ndefault: y = 0;\nendcase endmodule",
        ],
    )
    def test_verilog_2005_constructs(self, source):
        tokens = lex(source)
        assert parse(tokens).leaves() == _non_trivia(tokens)
        assert syntax_check(source).ok

    def test_net_delay_is_a_delay_control(self):
        decl = module_items(parse(lex(b"module m; wire #2 w; endmodule")).modules[0])[0]
        assert decl.children[1].symbol is NodeKind.DELAY_CONTROL

    def test_port_initializer_needs_a_direction(self):
        with pytest.raises(VerilogSyntaxError):
            parse(lex(b"module m (q = 0); endmodule"))

    def test_macro_use_is_not_a_statement(self):
        with pytest.raises(VerilogSyntaxError):
            parse(lex(b"module m; always @(*) begin `MY_MACRO end endmodule"))

    def test_every_valid_corpus_fixture_parses(self, corpus_dir):
        for path in sorted(corpus_dir.glob("*.v")):
            if path.name.startswith("bad_"):
                continue
            tokens = lex(path.read_bytes())
            assert parse(tokens).leaves() == _non_trivia(tokens), path.name


class TestSignificantTokens:
    def test_trivial_module_contains_keywords(self):
        sig = extract_significant_tokens(parse(lex(b"module m; endmodule")))
        assert {b"module", b"endmodule"} <= sig.keywords
        assert sig.includes_identifiers and sig.includes_literals

    def test_counter_contains_posedge_and_nonblocking(self, counter_source):
        sig = extract_significant_tokens(parse(lex(counter_source)))
        assert b"posedge" in sig.keywords
        assert b"<=" in sig.operator_classes

    def test_empty_supplemental_keeps_mandatory(self):
        sig = extract_significant_tokens(parse(lex(b"module m; endmodule")), supplemental=())
        assert MANDATORY_CONSTRUCTS <= sig.keywords

    def test_unparseable_source_falls_back_to_lexical_set(self):
        assert default_significant_tokens(b"module m;") == lexical_significant_tokens()

    def test_directives_are_always_significant(self):
        sig = SignificantTokenSet(frozenset(), frozenset(), False, False)
        directive = lex(b"`timescale 1ns/1ps")[0]
        assert sig.is_significant(directive)


class TestSegment:
    def test_assign_fragment_cores(self):
        source = b"assign y = a;"
        fc = segment(source, lexical_significant_tokens())
        assert [f.text.strip() for f in fc] == [b"assign", b"y", b"=", b"a", b";"]
        assert fc.source == source

    def test_single_identifier(self):
        fc = segment(b"x", lexical_significant_tokens())
        assert fc.texts == [b"x"]
        assert fc.fragments[0].kind is FragmentKind.IDENTIFIER

    def test_trivia_attaches_to_previous_fragment(self):
        fc = segment(b"wire a; // note\nwire b;", lexical_significant_tokens())
        assert fc.texts[2] == b"; // note\n"

    def test_leading_trivia_joins_first_fragment(self):
        fc = segment(b"  // header\nmodule", lexical_significant_tokens())
        assert fc.texts == [b"  // header\nmodule"]

    def test_only_trivia_is_one_trivia_fragment(self):
        fc = segment(b"   ", lexical_significant_tokens())
        assert len(fc) == 1
        assert fc.fragments[0].kind is FragmentKind.TRIVIA

    def test_counter_fragment_count_equals_significant_tokens(self, counter_source):
        sig = default_significant_tokens(counter_source)
        fc = segment(counter_source, sig)
        significant = [t for t in parse(lex(counter_source)).leaves() if sig.is_significant(t)]
        assert len(fc) == len(significant)

    def test_non_significant_tokens_join_next_fragment(self):
        sig = SignificantTokenSet(frozenset({b"assign"}), frozenset({b";"}), True, True)
        fc = segment(b"assign y = a;", sig)
        assert fc.texts == [b"assign ", b"y ", b"= a", b";"]

    def test_fragments_hold_one_significant_token(self, corpus_dir):
        for path in sorted(corpus_dir.glob("*.v")):
            source = path.read_bytes()
            sig = default_significant_tokens(source)
            fc = segment(source, sig)
            assert fc.source == source, path.name
            for fragment in fc:
                assert fragment.text
                assert sum(1 for t in lex(fragment.text) if sig.is_significant(t)) <= 1


class TestSyntaxCheck:
    def test_minimal_module_ok(self):
        assert syntax_check(b"module m; endmodule").ok

    def test_missing_endmodule(self):
        report = syntax_check(b"module m;")
        assert not report.ok
        assert report.diagnostics[0].expected == "'endmodule'"

    def test_lex_errors_are_diagnostics(self):
        report = syntax_check(b"module m; /* open")
        assert not report.ok
        assert isinstance(report.diagnostics[0], LexError)
        assert report.to_dict()["diagnostics"][0]["message"]

    def test_corpus_fixture_has_three_faults(self, corpus_dir):
        results = {p.name: syntax_check(p.read_bytes()).ok for p in sorted(corpus_dir.glob("*.v"))}
        assert len(results) == 20
        assert sum(results.values()) == 17
        assert {name for name, ok in results.items() if not ok} == {"bad_assign.v", "bad_begin.v", "bad_semicolon.v"}


class TestDumps:
    def test_dump_ast_is_json_ready(self):
        tree = dump_ast(b"module m; endmodule")
        assert tree["symbol"] == "SourceText"
        assert tree["children"][0]["symbol"] == "ModuleDecl"

    def test_dump_fragments_roundtrip(self, counter_source):
        dumped = dump_fragments(counter_source)
        assert "".join(f["text"] for f in dumped).encode() == counter_source

    def test_comment_bytes(self):
        comments, content = comment_bytes(lex(b"// ab\nwire w;"))
        assert comments == 5
        assert content == 5 + len(b"wire") + len(b"w") + len(b";")
