#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nasmpc/errors.hpp"
#include "nasmpc/expr.hpp"

namespace nasmpc {

/// Parsed vehicle ODE specification. Immutable after construction; safe to
/// share read-only across threads.
struct ModelSpec {
    std::vector<std::string> state_names;  // first five fixed: x, y, phi, v, delta
    std::vector<std::string> input_names;  // first two fixed: a, ddelta
    std::vector<std::string> param_names;
    std::vector<double> param_values;
    std::vector<ExprAst> derivatives;  // one per state, in state order

    int n() const { return static_cast<int>(state_names.size()); }
    int m() const { return static_cast<int>(input_names.size()); }
};

/// Evaluates dz/dt at (z, u). Pure; inputs are not mutated.
inline void eval_ode(const ModelSpec& model, std::span<const double> z,
                     std::span<const double> u, std::span<double> dzdt) {
    for (std::size_t i = 0; i < model.derivatives.size(); ++i) {
        double d = model.derivatives[i].eval(z, u);
        if (!std::isfinite(d))
            throw NonFiniteResult("non-finite derivative for state '" + model.state_names[i] + "'");
        dzdt[i] = d;
    }
}

namespace detail {

struct Token {
    enum class Kind { Number, Ident, Op, End };
    Kind kind{};
    double number = 0.0;
    std::string text;
    char op = 0;
    int line = 0, col = 0;
};

class Lexer {
public:
    Lexer(std::string_view src, int line) : src_(src), line_(line) {}

    Token next() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        Token t;
        t.line = line_;
        t.col = static_cast<int>(pos_) + 1;
        if (pos_ >= src_.size()) {
            t.kind = Token::Kind::End;
            return t;
        }
        char c = src_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t end = 0;
            try {
                t.number = std::stod(std::string(src_.substr(pos_)), &end);
            } catch (const std::exception&) {
                throw SyntaxError("malformed number", line_, t.col);
            }
            pos_ += end;
            t.kind = Token::Kind::Number;
            return t;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = pos_;
            while (pos_ < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
                ++pos_;
            t.kind = Token::Kind::Ident;
            t.text = std::string(src_.substr(start, pos_ - start));
            return t;
        }
        if (std::string_view("+-*/^(),").find(c) != std::string_view::npos) {
            ++pos_;
            t.kind = Token::Kind::Op;
            t.op = c;
            return t;
        }
        throw SyntaxError(std::string("unexpected character '") + c + "'", line_, t.col);
    }

private:
    std::string_view src_;
    std::size_t pos_ = 0;
    int line_;
};

inline std::optional<Func> lookup_func(const std::string& name) {
    static const std::array<Func, 15> all = {
        Func::Sin, Func::Cos, Func::Tan, Func::Asin, Func::Acos, Func::Atan, Func::Atan2,
        Func::Sqrt, Func::Exp, Func::Log, Func::Fabs, Func::Pow, Func::Tanh, Func::Sinh, Func::Cosh};
    for (Func f : all)
        if (name == func_name(f)) return f;
    return std::nullopt;
}

/// Recursive-descent parser for the right-hand side of a dot() equation.
/// Precedence: unary minus > power > mult/div > add/sub, left-associative.
class ExprParser {
public:
    ExprParser(std::string_view src, int line, const ModelSpec& sym)
        : lex_(src, line), sym_(sym) {
        advance();
    }

    ExprAst parse() {
        ExprAst ast;
        ast.root = parse_addsub(ast);
        if (cur_.kind != Token::Kind::End)
            throw SyntaxError("trailing input after expression", cur_.line, cur_.col);
        return ast;
    }

private:
    Lexer lex_;
    Token cur_;
    const ModelSpec& sym_;

    void advance() { cur_ = lex_.next(); }

    bool accept_op(char c) {
        if (cur_.kind == Token::Kind::Op && cur_.op == c) {
            advance();
            return true;
        }
        return false;
    }

    void expect_op(char c) {
        if (!accept_op(c))
            throw SyntaxError(std::string("expected '") + c + "'", cur_.line, cur_.col);
    }

    int add(ExprAst& ast, ExprNode n) {
        ast.nodes.push_back(std::move(n));
        return static_cast<int>(ast.nodes.size()) - 1;
    }

    int parse_addsub(ExprAst& ast) {
        int lhs = parse_muldiv(ast);
        for (;;) {
            if (accept_op('+')) {
                int rhs = parse_muldiv(ast);
                lhs = add(ast, {.kind = ExprNode::Kind::Add, .a = lhs, .b = rhs});
            } else if (accept_op('-')) {
                int rhs = parse_muldiv(ast);
                lhs = add(ast, {.kind = ExprNode::Kind::Sub, .a = lhs, .b = rhs});
            } else {
                return lhs;
            }
        }
    }

    int parse_muldiv(ExprAst& ast) {
        int lhs = parse_power(ast);
        for (;;) {
            if (accept_op('*')) {
                int rhs = parse_power(ast);
                lhs = add(ast, {.kind = ExprNode::Kind::Mul, .a = lhs, .b = rhs});
            } else if (accept_op('/')) {
                int rhs = parse_power(ast);
                lhs = add(ast, {.kind = ExprNode::Kind::Div, .a = lhs, .b = rhs});
            } else {
                return lhs;
            }
        }
    }

    int parse_power(ExprAst& ast) {
        int lhs = parse_unary(ast);
        while (accept_op('^')) {
            int rhs = parse_unary(ast);
            lhs = add(ast, {.kind = ExprNode::Kind::Pow, .a = lhs, .b = rhs});
        }
        return lhs;
    }

    int parse_unary(ExprAst& ast) {
        if (accept_op('-')) {
            int a = parse_unary(ast);
            return add(ast, {.kind = ExprNode::Kind::Neg, .a = a});
        }
        if (accept_op('+')) return parse_unary(ast);
        return parse_primary(ast);
    }

    int parse_primary(ExprAst& ast) {
        if (cur_.kind == Token::Kind::Number) {
            double v = cur_.number;
            advance();
            return add(ast, {.kind = ExprNode::Kind::Literal, .value = v});
        }
        if (accept_op('(')) {
            int e = parse_addsub(ast);
            expect_op(')');
            return e;
        }
        if (cur_.kind == Token::Kind::Ident) {
            std::string name = cur_.text;
            advance();
            if (cur_.kind == Token::Kind::Op && cur_.op == '(') {
                auto fn = lookup_func(name);
                if (!fn) throw UnknownIdentifier(name);
                advance();
                int a = parse_addsub(ast);
                int b = -1;
                if (func_arity(*fn) == 2) {
                    expect_op(',');
                    b = parse_addsub(ast);
                }
                expect_op(')');
                return add(ast, {.kind = ExprNode::Kind::Call, .a = a, .b = b, .fn = *fn});
            }
            return resolve(ast, name);
        }
        throw SyntaxError("expected expression", cur_.line, cur_.col);
    }

    int resolve(ExprAst& ast, const std::string& name) {
        auto find = [&](const std::vector<std::string>& names) -> int {
            auto it = std::find(names.begin(), names.end(), name);
            return it == names.end() ? -1 : static_cast<int>(it - names.begin());
        };
        if (int i = find(sym_.state_names); i >= 0)
            return add(ast, {.kind = ExprNode::Kind::StateVar, .slot = i, .name = name});
        if (int i = find(sym_.input_names); i >= 0)
            return add(ast, {.kind = ExprNode::Kind::InputVar, .slot = i, .name = name});
        if (int i = find(sym_.param_names); i >= 0)
            return add(ast, {.kind = ExprNode::Kind::ParamVar, .slot = i, .name = name});
        throw UnknownIdentifier(name);
    }
};

inline std::string strip(std::string_view s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_commas(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t comma = s.find(',', start);
        std::string item = strip(s.substr(start, comma == std::string_view::npos ? comma : comma - start));
        if (!item.empty()) out.push_back(item);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace detail

/// Parses the vehicle model text format:
///   states: x, y, phi, v, delta[, ...]
///   inputs: a, ddelta[, ...]
///   parameters: name=value, ...        (optional, may be empty)
///   dot(<state>)=<expr>;               (one per state)
/// '#' or '//' starts a comment to end of line.
inline ModelSpec parse_model(const std::string& text) {
    if (text.empty()) throw SyntaxError("empty model file", 1, 1);

    ModelSpec spec;
    std::vector<bool> have_derivative;
    bool saw_states = false, saw_inputs = false;

    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        if (auto h = raw.find('#'); h != std::string::npos) raw.erase(h);
        if (auto h = raw.find("//"); h != std::string::npos) raw.erase(h);
        std::string line = detail::strip(raw);
        if (line.empty()) continue;

        auto starts_with = [&](std::string_view prefix) {
            return line.size() >= prefix.size() && line.compare(0, prefix.size(), prefix) == 0;
        };

        if (starts_with("states:")) {
            spec.state_names = detail::split_commas(std::string_view(line).substr(7));
            saw_states = true;
        } else if (starts_with("inputs:")) {
            spec.input_names = detail::split_commas(std::string_view(line).substr(7));
            saw_inputs = true;
        } else if (starts_with("parameters:")) {
            for (const std::string& item : detail::split_commas(std::string_view(line).substr(11))) {
                auto eq = item.find('=');
                if (eq == std::string::npos)
                    throw SyntaxError("parameter without '=': " + item, lineno, 1);
                std::string name = detail::strip(std::string_view(item).substr(0, eq));
                std::string val = detail::strip(std::string_view(item).substr(eq + 1));
                try {
                    spec.param_values.push_back(std::stod(val));
                } catch (const std::exception&) {
                    throw SyntaxError("malformed parameter value: " + val, lineno, 1);
                }
                spec.param_names.push_back(name);
            }
        } else if (starts_with("dot(")) {
            if (!saw_states || !saw_inputs)
                throw SyntaxError("dot() before states/inputs declaration", lineno, 1);
            if (have_derivative.empty()) {
                // validate mandatory names once, before parsing equations
                static const char* kStates[] = {"x", "y", "phi", "v", "delta"};
                static const char* kInputs[] = {"a", "ddelta"};
                if (spec.state_names.size() < 5)
                    throw MandatoryStateMissing("model must declare at least 5 states");
                for (int i = 0; i < 5; ++i)
                    if (spec.state_names[static_cast<std::size_t>(i)] != kStates[i])
                        throw MandatoryStateMissing(
                            "state " + std::to_string(i + 1) + " must be '" + kStates[i] + "'");
                if (spec.input_names.size() < 2)
                    throw MandatoryStateMissing("model must declare at least 2 inputs");
                for (int i = 0; i < 2; ++i)
                    if (spec.input_names[static_cast<std::size_t>(i)] != kInputs[i])
                        throw MandatoryStateMissing(
                            "input " + std::to_string(i + 1) + " must be '" + kInputs[i] + "'");
                have_derivative.assign(spec.state_names.size(), false);
                spec.derivatives.resize(spec.state_names.size());
            }
            auto close = line.find(')');
            if (close == std::string::npos) throw SyntaxError("missing ')'", lineno, 1);
            std::string state = detail::strip(std::string_view(line).substr(4, close - 4));
            auto eq = line.find('=', close);
            if (eq == std::string::npos) throw SyntaxError("missing '='", lineno, 1);
            if (line.back() != ';') throw SyntaxError("missing ';'", lineno, static_cast<int>(line.size()));

            auto it = std::find(spec.state_names.begin(), spec.state_names.end(), state);
            if (it == spec.state_names.end()) throw UnknownIdentifier(state);
            auto idx = static_cast<std::size_t>(it - spec.state_names.begin());
            if (have_derivative[idx]) throw DuplicateDerivative(state);

            std::string rhs = line.substr(eq + 1, line.size() - eq - 2);
            detail::ExprParser parser(rhs, lineno, spec);
            spec.derivatives[idx] = parser.parse();
            spec.derivatives[idx].compile(spec.param_values);
            have_derivative[idx] = true;
        } else {
            throw SyntaxError("unrecognized line: " + line, lineno, 1);
        }
    }

    if (!saw_states || !saw_inputs)
        throw SyntaxError("model must declare states and inputs", lineno, 1);
    if (have_derivative.empty())
        throw MissingDerivative(spec.state_names.empty() ? "?" : spec.state_names.front());
    for (std::size_t i = 0; i < have_derivative.size(); ++i)
        if (!have_derivative[i]) throw MissingDerivative(spec.state_names[i]);
    return spec;
}

/// Renders a ModelSpec back to DSL text. Re-parsing the result yields a
/// semantically identical model.
inline std::string serialize_model(const ModelSpec& spec) {
    std::ostringstream out;
    out << "states:";
    for (std::size_t i = 0; i < spec.state_names.size(); ++i)
        out << (i ? ", " : " ") << spec.state_names[i];
    out << "\ninputs:";
    for (std::size_t i = 0; i < spec.input_names.size(); ++i)
        out << (i ? ", " : " ") << spec.input_names[i];
    out << "\nparameters:";
    for (std::size_t i = 0; i < spec.param_names.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", spec.param_values[i]);
        out << (i ? ", " : " ") << spec.param_names[i] << "=" << buf;
    }
    out << "\n";
    for (std::size_t i = 0; i < spec.state_names.size(); ++i)
        out << "dot(" << spec.state_names[i] << ")=" << spec.derivatives[i].to_text() << ";\n";
    return out.str();
}

/// Kinematic bicycle model text, with lflr = l_f + l_r and
/// lrOlflr = l_r / (l_f + l_r).
inline const char* kbm_text() {
    return
        "states: x, y, phi, v, delta\n"
        "inputs: a, ddelta\n"
        "parameters: lflr=2.843, lrOlflr=0.6113\n"
        "dot(x)=v*cos(phi+atan(lrOlflr*tan(delta)));\n"
        "dot(y)=v*sin(phi+atan(lrOlflr*tan(delta)));\n"
        "dot(phi)=v*cos(atan(lrOlflr*tan(delta)))/lflr*tan(delta);\n"
        "dot(v)=a;\n"
        "dot(delta)=ddelta;\n";
}

/// Built-in kinematic bicycle model (identical to parse_model(kbm_text())).
inline ModelSpec builtin_kbm() { return parse_model(kbm_text()); }

}  // namespace nasmpc
