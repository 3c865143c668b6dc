#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nasmpc/errors.hpp"

namespace nasmpc {

/// Whitelisted math functions usable on the right-hand side of a model equation.
enum class Func : std::uint8_t {
    Sin, Cos, Tan, Asin, Acos, Atan, Atan2, Sqrt, Exp, Log, Fabs, Pow, Tanh, Sinh, Cosh
};

inline const char* func_name(Func f) {
    switch (f) {
        case Func::Sin: return "sin";
        case Func::Cos: return "cos";
        case Func::Tan: return "tan";
        case Func::Asin: return "asin";
        case Func::Acos: return "acos";
        case Func::Atan: return "atan";
        case Func::Atan2: return "atan2";
        case Func::Sqrt: return "sqrt";
        case Func::Exp: return "exp";
        case Func::Log: return "log";
        case Func::Fabs: return "fabs";
        case Func::Pow: return "pow";
        case Func::Tanh: return "tanh";
        case Func::Sinh: return "sinh";
        case Func::Cosh: return "cosh";
    }
    return "?";
}

inline int func_arity(Func f) {
    return (f == Func::Atan2 || f == Func::Pow) ? 2 : 1;
}

/// One node of a parsed expression tree. Nodes live in a flat pool inside
/// ExprAst and reference their children by pool index.
struct ExprNode {
    enum class Kind : std::uint8_t {
        Literal,   ///< value
        StateVar,  ///< slot = state index
        InputVar,  ///< slot = input index
        ParamVar,  ///< slot = parameter index
        Neg,       ///< a
        Add, Sub, Mul, Div, Pow,  ///< a, b
        Call       ///< fn(a[, b])
    };
    Kind kind{};
    double value = 0.0;
    int slot = -1;
    int a = -1;
    int b = -1;
    Func fn{};
    std::string name;  // identifier spelling, kept for serialization
};

/// Flattened postfix instruction; the tape is built once at parse time so
/// evaluation is allocation-free.
struct TapeOp {
    enum class Code : std::uint8_t {
        PushConst, PushState, PushInput, Neg, Add, Sub, Mul, Div, Pow, Call1, Call2
    };
    Code code{};
    double value = 0.0;
    int slot = -1;
    Func fn{};
};

class ExprAst {
public:
    std::vector<ExprNode> nodes;
    int root = -1;

    /// Compile the tree to a postfix tape, folding parameters to constants.
    void compile(std::span<const double> params) {
        tape_.clear();
        int depth = emit(root, params, 0);
        (void)depth;
    }

    /// Evaluate on the given state/input vectors. Pure; bit-identical for
    /// identical arguments.
    double eval(std::span<const double> z, std::span<const double> u) const {
        double stack[kMaxStack];
        int sp = 0;
        for (const TapeOp& op : tape_) {
            using C = TapeOp::Code;
            switch (op.code) {
                case C::PushConst: stack[sp++] = op.value; break;
                case C::PushState: stack[sp++] = z[static_cast<std::size_t>(op.slot)]; break;
                case C::PushInput: stack[sp++] = u[static_cast<std::size_t>(op.slot)]; break;
                case C::Neg: stack[sp - 1] = -stack[sp - 1]; break;
                case C::Add: --sp; stack[sp - 1] += stack[sp]; break;
                case C::Sub: --sp; stack[sp - 1] -= stack[sp]; break;
                case C::Mul: --sp; stack[sp - 1] *= stack[sp]; break;
                case C::Div: --sp; stack[sp - 1] /= stack[sp]; break;
                case C::Pow: --sp; stack[sp - 1] = std::pow(stack[sp - 1], stack[sp]); break;
                case C::Call1: stack[sp - 1] = call1(op.fn, stack[sp - 1]); break;
                case C::Call2: --sp; stack[sp - 1] = call2(op.fn, stack[sp - 1], stack[sp]); break;
            }
        }
        return stack[0];
    }

    /// Render back to DSL text (fully parenthesized).
    std::string to_text() const { return render(root); }

private:
    static constexpr int kMaxStack = 128;
    std::vector<TapeOp> tape_;

    static double call1(Func f, double x) {
        switch (f) {
            case Func::Sin: return std::sin(x);
            case Func::Cos: return std::cos(x);
            case Func::Tan: return std::tan(x);
            case Func::Asin: return std::asin(x);
            case Func::Acos: return std::acos(x);
            case Func::Atan: return std::atan(x);
            case Func::Sqrt: return std::sqrt(x);
            case Func::Exp: return std::exp(x);
            case Func::Log: return std::log(x);
            case Func::Fabs: return std::fabs(x);
            case Func::Tanh: return std::tanh(x);
            case Func::Sinh: return std::sinh(x);
            case Func::Cosh: return std::cosh(x);
            default: return 0.0;
        }
    }

    static double call2(Func f, double x, double y) {
        return f == Func::Atan2 ? std::atan2(x, y) : std::pow(x, y);
    }

    int emit(int idx, std::span<const double> params, int depth) {
        const ExprNode& n = nodes[static_cast<std::size_t>(idx)];
        using K = ExprNode::Kind;
        using C = TapeOp::Code;
        switch (n.kind) {
            case K::Literal:
                tape_.push_back({C::PushConst, n.value, -1, {}});
                return depth + 1;
            case K::StateVar:
                tape_.push_back({C::PushState, 0.0, n.slot, {}});
                return depth + 1;
            case K::InputVar:
                tape_.push_back({C::PushInput, 0.0, n.slot, {}});
                return depth + 1;
            case K::ParamVar:
                tape_.push_back({C::PushConst, params[static_cast<std::size_t>(n.slot)], -1, {}});
                return depth + 1;
            case K::Neg: {
                int d = emit(n.a, params, depth);
                tape_.push_back({C::Neg, 0.0, -1, {}});
                return d;
            }
            case K::Add: case K::Sub: case K::Mul: case K::Div: case K::Pow: {
                int d1 = emit(n.a, params, depth);
                int d2 = emit(n.b, params, depth + 1);
                if (d1 >= kMaxStack || d2 >= kMaxStack)
                    throw Error("expression too deep");
                C c = n.kind == K::Add ? C::Add
                    : n.kind == K::Sub ? C::Sub
                    : n.kind == K::Mul ? C::Mul
                    : n.kind == K::Div ? C::Div : C::Pow;
                tape_.push_back({c, 0.0, -1, {}});
                return std::max(d1, d2);
            }
            case K::Call: {
                if (func_arity(n.fn) == 1) {
                    int d = emit(n.a, params, depth);
                    tape_.push_back({C::Call1, 0.0, -1, n.fn});
                    return d;
                }
                int d1 = emit(n.a, params, depth);
                int d2 = emit(n.b, params, depth + 1);
                tape_.push_back({C::Call2, 0.0, -1, n.fn});
                return std::max(d1, d2);
            }
        }
        return depth;
    }

    std::string render(int idx) const {
        const ExprNode& n = nodes[static_cast<std::size_t>(idx)];
        using K = ExprNode::Kind;
        switch (n.kind) {
            case K::Literal: {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.17g", n.value);
                return buf;
            }
            case K::StateVar: case K::InputVar: case K::ParamVar:
                return n.name;
            case K::Neg: return "(-" + render(n.a) + ")";
            case K::Add: return "(" + render(n.a) + "+" + render(n.b) + ")";
            case K::Sub: return "(" + render(n.a) + "-" + render(n.b) + ")";
            case K::Mul: return "(" + render(n.a) + "*" + render(n.b) + ")";
            case K::Div: return "(" + render(n.a) + "/" + render(n.b) + ")";
            case K::Pow: return "(" + render(n.a) + "^" + render(n.b) + ")";
            case K::Call: {
                std::string s = std::string(func_name(n.fn)) + "(" + render(n.a);
                if (n.b >= 0) s += "," + render(n.b);
                return s + ")";
            }
        }
        return {};
    }
};

}  // namespace nasmpc
