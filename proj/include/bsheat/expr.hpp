#pragma once

// Tiny expression grammar for data formulas in configs:
//   expr   := term (('+'|'-') term)*
//   term   := unary (('*'|'/') unary)*
//   unary  := '-' unary | power
//   power  := primary ('^' unary)?
//   primary:= number | variable | pi | sin(e) | cos(e) | exp(e) | tanh(e) | (e)
// Variables are fixed at compile time (x, t, w for fields; y for scalar
// nonlinearities). Anything fancier belongs in user code, not configs.

#include <cctype>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"

namespace bsheat {

class Expr {
public:
    double eval(std::span<const double> vars) const { return root_->eval(vars); }

    static Expr parse(const std::string& text, const std::vector<std::string>& variables);

private:
    struct Node {
        virtual ~Node() = default;
        virtual double eval(std::span<const double> vars) const = 0;
    };
    using NodePtr = std::unique_ptr<Node>;

    struct Constant final : Node {
        double value;
        explicit Constant(double v) : value(v) {}
        double eval(std::span<const double>) const override { return value; }
    };
    struct Variable final : Node {
        std::size_t index;
        explicit Variable(std::size_t i) : index(i) {}
        double eval(std::span<const double> vars) const override { return vars[index]; }
    };
    struct Unary final : Node {
        double (*fn)(double);
        NodePtr arg;
        Unary(double (*f)(double), NodePtr a) : fn(f), arg(std::move(a)) {}
        double eval(std::span<const double> vars) const override {
            return fn(arg->eval(vars));
        }
    };
    struct Binary final : Node {
        char op;
        NodePtr lhs, rhs;
        Binary(char o, NodePtr l, NodePtr r) : op(o), lhs(std::move(l)), rhs(std::move(r)) {}
        double eval(std::span<const double> vars) const override {
            const double a = lhs->eval(vars);
            const double b = rhs->eval(vars);
            switch (op) {
                case '+': return a + b;
                case '-': return a - b;
                case '*': return a * b;
                case '/': return a / b;
                default: return std::pow(a, b);
            }
        }
    };

    class Parser {
    public:
        Parser(const std::string& text, const std::vector<std::string>& variables)
            : text_(text), vars_(variables) {}

        NodePtr run() {
            NodePtr e = expr();
            skip_ws();
            if (pos_ != text_.size()) fail("unexpected trailing input");
            return e;
        }

    private:
        [[noreturn]] void fail(const std::string& what) const {
            throw config_error("formula error at position " + std::to_string(pos_) +
                               " in \"" + text_ + "\": " + what);
        }
        void skip_ws() {
            while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
                ++pos_;
        }
        bool consume(char c) {
            skip_ws();
            if (pos_ < text_.size() && text_[pos_] == c) {
                ++pos_;
                return true;
            }
            return false;
        }
        NodePtr expr() {
            NodePtr lhs = term();
            for (;;) {
                if (consume('+'))
                    lhs = std::make_unique<Binary>('+', std::move(lhs), term());
                else if (consume('-'))
                    lhs = std::make_unique<Binary>('-', std::move(lhs), term());
                else
                    return lhs;
            }
        }
        NodePtr term() {
            NodePtr lhs = unary();
            for (;;) {
                if (consume('*'))
                    lhs = std::make_unique<Binary>('*', std::move(lhs), unary());
                else if (consume('/'))
                    lhs = std::make_unique<Binary>('/', std::move(lhs), unary());
                else
                    return lhs;
            }
        }
        NodePtr unary() {
            if (consume('-'))
                return std::make_unique<Binary>('-', std::make_unique<Constant>(0.0), unary());
            return power();
        }
        NodePtr power() {
            NodePtr base = primary();
            if (consume('^'))
                return std::make_unique<Binary>('^', std::move(base), unary());
            return base;
        }
        NodePtr primary() {
            skip_ws();
            if (pos_ >= text_.size()) fail("unexpected end of formula");
            const char c = text_[pos_];
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
                std::size_t used = 0;
                double v = 0.0;
                try {
                    v = std::stod(text_.substr(pos_), &used);
                } catch (const std::exception&) {
                    fail("bad number");
                }
                pos_ += used;
                return std::make_unique<Constant>(v);
            }
            if (consume('(')) {
                NodePtr e = expr();
                if (!consume(')')) fail("missing ')'");
                return e;
            }
            if (std::isalpha(static_cast<unsigned char>(c))) {
                std::size_t end = pos_;
                while (end < text_.size() &&
                       std::isalnum(static_cast<unsigned char>(text_[end])))
                    ++end;
                const std::string name = text_.substr(pos_, end - pos_);
                pos_ = end;
                if (name == "pi") return std::make_unique<Constant>(3.14159265358979323846);
                for (std::size_t i = 0; i < vars_.size(); ++i)
                    if (vars_[i] == name) return std::make_unique<Variable>(i);
                double (*fn)(double) = nullptr;
                if (name == "sin") fn = [](double v) { return std::sin(v); };
                else if (name == "cos") fn = [](double v) { return std::cos(v); };
                else if (name == "exp") fn = [](double v) { return std::exp(v); };
                else if (name == "tanh") fn = [](double v) { return std::tanh(v); };
                if (fn == nullptr) fail("unknown identifier '" + name + "'");
                if (!consume('(')) fail("expected '(' after function name");
                NodePtr arg = expr();
                if (!consume(')')) fail("missing ')'");
                return std::make_unique<Unary>(fn, std::move(arg));
            }
            fail(std::string("unexpected character '") + c + "'");
        }

        const std::string& text_;
        const std::vector<std::string>& vars_;
        std::size_t pos_ = 0;
    };

    explicit Expr(NodePtr root) : root_(std::move(root)) {}
    std::shared_ptr<const Node> root_;
};

inline Expr Expr::parse(const std::string& text,
                        const std::vector<std::string>& variables) {
    Parser p(text, variables);
    return Expr(p.run());
}

}  // namespace bsheat
