#include "fbsee/expression.hpp"

#include <cctype>
#include <cmath>

namespace fbsee {

struct Expression::Node {
    enum class Kind { Number, Var, Unary, Binary, Call };
    Kind kind;
    double value = 0.0;     // Number
    int var = 0;            // Var: 0=t 1=W 2=x 3=x2
    char op = 0;            // Unary/Binary: + - * /
    int fn = 0;             // Call: 0=sin 1=cos 2=exp
    std::shared_ptr<const Node> lhs, rhs;

    double eval(double t, double w, double x, double x2) const {
        switch (kind) {
        case Kind::Number: return value;
        case Kind::Var:
            switch (var) {
            case 0: return t;
            case 1: return w;
            case 2: return x;
            default: return x2;
            }
        case Kind::Unary: {
            const double v = lhs->eval(t, w, x, x2);
            return op == '-' ? -v : v;
        }
        case Kind::Binary: {
            const double a = lhs->eval(t, w, x, x2);
            const double b = rhs->eval(t, w, x, x2);
            switch (op) {
            case '+': return a + b;
            case '-': return a - b;
            case '*': return a * b;
            default: return a / b;
            }
        }
        case Kind::Call: {
            const double v = lhs->eval(t, w, x, x2);
            switch (fn) {
            case 0: return std::sin(v);
            case 1: return std::cos(v);
            default: return std::exp(v);
            }
        }
        }
        return 0.0;
    }
};

namespace {

using NodePtr = std::shared_ptr<const Expression::Node>;
using Node = Expression::Node;

struct Parser {
    const std::string& text;
    size_t pos = 0;
    bool uses[4] = {false, false, false, false};

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError("expression error at position " + std::to_string(pos + 1) + ": " + what +
                          " (in \"" + text + "\")");
    }

    void skip_ws() {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }

    char peek() {
        skip_ws();
        return pos < text.size() ? text[pos] : '\0';
    }

    bool consume(char c) {
        if (peek() == c) {
            ++pos;
            return true;
        }
        return false;
    }

    NodePtr make_number(double v) {
        auto n = std::make_shared<Node>();
        n->kind = Node::Kind::Number;
        n->value = v;
        return n;
    }

    NodePtr parse_expr() {
        NodePtr lhs = parse_term();
        while (true) {
            const char c = peek();
            if (c != '+' && c != '-') return lhs;
            ++pos;
            auto n = std::make_shared<Node>();
            n->kind = Node::Kind::Binary;
            n->op = c;
            n->lhs = lhs;
            n->rhs = parse_term();
            lhs = n;
        }
    }

    NodePtr parse_term() {
        NodePtr lhs = parse_factor();
        while (true) {
            const char c = peek();
            if (c != '*' && c != '/') return lhs;
            ++pos;
            auto n = std::make_shared<Node>();
            n->kind = Node::Kind::Binary;
            n->op = c;
            n->lhs = lhs;
            n->rhs = parse_factor();
            lhs = n;
        }
    }

    NodePtr parse_factor() {
        const char c = peek();
        if (c == '-' || c == '+') {
            ++pos;
            auto n = std::make_shared<Node>();
            n->kind = Node::Kind::Unary;
            n->op = c;
            n->lhs = parse_factor();
            return n;
        }
        return parse_primary();
    }

    NodePtr parse_primary() {
        const char c = peek();
        if (c == '(') {
            ++pos;
            NodePtr inner = parse_expr();
            if (!consume(')')) fail("expected ')'");
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c))) return parse_ident();
        fail("expected a number, variable, function or '('");
    }

    NodePtr parse_number() {
        skip_ws();
        size_t end = pos;
        while (end < text.size() &&
               (std::isdigit(static_cast<unsigned char>(text[end])) || text[end] == '.' ||
                text[end] == 'e' || text[end] == 'E' ||
                ((text[end] == '+' || text[end] == '-') && end > pos &&
                 (text[end - 1] == 'e' || text[end - 1] == 'E'))))
            ++end;
        try {
            size_t used = 0;
            const double v = std::stod(text.substr(pos, end - pos), &used);
            pos += used;
            return make_number(v);
        } catch (...) {
            fail("malformed number");
        }
    }

    NodePtr parse_ident() {
        skip_ws();
        size_t end = pos;
        while (end < text.size() && (std::isalnum(static_cast<unsigned char>(text[end])) ||
                                     text[end] == '_'))
            ++end;
        const std::string name = text.substr(pos, end - pos);
        pos = end;
        if (name == "t" || name == "W" || name == "x" || name == "x2") {
            auto n = std::make_shared<Node>();
            n->kind = Node::Kind::Var;
            n->var = name == "t" ? 0 : name == "W" ? 1 : name == "x" ? 2 : 3;
            uses[n->var] = true;
            return n;
        }
        int fn = -1;
        if (name == "sin") fn = 0;
        else if (name == "cos") fn = 1;
        else if (name == "exp") fn = 2;
        if (fn < 0) fail("unknown identifier '" + name + "'");
        if (!consume('(')) fail("expected '(' after '" + name + "'");
        auto n = std::make_shared<Node>();
        n->kind = Node::Kind::Call;
        n->fn = fn;
        n->lhs = parse_expr();
        if (!consume(')')) fail("expected ')'");
        return n;
    }
};

} // namespace

Expression Expression::parse(const std::string& text) {
    Parser p{text};
    if (p.peek() == '\0') throw ConfigError("expression error: empty expression");
    NodePtr root = p.parse_expr();
    p.skip_ws();
    if (p.pos != text.size()) p.fail("trailing characters");

    Expression e;
    e.root_ = std::move(root);
    e.text_ = text;
    e.uses_t_ = p.uses[0];
    e.uses_w_ = p.uses[1];
    e.uses_x_ = p.uses[2] || p.uses[3];
    return e;
}

double Expression::eval(double t, double w, double x, double x2) const {
    require(static_cast<bool>(root_), "Expression: evaluating an empty expression");
    return root_->eval(t, w, x, x2);
}

} // namespace fbsee
