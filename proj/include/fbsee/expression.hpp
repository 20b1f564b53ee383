#pragma once

#include "fbsee/types.hpp"

#include <memory>
#include <string>

namespace fbsee {

/// Tiny arithmetic expressions for coefficient specs. Grammar (EBNF in
/// docs/config.md):
///
///   expr    = term { ("+" | "-") term } ;
///   term    = factor { ("*" | "/") factor } ;
///   factor  = [ "-" | "+" ] primary ;
///   primary = number | variable | function "(" expr ")" | "(" expr ")" ;
///   variable = "t" | "W" | "x" | "x2" ;
///   function = "sin" | "cos" | "exp" ;
///
/// Variables: time t, driver value W, spatial coordinates x and x2
/// (x2 only meaningful on two-dimensional meshes).
class Expression {
public:
    struct Node;

    Expression() = default;

    /// Throws ConfigError with a character position on malformed input.
    static Expression parse(const std::string& text);

    double eval(double t, double w, double x = 0.0, double x2 = 0.0) const;

    bool uses_t() const { return uses_t_; }
    bool uses_w() const { return uses_w_; }
    bool uses_x() const { return uses_x_; }

    /// True when the expression is a literal constant.
    bool is_constant() const { return !(uses_t_ || uses_w_ || uses_x_); }

    const std::string& text() const { return text_; }

private:
    std::shared_ptr<const Node> root_;
    std::string text_;
    bool uses_t_ = false, uses_w_ = false, uses_x_ = false;
};

} // namespace fbsee
