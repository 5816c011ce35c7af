#pragma once

#include "bner/model.hpp"

#include <cmath>
#include <functional>
#include <string>

namespace bner {

/// Separable one-to-one transformation y = g(z) = (g1(z1), g2(z2)) linking the
/// positive-valued variables of interest z to the normal-scale responses y.
class Transform {
public:
    enum class Kind { identity, log, custom };

    using Scalar = std::function<double(double)>;

    static Transform identity();
    static Transform log();
    static Transform custom(std::string name, Scalar g1, Scalar g1_inv, Scalar g2, Scalar g2_inv);

    /// Parses "identity" or "log".
    static Transform from_name(const std::string& name);

    const std::string& name() const { return name_; }
    Kind kind() const { return kind_; }

    Vec2 forward(const Vec2& z) const;

    /// z = g^{-1}(y). Throws std::overflow_error if the log inverse would overflow.
    Vec2 inverse(const Vec2& y) const {
        switch (kind_) {
        case Kind::identity:
            return y;
        case Kind::log:
            if (y[0] > max_log_arg || y[1] > max_log_arg) overflow(y);
            return {std::exp(y[0]), std::exp(y[1])};
        case Kind::custom:
            break;
        }
        return {g1_inv_(y[0]), g2_inv_(y[1])};
    }

    /// True when g^{-1} maps into the positive reals (log transform, or a custom
    /// transform declared positive).
    bool positive_inverse() const { return kind_ == Kind::log || positive_; }

    Transform& declare_positive(bool positive = true) {
        positive_ = positive;
        return *this;
    }

private:
    static constexpr double max_log_arg = 709.782712893384;  // log(DBL_MAX)

    [[noreturn]] static void overflow(const Vec2& y);

    std::string name_;
    Kind kind_ = Kind::identity;
    bool positive_ = false;
    Scalar g1_, g1_inv_, g2_, g2_inv_;
};

/// transform_inverse: g^{-1}(y).
inline Vec2 transform_inverse(const Transform& t, const Vec2& y) { return t.inverse(y); }

}  // namespace bner
