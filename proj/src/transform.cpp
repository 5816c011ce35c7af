#include "bner/transform.hpp"

#include "bner/errors.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bner {

Transform Transform::identity() {
    Transform t;
    t.name_ = "identity";
    t.kind_ = Kind::identity;
    return t;
}

Transform Transform::log() {
    Transform t;
    t.name_ = "log";
    t.kind_ = Kind::log;
    return t;
}

Transform Transform::custom(std::string name, Scalar g1, Scalar g1_inv, Scalar g2, Scalar g2_inv) {
    Transform t;
    t.name_ = std::move(name);
    t.kind_ = Kind::custom;
    t.g1_ = std::move(g1);
    t.g1_inv_ = std::move(g1_inv);
    t.g2_ = std::move(g2);
    t.g2_inv_ = std::move(g2_inv);
    return t;
}

Transform Transform::from_name(const std::string& name) {
    if (name == "identity") return identity();
    if (name == "log") return log();
    throw std::invalid_argument("unknown transform '" + name + "' (expected identity or log)");
}

Vec2 Transform::forward(const Vec2& z) const {
    switch (kind_) {
    case Kind::identity:
        return z;
    case Kind::log:
        if (!(z[0] > 0.0) || !(z[1] > 0.0)) throw DomainError("log transform requires positive values");
        return {std::log(z[0]), std::log(z[1])};
    case Kind::custom:
        break;
    }
    return {g1_(z[0]), g2_(z[1])};
}

void Transform::overflow(const Vec2& y) {
    std::ostringstream msg;
    msg << "log transform inverse overflows at y = (" << y[0] << ", " << y[1] << ")";
    throw std::overflow_error(msg.str());
}

}  // namespace bner
