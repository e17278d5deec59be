#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <compare>
#include <stdexcept>
#include <string>

namespace afp {

using BigInt = boost::multiprecision::cpp_int;

// Exact rational, always stored reduced with positive denominator.
// Trace values are nonnegative by construction at the model layer; ledger
// weights use the full signed range.
class Ratio {
public:
    Ratio() : num_(0), den_(1) {}
    Ratio(long n) : num_(n), den_(1) {}
    Ratio(BigInt n) : num_(std::move(n)), den_(1) {}
    Ratio(long n, long d) : num_(n), den_(d) { normalize(); }
    Ratio(BigInt n, BigInt d) : num_(std::move(n)), den_(std::move(d)) { normalize(); }

    static Ratio zero() { return Ratio(0); }
    static Ratio one() { return Ratio(1); }

    const BigInt& num() const { return num_; }
    const BigInt& den() const { return den_; }

    bool is_zero() const { return num_ == 0; }
    bool is_negative() const { return num_ < 0; }
    bool is_positive() const { return num_ > 0; }
    bool is_integer() const { return den_ == 1; }

    Ratio operator+(const Ratio& o) const { return Ratio(num_ * o.den_ + o.num_ * den_, den_ * o.den_); }
    Ratio operator-(const Ratio& o) const { return Ratio(num_ * o.den_ - o.num_ * den_, den_ * o.den_); }
    Ratio operator-() const { return Ratio(-num_, den_); }
    Ratio operator*(const Ratio& o) const { return Ratio(num_ * o.num_, den_ * o.den_); }
    Ratio operator/(const Ratio& o) const {
        if (o.num_ == 0) throw std::domain_error("Ratio: division by zero");
        return Ratio(num_ * o.den_, den_ * o.num_);
    }

    Ratio& operator+=(const Ratio& o) { return *this = *this + o; }
    Ratio& operator-=(const Ratio& o) { return *this = *this - o; }
    Ratio& operator*=(const Ratio& o) { return *this = *this * o; }
    Ratio& operator/=(const Ratio& o) { return *this = *this / o; }

    Ratio squared() const { return *this * *this; }

    bool operator==(const Ratio& o) const { return num_ == o.num_ && den_ == o.den_; }
    bool operator!=(const Ratio& o) const { return !(*this == o); }
    bool operator<(const Ratio& o) const { return num_ * o.den_ < o.num_ * den_; }
    bool operator<=(const Ratio& o) const { return num_ * o.den_ <= o.num_ * den_; }
    bool operator>(const Ratio& o) const { return o < *this; }
    bool operator>=(const Ratio& o) const { return o <= *this; }

    // True iff *this is an integer multiple of o (o != 0).
    bool divisible_by(const Ratio& o) const {
        Ratio q = *this / o;
        return q.is_integer();
    }

    // Exact quotient as integer; throws if not an integer multiple.
    long integer_quotient(const Ratio& o) const {
        Ratio q = *this / o;
        if (!q.is_integer()) throw std::domain_error("Ratio: quotient is not integral");
        return static_cast<long>(q.num());
    }

    // Renders "p/q", or just "p" when the value is an integer.
    std::string str() const {
        std::string s = num_.str();
        if (den_ != 1) s += "/" + den_.str();
        return s;
    }

    // Parses "p/q" or "p". Throws std::invalid_argument on malformed input.
    static Ratio parse(const std::string& text);

    double to_double() const {
        return static_cast<double>(num_) / static_cast<double>(den_);
    }

private:
    void normalize() {
        if (den_ == 0) throw std::domain_error("Ratio: zero denominator");
        if (den_ < 0) { num_ = -num_; den_ = -den_; }
        BigInt g = boost::multiprecision::gcd(num_ < 0 ? BigInt(-num_) : num_, den_);
        if (g > 1) { num_ /= g; den_ /= g; }
        if (num_ == 0) den_ = 1;
    }

    BigInt num_;
    BigInt den_;
};

inline Ratio Ratio::parse(const std::string& text) {
    auto bad = [&]() { throw std::invalid_argument("not a rational: '" + text + "'"); };
    if (text.empty()) bad();
    auto slash = text.find('/');
    auto check_int = [&](const std::string& part, bool allow_sign) {
        if (part.empty()) bad();
        size_t start = 0;
        if (allow_sign && (part[0] == '-' || part[0] == '+')) start = 1;
        if (start == part.size()) bad();
        for (size_t i = start; i < part.size(); ++i)
            if (!std::isdigit(static_cast<unsigned char>(part[i]))) bad();
    };
    if (slash == std::string::npos) {
        check_int(text, true);
        return Ratio(BigInt(text), BigInt(1));
    }
    std::string p = text.substr(0, slash), q = text.substr(slash + 1);
    check_int(p, true);
    check_int(q, false);
    BigInt d(q);
    if (d == 0) bad();
    return Ratio(BigInt(p), d);
}

}  // namespace afp
