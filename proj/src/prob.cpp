#include "compcal/prob.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace compcal {

bool is_simplex(std::span<const double> p, double tol) {
    if (p.empty()) return false;
    double sum = 0.0;
    for (double x : p) {
        if (!std::isfinite(x) || x < -tol || x > 1.0 + tol) return false;
        sum += x;
    }
    return std::abs(sum - 1.0) <= tol;
}

void validate_simplex(std::span<const double> p, const char* what, double tol) {
    if (is_simplex(p, tol)) return;
    double sum = 0.0;
    bool finite = true;
    for (double x : p) {
        if (!std::isfinite(x)) finite = false;
        sum += x;
    }
    std::string msg(what);
    if (p.empty()) {
        msg += ": empty probability vector";
    } else if (!finite) {
        msg += ": non-finite entries in probability vector";
    } else {
        msg += ": not a probability distribution (sum=" + std::to_string(sum) + ")";
    }
    throw std::invalid_argument(msg);
}

std::vector<double> one_hot(std::size_t label, std::size_t classes) {
    if (label >= classes) {
        throw std::invalid_argument("one_hot: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(classes) + " classes");
    }
    std::vector<double> v(classes, 0.0);
    v[label] = 1.0;
    return v;
}

}  // namespace compcal
